#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "image.hpp"

namespace fluoroforge {

/// Peak signal-to-noise ratio in dB over the given dynamic range. Identical
/// images return +infinity.
inline double psnr(const Image& truth, const Image& test, double max_value = 1.0) {
    if (!truth.same_shape(test)) throw DimensionError("psnr requires equal image dimensions");
    if (!(max_value > 0.0)) throw std::invalid_argument("psnr max_value must be positive");
    double mse = 0.0;
    for (std::size_t i = 0; i < truth.pixels.size(); ++i) {
        const double d = truth.pixels[i] - test.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(truth.pixels.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_value * max_value / mse);
}

namespace detail {

/// Separable valid-mode convolution with a symmetric 1D kernel: horizontal
/// pass shrinking width, then vertical pass shrinking height. Equivalent to
/// full 2D convolution with the kernel's outer product.
inline std::vector<double> conv_valid(const std::vector<double>& in, int w, int h,
                                      const std::vector<double>& kernel, int& out_w, int& out_h) {
    const int k = static_cast<int>(kernel.size());
    out_w = w - k + 1;
    out_h = h - k + 1;
    std::vector<double> horiz(static_cast<std::size_t>(out_w) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += kernel[static_cast<std::size_t>(i)] * in[static_cast<std::size_t>(y) * w + x + i];
            horiz[static_cast<std::size_t>(y) * out_w + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(out_w) * out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) {
                s += kernel[static_cast<std::size_t>(i)] * horiz[static_cast<std::size_t>(y + i) * out_w + x];
            }
            out[static_cast<std::size_t>(y) * out_w + x] = s;
        }
    }
    return out;
}

inline std::vector<double> gaussian_kernel_1d(int radius, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

}  // namespace detail

/// Mean structural similarity with the standard parameters: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03 on a unit dynamic range,
/// averaged over valid window positions.
inline double ssim(const Image& truth, const Image& test) {
    if (!truth.same_shape(test)) throw DimensionError("ssim requires equal image dimensions");
    constexpr int kWindow = 11;
    if (truth.width < kWindow || truth.height < kWindow) {
        throw std::invalid_argument("ssim requires images at least 11x11");
    }
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const std::vector<double> kernel = detail::gaussian_kernel_1d(kWindow / 2, 1.5);

    const std::size_t n = truth.pixels.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = truth.pixels[i] * truth.pixels[i];
        yy[i] = test.pixels[i] * test.pixels[i];
        xy[i] = truth.pixels[i] * test.pixels[i];
    }

    int vw = 0, vh = 0;
    const std::vector<double> mu_x = detail::conv_valid(truth.pixels, truth.width, truth.height, kernel, vw, vh);
    const std::vector<double> mu_y = detail::conv_valid(test.pixels, truth.width, truth.height, kernel, vw, vh);
    const std::vector<double> e_xx = detail::conv_valid(xx, truth.width, truth.height, kernel, vw, vh);
    const std::vector<double> e_yy = detail::conv_valid(yy, truth.width, truth.height, kernel, vw, vh);
    const std::vector<double> e_xy = detail::conv_valid(xy, truth.width, truth.height, kernel, vw, vh);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double mx = mu_x[i];
        const double my = mu_y[i];
        const double var_x = e_xx[i] - mx * mx;
        const double var_y = e_yy[i] - my * my;
        const double cov = e_xy[i] - mx * my;
        const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        const double den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    return total / static_cast<double>(mu_x.size());
}

/// Full-image Gaussian blur, separable, kernel truncated at 4 sigma with
/// per-pixel renormalization at the borders (so constants stay constant).
/// sigma == 0 returns the input unchanged.
inline Image gaussian_blur(const Image& img, double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("blur sigma must be >= 0");
    if (sigma == 0.0) return img;
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    }

    Image horiz(img.width, img.height, img.pixel_size_nm);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0, wsum = 0.0;
            const int lo = std::max(-radius, -x);
            const int hi = std::min(radius, img.width - 1 - x);
            for (int i = lo; i <= hi; ++i) {
                const double w = kernel[static_cast<std::size_t>(i + radius)];
                s += w * img.at(x + i, y);
                wsum += w;
            }
            horiz.at(x, y) = s / wsum;
        }
    }
    Image out(img.width, img.height, img.pixel_size_nm);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0, wsum = 0.0;
            const int lo = std::max(-radius, -y);
            const int hi = std::min(radius, img.height - 1 - y);
            for (int i = lo; i <= hi; ++i) {
                const double w = kernel[static_cast<std::size_t>(i + radius)];
                s += w * horiz.at(x, y + i);
                wsum += w;
            }
            out.at(x, y) = s / wsum;
        }
    }
    return out;
}

/// Result of registering a high-res reconstruction against a low-res
/// reference through an optimized blur-and-rescale forward model.
struct SquirrelFit {
    double rsp = 0.0;         // Pearson correlation of reference vs fitted model
    double rse = 0.0;         // RMS residual in raw 16-bit units
    double alpha = 0.0;       // intensity gain
    double beta = 0.0;        // intensity offset
    double sigma_star = 0.0;  // best blur width, low-res pixels
};

namespace detail {

struct BlurFitSample {
    double rss = std::numeric_limits<double>::infinity();  // residual sum of squares
    double alpha = 0.0;
    double beta = 0.0;
    std::vector<double> fitted;
};

inline BlurFitSample fit_blur_scale(const Image& reference, const Image& sr, int scale,
                                    double sigma_lr) {
    const Image low = downsample(gaussian_blur(sr, sigma_lr * scale), scale);
    const std::size_t n = low.pixels.size();
    double mean_b = 0.0, mean_r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_b += low.pixels[i];
        mean_r += reference.pixels[i];
    }
    mean_b /= static_cast<double>(n);
    mean_r /= static_cast<double>(n);
    double cov = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double db = low.pixels[i] - mean_b;
        cov += db * (reference.pixels[i] - mean_r);
        var += db * db;
    }
    BlurFitSample out;
    out.alpha = var > 0.0 ? cov / var : 0.0;
    out.beta = mean_r - out.alpha * mean_b;
    out.fitted.resize(n);
    out.rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.fitted[i] = out.alpha * low.pixels[i] + out.beta;
        const double d = reference.pixels[i] - out.fitted[i];
        out.rss += d * d;
    }
    return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (!(va > 0.0) || !(vb > 0.0)) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace detail

/// Registers the reconstruction against the reference by searching blur
/// width over a fixed grid with golden-section refinement around the best
/// node, fitting intensity gain/offset by least squares at each width. The
/// grid plus deterministic refinement keeps results reproducible bit for
/// bit. rse is reported on the raw 16-bit scale.
inline SquirrelFit rsp_rse(const Image& reference, const Image& sr, int scale,
                           std::pair<double, double> sigma_range = {0.5, 4.0},
                           int grid_points = 20) {
    if (scale <= 0) throw std::invalid_argument("scale must be positive");
    if (sr.width != reference.width * scale || sr.height != reference.height * scale) {
        throw DimensionError("sr dimensions must be reference dimensions times scale");
    }
    if (!(sigma_range.first > 0.0) || !(sigma_range.second >= sigma_range.first)) {
        throw std::invalid_argument("empty sigma range");
    }
    if (grid_points < 2) throw std::invalid_argument("sigma grid needs at least 2 points");

    double best_sigma = sigma_range.first;
    detail::BlurFitSample best;
    int best_idx = 0;

    std::vector<double> grid(static_cast<std::size_t>(grid_points));
    for (int i = 0; i < grid_points; ++i) {
        grid[static_cast<std::size_t>(i)] =
            sigma_range.first +
            (sigma_range.second - sigma_range.first) * i / static_cast<double>(grid_points - 1);
    }
    for (int i = 0; i < grid_points; ++i) {
        detail::BlurFitSample sample = detail::fit_blur_scale(reference, sr, scale, grid[static_cast<std::size_t>(i)]);
        if (sample.rss < best.rss) {
            best = std::move(sample);
            best_sigma = grid[static_cast<std::size_t>(i)];
            best_idx = i;
        }
    }

    // Golden-section refinement between the best node's neighbors. The best
    // sample seen anywhere (grid included) wins, so refinement can only
    // improve on the grid answer.
    double a = grid[static_cast<std::size_t>(std::max(0, best_idx - 1))];
    double b = grid[static_cast<std::size_t>(std::min(grid_points - 1, best_idx + 1))];
    const double inv_phi = 0.6180339887498949;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    auto probe = [&](double sigma_lr) {
        detail::BlurFitSample sample = detail::fit_blur_scale(reference, sr, scale, sigma_lr);
        const double rss = sample.rss;
        if (rss < best.rss) {
            best = std::move(sample);
            best_sigma = sigma_lr;
        }
        return rss;
    };
    double f1 = probe(x1);
    double f2 = probe(x2);
    for (int it = 0; it < 36; ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = probe(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = probe(x2);
        }
    }

    SquirrelFit fit;
    fit.sigma_star = best_sigma;
    fit.alpha = best.alpha;
    fit.beta = best.beta;
    fit.rsp = detail::pearson(reference.pixels, best.fitted);
    fit.rse = std::sqrt(best.rss / static_cast<double>(reference.pixels.size())) * 65535.0;
    return fit;
}

}  // namespace fluoroforge
