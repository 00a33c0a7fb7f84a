#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "png_io.hpp"
#include "rng.hpp"

namespace fluoroforge {

/// Single-channel intensity image. Values are linear, non-negative doubles
/// where 1.0 is sensor saturation. Pixel (x, y) is centered at continuous
/// coordinate (x, y) and spans [x - 0.5, x + 0.5) x [y - 0.5, y + 0.5);
/// every continuous position in this codebase uses that convention.
struct Image {
    int width = 0;
    int height = 0;
    double pixel_size_nm = 20.0;
    std::vector<double> pixels;  // row-major

    Image() = default;

    Image(int w, int h, double px_nm = 20.0, double fill = 0.0)
        : width(w), height(h), pixel_size_nm(px_nm) {
        if (w <= 0 || h <= 0) throw DimensionError("image dimensions must be positive");
        pixels.assign(static_cast<std::size_t>(w) * h, fill);
    }

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return pixels.size(); }

    bool same_shape(const Image& other) const {
        return width == other.width && height == other.height;
    }

    double max_value() const {
        double m = 0.0;
        for (double v : pixels) m = std::max(m, v);
        return m;
    }

    double mean() const {
        if (pixels.empty()) return 0.0;
        double s = 0.0;
        for (double v : pixels) s += v;
        return s / static_cast<double>(pixels.size());
    }

    void validate() const {
        if (width <= 0 || height <= 0) throw DimensionError("image dimensions must be positive");
        if (pixels.size() != static_cast<std::size_t>(width) * height) {
            throw DimensionError("pixel buffer does not match image dimensions");
        }
        for (double v : pixels) {
            if (!std::isfinite(v) || v < 0.0) {
                throw std::invalid_argument("image pixels must be finite and non-negative");
            }
        }
    }
};

/// Time series of frames sharing one geometry.
struct FrameStack {
    std::vector<Image> frames;
    double exposure_ms = 50.0;

    int frame_count() const { return static_cast<int>(frames.size()); }
    int width() const { return frames.empty() ? 0 : frames.front().width; }
    int height() const { return frames.empty() ? 0 : frames.front().height; }
    double pixel_size_nm() const { return frames.empty() ? 0.0 : frames.front().pixel_size_nm; }

    void validate() const {
        if (frames.empty()) throw std::invalid_argument("frame stack must not be empty");
        for (const Image& f : frames) {
            if (!f.same_shape(frames.front())) {
                throw DimensionError("all frames in a stack must share dimensions");
            }
        }
    }
};

/// Sidecar metadata stored with a stack on disk.
struct StackManifest {
    int frame_count = 0;
    int width = 0;
    int height = 0;
    double pixel_size_nm = 0.0;
    double exposure_ms = 0.0;
    int scale_factor = 1;
    std::optional<std::uint64_t> rng_seed;
    std::optional<std::string> profile_digest;
};

// ---------------------------------------------------------------------------
// PNG round trip. 16-bit grayscale; load maps sample v to v / 65535.0 and
// save maps intensity to round(clamp(v, 0, 1) * 65535).

inline Image load_image(const std::filesystem::path& path) {
    detail::Png16 raw = detail::read_png16(path.string());
    Image img(raw.width, raw.height);
    for (std::size_t i = 0; i < raw.samples.size(); ++i) {
        img.pixels[i] = static_cast<double>(raw.samples[i]) / 65535.0;
    }
    return img;
}

inline void save_image(const Image& img, const std::filesystem::path& path) {
    if (img.width <= 0 || img.height <= 0) {
        throw DimensionError("cannot save empty image");
    }
    std::vector<std::uint16_t> samples(img.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        double v = img.pixels[i];
        if (!std::isfinite(v)) throw std::invalid_argument("cannot save non-finite pixel");
        v = std::clamp(v, 0.0, 1.0);
        samples[i] = static_cast<std::uint16_t>(std::llround(v * 65535.0));
    }
    detail::write_png16(path.string(), img.width, img.height, samples);
}

// ---------------------------------------------------------------------------
// Stack directory format: manifest.json plus frame_0000.png, frame_0001.png,
// ... The manifest is authoritative for frame count and geometry.

inline std::string frame_file_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%04d.png", index);
    return buf;
}

inline void save_stack(const FrameStack& stack, const std::filesystem::path& dir,
                       int scale_factor = 1,
                       std::optional<std::uint64_t> rng_seed = std::nullopt,
                       std::optional<std::string> profile_digest = std::nullopt) {
    stack.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create stack directory: " + dir.string());

    nlohmann::ordered_json manifest;
    manifest["frame_count"] = stack.frame_count();
    manifest["width"] = stack.width();
    manifest["height"] = stack.height();
    manifest["pixel_size_nm"] = stack.pixel_size_nm();
    manifest["exposure_ms"] = stack.exposure_ms;
    manifest["scale_factor"] = scale_factor;
    if (rng_seed) manifest["rng_seed"] = *rng_seed;
    if (profile_digest) manifest["profile_digest"] = *profile_digest;

    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest: " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
    out.close();
    if (!out) throw IoError("cannot write manifest: " + (dir / "manifest.json").string());

    for (int t = 0; t < stack.frame_count(); ++t) {
        save_image(stack.frames[static_cast<std::size_t>(t)], dir / frame_file_name(t));
    }
}

inline StackManifest load_manifest(const std::filesystem::path& dir) {
    const std::filesystem::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    StackManifest m;
    try {
        m.frame_count = j.at("frame_count").get<int>();
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        m.pixel_size_nm = j.at("pixel_size_nm").get<double>();
        m.exposure_ms = j.at("exposure_ms").get<double>();
        m.scale_factor = j.at("scale_factor").get<int>();
        if (j.contains("rng_seed") && !j["rng_seed"].is_null()) {
            m.rng_seed = j["rng_seed"].get<std::uint64_t>();
        }
        if (j.contains("profile_digest") && !j["profile_digest"].is_null()) {
            m.profile_digest = j["profile_digest"].get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest missing required key in " + manifest_path.string() + ": " +
                      e.what());
    }
    if (m.frame_count <= 0 || m.width <= 0 || m.height <= 0) {
        throw IoError("manifest declares empty stack: " + manifest_path.string());
    }
    return m;
}

inline FrameStack load_stack(const std::filesystem::path& dir) {
    const StackManifest m = load_manifest(dir);
    FrameStack stack;
    stack.exposure_ms = m.exposure_ms;
    stack.frames.reserve(static_cast<std::size_t>(m.frame_count));
    for (int t = 0; t < m.frame_count; ++t) {
        const std::filesystem::path frame_path = dir / frame_file_name(t);
        if (!std::filesystem::exists(frame_path)) {
            throw IoError("frame count mismatch: manifest declares " +
                          std::to_string(m.frame_count) + " frames but " + frame_path.string() +
                          " is missing");
        }
        Image frame = load_image(frame_path);
        if (frame.width != m.width || frame.height != m.height) {
            throw DimensionError("frame " + frame_path.string() +
                                 " does not match manifest dimensions");
        }
        frame.pixel_size_nm = m.pixel_size_nm;
        stack.frames.push_back(std::move(frame));
    }
    return stack;
}

// ---------------------------------------------------------------------------
// Geometry and noise primitives.

/// Block-mean reduction by an integer factor. The factor must divide both
/// dimensions exactly; the output pixel size grows by the same factor.
inline Image downsample(const Image& img, int factor) {
    if (factor <= 0) throw std::invalid_argument("downsample factor must be positive");
    if (img.width % factor != 0 || img.height % factor != 0) {
        throw DimensionError("downsample factor must divide image dimensions");
    }
    Image out(img.width / factor, img.height / factor, img.pixel_size_nm * factor);
    const double inv_area = 1.0 / (static_cast<double>(factor) * factor);
    for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
            double sum = 0.0;
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) {
                    sum += img.at(ox * factor + dx, oy * factor + dy);
                }
            }
            out.at(ox, oy) = sum * inv_area;
        }
    }
    return out;
}

/// Additive white Gaussian read noise, clamped at zero so intensities stay
/// physical. sigma == 0 returns the input untouched and consumes no draws.
inline Image add_gaussian_noise(const Image& img, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
    Image out = img;
    if (sigma == 0.0) return out;
    for (double& v : out.pixels) {
        v = std::max(0.0, v + rng.normal(0.0, sigma));
    }
    return out;
}

/// Per-pixel mean across all frames.
inline Image temporal_mean(const FrameStack& stack) {
    stack.validate();
    Image out(stack.width(), stack.height(), stack.pixel_size_nm());
    for (const Image& f : stack.frames) {
        for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] += f.pixels[i];
    }
    const double inv = 1.0 / static_cast<double>(stack.frame_count());
    for (double& v : out.pixels) v *= inv;
    return out;
}

namespace detail {

/// Catmull-Rom kernel (cubic convolution with a = -0.5).
inline double cubic_weight(double t) {
    const double a = -0.5;
    const double at = std::abs(t);
    if (at <= 1.0) return ((a + 2.0) * at - (a + 3.0)) * at * at + 1.0;
    if (at < 2.0) return ((a * at - 5.0 * a) * at + 8.0 * a) * at - 4.0 * a;
    return 0.0;
}

}  // namespace detail

/// Bicubic upsampling by an integer factor. Output pixel (hx, hy) samples
/// the input at ((hx - (f-1)/2) / f, (hy - (f-1)/2) / f), which makes the
/// mapping the geometric inverse of block-mean reduction. Samples outside
/// the input are clamped to the border; results are clamped at zero because
/// cubic interpolation may undershoot.
inline Image upsample_bicubic(const Image& img, int factor) {
    if (factor <= 0) throw std::invalid_argument("upsample factor must be positive");
    img.validate();
    Image out(img.width * factor, img.height * factor, img.pixel_size_nm / factor);
    const double offset = (factor - 1.0) / 2.0;
    const double inv_f = 1.0 / factor;

    for (int hy = 0; hy < out.height; ++hy) {
        const double sy = (hy - offset) * inv_f;
        const int iy = static_cast<int>(std::floor(sy));
        double wy[4];
        for (int k = 0; k < 4; ++k) wy[k] = detail::cubic_weight(sy - (iy - 1 + k));
        for (int hx = 0; hx < out.width; ++hx) {
            const double sx = (hx - offset) * inv_f;
            const int ix = static_cast<int>(std::floor(sx));
            double wx[4];
            for (int k = 0; k < 4; ++k) wx[k] = detail::cubic_weight(sx - (ix - 1 + k));
            double acc = 0.0;
            for (int ky = 0; ky < 4; ++ky) {
                const int py = std::clamp(iy - 1 + ky, 0, img.height - 1);
                double row = 0.0;
                for (int kx = 0; kx < 4; ++kx) {
                    const int px = std::clamp(ix - 1 + kx, 0, img.width - 1);
                    row += wx[kx] * img.at(px, py);
                }
                acc += wy[ky] * row;
            }
            out.at(hx, hy) = std::max(0.0, acc);
        }
    }
    return out;
}

inline Image crop(const Image& img, int x, int y, int w, int h) {
    if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > img.width || y + h > img.height) {
        throw DimensionError("crop rectangle out of bounds");
    }
    Image out(w, h, img.pixel_size_nm);
    for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
            out.at(ox, oy) = img.at(x + ox, y + oy);
        }
    }
    return out;
}

inline FrameStack crop(const FrameStack& stack, int x, int y, int w, int h) {
    stack.validate();
    FrameStack out;
    out.exposure_ms = stack.exposure_ms;
    out.frames.reserve(stack.frames.size());
    for (const Image& f : stack.frames) out.frames.push_back(crop(f, x, y, w, h));
    return out;
}

}  // namespace fluoroforge
