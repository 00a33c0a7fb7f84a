#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "conjugate_gradient.hpp"
#include "hmm.hpp"
#include "image.hpp"
#include "photophysics.hpp"
#include "rng.hpp"
#include "simulator.hpp"

namespace fluoroforge {

/// Candidate emitter tracked by the reconstruction. Position, brightness
/// and width live in high-resolution pixel units. birth_key is a stable
/// identity used to derive per-hypothesis random streams, so a hypothesis
/// samples the same state paths no matter what else is in the scene or in
/// which order hypotheses are visited.
struct FluorophoreHypothesis {
    double x = 0.0;
    double y = 0.0;
    double i0 = 1.0;
    double sigma = 2.5;
    std::vector<FluorophoreState> states;  // one per frame, from the last state sweep
    bool accepted = false;
    std::uint64_t birth_key = 0;
};

/// Prior odds that a candidate is a real emitter rather than noise.
struct BayesPriors {
    double p_f = 0.3;
    double p_n = 0.7;

    void validate() const {
        if (!(p_f > 0.0) || !(p_n > 0.0)) {
            throw std::invalid_argument("prior probabilities must be positive");
        }
        if (std::abs(p_f + p_n - 1.0) > 1e-9) {
            throw std::invalid_argument("prior probabilities must sum to 1");
        }
    }

    double log_odds() const { return std::log(p_f) - std::log(p_n); }
};

struct InferenceConfig {
    int iterations = 60;
    int neighbors_per_fluorophore = 4;
    double jitter_limit = 8.0;  // high-res pixels
    int scale = 8;
    double noise_sigma = 0.01;
    BayesPriors priors{};
    TransferTable transfer{};
    PhotonModel photon{};
    std::array<double, kStateCount> initial_state_probs{0.5, 0.5, 0.0};
    std::uint64_t rng_seed = 0;
    double convergence_tol = 1e-3;
    int plateau_iterations = 5;
    double initial_sigma = 2.5;      // high-res pixels, for fresh candidates
    double prior_threshold = 0.02;   // candidate cutoff, fraction of prior max
    int max_hypotheses = 2000;       // per 480x480 of high-res area, scaled
    double dedup_radius = 0.5;       // high-res pixels
    int cg_max_iterations = 40;

    void validate() const {
        if (iterations <= 0) throw std::invalid_argument("iterations must be positive");
        if (neighbors_per_fluorophore < 0) {
            throw std::invalid_argument("neighbor count must be >= 0");
        }
        if (!(jitter_limit > 0.0)) throw std::invalid_argument("jitter limit must be positive");
        if (scale <= 0) throw std::invalid_argument("scale must be positive");
        if (!(noise_sigma > 0.0)) throw std::invalid_argument("noise sigma must be positive");
        priors.validate();
        photon.validate();
        if (!(convergence_tol >= 0.0)) throw std::invalid_argument("convergence tol must be >= 0");
        if (plateau_iterations <= 0) throw std::invalid_argument("plateau window must be positive");
        if (!(initial_sigma > 0.0)) throw std::invalid_argument("initial sigma must be positive");
        if (!(prior_threshold >= 0.0 && prior_threshold <= 1.0)) {
            throw std::invalid_argument("prior threshold must lie in [0, 1]");
        }
        if (max_hypotheses <= 0) throw std::invalid_argument("hypothesis cap must be positive");
        if (!(dedup_radius >= 0.0)) throw std::invalid_argument("dedup radius must be >= 0");
        double prob_sum = 0.0;
        for (double p : initial_state_probs) {
            if (!(p >= 0.0)) throw std::invalid_argument("initial state probs must be >= 0");
            prob_sum += p;
        }
        if (std::abs(prob_sum - 1.0) > 1e-9) {
            throw std::invalid_argument("initial state probs must sum to 1");
        }
    }
};

struct IterationStats {
    int iteration = 0;
    double log_posterior = 0.0;
    int accepted = 0;
};

struct ReconstructionResult {
    Image sr_image;   // high resolution, normalized so the peak is 1
    Image sr_raw;     // same render before normalization (tile stitching input)
    std::vector<FluorophoreHypothesis> fluorophores;  // accepted set
    std::vector<IterationStats> trace;
    int iterations_run = 0;
};

struct AcceptDecision {
    bool accepted = false;
    double log_ratio = 0.0;      // log posterior odds real : spurious
    double delta_loglik = 0.0;   // data term of log_ratio
};

/// Frame-major residual buffer: data minus background minus every other
/// hypothesis's emitting contribution. Values may be negative.
struct ResidualStack {
    int width = 0;
    int height = 0;
    std::vector<std::vector<double>> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }
};

namespace detail {

// Substream tags for the reconstruction engine. Pinned: changing them
// changes every seeded reconstruction.
constexpr std::uint64_t kStreamInit = 0x696e6974;
constexpr std::uint64_t kStreamOrder = 0x6f726472;
constexpr std::uint64_t kStreamEstep = 0x65737470;
constexpr std::uint64_t kStreamExpand = 0x65787064;
constexpr std::uint64_t kBirthInit = 0x62697468;
constexpr std::uint64_t kBirthChild = 0x63686c64;

/// Lower-interpolation percentile: sorted[floor(frac * (n - 1))].
inline double lower_percentile(std::vector<double> values, double frac) {
    if (values.empty()) throw std::invalid_argument("percentile of empty range");
    const std::size_t idx =
        static_cast<std::size_t>(std::floor(frac * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx),
                     values.end());
    return values[idx];
}

/// Low-resolution footprint of one Gaussian spot: block means of the
/// high-resolution Gaussian over each covered low-res pixel, restricted to
/// a support box. Separable, so it is built from per-axis sums.
struct SpotFootprint {
    int lx0 = 0, ly0 = 0, lw = 0, lh = 0;  // low-res box [lx0, lx0+lw) x [ly0, ly0+lh)
    std::vector<double> values;            // lw * lh, row-major
    double sum_sq = 0.0;

    bool empty() const { return lw <= 0 || lh <= 0; }
};

/// Per-axis sums of exp(-d^2 / (2 sigma^2)) over the high-res pixels under
/// each low-res pixel in [l0, l0+count). Optionally also accumulates the
/// first and second moments in d, which the fit gradient needs.
inline void axis_block_sums(double center, double sigma, int l0, int count, int f,
                            std::vector<double>& e, std::vector<double>* d1 = nullptr,
                            std::vector<double>* d2 = nullptr) {
    e.assign(static_cast<std::size_t>(count), 0.0);
    if (d1) d1->assign(static_cast<std::size_t>(count), 0.0);
    if (d2) d2->assign(static_cast<std::size_t>(count), 0.0);
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    for (int k = 0; k < count; ++k) {
        const int base = (l0 + k) * f;
        double se = 0.0, sd = 0.0, sq = 0.0;
        for (int j = 0; j < f; ++j) {
            const double d = base + j - center;
            const double w = std::exp(-d * d * inv_two_sigma2);
            se += w;
            sd += w * d;
            sq += w * d * d;
        }
        e[static_cast<std::size_t>(k)] = se;
        if (d1) (*d1)[static_cast<std::size_t>(k)] = sd;
        if (d2) (*d2)[static_cast<std::size_t>(k)] = sq;
    }
}

inline SpotFootprint compute_footprint(double x, double y, double i0, double sigma, int f,
                                       int lr_width, int lr_height, double support_radius) {
    SpotFootprint fp;
    fp.lx0 = std::max(0, static_cast<int>(std::floor((x - support_radius) / f)));
    fp.ly0 = std::max(0, static_cast<int>(std::floor((y - support_radius) / f)));
    const int lx1 = std::min(lr_width, static_cast<int>(std::floor((x + support_radius) / f)) + 1);
    const int ly1 = std::min(lr_height, static_cast<int>(std::floor((y + support_radius) / f)) + 1);
    fp.lw = lx1 - fp.lx0;
    fp.lh = ly1 - fp.ly0;
    if (fp.empty()) {
        fp.lw = fp.lh = 0;
        return fp;
    }
    std::vector<double> ex, ey;
    axis_block_sums(x, sigma, fp.lx0, fp.lw, f, ex);
    axis_block_sums(y, sigma, fp.ly0, fp.lh, f, ey);
    const double amp = i0 / (static_cast<double>(f) * f);
    fp.values.resize(static_cast<std::size_t>(fp.lw) * fp.lh);
    for (int ky = 0; ky < fp.lh; ++ky) {
        for (int kx = 0; kx < fp.lw; ++kx) {
            const double v = amp * ex[static_cast<std::size_t>(kx)] * ey[static_cast<std::size_t>(ky)];
            fp.values[static_cast<std::size_t>(ky) * fp.lw + kx] = v;
            fp.sum_sq += v * v;
        }
    }
    return fp;
}

/// Uniform hash grid over 2D points for radius queries. Cell size 1 px,
/// query radius must be <= 1.
class ProximityGrid {
public:
    void insert(double x, double y) {
        points_[key(x, y)].emplace_back(x, y);
    }

    bool any_within(double x, double y, double radius) const {
        const double r2 = radius * radius;
        const long cx = cell(x);
        const long cy = cell(y);
        for (long gy = cy - 1; gy <= cy + 1; ++gy) {
            for (long gx = cx - 1; gx <= cx + 1; ++gx) {
                const auto it = points_.find(pack(gx, gy));
                if (it == points_.end()) continue;
                for (const auto& [px, py] : it->second) {
                    const double dx = px - x;
                    const double dy = py - y;
                    if (dx * dx + dy * dy <= r2) return true;
                }
            }
        }
        return false;
    }

private:
    static long cell(double v) { return static_cast<long>(std::floor(v)); }
    static std::uint64_t pack(long cx, long cy) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) ^
               static_cast<std::uint32_t>(cy);
    }
    std::uint64_t key(double x, double y) const { return pack(cell(x), cell(y)); }

    std::unordered_map<std::uint64_t, std::vector<std::pair<double, double>>> points_;
};

/// Negative log posterior of one spot against per-pixel sufficient
/// statistics, in transformed coordinates u = (x, y, ln i0, ln sigma).
/// The data term is (1 / 2 noise^2) * sum_px (n_emit F^2 - 2 F S) where
/// S[px] sums the residual over emitting frames; the brightness prior is
/// log-normal (dropped when its width is zero). The support box is fixed,
/// so the objective is smooth in u.
class SpotObjective {
public:
    SpotObjective(int lx0, int ly0, int lw, int lh, int f, const std::vector<double>& S,
                  double n_emit, double noise_sigma, const PhotonModel& photon)
        : lx0_(lx0), ly0_(ly0), lw_(lw), lh_(lh), f_(f), S_(S), n_emit_(n_emit),
          inv_noise2_(1.0 / (noise_sigma * noise_sigma)), photon_(photon) {}

    double operator()(const std::array<double, 4>& u, std::array<double, 4>& grad) const {
        const double x = u[0];
        const double y = u[1];
        const double i0 = std::exp(u[2]);
        const double sigma = std::exp(u[3]);
        const double amp = i0 / (static_cast<double>(f_) * f_);
        const double inv_sigma2 = 1.0 / (sigma * sigma);

        axis_block_sums(x, sigma, lx0_, lw_, f_, ex_, &dx_, &qx_);
        axis_block_sums(y, sigma, ly0_, lh_, f_, ey_, &dy_, &qy_);

        double acc = 0.0;
        double gx = 0.0, gy = 0.0, gi = 0.0, gs = 0.0;
        for (int ky = 0; ky < lh_; ++ky) {
            const double eyv = ey_[static_cast<std::size_t>(ky)];
            const double dyv = dy_[static_cast<std::size_t>(ky)];
            const double qyv = qy_[static_cast<std::size_t>(ky)];
            for (int kx = 0; kx < lw_; ++kx) {
                const double exv = ex_[static_cast<std::size_t>(kx)];
                const double F = amp * exv * eyv;
                const double s = S_[static_cast<std::size_t>(ky) * lw_ + kx];
                acc += n_emit_ * F * F - 2.0 * F * s;
                const double w = n_emit_ * F - s;  // dObjective/dF up to 1/noise^2
                gx += w * amp * dx_[static_cast<std::size_t>(kx)] * eyv;
                gy += w * amp * exv * dyv;
                gi += w * F;
                gs += w * amp * (qx_[static_cast<std::size_t>(kx)] * eyv + exv * qyv);
            }
        }

        double value = 0.5 * acc * inv_noise2_;
        grad[0] = gx * inv_sigma2 * inv_noise2_;
        grad[1] = gy * inv_sigma2 * inv_noise2_;
        grad[2] = gi * inv_noise2_;
        grad[3] = gs * inv_sigma2 * inv_noise2_;

        if (photon_.log_sigma > 0.0) {
            const double z = (u[2] - photon_.log_mu) / (photon_.log_sigma * photon_.log_sigma);
            value += u[2] + 0.5 * (u[2] - photon_.log_mu) * z;
            grad[2] += 1.0 + z;
        }
        return value;
    }

private:
    int lx0_, ly0_, lw_, lh_, f_;
    const std::vector<double>& S_;
    double n_emit_;
    double inv_noise2_;
    PhotonModel photon_;
    mutable std::vector<double> ex_, dx_, qx_, ey_, dy_, qy_;
};

struct MStepOutcome {
    bool updated = false;
    double x = 0, y = 0, i0 = 0, sigma = 0;
    double entry_value = 0, exit_value = 0;
};

/// MAP refit of one spot given fixed emitting-frame statistics. Position
/// moves at most jitter_limit from the entry point and never leaves the
/// canvas; width stays in [0.5, max(1, 2 * entry sigma)].
inline MStepOutcome m_step_on_stats(const FluorophoreHypothesis& h, int lx0, int ly0, int lw,
                                    int lh, const std::vector<double>& S, double n_emit,
                                    const InferenceConfig& cfg, int hr_width, int hr_height) {
    MStepOutcome out;
    if (lw <= 0 || lh <= 0 || n_emit <= 0.0) return out;

    const double x_canvas_max = std::nextafter(static_cast<double>(hr_width), 0.0);
    const double y_canvas_max = std::nextafter(static_cast<double>(hr_height), 0.0);
    const double sigma_hi = std::max(1.0, 2.0 * h.sigma);
    const std::array<double, 4> lower{std::max(0.0, h.x - cfg.jitter_limit),
                                      std::max(0.0, h.y - cfg.jitter_limit),
                                      std::log(1e-6), std::log(0.5)};
    const std::array<double, 4> upper{std::min(x_canvas_max, h.x + cfg.jitter_limit),
                                      std::min(y_canvas_max, h.y + cfg.jitter_limit),
                                      std::log(1e4), std::log(sigma_hi)};

    SpotObjective objective(lx0, ly0, lw, lh, cfg.scale, S, n_emit, cfg.noise_sigma, cfg.photon);
    CgOptions opt;
    opt.max_iterations = cfg.cg_max_iterations;
    opt.gradient_tol = 1e-8;
    opt.relative_f_tol = 1e-13;

    std::array<double, 4> u0{h.x, h.y, std::log(std::max(1e-6, h.i0)),
                             std::log(std::clamp(h.sigma, 0.5, sigma_hi))};
    const CgResult<4> fit = minimize_cg(objective, u0, opt, &lower, &upper);

    std::array<double, 4> dummy{};
    out.entry_value = objective(u0, dummy);
    out.exit_value = fit.value;
    out.updated = true;
    out.x = fit.x[0];
    out.y = fit.x[1];
    out.i0 = std::exp(fit.x[2]);
    out.sigma = std::exp(fit.x[3]);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public single-hypothesis operations. These work against an explicit
// residual buffer (data minus background minus all other hypotheses); the
// full reconstruction below maintains that buffer incrementally and calls
// the same cores.

/// Read-noise estimate for stacks without a calibration profile: the median
/// per-pixel temporal standard deviation over the dimmest decile of pixels
/// (ranked by temporal mean), where the signal contribution is smallest.
inline double estimate_noise_sigma(const FrameStack& stack) {
    stack.validate();
    const Image mean = temporal_mean(stack);
    const std::size_t n = mean.pixels.size();
    std::vector<std::size_t> by_mean(n);
    for (std::size_t i = 0; i < n; ++i) by_mean[i] = i;
    std::sort(by_mean.begin(), by_mean.end(), [&](std::size_t a, std::size_t b) {
        if (mean.pixels[a] != mean.pixels[b]) return mean.pixels[a] < mean.pixels[b];
        return a < b;
    });
    const std::size_t take = std::max<std::size_t>(1, n / 10);
    const double T = static_cast<double>(stack.frame_count());

    std::vector<double> stds;
    stds.reserve(take);
    for (std::size_t k = 0; k < take; ++k) {
        const std::size_t px = by_mean[k];
        double var = 0.0;
        for (const Image& f : stack.frames) {
            const double d = f.pixels[px] - mean.pixels[px];
            var += d * d;
        }
        stds.push_back(std::sqrt(var / std::max(1.0, T - 1.0)));
    }
    std::sort(stds.begin(), stds.end());
    return stds[stds.size() / 2];
}

/// Per-frame background level: the 10th percentile of that frame's pixels.
inline std::vector<double> estimate_background(const FrameStack& stack) {
    stack.validate();
    std::vector<double> bg;
    bg.reserve(stack.frames.size());
    for (const Image& f : stack.frames) bg.push_back(detail::lower_percentile(f.pixels, 0.10));
    return bg;
}

/// Residual = data - background - emitting footprints of `others`.
inline ResidualStack build_residual(const FrameStack& stack,
                                    const std::vector<FluorophoreHypothesis>& others,
                                    const InferenceConfig& cfg) {
    stack.validate();
    const std::vector<double> bg = estimate_background(stack);
    ResidualStack res;
    res.width = stack.width();
    res.height = stack.height();
    res.frames.resize(stack.frames.size());
    for (std::size_t t = 0; t < stack.frames.size(); ++t) {
        res.frames[t] = stack.frames[t].pixels;
        for (double& v : res.frames[t]) v -= bg[t];
    }
    for (const FluorophoreHypothesis& h : others) {
        if (h.states.empty()) continue;
        if (h.states.size() != stack.frames.size()) {
            throw std::invalid_argument("hypothesis state path length must match frame count");
        }
        const detail::SpotFootprint fp = detail::compute_footprint(
            h.x, h.y, h.i0, h.sigma, cfg.scale, res.width, res.height, 4.0 * h.sigma);
        if (fp.empty()) continue;
        for (std::size_t t = 0; t < res.frames.size(); ++t) {
            if (h.states[t] != FluorophoreState::Emitting) continue;
            for (int ky = 0; ky < fp.lh; ++ky) {
                double* row = res.frames[t].data() + (fp.ly0 + ky) * res.width + fp.lx0;
                const double* src = fp.values.data() + static_cast<std::size_t>(ky) * fp.lw;
                for (int kx = 0; kx < fp.lw; ++kx) row[kx] -= src[kx];
            }
        }
    }
    return res;
}

/// Total Gaussian data log-likelihood of the stack given the hypotheses'
/// current states and parameters, with per-frame 10th-percentile background.
inline double frame_loglik(const FrameStack& stack,
                           const std::vector<FluorophoreHypothesis>& hypotheses,
                           const InferenceConfig& cfg) {
    stack.validate();
    const std::vector<double> bg = estimate_background(stack);
    const int W = stack.width();
    const int H = stack.height();
    const std::size_t T = stack.frames.size();

    std::vector<std::vector<double>> model(T,
                                           std::vector<double>(static_cast<std::size_t>(W) * H));
    for (const FluorophoreHypothesis& h : hypotheses) {
        if (h.states.empty()) continue;
        if (h.states.size() != T) {
            throw std::invalid_argument("hypothesis state path length must match frame count");
        }
        const detail::SpotFootprint fp =
            detail::compute_footprint(h.x, h.y, h.i0, h.sigma, cfg.scale, W, H, 4.0 * h.sigma);
        if (fp.empty()) continue;
        for (std::size_t t = 0; t < T; ++t) {
            if (h.states[t] != FluorophoreState::Emitting) continue;
            for (int ky = 0; ky < fp.lh; ++ky) {
                double* row = model[t].data() + (fp.ly0 + ky) * W + fp.lx0;
                const double* src = fp.values.data() + static_cast<std::size_t>(ky) * fp.lw;
                for (int kx = 0; kx < fp.lw; ++kx) row[kx] += src[kx];
            }
        }
    }

    const double inv_two_noise2 = 1.0 / (2.0 * cfg.noise_sigma * cfg.noise_sigma);
    const double log_norm = std::log(cfg.noise_sigma) + 0.5 * std::log(2.0 * 3.141592653589793);
    double loglik = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const std::vector<double>& data = stack.frames[t].pixels;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double r = data[i] - bg[t] - model[t][i];
            loglik -= r * r * inv_two_noise2;
        }
        loglik -= static_cast<double>(data.size()) * log_norm;
    }
    return loglik;
}

/// Candidate seeding from a prior image. Every prior pixel at or above
/// prior_threshold * max spawns one candidate at the pixel center plus a
/// uniform jitter of at most jitter_limit per axis, with brightness
/// sqrt(pixel value). Pixels are ranked brightest first and the candidate
/// cap (max_hypotheses scaled by canvas area relative to 480x480) is
/// applied after ranking. Jitter draws are keyed by source pixel, not by
/// visit order.
inline std::vector<FluorophoreHypothesis> initialize_from_prior(const Image& prior,
                                                                const InferenceConfig& cfg,
                                                                const Rng& rng) {
    prior.validate();
    cfg.validate();

    const double peak = prior.max_value();
    std::vector<std::pair<double, std::size_t>> ranked;  // (-value, pixel index)
    if (peak > 0.0) {
        const double cutoff = peak * cfg.prior_threshold;
        for (std::size_t i = 0; i < prior.pixels.size(); ++i) {
            const double v = prior.pixels[i];
            if (v > 0.0 && v >= cutoff) ranked.emplace_back(-v, i);
        }
    }
    std::sort(ranked.begin(), ranked.end());

    const double area_ratio = (static_cast<double>(prior.width) * prior.height) / (480.0 * 480.0);
    const std::size_t cap = static_cast<std::size_t>(
        std::max<long long>(8, std::llround(cfg.max_hypotheses * area_ratio)));
    if (ranked.size() > cap) ranked.resize(cap);

    const double x_max = std::nextafter(static_cast<double>(prior.width), 0.0);
    const double y_max = std::nextafter(static_cast<double>(prior.height), 0.0);
    std::vector<FluorophoreHypothesis> candidates;
    candidates.reserve(ranked.size());
    for (const auto& [neg_value, idx] : ranked) {
        const int px = static_cast<int>(idx % static_cast<std::size_t>(prior.width));
        const int py = static_cast<int>(idx / static_cast<std::size_t>(prior.width));
        Rng jitter = rng.substream(mix64(detail::kStreamInit, idx));
        FluorophoreHypothesis h;
        h.x = std::clamp(px + jitter.uniform(-cfg.jitter_limit, cfg.jitter_limit), 0.0, x_max);
        h.y = std::clamp(py + jitter.uniform(-cfg.jitter_limit, cfg.jitter_limit), 0.0, y_max);
        h.i0 = std::sqrt(-neg_value);
        h.sigma = cfg.initial_sigma;
        h.birth_key = mix64(detail::kBirthInit, idx);
        candidates.push_back(std::move(h));
    }
    return candidates;
}

/// State sweep for one hypothesis: samples a full path from the exact
/// conditional posterior given the residual, via forward filtering and
/// backward sampling. Emission scores compare "spot present" against "spot
/// absent" on the 4 sigma support, so only that box is touched.
inline void e_step_ffbs(FluorophoreHypothesis& h, const ResidualStack& residual,
                        const InferenceConfig& cfg, Rng& rng) {
    const detail::SpotFootprint fp = detail::compute_footprint(
        h.x, h.y, h.i0, h.sigma, cfg.scale, residual.width, residual.height, 4.0 * h.sigma);
    const std::size_t T = residual.frames.size();
    if (T == 0) throw std::invalid_argument("residual stack must not be empty");

    std::vector<StateDist> log_b(T, StateDist{0.0, 0.0, 0.0});
    if (!fp.empty()) {
        const double inv_noise2 = 1.0 / (cfg.noise_sigma * cfg.noise_sigma);
        for (std::size_t t = 0; t < T; ++t) {
            double dot = 0.0;
            for (int ky = 0; ky < fp.lh; ++ky) {
                const double* row =
                    residual.frames[t].data() + (fp.ly0 + ky) * residual.width + fp.lx0;
                const double* src = fp.values.data() + static_cast<std::size_t>(ky) * fp.lw;
                for (int kx = 0; kx < fp.lw; ++kx) dot += row[kx] * src[kx];
            }
            log_b[t][0] = (dot - 0.5 * fp.sum_sq) * inv_noise2;
        }
    }
    h.states = ffbs_sample(cfg.initial_state_probs, cfg.transfer.matrix(),
                           std::span<const StateDist>(log_b), rng);
}

/// MAP refit of one hypothesis's continuous parameters given its sampled
/// states. The support box is frozen at entry (4 sigma plus the jitter
/// allowance), making the objective smooth; the fit never decreases the
/// log posterior over that box. Returns false when the hypothesis has no
/// emitting frame (nothing to fit; callers treat that as a rejection).
inline bool m_step_map(FluorophoreHypothesis& h, const ResidualStack& residual,
                       const InferenceConfig& cfg) {
    if (h.states.size() != residual.frames.size()) {
        throw std::invalid_argument("hypothesis state path length must match frame count");
    }
    double n_emit = 0.0;
    for (FluorophoreState s : h.states) {
        if (s == FluorophoreState::Emitting) n_emit += 1.0;
    }
    if (n_emit == 0.0) return false;

    const int f = cfg.scale;
    const double half_extent = 4.0 * h.sigma + cfg.jitter_limit;
    const int lx0 = std::max(0, static_cast<int>(std::floor((h.x - half_extent) / f)));
    const int ly0 = std::max(0, static_cast<int>(std::floor((h.y - half_extent) / f)));
    const int lx1 =
        std::min(residual.width, static_cast<int>(std::floor((h.x + half_extent) / f)) + 1);
    const int ly1 =
        std::min(residual.height, static_cast<int>(std::floor((h.y + half_extent) / f)) + 1);
    const int lw = lx1 - lx0;
    const int lh = ly1 - ly0;
    if (lw <= 0 || lh <= 0) return false;

    std::vector<double> S(static_cast<std::size_t>(lw) * lh, 0.0);
    for (std::size_t t = 0; t < h.states.size(); ++t) {
        if (h.states[t] != FluorophoreState::Emitting) continue;
        for (int ky = 0; ky < lh; ++ky) {
            const double* row = residual.frames[t].data() + (ly0 + ky) * residual.width + lx0;
            double* acc = S.data() + static_cast<std::size_t>(ky) * lw;
            for (int kx = 0; kx < lw; ++kx) acc[kx] += row[kx];
        }
    }

    const detail::MStepOutcome fit =
        detail::m_step_on_stats(h, lx0, ly0, lw, lh, S, n_emit, cfg,
                                residual.width * f, residual.height * f);
    if (!fit.updated) return false;
    h.x = fit.x;
    h.y = fit.y;
    h.i0 = fit.i0;
    h.sigma = fit.sigma;
    return true;
}

/// Posterior odds test: compare the residual's likelihood with and without
/// the hypothesis's footprint on its emitting frames, add the prior odds,
/// accept when the odds strictly favor a real emitter. Everything stays in
/// log space, so a constant added to both likelihoods cancels exactly.
inline AcceptDecision accept_test(const FluorophoreHypothesis& h, const ResidualStack& residual,
                                  const InferenceConfig& cfg) {
    if (h.states.size() != residual.frames.size()) {
        throw std::invalid_argument("hypothesis state path length must match frame count");
    }
    const detail::SpotFootprint fp = detail::compute_footprint(
        h.x, h.y, h.i0, h.sigma, cfg.scale, residual.width, residual.height, 4.0 * h.sigma);

    AcceptDecision decision;
    if (!fp.empty()) {
        const double inv_noise2 = 1.0 / (cfg.noise_sigma * cfg.noise_sigma);
        for (std::size_t t = 0; t < h.states.size(); ++t) {
            if (h.states[t] != FluorophoreState::Emitting) continue;
            double dot = 0.0;
            for (int ky = 0; ky < fp.lh; ++ky) {
                const double* row =
                    residual.frames[t].data() + (fp.ly0 + ky) * residual.width + fp.lx0;
                const double* src = fp.values.data() + static_cast<std::size_t>(ky) * fp.lw;
                for (int kx = 0; kx < fp.lw; ++kx) dot += row[kx] * src[kx];
            }
            decision.delta_loglik += (dot - 0.5 * fp.sum_sq) * inv_noise2;
        }
    }
    decision.log_ratio = decision.delta_loglik + cfg.priors.log_odds();
    decision.accepted = decision.log_ratio > 0.0;
    return decision;
}

/// Proposes fresh candidates around accepted hypotheses: for each parent,
/// neighbors_per_fluorophore positions at distance (0, jitter_limit] and a
/// uniform angle, inheriting the parent's brightness and width. Proposals
/// landing within dedup_radius of an existing hypothesis or an earlier
/// proposal are dropped. Draws are keyed by (seed, parent, iteration, k),
/// so proposals do not depend on hypothesis visit order.
inline std::vector<FluorophoreHypothesis> expand_neighbors(
    const std::vector<FluorophoreHypothesis>& accepted, const InferenceConfig& cfg,
    std::uint64_t seed, int iteration, int hr_width, int hr_height) {
    detail::ProximityGrid grid;
    for (const FluorophoreHypothesis& h : accepted) grid.insert(h.x, h.y);

    const double x_max = std::nextafter(static_cast<double>(hr_width), 0.0);
    const double y_max = std::nextafter(static_cast<double>(hr_height), 0.0);
    const double two_pi = 6.283185307179586476925286766559;

    std::vector<FluorophoreHypothesis> proposals;
    for (const FluorophoreHypothesis& parent : accepted) {
        for (int k = 0; k < cfg.neighbors_per_fluorophore; ++k) {
            Rng rng(mix64(mix64(seed, detail::kStreamExpand, parent.birth_key),
                          mix64(static_cast<std::uint64_t>(iteration),
                                static_cast<std::uint64_t>(k))));
            const double dist = cfg.jitter_limit * (1.0 - rng.uniform01());  // (0, limit]
            const double angle = two_pi * rng.uniform01();
            const double x = std::clamp(parent.x + dist * std::cos(angle), 0.0, x_max);
            const double y = std::clamp(parent.y + dist * std::sin(angle), 0.0, y_max);
            if (cfg.dedup_radius > 0.0 && grid.any_within(x, y, cfg.dedup_radius)) continue;
            FluorophoreHypothesis h;
            h.x = x;
            h.y = y;
            h.i0 = parent.i0;
            h.sigma = parent.sigma;
            h.birth_key = mix64(detail::kBirthChild, parent.birth_key,
                                static_cast<std::uint64_t>(iteration),
                                static_cast<std::uint64_t>(k));
            grid.insert(x, y);
            proposals.push_back(std::move(h));
        }
    }
    return proposals;
}

// ---------------------------------------------------------------------------
// Full reconstruction.

namespace detail {

/// Expectation-maximization over the factorial chain. Keeps the summed
/// emitting-footprint model per frame and updates it incrementally as
/// hypotheses are revised, so per-hypothesis work touches only that
/// hypothesis's support box.
class ReconstructionEngine {
public:
    ReconstructionEngine(const FrameStack& stack, const Image& prior, InferenceConfig cfg)
        : stack_(stack), cfg_(std::move(cfg)) {
        stack_.validate();
        cfg_.validate();
        prior.validate();
        lr_width_ = stack_.width();
        lr_height_ = stack_.height();
        hr_width_ = lr_width_ * cfg_.scale;
        hr_height_ = lr_height_ * cfg_.scale;
        if (prior.width != hr_width_ || prior.height != hr_height_) {
            throw DimensionError("prior image must be stack dimensions times scale");
        }
        T_ = stack_.frames.size();
        background_ = estimate_background(stack_);
        model_.assign(T_, std::vector<double>(static_cast<std::size_t>(lr_width_) * lr_height_,
                                              0.0));
        const double area_ratio =
            (static_cast<double>(hr_width_) * hr_height_) / (480.0 * 480.0);
        cap_ = static_cast<std::size_t>(
            std::max<long long>(8, std::llround(cfg_.max_hypotheses * area_ratio)));

        const Rng master(cfg_.rng_seed);
        hyps_ = initialize_from_prior(prior, cfg_, master.substream(kStreamInit));
        footprints_.resize(hyps_.size());
    }

    ReconstructionResult run() {
        ReconstructionResult result;
        int plateau_run = 0;
        double prev_log_post = 0.0;

        for (int iter = 0; iter < cfg_.iterations; ++iter) {
            sweep(iter);
            expand(iter);

            IterationStats stats;
            stats.iteration = iter;
            stats.accepted = static_cast<int>(hyps_.size());
            stats.log_posterior = log_posterior();
            result.trace.push_back(stats);
            result.iterations_run = iter + 1;

            if (iter > 0) {
                const double change = std::abs(stats.log_posterior - prev_log_post);
                if (change <= cfg_.convergence_tol * (std::abs(prev_log_post) + 1e-12)) {
                    ++plateau_run;
                } else {
                    plateau_run = 0;
                }
            }
            prev_log_post = stats.log_posterior;
            if (plateau_run >= cfg_.plateau_iterations) break;
        }

        result.sr_raw = Image(hr_width_, hr_height_,
                              stack_.pixel_size_nm() / cfg_.scale);
        for (const FluorophoreHypothesis& h : hyps_) {
            render_psf(result.sr_raw, h.x, h.y, h.i0, h.sigma);
        }
        result.sr_image = result.sr_raw;
        const double peak = result.sr_image.max_value();
        if (peak > 0.0) {
            for (double& v : result.sr_image.pixels) v /= peak;
        }
        result.fluorophores = hyps_;
        return result;
    }

private:
    double residual_at(std::size_t t, int lx, int ly) const {
        const std::size_t idx = static_cast<std::size_t>(ly) * lr_width_ + lx;
        return stack_.frames[t].pixels[idx] - background_[t] - model_[t][idx];
    }

    void apply_footprint(const SpotFootprint& fp, const std::vector<FluorophoreState>& states,
                         double sign) {
        for (std::size_t t = 0; t < T_; ++t) {
            if (states[t] != FluorophoreState::Emitting) continue;
            for (int ky = 0; ky < fp.lh; ++ky) {
                double* row = model_[t].data() + (fp.ly0 + ky) * lr_width_ + fp.lx0;
                const double* src = fp.values.data() + static_cast<std::size_t>(ky) * fp.lw;
                for (int kx = 0; kx < fp.lw; ++kx) row[kx] += sign * src[kx];
            }
        }
    }

    /// MAP refit of one hypothesis against the current residual on its
    /// emitting frames. Returns false when there is nothing to fit or the
    /// support box misses the canvas.
    bool refit(FluorophoreHypothesis& h) {
        double n_emit = 0.0;
        for (FluorophoreState s : h.states) {
            if (s == FluorophoreState::Emitting) n_emit += 1.0;
        }
        if (n_emit == 0.0) return false;

        const int f = cfg_.scale;
        const double half_extent = 4.0 * h.sigma + cfg_.jitter_limit;
        const int lx0 = std::max(0, static_cast<int>(std::floor((h.x - half_extent) / f)));
        const int ly0 = std::max(0, static_cast<int>(std::floor((h.y - half_extent) / f)));
        const int lx1 =
            std::min(lr_width_, static_cast<int>(std::floor((h.x + half_extent) / f)) + 1);
        const int ly1 =
            std::min(lr_height_, static_cast<int>(std::floor((h.y + half_extent) / f)) + 1);
        const int lw = lx1 - lx0;
        const int lh = ly1 - ly0;
        if (lw <= 0 || lh <= 0) return false;

        std::vector<double> S(static_cast<std::size_t>(lw) * lh, 0.0);
        for (std::size_t t = 0; t < T_; ++t) {
            if (h.states[t] != FluorophoreState::Emitting) continue;
            for (int ky = 0; ky < lh; ++ky) {
                double* acc = S.data() + static_cast<std::size_t>(ky) * lw;
                for (int kx = 0; kx < lw; ++kx) acc[kx] += residual_at(t, lx0 + kx, ly0 + ky);
            }
        }
        const MStepOutcome fit =
            m_step_on_stats(h, lx0, ly0, lw, lh, S, n_emit, cfg_, hr_width_, hr_height_);
        if (!fit.updated) return false;
        h.x = fit.x;
        h.y = fit.y;
        h.i0 = fit.i0;
        h.sigma = fit.sigma;
        return true;
    }

    /// One full E / M / accept pass over a hypothesis, against the model
    /// with that hypothesis removed. Returns false when it must die.
    bool update_hypothesis(FluorophoreHypothesis& h, SpotFootprint& slot, int iter,
                           bool was_accepted) {
        // A hypothesis that has never been fit (a prior seed or an expansion
        // child) carries guessed position and brightness; judging it by the
        // state sampler as-is can condemn a genuinely bright spot whose
        // guess is a few pixels off. Adapt it to the data under an
        // all-emitting path before the first E-step.
        if (h.states.size() != T_) {
            h.states.assign(T_, FluorophoreState::Emitting);
            if (!refit(h)) return false;
        }

        // E-step: sample a state path.
        const SpotFootprint fp4 = compute_footprint(h.x, h.y, h.i0, h.sigma, cfg_.scale,
                                                    lr_width_, lr_height_, 4.0 * h.sigma);
        std::vector<StateDist> log_b(T_, StateDist{0.0, 0.0, 0.0});
        if (!fp4.empty()) {
            const double inv_noise2 = 1.0 / (cfg_.noise_sigma * cfg_.noise_sigma);
            for (std::size_t t = 0; t < T_; ++t) {
                double dot = 0.0;
                for (int ky = 0; ky < fp4.lh; ++ky) {
                    for (int kx = 0; kx < fp4.lw; ++kx) {
                        dot += fp4.values[static_cast<std::size_t>(ky) * fp4.lw + kx] *
                               residual_at(t, fp4.lx0 + kx, fp4.ly0 + ky);
                    }
                }
                log_b[t][0] = (dot - 0.5 * fp4.sum_sq) * inv_noise2;
            }
        }
        Rng estep_rng(mix64(mix64(cfg_.rng_seed, kStreamEstep, h.birth_key),
                            static_cast<std::uint64_t>(iter)));
        h.states = ffbs_sample(cfg_.initial_state_probs, cfg_.transfer.matrix(),
                               std::span<const StateDist>(log_b), estep_rng);

        // M-step on the sampled path.
        if (!refit(h)) return false;

        // Accept test at the refit parameters.
        SpotFootprint fp_new = compute_footprint(h.x, h.y, h.i0, h.sigma, cfg_.scale, lr_width_,
                                                 lr_height_, 4.0 * h.sigma);
        if (fp_new.empty()) return false;
        double delta = 0.0;
        const double inv_noise2 = 1.0 / (cfg_.noise_sigma * cfg_.noise_sigma);
        for (std::size_t t = 0; t < T_; ++t) {
            if (h.states[t] != FluorophoreState::Emitting) continue;
            double dot = 0.0;
            for (int ky = 0; ky < fp_new.lh; ++ky) {
                for (int kx = 0; kx < fp_new.lw; ++kx) {
                    dot += fp_new.values[static_cast<std::size_t>(ky) * fp_new.lw + kx] *
                           residual_at(t, fp_new.lx0 + kx, fp_new.ly0 + ky);
                }
            }
            delta += (dot - 0.5 * fp_new.sum_sq) * inv_noise2;
        }
        if (delta + cfg_.priors.log_odds() <= 0.0) return false;

        // Fresh candidates must clear the proximity check before joining.
        if (!was_accepted && cfg_.dedup_radius > 0.0 &&
            sweep_grid_.any_within(h.x, h.y, cfg_.dedup_radius)) {
            return false;
        }

        apply_footprint(fp_new, h.states, +1.0);
        slot = std::move(fp_new);
        h.accepted = true;
        sweep_grid_.insert(h.x, h.y);
        return true;
    }

    void sweep(int iter) {
        sweep_grid_ = ProximityGrid();
        for (const FluorophoreHypothesis& h : hyps_) {
            if (h.accepted) sweep_grid_.insert(h.x, h.y);
        }

        Rng order_rng(mix64(cfg_.rng_seed, kStreamOrder, static_cast<std::uint64_t>(iter)));
        const std::vector<std::size_t> order = random_permutation(hyps_.size(), order_rng);

        std::vector<bool> alive(hyps_.size(), true);
        for (std::size_t idx : order) {
            FluorophoreHypothesis& h = hyps_[idx];
            const bool was_accepted = h.accepted;
            if (was_accepted) {
                apply_footprint(footprints_[idx], h.states, -1.0);
                h.accepted = false;
            }
            alive[idx] = update_hypothesis(h, footprints_[idx], iter, was_accepted);
        }

        std::size_t keep = 0;
        for (std::size_t i = 0; i < hyps_.size(); ++i) {
            if (!alive[i]) continue;
            if (keep != i) {
                hyps_[keep] = std::move(hyps_[i]);
                footprints_[keep] = std::move(footprints_[i]);
            }
            ++keep;
        }
        hyps_.resize(keep);
        footprints_.resize(keep);
    }

    void expand(int iter) {
        if (cfg_.neighbors_per_fluorophore <= 0 || hyps_.empty()) return;
        if (hyps_.size() >= cap_) return;
        const std::vector<FluorophoreHypothesis> proposals = expand_neighbors(
            hyps_, cfg_, cfg_.rng_seed, iter, hr_width_, hr_height_);
        for (const FluorophoreHypothesis& p : proposals) {
            if (hyps_.size() >= cap_) break;
            FluorophoreHypothesis h = p;
            SpotFootprint slot;
            if (update_hypothesis(h, slot, iter, /*was_accepted=*/false)) {
                hyps_.push_back(std::move(h));
                footprints_.push_back(std::move(slot));
            }
        }
    }

    /// Data log-likelihood over all frames and pixels plus the brightness
    /// priors and existence priors of the accepted set.
    double log_posterior() const {
        const double inv_two_noise2 = 1.0 / (2.0 * cfg_.noise_sigma * cfg_.noise_sigma);
        const double log_norm =
            std::log(cfg_.noise_sigma) + 0.5 * std::log(2.0 * 3.141592653589793);
        double total = 0.0;
        for (std::size_t t = 0; t < T_; ++t) {
            const std::vector<double>& data = stack_.frames[t].pixels;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double r = data[i] - background_[t] - model_[t][i];
                total -= r * r * inv_two_noise2;
            }
            total -= static_cast<double>(data.size()) * log_norm;
        }
        for (const FluorophoreHypothesis& h : hyps_) {
            if (cfg_.photon.log_sigma > 0.0) {
                const double z = std::log(h.i0) - cfg_.photon.log_mu;
                total -= std::log(h.i0) +
                         0.5 * z * z / (cfg_.photon.log_sigma * cfg_.photon.log_sigma);
            }
            total += std::log(cfg_.priors.p_f);
        }
        return total;
    }

    FrameStack stack_;
    InferenceConfig cfg_;
    int lr_width_ = 0, lr_height_ = 0, hr_width_ = 0, hr_height_ = 0;
    std::size_t T_ = 0;
    std::size_t cap_ = 0;
    std::vector<double> background_;
    std::vector<std::vector<double>> model_;
    std::vector<FluorophoreHypothesis> hyps_;
    std::vector<SpotFootprint> footprints_;
    ProximityGrid sweep_grid_;
};

}  // namespace detail

/// Full Bayesian reconstruction: seed candidates from the prior image, then
/// run EM sweeps (state sampling, MAP refit, posterior odds accept test)
/// with periodic neighborhood expansion, stopping early when the posterior
/// plateaus. Deterministic in config.rng_seed.
inline ReconstructionResult reconstruct(const FrameStack& stack, const Image& prior,
                                        const InferenceConfig& cfg) {
    detail::ReconstructionEngine engine(stack, prior, cfg);
    return engine.run();
}

}  // namespace fluoroforge
