#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "image.hpp"
#include "inference.hpp"
#include "metrics.hpp"
#include "photophysics.hpp"
#include "simulator.hpp"
#include "tiling.hpp"

namespace fluoroforge {

struct SimulateOptions {
    std::filesystem::path input;
    std::filesystem::path profile;
    std::filesystem::path out;
    int frames = 200;
    int scale = 8;
    std::uint64_t seed = 0;
    double count_scale = 1.0;
    bool emit_ground_truth = false;
};

struct ReconstructOptions {
    std::filesystem::path stack_dir;
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> prior_path;
    std::optional<std::filesystem::path> profile_path;
    int iterations = 60;
    std::optional<std::pair<int, int>> tile;  // low-res tile width, height
    int overlap = 0;
    int jobs = 0;  // 0 = auto (hardware, capped by FLUOROFORGE_THREADS)
    std::uint64_t seed = 0;
};

struct ReconstructSummary {
    int tiles = 0;
    int jobs = 0;
    std::size_t fluorophores = 0;
    std::filesystem::path sr_path;
};

struct EvaluateOptions {
    std::filesystem::path recon;
    std::optional<std::filesystem::path> truth;
    std::optional<std::filesystem::path> stack;
};

inline void run_simulate(const SimulateOptions& opts) {
    if (opts.frames <= 0) throw std::invalid_argument("--frames must be positive");
    if (opts.scale <= 0) throw std::invalid_argument("--scale must be positive");
    const Image density = load_image(opts.input);
    const CalibrationProfile profile = load_profile(opts.profile);

    SimulationConfig config;
    config.frames = opts.frames;
    config.scale = opts.scale;
    config.count_scale = opts.count_scale;
    config.rng_seed = opts.seed;
    config.emit_ground_truth = opts.emit_ground_truth;

    const SimulationOutput output = simulate_stack(density, profile, config);
    save_stack(output.stack, opts.out, opts.scale, opts.seed, profile_digest(profile));
    if (opts.emit_ground_truth) {
        FrameStack truth;
        truth.exposure_ms = output.stack.exposure_ms;
        truth.frames = output.ground_truth;
        save_stack(truth, opts.out / "ground_truth", 1, opts.seed, profile_digest(profile));
    }
}

namespace detail {

inline int default_jobs() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("FLUOROFORGE_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap > 0) n = std::min(n, static_cast<unsigned>(cap));
        } catch (...) {
            // Unparseable cap is ignored; an env var must never break a run.
        }
    }
    return static_cast<int>(n);
}

constexpr std::uint64_t kStreamTile = 0x74696c65;

}  // namespace detail

/// Default prior when no image is supplied: bicubic upsample of the
/// temporal mean, rescaled so its peak is 1.
inline Image default_prior(const FrameStack& stack, int scale) {
    Image prior = upsample_bicubic(temporal_mean(stack), scale);
    const double peak = prior.max_value();
    if (peak > 0.0) {
        for (double& v : prior.pixels) v /= peak;
    }
    return prior;
}

inline ReconstructSummary run_reconstruct(const ReconstructOptions& opts) {
    if (opts.iterations <= 0) throw std::invalid_argument("--iters must be positive");
    if (opts.jobs < 0) throw std::invalid_argument("--jobs must be positive");
    const StackManifest manifest = load_manifest(opts.stack_dir);
    const FrameStack stack = load_stack(opts.stack_dir);
    const int scale = manifest.scale_factor;
    if (scale <= 0) throw IoError("manifest declares non-positive scale_factor");

    InferenceConfig cfg;
    cfg.iterations = opts.iterations;
    cfg.scale = scale;
    cfg.rng_seed = opts.seed;
    if (opts.profile_path) {
        const CalibrationProfile profile = load_profile(*opts.profile_path);
        cfg.transfer = profile.transfer;
        cfg.photon = profile.photon;
        cfg.noise_sigma = std::max(profile.noise_sigma, 1e-6);
        cfg.initial_state_probs = profile.initial_state_probs;
    } else {
        cfg.noise_sigma = std::max(estimate_noise_sigma(stack), 1e-6);
    }

    Image prior;
    if (opts.prior_path) {
        prior = load_image(*opts.prior_path);
        if (prior.width != stack.width() * scale || prior.height != stack.height() * scale) {
            throw DimensionError(
                "prior is " + std::to_string(prior.width) + "x" + std::to_string(prior.height) +
                " but the stack requires " + std::to_string(stack.width() * scale) + "x" +
                std::to_string(stack.height() * scale));
        }
    } else {
        prior = default_prior(stack, scale);
    }

    std::vector<TileSpec> tiles;
    if (opts.tile) {
        tiles = split_tiles(stack.width(), stack.height(), opts.tile->first, opts.tile->second,
                            opts.overlap);
    } else {
        tiles.push_back(TileSpec{0, 0, stack.width(), stack.height(), 0});
    }

    int jobs = opts.jobs > 0 ? opts.jobs : detail::default_jobs();
    jobs = std::min<int>(jobs, static_cast<int>(tiles.size()));

    // Tiles are reconstructed independently, each from its own seed stream;
    // the outcome cannot depend on which worker picks which tile.
    std::vector<ReconstructionResult> results(tiles.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    auto work = [&]() {
        for (std::size_t i = next.fetch_add(1); i < tiles.size(); i = next.fetch_add(1)) {
            try {
                const TileSpec& tile = tiles[i];
                const FrameStack tile_stack = crop(stack, tile.x, tile.y, tile.w, tile.h);
                const Image tile_prior = crop(prior, tile.x * scale, tile.y * scale,
                                              tile.w * scale, tile.h * scale);
                InferenceConfig tile_cfg = cfg;
                tile_cfg.rng_seed = mix64(opts.seed, mix64(detail::kStreamTile, i));
                results[i] = reconstruct(tile_stack, tile_prior, tile_cfg);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (jobs <= 1) {
        work();
    } else {
        std::vector<std::thread> workers;
        workers.reserve(static_cast<std::size_t>(jobs));
        for (int i = 0; i < jobs; ++i) workers.emplace_back(work);
        for (std::thread& w : workers) w.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<Image> renders;
    renders.reserve(results.size());
    for (const ReconstructionResult& r : results) renders.push_back(r.sr_raw);
    Image sr = stitch(tiles, renders, scale, stack.width(), stack.height());
    const double peak = sr.max_value();
    if (peak > 0.0) {
        for (double& v : sr.pixels) v /= peak;
    }

    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + opts.out_dir.string());
    save_image(sr, opts.out_dir / "sr.png");

    nlohmann::ordered_json fluor_json = nlohmann::ordered_json::array();
    std::size_t fluor_count = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const double ox = tiles[i].x * static_cast<double>(scale);
        const double oy = tiles[i].y * static_cast<double>(scale);
        for (const FluorophoreHypothesis& h : results[i].fluorophores) {
            fluor_json.push_back({{"x", h.x + ox}, {"y", h.y + oy}, {"i0", h.i0},
                                  {"sigma", h.sigma}});
            ++fluor_count;
        }
    }
    std::ofstream fluor_out(opts.out_dir / "fluorophores.json");
    if (!fluor_out) throw IoError("cannot write fluorophores.json");
    fluor_out << fluor_json.dump(2) << "\n";

    nlohmann::ordered_json trace_json;
    trace_json["tiles"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        nlohmann::ordered_json tile_json;
        tile_json["x"] = tiles[i].x;
        tile_json["y"] = tiles[i].y;
        tile_json["w"] = tiles[i].w;
        tile_json["h"] = tiles[i].h;
        tile_json["iterations"] = nlohmann::ordered_json::array();
        for (const IterationStats& s : results[i].trace) {
            tile_json["iterations"].push_back({{"iteration", s.iteration},
                                               {"log_posterior", s.log_posterior},
                                               {"accepted", s.accepted}});
        }
        trace_json["tiles"].push_back(std::move(tile_json));
    }
    std::ofstream trace_out(opts.out_dir / "trace.json");
    if (!trace_out) throw IoError("cannot write trace.json");
    trace_out << trace_json.dump(2) << "\n";

    ReconstructSummary summary;
    summary.tiles = static_cast<int>(tiles.size());
    summary.jobs = jobs;
    summary.fluorophores = fluor_count;
    summary.sr_path = opts.out_dir / "sr.png";
    return summary;
}

/// Computes the requested metrics and returns the JSON text printed by the
/// evaluate command. PSNR/SSIM need a ground-truth image of the recon's
/// dimensions; RSP/RSE need the source stack (reference = temporal mean).
inline std::string run_evaluate(const EvaluateOptions& opts) {
    if (!opts.truth && !opts.stack) {
        throw std::invalid_argument("evaluate requires --truth and/or --stack");
    }
    const Image recon = load_image(opts.recon);
    nlohmann::ordered_json j;

    if (opts.truth) {
        const Image truth = load_image(*opts.truth);
        if (!truth.same_shape(recon)) {
            throw DimensionError("recon is " + std::to_string(recon.width) + "x" +
                                 std::to_string(recon.height) + " but truth is " +
                                 std::to_string(truth.width) + "x" +
                                 std::to_string(truth.height));
        }
        const double p = psnr(truth, recon, 1.0);
        if (std::isinf(p)) {
            j["psnr_db"] = "+inf";
        } else {
            j["psnr_db"] = p;
        }
        j["ssim"] = ssim(truth, recon);
    }

    if (opts.stack) {
        const FrameStack stack = load_stack(*opts.stack);
        const Image reference = temporal_mean(stack);
        if (reference.width <= 0 || recon.width % reference.width != 0 ||
            recon.height % reference.height != 0 ||
            recon.width / reference.width != recon.height / reference.height) {
            throw DimensionError("recon is " + std::to_string(recon.width) + "x" +
                                 std::to_string(recon.height) +
                                 " which is not an integer multiple of the stack's " +
                                 std::to_string(reference.width) + "x" +
                                 std::to_string(reference.height));
        }
        const int scale = recon.width / reference.width;
        const SquirrelFit fit = rsp_rse(reference, recon, scale);
        j["rsp"] = fit.rsp;
        j["rse"] = fit.rse;
        j["sigma_star"] = fit.sigma_star;
        j["alpha"] = fit.alpha;
        j["beta"] = fit.beta;
    }
    return j.dump(2);
}

}  // namespace fluoroforge
