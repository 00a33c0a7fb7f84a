#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "image.hpp"
#include "photophysics.hpp"
#include "rng.hpp"

namespace fluoroforge {

/// One simulated emitter. Position is continuous, in high-resolution pixel
/// units, within [0, width) x [0, height).
struct Fluorophore {
    double x = 0.0;
    double y = 0.0;
    FluorophoreState state = FluorophoreState::Dark;
    double base_sigma = 0.0;  // last sampled width; resampled per emission event
    int id = 0;
};

struct SimulationConfig {
    int frames = 200;
    int scale = 8;              // high-res pixels per low-res pixel, per axis
    double count_scale = 1.0;   // Poisson mean per unit density
    std::uint64_t rng_seed = 0;
    double exposure_ms = 50.0;
    bool emit_ground_truth = false;
};

struct SimulationOutput {
    FrameStack stack;                        // low resolution, noisy
    std::vector<Image> ground_truth;         // high resolution, noiseless (optional)
    std::vector<Fluorophore> initial_population;
    double background_factor = 0.0;
};

namespace detail {

// Substream tags. Arbitrary distinct constants; changing them changes every
// simulated dataset, so they are pinned.
constexpr std::uint64_t kStreamPopulate = 0x706f70;
constexpr std::uint64_t kStreamBackground = 0x626b67;
constexpr std::uint64_t kStreamFluorophore = 0x666c72;
constexpr std::uint64_t kStreamNoise = 0x6e7a;

}  // namespace detail

/// Draws emitters from a density map. Each pixel contributes
/// Poisson(count_scale * value) fluorophores placed uniformly inside that
/// pixel, with initial states drawn from initial_state_probs. Pixels are
/// visited in row-major order, so the draw sequence is reproducible.
inline std::vector<Fluorophore> populate_fluorophores(
    const Image& density, double count_scale,
    const std::array<double, kStateCount>& initial_state_probs, Rng& rng) {
    density.validate();
    if (!(count_scale >= 0.0)) throw std::invalid_argument("count_scale must be >= 0");

    std::vector<Fluorophore> population;
    const double x_max = std::nextafter(static_cast<double>(density.width), 0.0);
    const double y_max = std::nextafter(static_cast<double>(density.height), 0.0);
    for (int py = 0; py < density.height; ++py) {
        for (int px = 0; px < density.width; ++px) {
            const long n = rng.poisson(count_scale * density.at(px, py));
            for (long k = 0; k < n; ++k) {
                Fluorophore f;
                f.x = std::clamp(px + rng.uniform(-0.5, 0.5), 0.0, x_max);
                f.y = std::clamp(py + rng.uniform(-0.5, 0.5), 0.0, y_max);
                f.state = static_cast<FluorophoreState>(
                    rng.categorical(std::span<const double>(initial_state_probs)));
                f.id = static_cast<int>(population.size());
                population.push_back(f);
            }
        }
    }
    return population;
}

/// Advances every fluorophore one Markov step and renders the emitting ones
/// onto a fresh high-resolution canvas. streams[i] drives fluorophore i and
/// nothing else, so one emitter's draw sequence is independent of the rest
/// of the population. Per emission event the width is drawn first, then the
/// brightness.
inline Image simulate_frame(std::vector<Fluorophore>& population, std::span<Rng> streams,
                            const CalibrationProfile& profile, int width, int height,
                            double pixel_size_nm = 20.0) {
    if (streams.size() != population.size()) {
        throw std::invalid_argument("one rng stream per fluorophore is required");
    }
    Image canvas(width, height, pixel_size_nm);
    for (std::size_t i = 0; i < population.size(); ++i) {
        Fluorophore& f = population[i];
        f.state = step_state(f.state, profile.transfer, streams[i]);
        if (f.state == FluorophoreState::Emitting) {
            f.base_sigma = sample_psf_width(profile.psf, streams[i]);
            const double i0 = sample_photon_intensity(profile.photon, streams[i]);
            render_psf(canvas, f.x, f.y, i0, f.base_sigma);
        }
    }
    return canvas;
}

/// Uniform background proportional to the frame's own mean intensity.
inline Image add_background(const Image& img, double strength_factor) {
    if (!(strength_factor >= 0.0)) {
        throw std::invalid_argument("background strength factor must be >= 0");
    }
    Image out = img;
    const double level = strength_factor * img.mean();
    for (double& v : out.pixels) v += level;
    return out;
}

/// Full forward simulation: populate once, then per frame render at high
/// resolution, add background (strength drawn once per stack), block-average
/// down by config.scale and add clamped Gaussian read noise. Deterministic
/// in config.rng_seed.
inline SimulationOutput simulate_stack(const Image& density, const CalibrationProfile& profile,
                                       const SimulationConfig& config) {
    density.validate();
    profile.validate();
    if (config.frames <= 0) throw std::invalid_argument("frame count must be positive");
    if (config.scale <= 0) throw std::invalid_argument("scale must be positive");
    if (density.width % config.scale != 0 || density.height % config.scale != 0) {
        throw DimensionError("scale must divide density map dimensions");
    }

    const Rng master(config.rng_seed);
    Rng populate_rng = master.substream(detail::kStreamPopulate);
    Rng background_rng = master.substream(detail::kStreamBackground);

    SimulationOutput out;
    std::vector<Fluorophore> population = populate_fluorophores(
        density, config.count_scale, profile.initial_state_probs, populate_rng);
    out.initial_population = population;
    out.background_factor = background_rng.uniform(profile.background_factor_range[0],
                                                   profile.background_factor_range[1]);

    std::vector<Rng> streams;
    streams.reserve(population.size());
    for (const Fluorophore& f : population) {
        streams.push_back(master.substream(mix64(detail::kStreamFluorophore,
                                                 static_cast<std::uint64_t>(f.id))));
    }

    out.stack.exposure_ms = config.exposure_ms;
    out.stack.frames.reserve(static_cast<std::size_t>(config.frames));
    for (int t = 0; t < config.frames; ++t) {
        Image frame = simulate_frame(population, streams, profile, density.width,
                                     density.height, density.pixel_size_nm);
        if (config.emit_ground_truth) out.ground_truth.push_back(frame);
        const Image with_bg = add_background(frame, out.background_factor);
        const Image low = downsample(with_bg, config.scale);
        Rng noise_rng =
            master.substream(mix64(detail::kStreamNoise, static_cast<std::uint64_t>(t)));
        out.stack.frames.push_back(add_gaussian_noise(low, profile.noise_sigma, noise_rng));
    }
    return out;
}

}  // namespace fluoroforge
