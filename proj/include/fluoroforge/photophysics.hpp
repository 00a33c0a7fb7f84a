#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "image.hpp"
#include "rng.hpp"

namespace fluoroforge {

/// Photoswitching states. Bleached is absorbing.
enum class FluorophoreState : int { Emitting = 0, Dark = 1, Bleached = 2 };

constexpr int kStateCount = 3;

/// Per-frame Markov transition table parameterized by five probabilities:
///   p1 = P(Emitting -> Emitting)
///   p2 = P(Emitting -> Dark)       (Emitting -> Bleached = 1 - p1 - p2)
///   p3 = P(Dark -> Emitting)
///   p4 = P(Dark -> Dark)
///   p5 = P(Dark -> Bleached)
/// Bleached is absorbing by construction.
class TransferTable {
public:
    TransferTable() : TransferTable(0.3, 0.65, 0.05, 0.935, 0.015) {}

    TransferTable(double p1, double p2, double p3, double p4, double p5)
        : p_{p1, p2, p3, p4, p5} {
        for (double p : p_) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw std::invalid_argument("transfer probabilities must lie in [0, 1]");
            }
        }
        if (p1 + p2 > 1.0 + 1e-9) {
            throw std::invalid_argument("p1 + p2 must not exceed 1");
        }
        if (std::abs(p3 + p4 + p5 - 1.0) > 1e-9) {
            throw std::invalid_argument("p3 + p4 + p5 must sum to 1");
        }
        rows_[0] = {p1, p2, std::max(0.0, 1.0 - p1 - p2)};
        rows_[1] = {p3, p4, p5};
        rows_[2] = {0.0, 0.0, 1.0};
    }

    double p1() const { return p_[0]; }
    double p2() const { return p_[1]; }
    double p3() const { return p_[2]; }
    double p4() const { return p_[3]; }
    double p5() const { return p_[4]; }

    const std::array<double, kStateCount>& row(FluorophoreState from) const {
        return rows_[static_cast<int>(from)];
    }

    double prob(FluorophoreState from, FluorophoreState to) const {
        return rows_[static_cast<int>(from)][static_cast<int>(to)];
    }

    const std::array<std::array<double, kStateCount>, kStateCount>& matrix() const {
        return rows_;
    }

private:
    std::array<double, 5> p_;
    std::array<std::array<double, kStateCount>, kStateCount> rows_;
};

/// Discrete distribution over point spread function widths, expressed as
/// (fwhm, weight) rows. Widths are in high-resolution pixels.
struct PsfModel {
    std::vector<std::pair<double, double>> fwhm_table;

    void validate() const {
        if (fwhm_table.empty()) throw std::invalid_argument("psf fwhm table must not be empty");
        double weight_sum = 0.0;
        for (const auto& [fwhm, weight] : fwhm_table) {
            if (!(fwhm > 0.0)) throw std::invalid_argument("psf fwhm must be positive");
            if (!(weight >= 0.0)) throw std::invalid_argument("psf weight must be >= 0");
            weight_sum += weight;
        }
        if (!(weight_sum > 0.0)) throw std::invalid_argument("psf weights must not all be zero");
    }
};

/// Log-normal emission brightness: intensity = exp(N(log_mu, log_sigma)).
struct PhotonModel {
    double log_mu = -0.5108256237659907;  // ln 0.6
    double log_sigma = 0.3;

    void validate() const {
        if (!std::isfinite(log_mu)) throw std::invalid_argument("photon log_mu must be finite");
        if (!(log_sigma >= 0.0)) throw std::invalid_argument("photon log_sigma must be >= 0");
    }
};

/// Bundle of everything the simulator needs to mimic one dye and camera.
struct CalibrationProfile {
    TransferTable transfer{};
    PsfModel psf{{{6.0, 0.5}, {7.0, 0.3}, {8.0, 0.2}}};
    PhotonModel photon{};
    std::array<double, 2> background_factor_range{0.05, 0.15};
    double noise_sigma = 0.01;
    std::array<double, kStateCount> initial_state_probs{0.1, 0.9, 0.0};

    void validate() const {
        psf.validate();
        photon.validate();
        if (!(background_factor_range[0] >= 0.0) ||
            !(background_factor_range[1] >= background_factor_range[0])) {
            throw std::invalid_argument("background factor range must satisfy 0 <= lo <= hi");
        }
        if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
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

/// Built-in profile matching a photoactivatable dye imaged at high frame
/// rate. Same numbers as profiles/meos32.json.
inline CalibrationProfile default_profile() {
    return CalibrationProfile{};
}

// ---------------------------------------------------------------------------
// Profile JSON round trip.

inline CalibrationProfile profile_from_json(const nlohmann::json& j) {
    CalibrationProfile p;
    try {
        const auto& t = j.at("transfer");
        p.transfer = TransferTable(t.at("p1").get<double>(), t.at("p2").get<double>(),
                                   t.at("p3").get<double>(), t.at("p4").get<double>(),
                                   t.at("p5").get<double>());
        p.psf.fwhm_table.clear();
        for (const auto& row : j.at("psf").at("fwhm_table")) {
            if (!row.is_array() || row.size() != 2) {
                throw std::invalid_argument("psf fwhm_table rows must be [fwhm, weight] pairs");
            }
            p.psf.fwhm_table.emplace_back(row[0].get<double>(), row[1].get<double>());
        }
        p.photon.log_mu = j.at("photon").at("log_mu").get<double>();
        p.photon.log_sigma = j.at("photon").at("log_sigma").get<double>();
        const auto& bg = j.at("background_factor_range");
        if (!bg.is_array() || bg.size() != 2) {
            throw std::invalid_argument("background_factor_range must be [lo, hi]");
        }
        p.background_factor_range = {bg[0].get<double>(), bg[1].get<double>()};
        p.noise_sigma = j.at("noise_sigma").get<double>();
        const auto& init = j.at("initial_state_probs");
        if (!init.is_array() || init.size() != 3) {
            throw std::invalid_argument("initial_state_probs must have three entries");
        }
        p.initial_state_probs = {init[0].get<double>(), init[1].get<double>(),
                                 init[2].get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed calibration profile: ") + e.what());
    }
    p.validate();
    return p;
}

inline nlohmann::ordered_json profile_to_json(const CalibrationProfile& p) {
    nlohmann::ordered_json j;
    j["transfer"] = {{"p1", p.transfer.p1()},
                     {"p2", p.transfer.p2()},
                     {"p3", p.transfer.p3()},
                     {"p4", p.transfer.p4()},
                     {"p5", p.transfer.p5()}};
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const auto& [fwhm, weight] : p.psf.fwhm_table) {
        table.push_back({fwhm, weight});
    }
    j["psf"] = {{"fwhm_table", table}};
    j["photon"] = {{"log_mu", p.photon.log_mu}, {"log_sigma", p.photon.log_sigma}};
    j["background_factor_range"] = {p.background_factor_range[0], p.background_factor_range[1]};
    j["noise_sigma"] = p.noise_sigma;
    j["initial_state_probs"] = {p.initial_state_probs[0], p.initial_state_probs[1],
                                p.initial_state_probs[2]};
    return j;
}

inline CalibrationProfile load_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open calibration profile: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed calibration profile " + path.string() + ": " + e.what());
    }
    return profile_from_json(j);
}

inline void save_profile(const CalibrationProfile& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write calibration profile: " + path.string());
    out << profile_to_json(p).dump(2) << "\n";
}

/// FNV-1a hash of the canonical serialization, as 16 hex digits. Stored in
/// stack manifests so a reconstruction can tell which calibration produced
/// its input.
inline std::string profile_digest(const CalibrationProfile& p) {
    const std::string text = profile_to_json(p).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Sampling and rendering primitives.

/// One Markov step. Consumes exactly one draw.
inline FluorophoreState step_state(FluorophoreState current, const TransferTable& table,
                                   Rng& rng) {
    if (current == FluorophoreState::Bleached) {
        rng.uniform01();  // keep draw counts state-independent
        return FluorophoreState::Bleached;
    }
    const auto& row = table.row(current);
    return static_cast<FluorophoreState>(rng.categorical(std::span<const double>(row)));
}

/// Gaussian sigma for a given full width at half maximum.
inline double fwhm_to_sigma(double fwhm) {
    if (!(fwhm > 0.0)) throw std::invalid_argument("fwhm must be positive");
    const double two_sqrt_two_ln_two = 2.3548200450309493;
    return fwhm / two_sqrt_two_ln_two;
}

/// Draws a width from the mixture table and converts it to sigma.
inline double sample_psf_width(const PsfModel& psf, Rng& rng) {
    psf.validate();
    thread_local std::vector<double> weights;
    weights.clear();
    for (const auto& [fwhm, weight] : psf.fwhm_table) weights.push_back(weight);
    const std::size_t idx = rng.categorical(std::span<const double>(weights));
    return fwhm_to_sigma(psf.fwhm_table[idx].first);
}

inline double sample_photon_intensity(const PhotonModel& photon, Rng& rng) {
    photon.validate();
    return rng.log_normal(photon.log_mu, photon.log_sigma);
}

/// Adds an isotropic Gaussian spot to the canvas:
///   value(x, y) += i0 * exp(-((x - x0)^2 + (y - y0)^2) / (2 sigma^2))
/// sampled at pixel centers and truncated at radius 4 sigma (the discarded
/// mass is below 0.04% of the peak).
inline void render_psf(Image& canvas, double x0, double y0, double i0, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("psf sigma must be positive");
    if (!(i0 >= 0.0)) throw std::invalid_argument("psf intensity must be >= 0");
    const double radius = 4.0 * sigma;
    const double r2 = radius * radius;
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    const int x_lo = std::max(0, static_cast<int>(std::ceil(x0 - radius)));
    const int x_hi = std::min(canvas.width - 1, static_cast<int>(std::floor(x0 + radius)));
    const int y_lo = std::max(0, static_cast<int>(std::ceil(y0 - radius)));
    const int y_hi = std::min(canvas.height - 1, static_cast<int>(std::floor(y0 + radius)));
    for (int y = y_lo; y <= y_hi; ++y) {
        const double dy = y - y0;
        for (int x = x_lo; x <= x_hi; ++x) {
            const double dx = x - x0;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= r2) {
                canvas.at(x, y) += i0 * std::exp(-d2 * inv_two_sigma2);
            }
        }
    }
}

}  // namespace fluoroforge
