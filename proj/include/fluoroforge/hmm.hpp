#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "photophysics.hpp"
#include "rng.hpp"

namespace fluoroforge {

using StateDist = std::array<double, kStateCount>;
using TransMatrix = std::array<std::array<double, kStateCount>, kStateCount>;

struct ForwardResult {
    std::vector<StateDist> alpha;  // filtered posteriors P(s_t | y_1..t)
    double log_evidence = 0.0;     // log P(y_1..T)
};

/// Normalized forward filtering over a 3-state chain with log-space emission
/// scores. Emissions are rescaled per step relative to their maximum over
/// states that are reachable (positive predictive mass), which keeps the
/// recursion finite for arbitrarily large log-score gaps.
inline ForwardResult forward_filter(const StateDist& initial, const TransMatrix& transition,
                                    std::span<const StateDist> log_emissions) {
    const std::size_t T = log_emissions.size();
    if (T == 0) throw std::invalid_argument("forward filter requires at least one step");

    ForwardResult result;
    result.alpha.resize(T);

    StateDist predictive = initial;
    for (std::size_t t = 0; t < T; ++t) {
        double max_reachable = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < kStateCount; ++s) {
            if (predictive[s] > 0.0) max_reachable = std::max(max_reachable, log_emissions[t][s]);
        }
        if (!std::isfinite(max_reachable)) {
            throw std::invalid_argument("forward filter: no reachable state has finite score");
        }
        StateDist unnorm{};
        double norm = 0.0;
        for (int s = 0; s < kStateCount; ++s) {
            unnorm[s] = predictive[s] * std::exp(log_emissions[t][s] - max_reachable);
            norm += unnorm[s];
        }
        result.log_evidence += max_reachable + std::log(norm);
        for (int s = 0; s < kStateCount; ++s) result.alpha[t][s] = unnorm[s] / norm;

        if (t + 1 < T) {
            StateDist next{};
            for (int from = 0; from < kStateCount; ++from) {
                for (int to = 0; to < kStateCount; ++to) {
                    next[to] += result.alpha[t][from] * transition[from][to];
                }
            }
            predictive = next;
        }
    }
    return result;
}

/// Draws one state path from the exact joint posterior given the filtered
/// distributions: sample s_T from alpha_T, then walk backwards weighting by
/// alpha_t(s) * A(s, s_{t+1}).
inline std::vector<FluorophoreState> backward_sample(const TransMatrix& transition,
                                                     const std::vector<StateDist>& alpha,
                                                     Rng& rng) {
    if (alpha.empty()) throw std::invalid_argument("backward sample requires filtered marginals");
    const std::size_t T = alpha.size();
    std::vector<FluorophoreState> path(T);

    std::size_t current = rng.categorical(std::span<const double>(alpha[T - 1]));
    path[T - 1] = static_cast<FluorophoreState>(current);
    for (std::size_t t = T - 1; t-- > 0;) {
        StateDist weights{};
        for (int s = 0; s < kStateCount; ++s) {
            weights[s] = alpha[t][s] * transition[s][current];
        }
        current = rng.categorical(std::span<const double>(weights));
        path[t] = static_cast<FluorophoreState>(current);
    }
    return path;
}

/// Forward filtering followed by backward sampling in one call.
inline std::vector<FluorophoreState> ffbs_sample(const StateDist& initial,
                                                 const TransMatrix& transition,
                                                 std::span<const StateDist> log_emissions,
                                                 Rng& rng) {
    const ForwardResult fwd = forward_filter(initial, transition, log_emissions);
    return backward_sample(transition, fwd.alpha, rng);
}

}  // namespace fluoroforge
