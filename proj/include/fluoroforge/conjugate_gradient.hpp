#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>

namespace fluoroforge {

struct CgOptions {
    int max_iterations = 60;
    int max_line_search_steps = 30;
    double gradient_tol = 1e-9;    // on the box-projected gradient, max norm
    double relative_f_tol = 1e-12;
    double initial_step = 1.0;
    double armijo_c1 = 1e-4;
    double backtrack = 0.5;
};

template <std::size_t N>
struct CgResult {
    std::array<double, N> x{};
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Box-constrained nonlinear conjugate gradient (Polak-Ribiere with
/// non-negative beta, backtracking Armijo line search on the projected
/// step). The objective f(x, grad) must return the value and fill the
/// gradient. The result value never exceeds f(x0): every accepted step is
/// a strict non-increase, which callers rely on as a contract.
template <std::size_t N, class F>
CgResult<N> minimize_cg(F&& f, std::array<double, N> x0, const CgOptions& opt,
                        const std::array<double, N>* lower = nullptr,
                        const std::array<double, N>* upper = nullptr) {
    auto clamp_to_box = [&](std::array<double, N>& x) {
        for (std::size_t i = 0; i < N; ++i) {
            if (lower && x[i] < (*lower)[i]) x[i] = (*lower)[i];
            if (upper && x[i] > (*upper)[i]) x[i] = (*upper)[i];
        }
    };
    auto dot = [](const std::array<double, N>& a, const std::array<double, N>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += a[i] * b[i];
        return s;
    };

    CgResult<N> result;
    clamp_to_box(x0);
    result.x = x0;

    std::array<double, N> grad{};
    double fx = f(result.x, grad);
    ++result.evaluations;
    result.value = fx;

    // Gradient components that push against an active bound cannot produce
    // movement; ignore them when testing for stationarity.
    auto projected_grad_norm = [&]() {
        double m = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            double g = grad[i];
            if (lower && result.x[i] <= (*lower)[i] && g > 0.0) g = 0.0;
            if (upper && result.x[i] >= (*upper)[i] && g < 0.0) g = 0.0;
            m = std::max(m, std::abs(g));
        }
        return m;
    };

    std::array<double, N> direction{};
    for (std::size_t i = 0; i < N; ++i) direction[i] = -grad[i];
    double step_scale = opt.initial_step;

    for (int it = 0; it < opt.max_iterations; ++it) {
        result.iterations = it;
        if (projected_grad_norm() <= opt.gradient_tol) {
            result.converged = true;
            break;
        }

        // Try the current direction; if the line search drains, fall back to
        // steepest descent once before giving up.
        bool accepted = false;
        std::array<double, N> x_new{};
        std::array<double, N> grad_new{};
        double f_new = fx;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            if (attempt == 1) {
                for (std::size_t i = 0; i < N; ++i) direction[i] = -grad[i];
            }
            if (dot(grad, direction) >= 0.0) {
                for (std::size_t i = 0; i < N; ++i) direction[i] = -grad[i];
                if (dot(grad, direction) >= 0.0) break;  // gradient is zero
            }
            double alpha = step_scale * 2.0;
            for (int ls = 0; ls < opt.max_line_search_steps; ++ls) {
                x_new = result.x;
                for (std::size_t i = 0; i < N; ++i) x_new[i] += alpha * direction[i];
                clamp_to_box(x_new);
                double step_sq = 0.0;
                std::array<double, N> step{};
                for (std::size_t i = 0; i < N; ++i) {
                    step[i] = x_new[i] - result.x[i];
                    step_sq += step[i] * step[i];
                }
                if (step_sq == 0.0) {
                    alpha *= opt.backtrack;
                    continue;
                }
                f_new = f(x_new, grad_new);
                ++result.evaluations;
                const double slope = dot(grad, step);
                if (f_new <= fx && f_new <= fx + opt.armijo_c1 * slope) {
                    accepted = true;
                    step_scale = alpha;
                    break;
                }
                alpha *= opt.backtrack;
            }
        }
        if (!accepted) break;

        // Polak-Ribiere beta, clipped at zero (automatic restart).
        const double gg = dot(grad, grad);
        double beta = 0.0;
        if (gg > 0.0) {
            double num = 0.0;
            for (std::size_t i = 0; i < N; ++i) num += grad_new[i] * (grad_new[i] - grad[i]);
            beta = std::max(0.0, num / gg);
        }
        for (std::size_t i = 0; i < N; ++i) direction[i] = -grad_new[i] + beta * direction[i];

        const double improvement = fx - f_new;
        result.x = x_new;
        fx = f_new;
        grad = grad_new;
        result.value = fx;
        result.iterations = it + 1;
        if (improvement <= opt.relative_f_tol * (std::abs(fx) + 1e-300)) {
            result.converged = true;
            break;
        }
    }
    return result;
}

}  // namespace fluoroforge
