#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <fluoroforge/fluoroforge.hpp>

namespace {

// Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 dimension errors.
constexpr int kExitOk = 0;
constexpr int kExitBadArgs = 2;
constexpr int kExitIo = 3;
constexpr int kExitDimensions = 4;

bool parse_tile_spec(const std::string& text, std::pair<int, int>& out) {
    const std::size_t sep = text.find('x');
    if (sep == std::string::npos || sep == 0 || sep + 1 >= text.size()) return false;
    try {
        std::size_t used = 0;
        const int w = std::stoi(text.substr(0, sep), &used);
        if (used != sep) return false;
        const std::string rest = text.substr(sep + 1);
        const int h = std::stoi(rest, &used);
        if (used != rest.size()) return false;
        if (w <= 0 || h <= 0) return false;
        out = {w, h};
        return true;
    } catch (...) {
        return false;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fluorescence time-series simulation and Bayesian super-resolution"};
    app.require_subcommand(1);

    fluoroforge::SimulateOptions sim;
    CLI::App* simulate = app.add_subcommand("simulate", "Simulate a low-res image stack from a density map");
    simulate->add_option("--input", sim.input, "Density map PNG (16-bit grayscale)")->required();
    simulate->add_option("--profile", sim.profile, "Calibration profile JSON")->required();
    simulate->add_option("--out", sim.out, "Output stack directory")->required();
    simulate->add_option("--frames", sim.frames, "Number of frames")->check(CLI::PositiveNumber);
    simulate->add_option("--scale", sim.scale, "High-res pixels per low-res pixel")
        ->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim.seed, "Random seed");
    simulate->add_option("--count-scale", sim.count_scale, "Emitters per unit density")
        ->check(CLI::NonNegativeNumber);
    simulate->add_flag("--emit-ground-truth", sim.emit_ground_truth,
                       "Also write noiseless high-res frames to ground_truth/");

    fluoroforge::ReconstructOptions rec;
    std::string tile_text;
    CLI::App* reconstruct = app.add_subcommand("reconstruct", "Reconstruct a super-resolution image from a stack");
    reconstruct->add_option("--stack", rec.stack_dir, "Input stack directory")->required();
    reconstruct->add_option("--out", rec.out_dir, "Output directory")->required();
    std::filesystem::path prior_path, profile_path;
    CLI::Option* prior_opt = reconstruct->add_option(
        "--prior", prior_path, "Prior image PNG (default: upsampled temporal mean)");
    CLI::Option* profile_opt = reconstruct->add_option(
        "--profile", profile_path, "Calibration profile JSON (default: noise estimated from stack)");
    reconstruct->add_option("--iters", rec.iterations, "EM iterations")->check(CLI::PositiveNumber);
    CLI::Option* tile_opt =
        reconstruct->add_option("--tile", tile_text, "Tile size WxH in low-res pixels");
    reconstruct->add_option("--overlap", rec.overlap, "Tile overlap in low-res pixels")
        ->check(CLI::NonNegativeNumber)
        ->needs(tile_opt);
    reconstruct->add_option("--jobs", rec.jobs, "Parallel tile workers (default: auto)")
        ->check(CLI::PositiveNumber);
    reconstruct->add_option("--seed", rec.seed, "Random seed");

    fluoroforge::EvaluateOptions eval;
    CLI::App* evaluate = app.add_subcommand("evaluate", "Score a reconstruction");
    evaluate->add_option("--recon", eval.recon, "Reconstruction PNG")->required();
    std::filesystem::path truth_path, stack_path;
    CLI::Option* truth_opt =
        evaluate->add_option("--truth", truth_path, "Ground truth PNG (enables PSNR/SSIM)");
    CLI::Option* stack_opt =
        evaluate->add_option("--stack", stack_path, "Source stack directory (enables RSP/RSE)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        app.exit(e);
        return kExitBadArgs;
    }

    try {
        if (simulate->parsed()) {
            fluoroforge::run_simulate(sim);
        } else if (reconstruct->parsed()) {
            if (*prior_opt) rec.prior_path = prior_path;
            if (*profile_opt) rec.profile_path = profile_path;
            if (*tile_opt) {
                std::pair<int, int> tile;
                if (!parse_tile_spec(tile_text, tile)) {
                    std::cerr << "error: --tile expects WxH with positive integers, got '"
                              << tile_text << "'\n";
                    return kExitBadArgs;
                }
                rec.tile = tile;
            }
            const fluoroforge::ReconstructSummary summary = fluoroforge::run_reconstruct(rec);
            std::cerr << "reconstructed " << summary.tiles << " tile(s) with " << summary.jobs
                      << " job(s), " << summary.fluorophores << " fluorophores -> "
                      << summary.sr_path.string() << "\n";
        } else if (evaluate->parsed()) {
            if (*truth_opt) eval.truth = truth_path;
            if (*stack_opt) eval.stack = stack_path;
            std::cout << fluoroforge::run_evaluate(eval) << "\n";
        }
    } catch (const fluoroforge::DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDimensions;
    } catch (const fluoroforge::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadArgs;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
