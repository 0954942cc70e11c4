#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include <needletrack/io.hpp>
#include <needletrack/simulator.hpp>

namespace needletrack {

/// One cell of the benchmark grid, in deterministic row order
/// (motion-major, then sigma, then variant).
struct BenchCell {
    TrajectorySpec::Kind motion;
    double sigma;
    ObservationVariant variant;
    std::uint64_t seed;
};

inline std::vector<BenchCell> bench_grid(const ExperimentConfig& config) {
    std::vector<BenchCell> cells;
    std::uint64_t index = 0;
    for (TrajectorySpec::Kind motion : config.motions) {
        for (double sigma : config.sigmas) {
            for (ObservationVariant variant : config.variants) {
                cells.push_back(
                    {motion, sigma, variant, mix_seed(config.seed, index)});
                ++index;
            }
        }
    }
    return cells;
}

/// Runs one grid cell. The simulated pixel noise doubles as the observation
/// model's assumed pixel std unless the config pins per-label overrides.
inline ErrorSummary run_bench_cell(const ExperimentConfig& config,
                                   const BenchCell& cell) {
    TrajectorySpec traj = config.trajectory;
    if (traj.kind != cell.motion) {
        traj = default_trajectory(cell.motion, config.trajectory.steps);
        traj.view_margin = config.trajectory.view_margin;
    }
    NoiseSpec noise{cell.sigma, 0};
    FilterConfig filter = config.filter;
    filter.observation.variant = cell.variant;
    if (filter.observation.noise.pixel_std.empty()) {
        filter.observation.noise.default_pixel_std =
            std::max(cell.sigma, 0.25);
    }
    filter.seed = cell.seed;
    return run_experiment(traj, noise, config.needle, config.camera, filter,
                          config.trials);
}

/// Sweeps the variant x motion x sigma grid. When `progress` is non-null each
/// finished row is streamed to it as CSV (header first), so partial results
/// survive an interrupted run.
inline std::vector<ErrorSummary> run_bench(const ExperimentConfig& config,
                                           std::ostream* progress = nullptr) {
    config.validate();
    std::vector<ErrorSummary> rows;
    if (progress) *progress << kCsvHeader << '\n';
    for (const BenchCell& cell : bench_grid(config)) {
        rows.push_back(run_bench_cell(config, cell));
        if (progress) {
            write_summary_csv_row(*progress, rows.back());
            progress->flush();
        }
    }
    return rows;
}

}  // namespace needletrack
