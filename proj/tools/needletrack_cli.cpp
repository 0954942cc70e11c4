// Command-line harness: simulate detection logs, track them with the
// particle filter, sweep the benchmark grid, and diff track files.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <needletrack/bench.hpp>
#include <needletrack/io.hpp>

namespace nt = needletrack;

namespace {

nt::ExperimentConfig load_or_default(const std::string& path) {
    if (path.empty()) return nt::ExperimentConfig{};
    return nt::load_config(path);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw nt::ConfigError("cannot open output file '" + path + "'");
    return out;
}

int cmd_simulate(const std::string& config_path,
                 std::optional<std::uint64_t> seed, const std::string& out) {
    nt::ExperimentConfig config = load_or_default(config_path);
    nt::NoiseSpec noise{config.noise.sigma, seed.value_or(config.seed)};
    const auto frames = nt::simulate_frames(config.trajectory, noise,
                                            config.needle, config.camera);
    std::vector<nt::LogFrame> log;
    log.reserve(frames.size());
    for (const auto& f : frames) log.push_back(nt::to_log_frame(f));

    if (out.empty()) {
        nt::write_detection_log(std::cout, log);
    } else {
        auto os = open_out(out);
        nt::write_detection_log(os, log);
    }
    std::cerr << "simulated " << frames.size() << " frames ("
              << (config.trajectory.kind == nt::TrajectorySpec::Kind::Static
                      ? "static"
                      : "moving")
              << ", sigma=" << noise.sigma << ", seed=" << noise.seed << ")"
              << (out.empty() ? "" : " -> " + out) << '\n';
    return 0;
}

int cmd_track(const std::string& input, const std::string& config_path,
              std::optional<std::uint64_t> seed, const std::string& variant,
              const std::string& out) {
    nt::ExperimentConfig config = load_or_default(config_path);
    nt::FilterConfig fc = config.filter;
    fc.seed = seed.value_or(config.seed);
    if (!variant.empty()) {
        fc.observation.variant = nt::variant_from_string(variant);
    }

    std::ifstream in(input);
    if (!in) throw nt::ConfigError("cannot open detection log '" + input + "'");
    const auto frames = nt::read_detection_log(in);
    if (frames.empty()) throw nt::ParseError("detection log is empty");

    nt::ParticleFilter filter(fc, config.needle, config.camera);
    std::vector<nt::TrackRecord> records;
    int divergences = 0;

    // First initialization prefers the logged ground truth; restarts use the
    // best-scoring pose reconstruction of the current frame.
    auto try_init = [&](const nt::LogFrame& f, bool allow_truth) {
        if (allow_truth && f.truth) {
            filter.initialize(*f.truth);
            return true;
        }
        try {
            filter.initialize(nt::reconstruct_from_detections(
                f.detections, config.needle, config.camera,
                nt::AmbiguityPolicy::BestScore));
            return true;
        } catch (const nt::Error&) {
            return false;
        }
    };

    for (const nt::LogFrame& f : frames) {
        if (!filter.initialized()) {
            if (!try_init(f, true)) continue;
            // The initialization frame itself has no filter estimate yet.
            continue;
        }
        nt::Pose6D estimate;
        try {
            estimate = filter.step(f.action.value_or(nt::Action{}), f.detections);
        } catch (const nt::AllParticlesDegenerate&) {
            ++divergences;
            std::cerr << "filter diverged at frame " << f.index
                      << "; re-initializing from pose reconstruction\n";
            try_init(f, false);
            continue;
        }
        nt::TrackRecord r;
        r.index = f.index;
        r.estimate = estimate;
        if (f.truth) r.error = nt::pose_error(estimate, *f.truth);
        records.push_back(r);
    }

    if (out.empty()) {
        nt::write_track_file(std::cout, records);
    } else {
        auto os = open_out(out);
        nt::write_track_file(os, records);
    }
    std::cerr << "tracked " << records.size() << " of " << frames.size()
              << " frames (" << nt::to_string(fc.observation.variant)
              << ", seed=" << fc.seed << ", divergences=" << divergences << ")\n";
    return divergences > 0 ? 3 : 0;
}

int cmd_bench(const std::string& config_path, std::optional<std::uint64_t> seed,
              std::optional<int> trials, std::optional<std::string> variant,
              const std::string& out) {
    nt::ExperimentConfig config = load_or_default(config_path);
    if (seed) config.seed = *seed;
    if (trials) config.trials = *trials;
    if (variant) config.variants = {nt::variant_from_string(*variant)};

    if (out.empty()) {
        nt::run_bench(config, &std::cout);
    } else {
        auto os = open_out(out);
        nt::run_bench(config, &os);
    }
    std::cerr << "bench finished: "
              << config.variants.size() * config.sigmas.size() *
                     config.motions.size()
              << " rows, " << config.trials << " trials each, seed="
              << config.seed << (out.empty() ? "" : " -> " + out) << '\n';
    return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path,
                double tolerance) {
    std::ifstream a_in(a_path), b_in(b_path);
    if (!a_in) throw nt::ConfigError("cannot open track file '" + a_path + "'");
    if (!b_in) throw nt::ConfigError("cannot open track file '" + b_path + "'");
    const auto a = nt::read_track_file(a_in);
    const auto b = nt::read_track_file(b_in);

    int differing = 0;
    double max_pos_mm = 0.0, max_ori_deg = 0.0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        const nt::PoseError d = nt::pose_error(a[i].estimate, b[i].estimate);
        max_pos_mm = std::max(max_pos_mm, d.position_mm);
        max_ori_deg = std::max(max_ori_deg, d.orientation_deg);
        if (d.position_mm > tolerance || d.orientation_deg > tolerance ||
            a[i].index != b[i].index) {
            if (++differing <= 10) {
                std::cout << "frame " << a[i].index << ": delta "
                          << d.position_mm << " mm, " << d.orientation_deg
                          << " deg\n";
            }
        }
    }
    if (a.size() != b.size()) {
        std::cout << "length mismatch: " << a.size() << " vs " << b.size()
                  << " frames\n";
    }
    std::cout << "compared " << n << " frames: max delta " << max_pos_mm
              << " mm, " << max_ori_deg << " deg, " << differing
              << " frame(s) above tolerance " << tolerance << '\n';
    return (differing > 0 || a.size() != b.size()) ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Circular-needle pose tracking harness"};
    app.require_subcommand(1);

    std::string config_path, out, variant, input, track_a, track_b;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<std::string> bench_variant;
    double tolerance = 0.0;

    auto* sim = app.add_subcommand("simulate", "Generate a detection log");
    sim->add_option("--config", config_path, "JSON config file");
    sim->add_option("--seed", seed, "Noise seed (overrides config)");
    sim->add_option("--out", out, "Output detection log (default stdout)");

    auto* track = app.add_subcommand("track", "Track a detection log");
    track->add_option("input", input, "Detection log")->required();
    track->add_option("--config", config_path, "JSON config file");
    track->add_option("--seed", seed, "Filter seed (overrides config)");
    track->add_option("--variant", variant, "Observation variant");
    track->add_option("--out", out, "Output track file (default stdout)");

    auto* bench = app.add_subcommand("bench", "Run the benchmark grid");
    bench->add_option("--config", config_path, "JSON config file");
    bench->add_option("--seed", seed, "Top-level seed (overrides config)");
    bench->add_option("--trials", trials, "Trials per cell (overrides config)");
    bench->add_option("--variant", bench_variant,
                      "Restrict the grid to one observation variant");
    bench->add_option("--out", out, "Output CSV (default stdout)");

    auto* cmp = app.add_subcommand("compare", "Diff two track files");
    cmp->add_option("a", track_a, "First track file")->required();
    cmp->add_option("b", track_b, "Second track file")->required();
    cmp->add_option("--tolerance", tolerance,
                    "Allowed per-frame delta (mm and deg), default 0");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(config_path, seed, out);
        if (track->parsed()) {
            return cmd_track(input, config_path, seed, variant, out);
        }
        if (bench->parsed()) {
            return cmd_bench(config_path, seed, trials, bench_variant, out);
        }
        if (cmp->parsed()) return cmd_compare(track_a, track_b, tolerance);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
