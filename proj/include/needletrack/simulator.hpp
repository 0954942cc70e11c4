#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <needletrack/conic.hpp>
#include <needletrack/filter.hpp>
#include <needletrack/observation.hpp>
#include <needletrack/state.hpp>

namespace needletrack {

// ---------------------------------------------------------------------------
// Seed expansion
// ---------------------------------------------------------------------------

/// splitmix64 mixing step; all per-trial randomness derives from the
/// top-level seed through this counter scheme.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

struct TrajectorySpec {
    enum class Kind { Static, Moving };

    Kind kind = Kind::Static;
    Pose6D initial;
    /// Per-step actions for the moving case; reused cyclically when shorter
    /// than the step count. Ignored for static trajectories.
    std::vector<Action> actions;
    int steps = 300;
    /// Pixels the projected needle must keep clear of the image border.
    double view_margin = 4.0;

    void validate() const {
        if (steps < 1) throw ConfigError("trajectory needs at least one step");
        if (kind == Kind::Moving && actions.empty()) {
            throw ConfigError("moving trajectory needs at least one action");
        }
    }
};

struct NoiseSpec {
    double sigma = 1.0;  // pixel std, i.i.d. on both coordinates
    std::uint64_t seed = 0;

    void validate() const {
        if (sigma < 0.0) throw ConfigError("noise sigma must be nonnegative");
    }
};

struct SimFrame {
    int index = 0;
    Pose6D truth;
    Action action;
    DetectionSet detections;
};

// ---------------------------------------------------------------------------
// Defaults reproducing the benchmark conditions
// ---------------------------------------------------------------------------

inline CameraIntrinsics default_camera() {
    return CameraIntrinsics(800.0, 800.0, 128.0, 128.0, 256, 256);
}

inline NeedleModel default_needle() { return NeedleModel(0.0054); }

/// Needle tilted ~51 degrees from fronto-parallel, plane normal facing the
/// camera, at 0.15 m depth. The strong tilt keeps the projected ellipse
/// eccentric, which is what makes the circle normal observable.
inline Pose6D default_static_pose() {
    const Vec3 tilt(0.0, 0.9, 0.0);
    const Vec3 flip(std::numbers::pi, 0.0, 0.0);
    return Pose6D(Vec3(0.005, -0.005, 0.15), compose_axis_angle(tilt, flip));
}

/// Default trajectories: static holds the default pose; moving translates
/// 0.5 mm/step around a tilted closed orbit (period 120 steps) while rotating
/// 0.5 deg/step about a fixed skew axis with slowly oscillating sign, so all
/// six degrees of freedom move but the needle stays in view indefinitely.
inline TrajectorySpec default_trajectory(TrajectorySpec::Kind kind,
                                         int steps = 300) {
    TrajectorySpec spec;
    spec.kind = kind;
    spec.steps = steps;
    spec.initial = default_static_pose();
    if (kind == TrajectorySpec::Kind::Static) return spec;

    const double pi = std::numbers::pi;
    const Vec3 u = Vec3(1.0, 0.0, 0.2).normalized();
    const Vec3 v = Vec3(0.0, 1.0, -0.15).normalized();
    const Vec3 rot_axis = Vec3(-0.45, 0.1, -0.88).normalized();
    const double step_angle = 0.5 * pi / 180.0;
    constexpr int kOrbitPeriod = 120;
    constexpr int kRockPeriod = 150;
    spec.actions.reserve(steps);
    for (int t = 0; t < steps; ++t) {
        const double phase = 2.0 * pi * t / kOrbitPeriod;
        const Vec3 translation =
            0.0005 * (std::cos(phase) * u + std::sin(phase) * v);
        const double rock = std::cos(2.0 * pi * t / kRockPeriod);
        spec.actions.emplace_back(translation, step_angle * rock * rot_axis);
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Visibility
// ---------------------------------------------------------------------------

/// Checks that the full projected circle stays inside the image with the
/// given margin. Throws BehindCamera or OutOfView.
inline void check_visible(const Pose6D& pose, const NeedleModel& model,
                          const CameraIntrinsics& k, double margin) {
    constexpr int kSamples = 64;
    for (int i = 0; i < kSamples; ++i) {
        const double angle = 2.0 * std::numbers::pi * i / kSamples;
        const PixelPoint p = project_landmark(pose, model, angle, k);
        if (p.x < margin || p.x > k.width - margin || p.y < margin ||
            p.y > k.height - margin) {
            throw OutOfView("projected needle point (" + std::to_string(p.x) +
                            ", " + std::to_string(p.y) +
                            ") violates the view margin");
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory and detection generation
// ---------------------------------------------------------------------------

/// Ground-truth pose/action sequence. Entry t holds the pose after applying
/// its action; entry 0 carries a zero action.
inline std::vector<std::pair<Pose6D, Action>> generate_trajectory(
    const TrajectorySpec& spec, const NeedleModel& model,
    const CameraIntrinsics& k) {
    spec.validate();
    std::vector<std::pair<Pose6D, Action>> out;
    out.reserve(spec.steps);
    Pose6D pose = spec.initial;
    check_visible(pose, model, k, spec.view_margin);
    out.emplace_back(pose, Action{});
    for (int t = 1; t < spec.steps; ++t) {
        Action action;
        if (spec.kind == TrajectorySpec::Kind::Moving) {
            action = spec.actions[(t - 1) % spec.actions.size()];
        }
        pose = apply_motion(pose, action);
        check_visible(pose, model, k, spec.view_margin);
        out.emplace_back(pose, action);
    }
    return out;
}

/// Renders the five-point detection set for one frame: tail, tip, and three
/// body points drawn one per third of the arc, each perturbed by N(0, s^2 I).
/// Draw order: three body-angle uniforms, then standard normals per point in
/// the order tail, tip, body (x before y).
inline DetectionSet render_detections(const Pose6D& pose,
                                      const NeedleModel& model,
                                      const CameraIntrinsics& k,
                                      const NoiseSpec& noise, FilterRng& rng) {
    std::uniform_real_distribution<double> uni(1e-9, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::array<double, 3> body_angles{};
    for (int j = 0; j < 3; ++j) {
        body_angles[j] = (j + uni(rng)) / 3.0 * model.arc_extent;
    }

    DetectionSet det;
    auto noisy = [&](const PixelPoint& p) {
        const double nx = gauss(rng), ny = gauss(rng);
        return PixelPoint{p.x + noise.sigma * nx, p.y + noise.sigma * ny};
    };
    det.labeled["tail"] = noisy(project_landmark(pose, model, 0.0, k));
    det.labeled["tip"] = noisy(project_landmark(pose, model, model.arc_extent, k));
    for (double angle : body_angles) {
        det.body.push_back(noisy(project_landmark(pose, model, angle, k)));
    }
    return det;
}

/// Full synthetic sequence for one trial.
inline std::vector<SimFrame> simulate_frames(const TrajectorySpec& traj,
                                             const NoiseSpec& noise,
                                             const NeedleModel& model,
                                             const CameraIntrinsics& k) {
    noise.validate();
    FilterRng rng(noise.seed);
    std::vector<SimFrame> frames;
    const auto trajectory = generate_trajectory(traj, model, k);
    frames.reserve(trajectory.size());
    for (std::size_t t = 0; t < trajectory.size(); ++t) {
        SimFrame f;
        f.index = static_cast<int>(t);
        f.truth = trajectory[t].first;
        f.action = trajectory[t].second;
        f.detections = render_detections(f.truth, model, k, noise, rng);
        f.detections.frame = f.index;
        frames.push_back(std::move(f));
    }
    return frames;
}

// ---------------------------------------------------------------------------
// Experiment harness
// ---------------------------------------------------------------------------

/// Automatic initialization used by the CLI: ellipse fit on the frame's five
/// detections, pose reconstruction anchored on the detected tail and tip.
/// At desk scale the two plane candidates reproject almost identically
/// (weak-perspective limit), so restart paths pass BestScore and accept a
/// possible mirror pick.
inline Pose6D reconstruct_from_detections(
    const DetectionSet& detections, const NeedleModel& model,
    const CameraIntrinsics& k,
    AmbiguityPolicy policy = AmbiguityPolicy::Strict) {
    const EllipseCoefficients coeffs = fit_ellipse(detections.all_points());
    const std::array<AnchorPoint, 2> anchors{
        AnchorPoint{0.0, detections.at("tail")},
        AnchorPoint{model.arc_extent, detections.at("tip")}};
    return reconstruct_circle_pose(coeffs, model.radius, k, anchors, policy);
}

/// One Table-style result row.
struct ErrorSummary {
    std::string variant;
    std::string motion;
    double sigma = 0.0;
    double pos_mean_mm = 0.0;
    double pos_std_mm = 0.0;
    double ori_mean_deg = 0.0;
    double ori_std_deg = 0.0;
    double runtime_s_per_frame = 0.0;
    int failures = 0;
    int trials = 0;
};

struct TrialResult {
    bool failed = false;
    double pos_mean_mm = 0.0;
    double ori_mean_deg = 0.0;
    double runtime_s_per_frame = 0.0;
};

/// Runs one simulate-and-track trial. The filter initializes from the first
/// frame's ground-truth pose (the algorithm takes the initial pose as given;
/// the initial covariance models its uncertainty); a trial fails when the
/// filter degenerates.
inline TrialResult run_trial(const TrajectorySpec& traj, const NoiseSpec& noise,
                             const NeedleModel& model,
                             const CameraIntrinsics& k,
                             const FilterConfig& filter_config) {
    TrialResult result;
    const auto frames = simulate_frames(traj, noise, model, k);
    if (frames.size() < 2) {
        result.failed = true;
        return result;
    }

    ParticleFilter filter(filter_config, model, k);
    filter.initialize(frames[0].truth);

    double pos_sum = 0.0, ori_sum = 0.0;
    int count = 0;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        for (std::size_t t = 1; t < frames.size(); ++t) {
            const Pose6D estimate =
                filter.step(frames[t].action, frames[t].detections);
            const PoseError e = pose_error(estimate, frames[t].truth);
            pos_sum += e.position_mm;
            ori_sum += e.orientation_deg;
            ++count;
        }
    } catch (const AllParticlesDegenerate&) {
        result.failed = true;
        return result;
    }
    const auto t1 = std::chrono::steady_clock::now();
    result.pos_mean_mm = pos_sum / count;
    result.ori_mean_deg = ori_sum / count;
    result.runtime_s_per_frame =
        std::chrono::duration<double>(t1 - t0).count() / count;
    return result;
}

/// Repeats run_trial with per-trial seeds expanded from the filter config's
/// seed and aggregates mean/std across successful trials.
inline ErrorSummary run_experiment(const TrajectorySpec& traj,
                                   const NoiseSpec& noise,
                                   const NeedleModel& model,
                                   const CameraIntrinsics& k,
                                   const FilterConfig& filter_config,
                                   int trials) {
    if (trials < 1) throw ConfigError("need at least one trial");
    ErrorSummary summary;
    summary.variant = to_string(filter_config.observation.variant);
    summary.motion =
        traj.kind == TrajectorySpec::Kind::Static ? "static" : "moving";
    summary.sigma = noise.sigma;
    summary.trials = trials;

    std::vector<TrialResult> ok;
    for (int trial = 0; trial < trials; ++trial) {
        NoiseSpec trial_noise = noise;
        trial_noise.seed = mix_seed(filter_config.seed, 2 * trial);
        FilterConfig trial_filter = filter_config;
        trial_filter.seed = mix_seed(filter_config.seed, 2 * trial + 1);
        const TrialResult r =
            run_trial(traj, trial_noise, model, k, trial_filter);
        if (r.failed) {
            ++summary.failures;
        } else {
            ok.push_back(r);
        }
    }
    if (ok.empty()) return summary;

    double pos_sum = 0.0, ori_sum = 0.0, rt_sum = 0.0;
    for (const auto& r : ok) {
        pos_sum += r.pos_mean_mm;
        ori_sum += r.ori_mean_deg;
        rt_sum += r.runtime_s_per_frame;
    }
    const double n = static_cast<double>(ok.size());
    summary.pos_mean_mm = pos_sum / n;
    summary.ori_mean_deg = ori_sum / n;
    summary.runtime_s_per_frame = rt_sum / n;
    double pos_var = 0.0, ori_var = 0.0;
    for (const auto& r : ok) {
        pos_var += (r.pos_mean_mm - summary.pos_mean_mm) *
                   (r.pos_mean_mm - summary.pos_mean_mm);
        ori_var += (r.ori_mean_deg - summary.ori_mean_deg) *
                   (r.ori_mean_deg - summary.ori_mean_deg);
    }
    summary.pos_std_mm = std::sqrt(pos_var / n);
    summary.ori_std_deg = std::sqrt(ori_var / n);
    return summary;
}

}  // namespace needletrack
