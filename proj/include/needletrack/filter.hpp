#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <needletrack/observation.hpp>
#include <needletrack/state.hpp>

namespace needletrack {

/// Weighted hypothesis cloud over needle poses.
struct ParticleSet {
    std::vector<Pose6D> poses;
    std::vector<double> weights;

    std::size_t size() const { return poses.size(); }
};

struct FilterConfig {
    int particle_count = 5000;
    /// Resampling threshold on the effective particle count; values <= 0
    /// select the default N_s / 2.
    double effective_threshold = -1.0;
    MotionNoise motion_noise =
        MotionNoise::from_stddev(2e-4, 0.2 * std::numbers::pi / 180.0);
    MotionNoise initial_noise =
        MotionNoise::from_stddev(3e-3, 3.0 * std::numbers::pi / 180.0);
    ObservationModelSpec observation;
    std::uint64_t seed = 0;

    double resolved_threshold() const {
        const double t = effective_threshold > 0.0
                             ? effective_threshold
                             : 0.5 * particle_count;
        if (t > particle_count) {
            throw ConfigError("effective threshold exceeds particle count");
        }
        return t;
    }

    void validate() const {
        if (particle_count < 2) throw ConfigError("need at least 2 particles");
        resolved_threshold();
        observation.noise.validate();
    }
};

/// RNG stream owned by the filter. Draw order per operation:
/// sample_initial and predict draw 6 standard normals per particle (position
/// x, y, z then rotation x, y, z); stratified_resample draws one uniform per
/// stratum in index order.
using FilterRng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Filter operations
// ---------------------------------------------------------------------------

inline ParticleSet sample_initial(const Pose6D& p0, const MotionNoise& sigma0,
                                  int particle_count, FilterRng& rng) {
    if (particle_count < 2) throw InvalidParams("need at least 2 particles");
    ParticleSet set;
    set.poses.reserve(particle_count);
    set.weights.assign(particle_count, 1.0 / particle_count);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < particle_count; ++i) {
        Vec6 z;
        for (int j = 0; j < 6; ++j) z(j) = gauss(rng);
        set.poses.push_back(apply_motion(p0, Action{}, sigma0.shape(z)));
    }
    return set;
}

inline void predict(ParticleSet& particles, const Action& action,
                    const MotionNoise& sigma_m, FilterRng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Pose6D& pose : particles.poses) {
        Vec6 z;
        for (int j = 0; j < 6; ++j) z(j) = gauss(rng);
        pose = apply_motion(pose, action, sigma_m.shape(z));
    }
}

/// Multiplies weights by per-particle likelihoods in log space (max-shifted)
/// and renormalizes. Particles whose likelihood evaluation failed get weight
/// zero.
inline void update_weights(ParticleSet& particles,
                           const FrameLikelihood& likelihood) {
    if (likelihood.skips_update()) return;
    std::vector<double> logw(particles.size());
    double max_logw = kNegInf;
    for (std::size_t i = 0; i < particles.size(); ++i) {
        const double lw = std::log(particles.weights[i]) +
                          likelihood.log_likelihood(particles.poses[i]);
        logw[i] = lw;
        if (lw > max_logw) max_logw = lw;
    }
    if (!std::isfinite(max_logw)) {
        throw AllParticlesDegenerate("every particle has zero likelihood");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < particles.size(); ++i) {
        particles.weights[i] = std::exp(logw[i] - max_logw);
        sum += particles.weights[i];
    }
    for (double& w : particles.weights) w /= sum;
}

inline void update_weights(ParticleSet& particles,
                           const DetectionSet& detections,
                           const ObservationModelSpec& spec,
                           const NeedleModel& model,
                           const CameraIntrinsics& k) {
    update_weights(particles, FrameLikelihood(spec, detections, model, k));
}

/// Effective sample size 1 / sum(w_i^2) of normalized weights.
inline double effective_count(std::span<const double> weights) {
    double sum_sq = 0.0;
    for (double w : weights) sum_sq += w * w;
    return 1.0 / sum_sq;
}

/// Stratified resampling: one uniform draw per stratum [(i-1)/N, i/N), so
/// each parent's offspring count deviates from N*w by less than two. Weights
/// reset to uniform.
inline void stratified_resample(ParticleSet& particles, FilterRng& rng) {
    const std::size_t n = particles.size();
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<Pose6D> next;
    next.reserve(n);
    double cumulative = particles.weights[0];
    std::size_t parent = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (static_cast<double>(i) + uni(rng)) / static_cast<double>(n);
        while (cumulative < u && parent + 1 < n) {
            ++parent;
            cumulative += particles.weights[parent];
        }
        next.push_back(particles.poses[parent]);
    }
    particles.poses = std::move(next);
    particles.weights.assign(n, 1.0 / n);
}

// ---------------------------------------------------------------------------
// Filter driver
// ---------------------------------------------------------------------------

/// Sequential Monte-Carlo tracker: predict, weight, resample on effective
/// count, report the weighted mean pose.
class ParticleFilter {
public:
    ParticleFilter(FilterConfig config, NeedleModel model, CameraIntrinsics k)
        : config_(std::move(config)), model_(std::move(model)), k_(k),
          rng_(config_.seed) {
        config_.validate();
    }

    void initialize(const Pose6D& p0) {
        particles_ =
            sample_initial(p0, config_.initial_noise, config_.particle_count, rng_);
    }

    bool initialized() const { return !particles_.poses.empty(); }

    Pose6D step(const Action& action, const DetectionSet& detections) {
        if (!initialized()) throw Error("filter is not initialized");
        predict(particles_, action, config_.motion_noise, rng_);
        const FrameLikelihood likelihood(config_.observation, detections,
                                         model_, k_);
        update_weights(particles_, likelihood);
        if (effective_count(particles_.weights) < config_.resolved_threshold()) {
            stratified_resample(particles_, rng_);
        }
        return weighted_mean_pose(particles_.poses, particles_.weights);
    }

    const ParticleSet& particles() const { return particles_; }
    const FilterConfig& config() const { return config_; }
    const NeedleModel& model() const { return model_; }
    const CameraIntrinsics& camera() const { return k_; }
    FilterRng& rng() { return rng_; }

private:
    FilterConfig config_;
    NeedleModel model_;
    CameraIntrinsics k_;
    FilterRng rng_;
    ParticleSet particles_;
};

}  // namespace needletrack
