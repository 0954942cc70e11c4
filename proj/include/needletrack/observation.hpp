#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <needletrack/conic.hpp>
#include <needletrack/state.hpp>

namespace needletrack {

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

/// Per-frame pixel detections: labeled endpoints plus unlabeled body points.
struct DetectionSet {
    int frame = 0;
    std::map<std::string, PixelPoint> labeled;  // "tail", "tip"
    std::vector<PixelPoint> body;

    std::size_t size() const { return labeled.size() + body.size(); }

    bool has(const std::string& label) const { return labeled.count(label) > 0; }

    const PixelPoint& at(const std::string& label) const {
        auto it = labeled.find(label);
        if (it == labeled.end()) {
            throw MissingLabel("detections lack the '" + label + "' point");
        }
        return it->second;
    }

    /// All detections in a stable order: tail, tip, then body points.
    std::vector<PixelPoint> all_points() const {
        std::vector<PixelPoint> out;
        out.reserve(size());
        for (const char* l : {"tail", "tip"}) {
            auto it = labeled.find(l);
            if (it != labeled.end()) out.push_back(it->second);
        }
        for (const auto& [label, p] : labeled) {
            if (label != "tail" && label != "tip") out.push_back(p);
        }
        out.insert(out.end(), body.begin(), body.end());
        return out;
    }
};

// ---------------------------------------------------------------------------
// Noise configuration and model variants
// ---------------------------------------------------------------------------

/// Noise parameters of all observation models.
struct ObservationNoiseConfig {
    /// Per-label pixel standard deviation (sigma-bar); "body" covers the
    /// unlabeled points. Missing labels fall back to default_pixel_std.
    std::map<std::string, double> pixel_std;
    double default_pixel_std = 1.0;

    /// Correlation shape of the per-point covariance; scaled by the label's
    /// pixel variance.
    Mat2 point_cov = Mat2::Identity();

    /// Covariance of the ellipse-parameter residual
    /// [center_x px, center_y px, width px, height px, rotation rad].
    Mat5 ep_cov = default_ep_cov();

    /// Covariance of the pose-baseline residual [position m, axis-angle rad].
    Mat6 pose_cov = default_pose_cov();

    static Mat5 default_ep_cov() {
        Vec5 d;
        const double deg = std::numbers::pi / 180.0;
        d << 2.0, 2.0, 4.0, 4.0, 5.0 * deg;
        return Mat5(d.cwiseProduct(d).asDiagonal());
    }

    static Mat6 default_pose_cov() {
        Vec6 d;
        const double deg = std::numbers::pi / 180.0;
        d << 5e-3, 5e-3, 5e-3, 5.0 * deg, 5.0 * deg, 5.0 * deg;
        return Mat6(d.cwiseProduct(d).asDiagonal());
    }

    double sigma(const std::string& label) const {
        auto it = pixel_std.find(label);
        const double s = it == pixel_std.end() ? default_pixel_std : it->second;
        if (s <= 0.0) throw InvalidParams("pixel std must be positive");
        return s;
    }

    void validate() const {
        sigma("body");
        if (point_cov.determinant() <= 0.0 ||
            !point_cov.isApprox(point_cov.transpose(), 1e-9)) {
            throw InvalidParams("point covariance must be symmetric positive definite");
        }
        if (Eigen::LLT<Mat5>(ep_cov).info() != Eigen::Success) {
            throw InvalidParams("EP covariance must be positive definite");
        }
        if (Eigen::LLT<Mat6>(pose_cov).info() != Eigen::Success) {
            throw InvalidParams("pose covariance must be positive definite");
        }
    }
};

enum class ObservationVariant {
    Pose,
    FPS,
    OnePointEP,
    TwoPointsEP,
    OnePointEM,
    TwoPointsEM,
};

inline const char* to_string(ObservationVariant v) {
    switch (v) {
        case ObservationVariant::Pose: return "pose";
        case ObservationVariant::FPS: return "fps";
        case ObservationVariant::OnePointEP: return "one_point_ep";
        case ObservationVariant::TwoPointsEP: return "two_points_ep";
        case ObservationVariant::OnePointEM: return "one_point_em";
        case ObservationVariant::TwoPointsEM: return "two_points_em";
    }
    return "?";
}

inline ObservationVariant variant_from_string(const std::string& s) {
    for (auto v : {ObservationVariant::Pose, ObservationVariant::FPS,
                   ObservationVariant::OnePointEP, ObservationVariant::TwoPointsEP,
                   ObservationVariant::OnePointEM, ObservationVariant::TwoPointsEM}) {
        if (s == to_string(v)) return v;
    }
    throw ConfigError("unknown observation variant '" + s + "'");
}

struct ObservationModelSpec {
    ObservationVariant variant = ObservationVariant::TwoPointsEM;
    ObservationNoiseConfig noise;
    /// Arc angles (as fractions of arc_extent) assumed for body points by the
    /// FPS baseline, regardless of where they were actually detected.
    std::vector<double> fps_body_fractions = {0.25, 0.5, 0.75};
};

// ---------------------------------------------------------------------------
// Elementary likelihood terms
// ---------------------------------------------------------------------------

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kEmVarianceFloor = 1e-12;

/// Gaussian log-density of a labeled point detection under the projected
/// landmark mean. Poses that put the landmark behind the camera get -inf.
inline double point_log_likelihood(const Pose6D& pose, const NeedleModel& model,
                                   const CameraIntrinsics& k,
                                   const PixelPoint& detection,
                                   const std::string& label,
                                   const ObservationNoiseConfig& noise) {
    const double s = noise.sigma(label);
    const Mat2 cov = s * s * noise.point_cov;
    PixelPoint mean;
    try {
        mean = project_landmark(pose, model, label, k);
    } catch (const BehindCamera&) {
        return kNegInf;
    }
    const Vec2 r = detection.vec() - mean.vec();
    return -0.5 * (2.0 * std::log(2.0 * std::numbers::pi) +
                   std::log(cov.determinant()) + r.dot(cov.inverse() * r));
}

/// Ellipse-matching residual: the detected pixel plugged into the conic
/// projected from the pose.
inline double em_residual(const Pose6D& pose, const NeedleModel& model,
                          const CameraIntrinsics& k, const PixelPoint& point) {
    return conic_residual(project_circle(pose, model.radius, k), point);
}

/// First-order variance of the ellipse-matching residual for a point with
/// isotropic pixel noise sigma-bar, evaluated at the detected point.
inline double em_variance_at(const EllipseCoefficients& c, const PixelPoint& p,
                             double sigma_bar) {
    const double gx = c.a * p.x + c.b * p.y + c.d;
    const double gy = c.b * p.x + c.c * p.y + c.e;
    const double var = 4.0 * (gx * gx + gy * gy) * sigma_bar * sigma_bar;
    return std::max(var, kEmVarianceFloor);
}

inline double em_variance(const Pose6D& pose, const NeedleModel& model,
                          const CameraIntrinsics& k, const PixelPoint& point,
                          double sigma_bar) {
    return em_variance_at(project_circle(pose, model.radius, k), point, sigma_bar);
}

/// Sum of zero-mean Gaussian log-densities of the ellipse-matching residuals,
/// with per-point variances from the first-order propagation.
inline double em_log_likelihood(const Pose6D& pose, const NeedleModel& model,
                                const CameraIntrinsics& k,
                                std::span<const PixelPoint> points,
                                double sigma_bar) {
    if (points.empty()) {
        throw InvalidParams("ellipse matching needs at least one point");
    }
    const EllipseCoefficients c = project_circle(pose, model.radius, k);
    double ll = 0.0;
    for (const PixelPoint& p : points) {
        const double r = conic_residual(c, p);
        const double var = em_variance_at(c, p, sigma_bar);
        ll += -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
    }
    return ll;
}

/// Fits all detected points and returns the canonical ellipse parameters.
inline EllipseParams ep_observation(const DetectionSet& detections) {
    const auto pts = detections.all_points();
    return coeffs_to_params(fit_ellipse(pts));
}

/// Gaussian log-density of the observed ellipse parameters under the
/// pose-projected ones. The rotation residual is wrapped to [-pi/2, pi/2)
/// after canonicalizing both sides.
inline double ep_log_likelihood(const Pose6D& pose, const NeedleModel& model,
                                const CameraIntrinsics& k,
                                const EllipseParams& obs, const Mat5& ep_cov) {
    const EllipseParams proj =
        coeffs_to_params(project_circle(pose, model.radius, k));
    const EllipseParams o = canonicalize(obs);
    Vec5 r;
    r << o.center.x() - proj.center.x(), o.center.y() - proj.center.y(),
        o.width - proj.width, o.height - proj.height,
        wrap_half_pi(o.rotation - proj.rotation);
    return -0.5 * (5.0 * std::log(2.0 * std::numbers::pi) +
                   std::log(ep_cov.determinant()) + r.dot(ep_cov.inverse() * r));
}

/// Gaussian log-density on the 6-vector [position delta; relative axis-angle]
/// between a particle pose and a per-frame reconstructed pose.
inline double pose_baseline_log_likelihood(const Pose6D& pose,
                                           const Pose6D& reconstructed,
                                           const Mat6& pose_cov) {
    Vec6 r;
    r.head<3>() = pose.position - reconstructed.position;
    r.tail<3>() = axis_angle_from_quat(
        quat_from_axis_angle(pose.orientation) *
        quat_from_axis_angle(reconstructed.orientation).conjugate());
    return -0.5 * (6.0 * std::log(2.0 * std::numbers::pi) +
                   std::log(pose_cov.determinant()) +
                   r.dot(pose_cov.inverse() * r));
}

/// Feature-point-similarity baseline: every detection scored against a
/// projected landmark at a fixed assumed arc angle. Body points use assumed
/// angles that generally differ from where they were actually detected.
inline double fps_log_likelihood(const Pose6D& pose, const NeedleModel& model,
                                 const CameraIntrinsics& k,
                                 const DetectionSet& detections,
                                 std::span<const double> body_angles,
                                 const ObservationNoiseConfig& noise) {
    double ll = 0.0;
    for (const auto& [label, p] : detections.labeled) {
        ll += point_log_likelihood(pose, model, k, p, label, noise);
    }
    const double s = noise.sigma("body");
    const Mat2 cov = s * s * noise.point_cov;
    const Mat2 cov_inv = cov.inverse();
    const double logdet = std::log(cov.determinant());
    for (std::size_t i = 0; i < detections.body.size(); ++i) {
        const double angle = body_angles[std::min(i, body_angles.size() - 1)];
        PixelPoint mean;
        try {
            mean = project_landmark(pose, model, angle, k);
        } catch (const BehindCamera&) {
            return kNegInf;
        }
        const Vec2 r = detections.body[i].vec() - mean.vec();
        ll += -0.5 * (2.0 * std::log(2.0 * std::numbers::pi) + logdet +
                      r.dot(cov_inv * r));
    }
    return ll;
}

// ---------------------------------------------------------------------------
// Per-frame combined likelihood
// ---------------------------------------------------------------------------

/// Per-frame observation likelihood for one model variant. Frame-level work
/// (label checks, ellipse fits, pose reconstruction) happens once at
/// construction; log_likelihood is then evaluated per particle. Frames whose
/// ellipse fit or pose reconstruction fails become no-update frames for the
/// EP and Pose variants.
class FrameLikelihood {
public:
    FrameLikelihood(const ObservationModelSpec& spec,
                    const DetectionSet& detections, const NeedleModel& model,
                    const CameraIntrinsics& k)
        : spec_(spec), detections_(detections), model_(model), k_(k) {
        for (const std::string& label : required_labels(spec.variant)) {
            if (!detections.has(label)) {
                throw MissingLabel("variant " +
                                   std::string(to_string(spec.variant)) +
                                   " requires a '" + label + "' detection");
            }
        }
        switch (spec.variant) {
            case ObservationVariant::Pose: {
                try {
                    const auto coeffs = fit_ellipse(detections.all_points());
                    const std::array<AnchorPoint, 2> anchors{
                        AnchorPoint{0.0, detections.at("tail")},
                        AnchorPoint{model.arc_extent, detections.at("tip")}};
                    reconstructed_ = reconstruct_circle_pose(
                        coeffs, model.radius, k, anchors,
                        AmbiguityPolicy::BestScore);
                } catch (const Error&) {
                    skip_ = true;
                }
                pose_cov_inv_ = spec.noise.pose_cov.inverse();
                pose_logdet_ = std::log(spec.noise.pose_cov.determinant());
                break;
            }
            case ObservationVariant::OnePointEP:
            case ObservationVariant::TwoPointsEP: {
                try {
                    ep_obs_ = ep_observation(detections);
                } catch (const Error&) {
                    skip_ = true;
                }
                ep_cov_inv_ = spec.noise.ep_cov.inverse();
                ep_logdet_ = std::log(spec.noise.ep_cov.determinant());
                break;
            }
            case ObservationVariant::OnePointEM:
            case ObservationVariant::TwoPointsEM: {
                em_points_ = detections.body;
                if (spec.variant == ObservationVariant::OnePointEM &&
                    detections.has("tip")) {
                    em_points_.push_back(detections.at("tip"));
                }
                if (em_points_.empty()) {
                    throw MissingLabel("EM variants need at least one unanchored point");
                }
                break;
            }
            case ObservationVariant::FPS: {
                fps_body_angles_.clear();
                for (double f : spec.fps_body_fractions) {
                    fps_body_angles_.push_back(f * model.arc_extent);
                }
                break;
            }
        }
    }

    /// True when this frame provides no measurement (prediction only).
    bool skips_update() const { return skip_; }

    /// Log-likelihood of a particle pose; -inf when geometry fails.
    double log_likelihood(const Pose6D& pose) const {
        if (skip_) return 0.0;
        try {
            return evaluate(pose);
        } catch (const Error&) {
            return kNegInf;
        }
    }

    const std::optional<Pose6D>& reconstructed_pose() const {
        return reconstructed_;
    }

    static std::vector<std::string> required_labels(ObservationVariant v) {
        switch (v) {
            case ObservationVariant::Pose:
            case ObservationVariant::FPS:
            case ObservationVariant::TwoPointsEP:
            case ObservationVariant::TwoPointsEM:
                return {"tail", "tip"};
            case ObservationVariant::OnePointEP:
            case ObservationVariant::OnePointEM:
                return {"tail"};
        }
        return {};
    }

private:
    double evaluate(const Pose6D& pose) const {
        const auto& noise = spec_.noise;
        switch (spec_.variant) {
            case ObservationVariant::Pose: {
                Vec6 r;
                r.head<3>() = pose.position - reconstructed_->position;
                r.tail<3>() = axis_angle_from_quat(
                    quat_from_axis_angle(pose.orientation) *
                    quat_from_axis_angle(reconstructed_->orientation).conjugate());
                return -0.5 * (6.0 * std::log(2.0 * std::numbers::pi) +
                               pose_logdet_ + r.dot(pose_cov_inv_ * r));
            }
            case ObservationVariant::FPS:
                return fps_log_likelihood(pose, model_, k_, detections_,
                                          fps_body_angles_, noise);
            case ObservationVariant::OnePointEP:
            case ObservationVariant::TwoPointsEP: {
                double ll = point_log_likelihood(pose, model_, k_,
                                                 detections_.at("tail"), "tail",
                                                 noise);
                if (spec_.variant == ObservationVariant::TwoPointsEP) {
                    ll += point_log_likelihood(pose, model_, k_,
                                               detections_.at("tip"), "tip",
                                               noise);
                }
                const EllipseParams proj =
                    coeffs_to_params(project_circle(pose, model_.radius, k_));
                const EllipseParams o = canonicalize(*ep_obs_);
                Vec5 r;
                r << o.center.x() - proj.center.x(),
                    o.center.y() - proj.center.y(), o.width - proj.width,
                    o.height - proj.height,
                    wrap_half_pi(o.rotation - proj.rotation);
                return ll - 0.5 * (5.0 * std::log(2.0 * std::numbers::pi) +
                                   ep_logdet_ + r.dot(ep_cov_inv_ * r));
            }
            case ObservationVariant::OnePointEM:
            case ObservationVariant::TwoPointsEM: {
                double ll = point_log_likelihood(pose, model_, k_,
                                                 detections_.at("tail"), "tail",
                                                 noise);
                if (spec_.variant == ObservationVariant::TwoPointsEM) {
                    ll += point_log_likelihood(pose, model_, k_,
                                               detections_.at("tip"), "tip",
                                               noise);
                }
                if (ll == kNegInf) return kNegInf;
                const EllipseCoefficients c =
                    project_circle(pose, model_.radius, k_);
                const double sigma = noise.sigma("body");
                for (const PixelPoint& p : em_points_) {
                    const double r = conic_residual(c, p);
                    const double var = em_variance_at(c, p, sigma);
                    ll += -0.5 * (std::log(2.0 * std::numbers::pi * var) +
                                  r * r / var);
                }
                return ll;
            }
        }
        return kNegInf;
    }

    ObservationModelSpec spec_;
    DetectionSet detections_;
    NeedleModel model_;
    CameraIntrinsics k_;
    bool skip_ = false;

    std::optional<Pose6D> reconstructed_;
    Mat6 pose_cov_inv_ = Mat6::Identity();
    double pose_logdet_ = 0.0;

    std::optional<EllipseParams> ep_obs_;
    Mat5 ep_cov_inv_ = Mat5::Identity();
    double ep_logdet_ = 0.0;

    std::vector<PixelPoint> em_points_;
    std::vector<double> fps_body_angles_;
};

/// One-shot combined likelihood; prefer FrameLikelihood when evaluating many
/// particles against the same frame.
inline double combined_log_likelihood(const ObservationModelSpec& spec,
                                      const Pose6D& pose,
                                      const NeedleModel& model,
                                      const CameraIntrinsics& k,
                                      const DetectionSet& detections) {
    return FrameLikelihood(spec, detections, model, k).log_likelihood(pose);
}

}  // namespace needletrack
