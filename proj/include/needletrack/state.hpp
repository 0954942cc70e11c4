#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <needletrack/types.hpp>

namespace needletrack {

// ---------------------------------------------------------------------------
// Axis-angle helpers
// ---------------------------------------------------------------------------

/// Converts an axis-angle vector (direction = axis, magnitude = angle) to a
/// unit quaternion. Small angles use the series expansion of sin(t/2)/t.
inline Eigen::Quaterniond quat_from_axis_angle(const Vec3& aa) {
    const double theta = aa.norm();
    double w, s;
    if (theta < 1e-8) {
        w = 1.0 - theta * theta / 8.0;
        s = 0.5 - theta * theta / 48.0;
    } else {
        w = std::cos(0.5 * theta);
        s = std::sin(0.5 * theta) / theta;
    }
    return Eigen::Quaterniond(w, s * aa.x(), s * aa.y(), s * aa.z());
}

/// Converts a quaternion to the canonical axis-angle vector with angle in
/// [0, pi].
inline Vec3 axis_angle_from_quat(Eigen::Quaterniond q) {
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const double vn = q.vec().norm();
    const double angle = 2.0 * std::atan2(vn, q.w());
    if (vn < 1e-12) return 2.0 * q.vec();
    return (angle / vn) * q.vec();
}

/// Canonicalizes an axis-angle vector so its magnitude lies in [0, pi].
inline Vec3 canonicalize_axis_angle(const Vec3& aa) {
    return axis_angle_from_quat(quat_from_axis_angle(aa));
}

/// Axis-angle of the rotation R(a) * R(b).
inline Vec3 compose_axis_angle(const Vec3& a, const Vec3& b) {
    return axis_angle_from_quat(quat_from_axis_angle(a) * quat_from_axis_angle(b));
}

inline Mat3 rotation_from_axis_angle(const Vec3& aa) {
    return quat_from_axis_angle(aa).toRotationMatrix();
}

// ---------------------------------------------------------------------------
// Pose and action
// ---------------------------------------------------------------------------

/// Needle pose in the camera frame: position (m) plus axis-angle orientation.
struct Pose6D {
    Vec3 position = Vec3::Zero();
    Vec3 orientation = Vec3::Zero();  // axis-angle, |orientation| in [0, pi]

    Pose6D() = default;
    Pose6D(const Vec3& b, const Vec3& q)
        : position(b), orientation(canonicalize_axis_angle(q)) {}

    Mat3 rotation() const { return rotation_from_axis_angle(orientation); }

    Eigen::Isometry3d transform() const {
        Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
        t.linear() = rotation();
        t.translation() = position;
        return t;
    }
};

/// Pose increment applied by the motion model.
struct Action {
    Vec3 translation = Vec3::Zero();  // m
    Vec3 rotation = Vec3::Zero();     // axis-angle, rad

    Action() = default;
    Action(const Vec3& t, const Vec3& r)
        : translation(t), rotation(canonicalize_axis_angle(r)) {}
};

/// Eq.-style motion update: translation adds, rotation composes on the left,
/// then the noise sample perturbs both (rotational part as a left-composed
/// world-frame axis-angle perturbation).
inline Pose6D apply_motion(const Pose6D& pose, const Action& action,
                           const Vec6& noise = Vec6::Zero()) {
    Pose6D out;
    out.position = pose.position + action.translation + noise.head<3>();
    out.orientation = compose_axis_angle(
        noise.tail<3>(), compose_axis_angle(action.rotation, pose.orientation));
    return out;
}

// ---------------------------------------------------------------------------
// Motion noise
// ---------------------------------------------------------------------------

/// 6x6 covariance over [position; axis-angle] increments. Validated symmetric
/// PSD at construction; keeps a square-root factor for sampling.
class MotionNoise {
public:
    MotionNoise() : MotionNoise(Mat6::Zero()) {}

    explicit MotionNoise(const Mat6& cov) : cov_(cov) {
        if (!cov.isApprox(cov.transpose(), 1e-9)) {
            throw InvalidParams("motion covariance must be symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Mat6> es(cov);
        const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < -1e-12 * scale) {
            throw InvalidParams("motion covariance must be positive semi-definite");
        }
        sqrt_ = es.eigenvectors() *
                es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }

    /// Diagonal covariance from per-axis standard deviations.
    static MotionNoise from_stddev(double pos_m, double rot_rad) {
        Vec6 d;
        d << pos_m, pos_m, pos_m, rot_rad, rot_rad, rot_rad;
        return MotionNoise(Mat6(d.cwiseProduct(d).asDiagonal()));
    }

    const Mat6& covariance() const { return cov_; }

    /// Maps a standard-normal 6-vector to a covariance-shaped sample.
    Vec6 shape(const Vec6& std_normal) const { return sqrt_ * std_normal; }

    bool is_zero() const { return cov_.isZero(0.0); }

private:
    Mat6 cov_;
    Mat6 sqrt_;
};

// ---------------------------------------------------------------------------
// Needle model
// ---------------------------------------------------------------------------

/// Circular needle geometry. The circle lies in the local x-y plane centered
/// at the origin; the tail sits at arc angle 0 and the tip at arc_extent.
struct NeedleModel {
    double radius = 0.0054;                    // m
    double arc_extent = std::numbers::pi;      // rad
    std::map<std::string, double> landmark_angles;

    NeedleModel() : NeedleModel(0.0054) {}

    explicit NeedleModel(double r, double arc = std::numbers::pi)
        : radius(r), arc_extent(arc) {
        if (radius <= 0.0) throw InvalidParams("needle radius must be positive");
        if (arc_extent <= 0.0 || arc_extent > 2.0 * std::numbers::pi) {
            throw InvalidParams("arc extent must lie in (0, 2*pi]");
        }
        landmark_angles["tail"] = 0.0;
        landmark_angles["tip"] = arc_extent;
    }

    double landmark_angle(const std::string& label) const {
        auto it = landmark_angles.find(label);
        if (it == landmark_angles.end()) {
            throw UnknownLabel("no landmark named '" + label + "'");
        }
        return it->second;
    }

    /// 3D landmark in the needle frame at a given arc angle.
    Vec3 landmark_point(double arc_angle) const {
        return {radius * std::cos(arc_angle), radius * std::sin(arc_angle), 0.0};
    }
};

/// Projects the needle landmark at a given arc angle into the image.
inline PixelPoint project_landmark(const Pose6D& pose, const NeedleModel& model,
                                   double arc_angle, const CameraIntrinsics& k) {
    const Vec3 p = pose.rotation() * model.landmark_point(arc_angle) + pose.position;
    return k.project(p);
}

inline PixelPoint project_landmark(const Pose6D& pose, const NeedleModel& model,
                                   const std::string& label,
                                   const CameraIntrinsics& k) {
    return project_landmark(pose, model, model.landmark_angle(label), k);
}

// ---------------------------------------------------------------------------
// Pose statistics
// ---------------------------------------------------------------------------

struct PoseError {
    double position_mm = 0.0;
    double orientation_deg = 0.0;
};

inline PoseError pose_error(const Pose6D& estimate, const Pose6D& truth) {
    PoseError e;
    e.position_mm = (estimate.position - truth.position).norm() * 1e3;
    const Eigen::Quaterniond dq = quat_from_axis_angle(estimate.orientation) *
                                  quat_from_axis_angle(truth.orientation).conjugate();
    e.orientation_deg =
        axis_angle_from_quat(dq).norm() * 180.0 / std::numbers::pi;
    return e;
}

/// Weighted mean pose: arithmetic mean for position, sign-aligned chordal
/// quaternion mean for orientation. Weights are assumed normalized.
inline Pose6D weighted_mean_pose(std::span<const Pose6D> poses,
                                 std::span<const double> weights) {
    if (poses.empty() || poses.size() != weights.size()) {
        throw InvalidParams("weighted_mean_pose needs matching non-empty spans");
    }
    std::size_t ref = 0;
    for (std::size_t i = 1; i < weights.size(); ++i) {
        if (weights[i] > weights[ref]) ref = i;
    }
    const Eigen::Quaterniond qref = quat_from_axis_angle(poses[ref].orientation);

    Vec3 mean_pos = Vec3::Zero();
    Eigen::Vector4d qsum = Eigen::Vector4d::Zero();
    for (std::size_t i = 0; i < poses.size(); ++i) {
        mean_pos += weights[i] * poses[i].position;
        Eigen::Quaterniond q = quat_from_axis_angle(poses[i].orientation);
        if (q.coeffs().dot(qref.coeffs()) < 0.0) q.coeffs() = -q.coeffs();
        qsum += weights[i] * q.coeffs();
    }
    if (qsum.norm() < 1e-6) {
        throw DegenerateOrientationMean(
            "weighted quaternion sum is numerically zero");
    }
    Eigen::Quaterniond qmean(qsum);
    qmean.normalize();

    Pose6D out;
    out.position = mean_pos;
    out.orientation = axis_angle_from_quat(qmean);
    return out;
}

}  // namespace needletrack
