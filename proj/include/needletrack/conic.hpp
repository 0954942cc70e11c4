#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include <needletrack/state.hpp>
#include <needletrack/types.hpp>

namespace needletrack {

// ---------------------------------------------------------------------------
// Conic representations
// ---------------------------------------------------------------------------

/// General ellipse equation over pixel coordinates, normalized so the
/// constant term is 1:  a*x^2 + 2b*x*y + c*y^2 + 2d*x + 2e*y + 1 = 0.
struct EllipseCoefficients {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0, e = 0.0;

    double discriminant() const { return b * b - a * c; }
    bool is_ellipse() const { return discriminant() < 0.0; }

    /// Symmetric homogeneous conic matrix with constant term 1.
    Mat3 homogeneous() const {
        Mat3 q;
        q << a, b, d,
             b, c, e,
             d, e, 1.0;
        return q;
    }
};

/// Center / width / height / rotation parameterization, canonical form
/// width >= height and rotation in [-pi/2, pi/2).
struct EllipseParams {
    Vec2 center = Vec2::Zero();  // px
    double width = 0.0;          // semi-axis, px
    double height = 0.0;         // semi-axis, px
    double rotation = 0.0;       // rad
};

/// Wraps an angle into [-pi/2, pi/2).
inline double wrap_half_pi(double angle) {
    const double pi = std::numbers::pi;
    angle = std::fmod(angle + 0.5 * pi, pi);
    if (angle < 0.0) angle += pi;
    return angle - 0.5 * pi;
}

inline EllipseParams canonicalize(EllipseParams p) {
    if (p.width < p.height) {
        std::swap(p.width, p.height);
        p.rotation += 0.5 * std::numbers::pi;
    }
    p.rotation = wrap_half_pi(p.rotation);
    return p;
}

/// Normalizes a homogeneous conic to constant term 1. The paper's form is
/// undefined for conics through the pixel origin; those raise
/// DegenerateNormalization.
inline EllipseCoefficients normalize_conic(const Mat3& q) {
    const double scale = q.cwiseAbs().maxCoeff();
    const double f = q(2, 2);
    if (scale <= 0.0 || std::abs(f) < 1e-12 * scale) {
        throw DegenerateNormalization(
            "conic passes through the pixel origin; constant term vanishes");
    }
    return {q(0, 0) / f, 0.5 * (q(0, 1) + q(1, 0)) / f, q(1, 1) / f,
            0.5 * (q(0, 2) + q(2, 0)) / f, 0.5 * (q(1, 2) + q(2, 1)) / f};
}

/// Value of the general ellipse equation at a pixel.
inline double conic_residual(const EllipseCoefficients& k, const PixelPoint& p) {
    return k.a * p.x * p.x + 2.0 * k.b * p.x * p.y + k.c * p.y * p.y +
           2.0 * k.d * p.x + 2.0 * k.e * p.y + 1.0;
}

// ---------------------------------------------------------------------------
// Fitting and parameter conversion
// ---------------------------------------------------------------------------

/// Fits the general ellipse equation to >= 5 pixel points. Exact solve at 5
/// points, orthogonal least squares beyond.
inline EllipseCoefficients fit_ellipse(std::span<const PixelPoint> points) {
    if (points.size() < 5) {
        throw DegenerateConfiguration("ellipse fit needs at least 5 points");
    }
    Eigen::MatrixXd design(points.size(), 5);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double x = points[i].x, y = points[i].y;
        design.row(i) << x * x, 2.0 * x * y, y * y, 2.0 * x, 2.0 * y;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(4) <= 0.0 || sv(0) / sv(4) > 1e12) {
        throw DegenerateConfiguration(
            "point configuration is rank deficient (e.g., collinear points)");
    }
    const Vec5 theta =
        svd.solve(Eigen::VectorXd::Constant(static_cast<long>(points.size()), -1.0));
    EllipseCoefficients k{theta(0), theta(1), theta(2), theta(3), theta(4)};
    if (!k.is_ellipse()) {
        throw NotAnEllipse("fitted conic has nonnegative discriminant");
    }
    return k;
}

/// Converts general coefficients to the canonical center/axes/rotation form.
inline EllipseParams coeffs_to_params(const EllipseCoefficients& k) {
    const double disc = k.b * k.b - k.a * k.c;
    if (disc >= 0.0) throw NotAnEllipse("conic discriminant is nonnegative");

    EllipseParams p;
    p.center.x() = (k.c * k.d - k.b * k.e) / disc;
    p.center.y() = (k.a * k.e - k.b * k.d) / disc;

    // Value of the conic at its own center; semi-axes are sqrt(-value/lambda)
    // for the eigenvalues of [[a, b], [b, c]].
    const double center_value = k.d * p.center.x() + k.e * p.center.y() + 1.0;
    const double half_trace = 0.5 * (k.a + k.c);
    const double root = std::hypot(0.5 * (k.a - k.c), k.b);
    const double lam_big = half_trace + root;    // larger eigenvalue
    const double lam_small = half_trace - root;  // smaller eigenvalue

    auto semi_axis = [&](double lam) {
        const double arg = -center_value / lam;
        if (arg < -1e-12) {
            throw NumericalFailure("negative squared semi-axis in conversion");
        }
        return std::sqrt(std::max(arg, 0.0));
    };
    // Same-sign eigenvalues for an ellipse; the smaller magnitude gives the
    // major axis.
    const double lam_major = std::abs(lam_small) < std::abs(lam_big) ? lam_small : lam_big;
    const double lam_minor = lam_major == lam_small ? lam_big : lam_small;
    p.width = semi_axis(lam_major);
    p.height = semi_axis(lam_minor);

    // Major-axis direction: eigenvector of lam_major.
    if (std::abs(k.b) > 1e-14 * std::max(std::abs(k.a), std::abs(k.c))) {
        p.rotation = std::atan2(lam_major - k.a, k.b);
    } else {
        p.rotation = std::abs(k.a - lam_major) <= std::abs(k.c - lam_major)
                         ? 0.0
                         : 0.5 * std::numbers::pi;
    }
    return canonicalize(p);
}

/// Inverse of coeffs_to_params.
inline EllipseCoefficients params_to_coeffs(const EllipseParams& p) {
    if (p.width <= 0.0 || p.height <= 0.0) {
        throw InvalidParams("ellipse axes must be positive");
    }
    Mat2 rot;
    rot << std::cos(p.rotation), -std::sin(p.rotation),
           std::sin(p.rotation), std::cos(p.rotation);
    const Mat2 shape = rot *
                       Eigen::Vector2d(1.0 / (p.width * p.width),
                                       1.0 / (p.height * p.height))
                           .asDiagonal() *
                       rot.transpose();
    Mat3 q = Mat3::Zero();
    q.topLeftCorner<2, 2>() = shape;
    q.topRightCorner<2, 1>() = -shape * p.center;
    q.bottomLeftCorner<1, 2>() = q.topRightCorner<2, 1>().transpose();
    q(2, 2) = p.center.dot(shape * p.center) - 1.0;
    return normalize_conic(q);
}

// ---------------------------------------------------------------------------
// Circle projection
// ---------------------------------------------------------------------------

namespace detail {

/// Homogeneous image conic of a 3D circle, not yet normalized. Throws
/// BehindCamera if any circle point is closer than the depth guard.
inline Mat3 project_circle_homogeneous(const Mat3& rot, const Vec3& center,
                                       double radius, const Mat3& k) {
    const double min_depth =
        center.z() - radius * std::hypot(rot(2, 0), rot(2, 1));
    if (min_depth <= kMinDepth) {
        throw BehindCamera("circle reaches depth " + std::to_string(min_depth) +
                           " m");
    }
    Mat3 h;
    h.col(0) = rot.col(0);
    h.col(1) = rot.col(1);
    h.col(2) = center;
    const Mat3 hinv = (k * h).inverse();
    Mat3 plane = Mat3::Identity();
    plane(2, 2) = -radius * radius;
    const Mat3 q = hinv.transpose() * plane * hinv;
    return 0.5 * (q + q.transpose());
}

}  // namespace detail

/// Projects the circle supporting the needle into the image as a conic in the
/// paper's constant-term-1 form.
inline EllipseCoefficients project_circle(const Pose6D& pose, double radius,
                                          const CameraIntrinsics& k) {
    if (radius <= 0.0) throw InvalidParams("circle radius must be positive");
    const EllipseCoefficients out = normalize_conic(
        detail::project_circle_homogeneous(pose.rotation(), pose.position,
                                           radius, k.matrix()));
    if (!out.is_ellipse()) {
        throw NotAnEllipse("projected circle did not yield an ellipse");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Circle pose reconstruction
// ---------------------------------------------------------------------------

/// A detected landmark with known arc angle, used to fix the in-plane
/// rotation and to pick between the two circle-plane candidates.
struct AnchorPoint {
    double arc_angle = 0.0;
    PixelPoint pixel;
};

namespace detail {

struct PlaneCandidate {
    Vec3 normal;  // camera-facing (normal . center < 0)
    Vec3 center;
};

/// The two plane/center solutions of a circle of known radius whose image is
/// the given conic. Fronto-parallel circles yield a single candidate.
inline std::vector<PlaneCandidate> circle_plane_candidates(
    const EllipseCoefficients& coeffs, double radius,
    const CameraIntrinsics& k) {
    if (!coeffs.is_ellipse()) throw NotAnEllipse("conic is not an ellipse");
    const Mat3 km = k.matrix();
    Mat3 cone = km.transpose() * coeffs.homogeneous() * km;
    cone = 0.5 * (cone + cone.transpose());

    Eigen::SelfAdjointEigenSolver<Mat3> es(cone);
    Vec3 lam = es.eigenvalues();
    Mat3 vec = es.eigenvectors();
    if ((lam.array() > 0.0).count() == 1) {
        lam = -lam;
    }
    // Descending order: lam1 >= lam2 > 0 > lam3.
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(),
              [&](int i, int j) { return lam(i) > lam(j); });
    const double l1 = lam(idx[0]), l2 = lam(idx[1]), l3 = lam(idx[2]);
    if (!(l1 >= l2 && l2 > 0.0 && 0.0 > l3)) {
        throw NotAnEllipse("conic eigenvalues do not describe an ellipse cone");
    }
    Mat3 basis;
    basis.col(0) = vec.col(idx[0]);
    basis.col(1) = vec.col(idx[1]);
    basis.col(2) = vec.col(idx[2]);

    const double alpha = std::sqrt((l1 - l2) / (l1 - l3));
    const double beta = std::sqrt((l2 - l3) / (l1 - l3));

    std::vector<PlaneCandidate> out;
    for (double s1 : {1.0, -1.0}) {
        for (double s2 : {1.0, -1.0}) {
            Vec3 n = basis * Vec3(s1 * alpha, 0.0, s2 * beta);
            for (double s3 : {1.0, -1.0}) {
                const double z0 = s3 * l2 * radius / std::sqrt(-l1 * l3);
                const Vec3 c =
                    z0 * (basis * Vec3(-s1 * (l3 / l2) * alpha, 0.0,
                                       -s2 * (l1 / l2) * beta));
                if (c.z() <= kMinDepth) continue;
                if (n.dot(c) > 0.0) n = -n;  // face the camera
                const bool dup = std::any_of(
                    out.begin(), out.end(), [&](const PlaneCandidate& p) {
                        return (p.normal - n).norm() < 1e-9 &&
                               (p.center - c).norm() < 1e-9 * c.norm();
                    });
                if (!dup) out.push_back({n, c});
            }
        }
    }
    if (out.empty()) {
        throw NumericalFailure("no circle plane candidate in front of camera");
    }
    return out;
}

/// Pose of the circle on a given plane candidate whose landmark at the
/// anchor's arc angle back-projects onto the anchor ray.
inline Pose6D pose_from_anchor(const PlaneCandidate& cand, double arc_angle,
                               const PixelPoint& anchor,
                               const CameraIntrinsics& k) {
    const Vec3 ray = k.ray(anchor);
    const double denom = cand.normal.dot(ray);
    if (std::abs(denom) < 1e-12) {
        throw NumericalFailure("anchor ray is parallel to the circle plane");
    }
    const double s = cand.normal.dot(cand.center) / denom;
    if (s <= 0.0) {
        throw NumericalFailure("anchor ray meets the circle plane behind camera");
    }
    const Vec3 hit = s * ray;
    Vec3 u = hit - cand.center;
    if (u.norm() < 1e-12) {
        throw NumericalFailure("anchor back-projects onto the circle center");
    }
    u = (u - cand.normal * cand.normal.dot(u)).normalized();
    const Vec3 w = cand.normal.cross(u);
    Mat3 rot;
    rot.col(0) = std::cos(arc_angle) * u - std::sin(arc_angle) * w;
    rot.col(1) = std::sin(arc_angle) * u + std::cos(arc_angle) * w;
    rot.col(2) = cand.normal;
    return Pose6D(cand.center, axis_angle_from_quat(Eigen::Quaterniond(rot)));
}

}  // namespace detail

/// How to resolve the two circle-plane candidates that share the same image
/// conic. Strict demands a decisive anchor-reprojection margin; BestScore
/// always returns the better-scoring candidate (useful as an observation or
/// a restart guess, where a mirror pick is survivable).
enum class AmbiguityPolicy { Strict, BestScore };

/// Reconstructs the circle pose from its projected conic and anchored
/// landmarks. The first anchor fixes the in-plane rotation; further anchors
/// (typically the tip) choose between the two plane candidates. The circle's
/// two-sided symmetry is resolved by convention: the returned needle-frame
/// z-axis faces the camera.
inline Pose6D reconstruct_circle_pose(
    const EllipseCoefficients& coeffs, double radius,
    const CameraIntrinsics& k, std::span<const AnchorPoint> anchors,
    AmbiguityPolicy policy = AmbiguityPolicy::Strict) {
    if (radius <= 0.0) throw InvalidParams("circle radius must be positive");
    if (anchors.empty()) throw InvalidParams("at least one anchor is required");

    const auto candidates = detail::circle_plane_candidates(coeffs, radius, k);
    const NeedleModel probe(radius);

    struct Scored {
        Pose6D pose;
        std::vector<PixelPoint> extra;  // projected selection landmarks
        double score = 0.0;
    };
    std::vector<Scored> scored;
    for (const auto& cand : candidates) {
        Scored s;
        try {
            s.pose = detail::pose_from_anchor(cand, anchors[0].arc_angle,
                                              anchors[0].pixel, k);
            for (std::size_t i = 1; i < anchors.size(); ++i) {
                const PixelPoint proj =
                    project_landmark(s.pose, probe, anchors[i].arc_angle, k);
                s.extra.push_back(proj);
                s.score += proj.distance(anchors[i].pixel);
            }
        } catch (const Error&) {
            continue;
        }
        scored.push_back(std::move(s));
    }
    if (scored.empty()) {
        throw NumericalFailure("no circle pose candidate is consistent");
    }
    if (scored.size() == 1) return scored[0].pose;

    std::sort(scored.begin(), scored.end(),
              [](const Scored& a, const Scored& b) { return a.score < b.score; });
    const bool coincident =
        (scored[0].pose.position - scored[1].pose.position).norm() < 1e-9 &&
        (scored[0].pose.orientation - scored[1].pose.orientation).norm() < 1e-9;
    if (coincident) return scored[0].pose;
    if (policy == AmbiguityPolicy::BestScore && anchors.size() > 1) {
        return scored[0].pose;
    }

    if (anchors.size() == 1) {
        throw AmbiguityUnresolved(
            "single anchor lies on the shared conic of both plane candidates");
    }
    // The anchors decide the plane only when the best candidate beats the
    // runner-up decisively; near-ties are the weak-perspective regime where
    // pixel noise flips the choice.
    if (scored[0].score > 0.5 * scored[1].score) {
        throw AmbiguityUnresolved(
            "anchor reprojection does not separate the two plane candidates");
    }
    return scored[0].pose;
}

inline Pose6D reconstruct_circle_pose(const EllipseCoefficients& coeffs,
                                      double radius,
                                      const CameraIntrinsics& k,
                                      const PixelPoint& anchor,
                                      double anchor_angle) {
    const AnchorPoint a{anchor_angle, anchor};
    return reconstruct_circle_pose(coeffs, radius, k, std::span(&a, 1));
}

}  // namespace needletrack
