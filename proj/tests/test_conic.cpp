#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include <needletrack/conic.hpp>

using namespace needletrack;

namespace {

std::mt19937_64 rng(2024);

EllipseParams random_ellipse() {
    std::uniform_real_distribution<double> c(40.0, 216.0), ax(5.0, 60.0),
        rot(-std::numbers::pi, std::numbers::pi);
    EllipseParams p;
    p.center = Vec2(c(rng), c(rng));
    p.width = ax(rng);
    p.height = ax(rng);
    p.rotation = rot(rng);
    return canonicalize(p);
}

PixelPoint ellipse_point(const EllipseParams& p, double t) {
    const double ct = std::cos(p.rotation), st = std::sin(p.rotation);
    const double x = p.width * std::cos(t), y = p.height * std::sin(t);
    return {p.center.x() + ct * x - st * y, p.center.y() + st * x + ct * y};
}

CameraIntrinsics camera() { return {800.0, 800.0, 128.0, 128.0, 256, 256}; }

/// Random pose whose circle normal faces the camera and whose projection is
/// comfortably an ellipse.
Pose6D random_facing_pose() {
    std::uniform_real_distribution<double> pos(-0.01, 0.01),
        depth(0.12, 0.25), tilt(0.0, 1.1), spin(-std::numbers::pi,
                                                std::numbers::pi);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 tilt_axis(g(rng), g(rng), 0.0);
    if (tilt_axis.norm() < 1e-6) tilt_axis = Vec3(1.0, 0.0, 0.0);
    const Vec3 aa_tilt = tilt(rng) * tilt_axis.normalized();
    const Vec3 aa_spin(0.0, 0.0, spin(rng));
    const Vec3 flip(std::numbers::pi, 0.0, 0.0);
    const Vec3 orientation =
        compose_axis_angle(aa_tilt, compose_axis_angle(flip, aa_spin));
    return Pose6D(Vec3(pos(rng), pos(rng), depth(rng)), orientation);
}

}  // namespace

TEST_CASE("conic params to coefficients and back is exact") {
    for (int i = 0; i < 1000; ++i) {
        const EllipseParams p = random_ellipse();
        const EllipseParams back = coeffs_to_params(params_to_coeffs(p));
        CHECK((back.center - p.center).norm() < 1e-9 * p.center.norm());
        CHECK(back.width == doctest::Approx(p.width).epsilon(1e-9));
        CHECK(back.height == doctest::Approx(p.height).epsilon(1e-9));
        if (p.width - p.height > 1e-6 * p.width) {
            CHECK(std::abs(wrap_half_pi(back.rotation - p.rotation)) < 1e-7);
        }
    }
}

TEST_CASE("parametric ellipse points satisfy the fitted conic") {
    for (int i = 0; i < 100; ++i) {
        const EllipseParams p = random_ellipse();
        std::vector<PixelPoint> pts;
        for (int j = 0; j < 5; ++j) {
            pts.push_back(ellipse_point(p, 0.3 + 1.1 * j));
        }
        const EllipseCoefficients k = fit_ellipse(pts);
        // Both the fitted points and fresh points on the same ellipse vanish.
        for (int j = 0; j < 17; ++j) {
            const PixelPoint q = ellipse_point(p, 0.37 * j);
            CHECK(std::abs(conic_residual(k, q)) < 1e-7);
        }
        const EllipseParams fitted = coeffs_to_params(k);
        CHECK((fitted.center - p.center).norm() < 1e-6 * p.center.norm());
    }
}

TEST_CASE("fit_ellipse rejects bad configurations") {
    std::vector<PixelPoint> four{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    CHECK_THROWS_AS(fit_ellipse(four), DegenerateConfiguration);

    std::vector<PixelPoint> collinear;
    for (int i = 0; i < 6; ++i) collinear.push_back({10.0 + i, 20.0 + 2.0 * i});
    CHECK_THROWS_AS(fit_ellipse(collinear), DegenerateConfiguration);

    // Points of the hyperbola x*y = 1 (shifted off the origin).
    std::vector<PixelPoint> hyper;
    for (double x : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        hyper.push_back({100.0 + x, 100.0 + 1.0 / x});
    }
    CHECK_THROWS_AS(fit_ellipse(hyper), NotAnEllipse);
}

TEST_CASE("normalize_conic rejects conics through the pixel origin") {
    EllipseParams p;
    p.center = Vec2(3.0, 4.0);  // distance 5 from origin
    p.width = 5.0;
    p.height = 5.0;
    CHECK_THROWS_AS(params_to_coeffs(p), DegenerateNormalization);
}

TEST_CASE("coeffs_to_params rejects non-ellipses") {
    EllipseCoefficients hyper{1e-4, 0.0, -1e-4, -0.02, 0.0};
    CHECK_THROWS_AS(coeffs_to_params(hyper), NotAnEllipse);
    CHECK_THROWS_AS(params_to_coeffs(EllipseParams{}), InvalidParams);
}

TEST_CASE("canonicalize enforces width >= height and rotation range") {
    EllipseParams p;
    p.center = Vec2(100.0, 100.0);
    p.width = 3.0;
    p.height = 7.0;
    p.rotation = 2.0;
    const EllipseParams c = canonicalize(p);
    CHECK(c.width == 7.0);
    CHECK(c.height == 3.0);
    CHECK(c.rotation >= -0.5 * std::numbers::pi);
    CHECK(c.rotation < 0.5 * std::numbers::pi);
    CHECK(std::abs(wrap_half_pi(c.rotation - (2.0 + 0.5 * std::numbers::pi))) <
          1e-12);
}

TEST_CASE("projected circle points lie on the projected conic") {
    const CameraIntrinsics k = camera();
    const double radius = 0.0054;
    for (int i = 0; i < 100; ++i) {
        const Pose6D pose = random_facing_pose();
        const EllipseCoefficients c = project_circle(pose, radius, k);
        const NeedleModel model(radius, 2.0 * std::numbers::pi);
        for (int j = 0; j < 24; ++j) {
            const double angle = 2.0 * std::numbers::pi * j / 24.0;
            const PixelPoint p = project_landmark(pose, model, angle, k);
            CHECK(std::abs(conic_residual(c, p)) < 1e-9);
        }
    }
}

TEST_CASE("project_circle guards the depth and radius") {
    const CameraIntrinsics k = camera();
    const Pose6D behind(Vec3(0.0, 0.0, 0.0005), Vec3::Zero());
    CHECK_THROWS_AS(project_circle(behind, 0.0054, k), BehindCamera);
    const Pose6D fine(Vec3(0.0, 0.0, 0.2), Vec3::Zero());
    CHECK_THROWS_AS(project_circle(fine, -1.0, k), InvalidParams);
}

TEST_CASE("reconstruct after project recovers the pose with two anchors") {
    const CameraIntrinsics k = camera();
    const double radius = 0.0054;
    const NeedleModel model(radius);
    for (int i = 0; i < 100; ++i) {
        const Pose6D pose = random_facing_pose();
        const EllipseCoefficients c = project_circle(pose, radius, k);
        const std::array<AnchorPoint, 2> anchors{
            AnchorPoint{0.0, project_landmark(pose, model, 0.0, k)},
            AnchorPoint{model.arc_extent,
                        project_landmark(pose, model, model.arc_extent, k)}};
        Pose6D rec;
        try {
            rec = reconstruct_circle_pose(c, radius, k, anchors);
        } catch (const AmbiguityUnresolved&) {
            // Near fronto-parallel poses the two candidates coincide up to
            // noise floor; BestScore must still resolve them.
            rec = reconstruct_circle_pose(c, radius, k, anchors,
                                          AmbiguityPolicy::BestScore);
        }
        const PoseError e = pose_error(rec, pose);
        CHECK(e.position_mm < 0.1);       // < 1e-4 m
        CHECK(e.orientation_deg < 0.01);
    }
}

TEST_CASE("single anchor on a tilted circle is ambiguous") {
    const CameraIntrinsics k = camera();
    const double radius = 0.0054;
    const NeedleModel model(radius);
    const Pose6D pose(Vec3(0.005, -0.005, 0.15),
                      compose_axis_angle(Vec3(0.0, 0.9, 0.0),
                                         Vec3(std::numbers::pi, 0.0, 0.0)));
    const EllipseCoefficients c = project_circle(pose, radius, k);
    const PixelPoint tail = project_landmark(pose, model, 0.0, k);
    CHECK_THROWS_AS(reconstruct_circle_pose(c, radius, k, tail, 0.0),
                    AmbiguityUnresolved);
}

TEST_CASE("fronto-parallel circle reconstructs from a single anchor") {
    const CameraIntrinsics k = camera();
    const double radius = 0.0054;
    const NeedleModel model(radius);
    // Centered on the optical axis with the normal along -z: the two plane
    // candidates coincide exactly, so one anchor suffices.
    const Pose6D pose(Vec3(0.0, 0.0, 0.18), Vec3(std::numbers::pi, 0.0, 0.0));
    const EllipseCoefficients c = project_circle(pose, radius, k);
    const PixelPoint tail = project_landmark(pose, model, 0.0, k);
    const Pose6D rec = reconstruct_circle_pose(c, radius, k, tail, 0.0);
    const PoseError e = pose_error(rec, pose);
    CHECK(e.position_mm < 0.1);
    CHECK(e.orientation_deg < 0.01);
}

TEST_CASE("reconstructed normal faces the camera by convention") {
    const CameraIntrinsics k = camera();
    const double radius = 0.0054;
    const NeedleModel model(radius);
    for (int i = 0; i < 20; ++i) {
        const Pose6D pose = random_facing_pose();
        const EllipseCoefficients c = project_circle(pose, radius, k);
        const std::array<AnchorPoint, 2> anchors{
            AnchorPoint{0.0, project_landmark(pose, model, 0.0, k)},
            AnchorPoint{model.arc_extent,
                        project_landmark(pose, model, model.arc_extent, k)}};
        const Pose6D rec = reconstruct_circle_pose(c, radius, k, anchors,
                                                   AmbiguityPolicy::BestScore);
        CHECK(rec.rotation().col(2).dot(rec.position) < 0.0);
    }
}

TEST_CASE("wrap_half_pi stays in range and preserves conic angles") {
    for (double a : {-7.0, -1.6, -0.2, 0.0, 1.57, 3.3, 9.42}) {
        const double w = wrap_half_pi(a);
        CHECK(w >= -0.5 * std::numbers::pi);
        CHECK(w < 0.5 * std::numbers::pi);
        CHECK(std::abs(std::sin(a - w)) < 1e-12);  // difference is k*pi
    }
}
