#pragma once

#include <cmath>

#include <Eigen/Core>

#include <needletrack/errors.hpp>

namespace needletrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Minimum depth (m) in front of the camera for any projected geometry.
inline constexpr double kMinDepth = 1e-3;

/// A 2D pixel coordinate. Detections may lie outside the image bounds.
struct PixelPoint {
    double x = 0.0;
    double y = 0.0;

    PixelPoint() = default;
    PixelPoint(double px, double py) : x(px), y(py) {}
    explicit PixelPoint(const Vec2& v) : x(v.x()), y(v.y()) {}

    Vec2 vec() const { return {x, y}; }

    double distance(const PixelPoint& o) const {
        return std::hypot(x - o.x, y - o.y);
    }
};

/// Pinhole camera intrinsics, no distortion.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    CameraIntrinsics() = default;
    CameraIntrinsics(double fx_, double fy_, double cx_, double cy_,
                     int w, int h)
        : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {
        if (fx <= 0.0 || fy <= 0.0 || w <= 0 || h <= 0) {
            throw InvalidParams("camera intrinsics require fx, fy > 0 and positive image size");
        }
    }

    Mat3 matrix() const {
        Mat3 k;
        k << fx, 0.0, cx,
             0.0, fy, cy,
             0.0, 0.0, 1.0;
        return k;
    }

    /// Projects a camera-frame point onto the image plane.
    PixelPoint project(const Vec3& p) const {
        if (p.z() <= kMinDepth) {
            throw BehindCamera("point at depth " + std::to_string(p.z()) +
                               " m is behind the camera");
        }
        return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
    }

    /// Unit-less ray direction (x, y, 1) through a pixel.
    Vec3 ray(const PixelPoint& px) const {
        return {(px.x - cx) / fx, (px.y - cy) / fy, 1.0};
    }
};

}  // namespace needletrack
