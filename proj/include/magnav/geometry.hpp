#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

namespace magnav {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Pose = Eigen::Isometry3d;

constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Rotation of `angle` radians about `axis` (normalized internally).
Mat3 axis_angle(const Vec3& axis, double angle);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

/// Unsigned angle between two nonzero vectors, robust near 0 and pi.
double angle_between(const Vec3& a, const Vec3& b);

/// Signed angle from a to b in the plane, in (-pi, pi].
double signed_angle(const Vec2& a, const Vec2& b);

/// Smallest rotation carrying unit vector `from` onto unit vector `to`.
/// For antiparallel inputs a rotation of pi about an arbitrary perpendicular
/// axis is returned.
Mat3 minimal_rotation(const Vec3& from, const Vec3& to);

/// Any unit vector perpendicular to v.
Vec3 any_perpendicular(const Vec3& v);

/// Wrap to (-pi, pi].
double wrap_angle(double a);

/// Apply a projective 3x3 transform to a pixel.
Vec2 apply_homography(const Mat3& H, const Vec2& p);

/// Scale H so that H(2,2) == 1.
Mat3 normalize_homography(const Mat3& H);

/// 2-norm condition number of a square matrix; infinity when singular.
double condition_number(const Eigen::MatrixXd& m);

Pose make_pose(const Mat3& R, const Vec3& t);

}  // namespace magnav
