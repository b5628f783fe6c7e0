#include "magnav/geometry.hpp"
#include "magnav/errors.hpp"

#include <limits>

namespace magnav {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::SingularActuation: return "SingularActuation";
        case ErrorCode::CurrentLimit: return "CurrentLimit";
        case ErrorCode::OutOfWorkspace: return "OutOfWorkspace";
        case ErrorCode::DepthLimit: return "DepthLimit";
        case ErrorCode::LowCoverage: return "LowCoverage";
        case ErrorCode::NonPlanarSurface: return "NonPlanarSurface";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::InvalidHomography: return "InvalidHomography";
        case ErrorCode::TargetLost: return "TargetLost";
        case ErrorCode::SingularCalibration: return "SingularCalibration";
        case ErrorCode::IllConditionedJacobian: return "IllConditionedJacobian";
        case ErrorCode::ProjectionFailed: return "ProjectionFailed";
        case ErrorCode::UnpaintedRegion: return "UnpaintedRegion";
        case ErrorCode::EmptyMosaic: return "EmptyMosaic";
        case ErrorCode::EmptyWorkspaceTable: return "EmptyWorkspaceTable";
        case ErrorCode::EmptyRegion: return "EmptyRegion";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::DegenerateWeights: return "DegenerateWeights";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::ScenarioAborted: return "ScenarioAborted";
        case ErrorCode::BindError: return "BindError";
        case ErrorCode::ProtocolError: return "ProtocolError";
        case ErrorCode::NotCalibrated: return "NotCalibrated";
        case ErrorCode::WrongMode: return "WrongMode";
        case ErrorCode::MeshFormat: return "MeshFormat";
    }
    return "Unknown";
}

Mat3 axis_angle(const Vec3& axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Mat3 rot_x(double angle) { return axis_angle(Vec3::UnitX(), angle); }
Mat3 rot_y(double angle) { return axis_angle(Vec3::UnitY(), angle); }
Mat3 rot_z(double angle) { return axis_angle(Vec3::UnitZ(), angle); }

double angle_between(const Vec3& a, const Vec3& b) {
    return std::atan2(a.cross(b).norm(), a.dot(b));
}

double signed_angle(const Vec2& a, const Vec2& b) {
    const double cross = a.x() * b.y() - a.y() * b.x();
    return std::atan2(cross, a.dot(b));
}

Vec3 any_perpendicular(const Vec3& v) {
    const Vec3 n = v.normalized();
    const Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    return n.cross(ref).normalized();
}

Mat3 minimal_rotation(const Vec3& from, const Vec3& to) {
    const Vec3 a = from.normalized();
    const Vec3 b = to.normalized();
    const Vec3 axis = a.cross(b);
    const double s = axis.norm();
    const double c = a.dot(b);
    if (s < 1e-15) {
        if (c > 0) return Mat3::Identity();
        return axis_angle(any_perpendicular(a), kPi);
    }
    return axis_angle(axis / s, std::atan2(s, c));
}

double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a <= 0) a += 2.0 * kPi;
    return a - kPi;
}

Vec2 apply_homography(const Mat3& H, const Vec2& p) {
    const Vec3 q = H * Vec3(p.x(), p.y(), 1.0);
    return q.head<2>() / q.z();
}

Mat3 normalize_homography(const Mat3& H) { return H / H(2, 2); }

double condition_number(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return sv(0) / smin;
}

Pose make_pose(const Mat3& R, const Vec3& t) {
    Pose p = Pose::Identity();
    p.linear() = R;
    p.translation() = t;
    return p;
}

}  // namespace magnav
