#pragma once

#include "magnav/geometry.hpp"

#include <filesystem>
#include <vector>

#include <json.hpp>

namespace magnav {

/// Rotation-rate pair q = (alpha, beta) in radians. alpha turns the field
/// about z of its attached frame, beta about y.
struct FieldRotation {
    double alpha = 0.0;
    double beta = 0.0;

    Vec2 vec() const { return {alpha, beta}; }
    static FieldRotation from(const Vec2& v) { return {v.x(), v.y()}; }
};

enum class RotationOrder {
    YThenZ,  // beta about y^B first, then alpha about the new z^B
    ZThenY,
};

/// Magnetic field vector with its attached frame B. The field is always the
/// x axis of B scaled by the magnitude. `alpha`/`beta` are the azimuth and
/// elevation of the field direction in the system frame S, i.e. the angles
/// for which b = |b| * Rz(alpha) * Ry(beta) * x.
struct FieldState {
    Vec3 b{15.0, 0.0, 0.0};
    Mat3 frame = Mat3::Identity();
    double alpha = 0.0;
    double beta = 0.0;
    double magnitude = 15.0;

    Vec3 direction() const { return b / magnitude; }
};

/// Field of the given magnitude pointing along Rz(alpha) * Ry(beta) * x, with a
/// roll-free attached frame.
FieldState field_from_angles(double magnitude, double alpha, double beta);

/// Intrinsic rotation of the field frame. Norm is preserved exactly.
FieldState rotate_field(const FieldState& f, const FieldRotation& dq,
                        RotationOrder order = RotationOrder::YThenZ);

/// Re-point the field to the (alpha, beta) direction, carrying the attached
/// frame along the minimal rotation so its roll stays continuous.
FieldState point_field(const FieldState& f, double alpha, double beta);

/// Linear map from coil currents (A) to field (mT) at one position.
struct ActuationModel {
    Mat3 A = Mat3::Identity();
    Vec3 position = Vec3::Zero();
    double i_max = 60.0;
};

struct SolveOptions {
    double max_condition = 1e6;
};

/// i = pinv(A) * b_des. Throws SingularActuation when cond(A) exceeds the
/// threshold and CurrentLimitError when any |i_j| > i_max.
Vec3 solve_currents(const ActuationModel& model, const Vec3& b_des,
                    const SolveOptions& opts = {});

/// Position-dependent actuation matrix sampled on a set of points and
/// blended by inverse distance between samples.
class ActuationMap {
public:
    struct Sample {
        Vec3 position;
        Mat3 A;
    };

    ActuationMap() = default;
    ActuationMap(std::vector<Sample> samples, double i_max);

    /// Three orthogonal coils facing +x whose gain decays smoothly with
    /// distance from the coil face.
    static ActuationMap synthetic();

    static ActuationMap from_json(const nlohmann::json& j);
    static ActuationMap load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    ActuationModel model_at(const Vec3& position) const;
    const std::vector<Sample>& samples() const { return samples_; }
    double i_max() const { return i_max_; }

private:
    std::vector<Sample> samples_;
    double i_max_ = 60.0;
};

/// Piecewise-linear field magnitude cap versus distance from the coil face,
/// valid inside an axis-aligned workspace box.
struct FieldCapMap {
    std::vector<std::pair<double, double>> table{
        {50.0, 40.0}, {100.0, 30.0}, {150.0, 26.0}, {200.0, 18.0}, {250.0, 10.0}};
    Vec3 box_min{-300.0, -300.0, -300.0};
    Vec3 box_max{300.0, 300.0, 300.0};

    double cap_at(double distance_mm) const;
    static FieldCapMap from_json(const nlohmann::json& j);
};

/// True iff `magnitude` is achievable at `position`. Throws OutOfWorkspace.
bool check_field_feasible(const Vec3& position, double magnitude,
                          const FieldCapMap& caps = {});

}  // namespace magnav
