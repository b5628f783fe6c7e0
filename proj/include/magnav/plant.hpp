#pragma once

#include "magnav/geometry.hpp"
#include "magnav/magnetics.hpp"

#include <vector>

#include <json.hpp>

namespace magnav {

/// Quasi-static flexible tip: a constant-curvature segment whose distal axis
/// relaxes toward the (gravity-perturbed) field direction.
struct PlantParams {
    double m = 0.05;                // dipole moment, A m^2 (reported torque only)
    double tau_align = 0.06;        // s
    double g_sag = 0.0;             // rad per (m/s^2 / mT)
    double gravity = 9.81;          // m/s^2
    double bend_max = deg2rad(173.0);
    double segment_length = 40.0;   // mm, flexible section
    double depth_max = 100.0;       // mm, advancer travel
    Pose base_pose = Pose::Identity();      // flexible-segment base at depth 0, z = insertion axis
    Pose camera_offset = Pose::Identity();  // tip -> camera

    /// Horizontal mount along +x of S at `x0` mm, image right = -y, image down = -z.
    static PlantParams horizontal(double x0 = 0.0);
    static PlantParams from_json(const nlohmann::json& j);
};

struct TipState {
    double bend = 0.0;     // rad, angle between tip axis and rest axis
    double azimuth = 0.0;  // rad, about the rest axis, from base x
    double insertion_depth = 0.0;
    Pose tip_pose = Pose::Identity();
    Pose camera_pose = Pose::Identity();
};

/// Constant-curvature segment of the given length, relative to its base.
Pose segment_pose(double bend, double azimuth, double length);

/// State at rest (zero bend) for the given depth.
TipState rest_state(const PlantParams& params, double depth = 0.0);

/// State with the tip bent to (bend, azimuth); poses filled in.
TipState make_state(const PlantParams& params, double bend, double azimuth, double depth);

/// Tip axis in S.
Vec3 tip_direction(const TipState& state, const PlantParams& params);

/// Torque on the distal dipole, tau = m x b, in N m when b is given in mT.
Vec3 magnetic_torque(const TipState& state, const PlantParams& params, const FieldState& f);

TipState step_plant(const TipState& state, const PlantParams& params, const FieldState& f,
                    const Vec3& gravity_dir, double dt);

/// Throws DepthLimit if the new depth leaves [0, depth_max].
TipState advance(const TipState& state, const PlantParams& params, double delta_depth);

struct WorkspaceEntry {
    Vec3 field_dir;    // unit, base frame
    double bend = 0.0;
    double azimuth = 0.0;
    Pose tip_pose;     // relative to the segment base
    double peak_accel = 0.0;  // rad/s^2 during the approach
};

struct WorkspaceSweep {
    std::vector<WorkspaceEntry> stable;
    std::vector<WorkspaceEntry> culled;
};

struct SweepOptions {
    double accel_threshold = 10.0;  // rad/s^2
    double dt = 0.005;              // s
    double settle_taus = 10.0;      // hold time after each move, in tau_align
    Vec3 gravity_dir{0.0, 0.0, -1.0};
};

/// Visit each field direction (unit, base frame) in order, ramping the field
/// smoothly from the previous one, and record the converged tip pose.
/// Entries whose transient exceeds the acceleration threshold are culled.
WorkspaceSweep sweep_workspace(const PlantParams& params, double magnitude,
                               const std::vector<Vec3>& directions, const SweepOptions& opts = {});

/// Serpentine grid of directions: polar angle from the rest axis in
/// [0, max_polar], azimuth in [az_min, az_max].
std::vector<Vec3> direction_grid(double max_polar, double polar_step, double az_min, double az_max,
                                 double az_step);

}  // namespace magnav
