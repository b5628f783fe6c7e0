#pragma once

#include "magnav/geometry.hpp"

#include <functional>
#include <optional>

namespace magnav {

/// Image Jacobian estimate mapping field rotations (alpha, beta) in radians to
/// image-center motion in pixels.
struct JacobianEstimate {
    Mat2 J = Mat2::Identity();
    double last_update = 0.0;
    double beta = 0.3;
    double motion_gate = 8.0;  // px/s
    long updates = 0;
};

/// Probe applies a field rotation dq and returns the measured image motion.
using Probe = std::function<Vec2(const Vec2& dq)>;

/// Identify J from two orthogonal probes of magnitude dq_mag, each repeated
/// `samples` times with alternating sign. Throws SingularCalibration.
JacobianEstimate calibrate_jacobian(const Probe& probe, double dq_mag, int samples);

/// Rank-one secant update, applied only when |ds_hat|/dt reaches the motion
/// gate. A zero dq leaves the estimate unchanged.
JacobianEstimate broyden_update(const JacobianEstimate& est, const Vec2& dq, const Vec2& ds_hat, double dt,
                                double timestamp = 0.0);

/// dq = J^-1 * ds. Throws IllConditionedJacobian when cond(J) > max_condition.
Vec2 solve_rotation(const JacobianEstimate& est, const Vec2& ds, double max_condition = 1e4);

/// Field rotation moving the view by joystick_dir * speed * dt.
Vec2 manual_step(const JacobianEstimate& est, const Vec2& joystick_dir, double speed, double dt,
                 double max_condition = 1e4);

struct PidGains {
    double kp = 0.4;
    double ki = 0.05;
    double kd = 0.1;
    double integral_clamp = 50.0;  // px*s, per component
};

struct PidState {
    PidGains gains;
    Vec2 integral = Vec2::Zero();
    Vec2 prev_error = Vec2::Zero();
    bool has_prev = false;

    void reset() {
        integral.setZero();
        prev_error.setZero();
        has_prev = false;
    }
};

/// One PID step on the pixel error. The derivative term uses the per-tick
/// error increment (Kd * (e - e_prev)) so all three gains act on pixels.
Vec2 pid_step(PidState& pid, const Vec2& e, double dt);

struct LongRangeParams {
    double t_w = 125.0;
    double proximity = 40.0;
    double done = 2.0;
};

/// Intermediate goal t_w pixels from r towards `target`, or nothing when the
/// target is already within t_w.
std::optional<Vec2> waypoint(const Vec2& r, const Vec2& target, double t_w);

enum class ExplorePattern { Spiral, Raster };

struct ExploreParams {
    ExplorePattern pattern = ExplorePattern::Spiral;
    double speed = 60.0;   // px/s along the path
    double pitch = 120.0;  // spiral: radial gain per turn; raster: row spacing
    double width = 600.0;  // raster rectangle
    double height = 400.0;
    double duration = 30.0;
};

/// Desired view-center offset from the start center, in mosaic pixels.
Vec2 explore_trajectory(const ExploreParams& params, double t);

/// Path length after which explore_trajectory stays put (infinite for spirals).
double explore_path_length(const ExploreParams& params);

}  // namespace magnav
