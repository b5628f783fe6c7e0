#include "magnav/errors.hpp"
#include "magnav/servo.hpp"

#include <cmath>
#include <string>

namespace magnav {

JacobianEstimate calibrate_jacobian(const Probe& probe, double dq_mag, int samples) {
    if (!(dq_mag > 0.0) || samples < 1)
        throw Error(ErrorCode::ConfigError, "calibration needs dq_mag > 0 and at least one sample");
    const Vec2 q1(dq_mag, 0.0);
    const Vec2 q2(0.0, dq_mag);
    Vec2 s1 = Vec2::Zero();
    Vec2 s2 = Vec2::Zero();
    for (int i = 0; i < samples; ++i) {
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        s1 += sign * probe(sign * q1);
        s2 += sign * probe(sign * q2);
    }
    s1 /= samples;
    s2 /= samples;

    Mat2 S;
    S.col(0) = s1;
    S.col(1) = s2;
    const double scale = s1.norm() * s2.norm();
    if (!S.allFinite() || scale < 1e-12 || std::abs(S.determinant()) <= 1e-6 * scale)
        throw Error(ErrorCode::SingularCalibration, "calibration probe responses are linearly dependent");

    Mat2 Q;
    Q.col(0) = q1;
    Q.col(1) = q2;
    JacobianEstimate est;
    est.J = S * Q.inverse();
    return est;
}

JacobianEstimate broyden_update(const JacobianEstimate& est, const Vec2& dq, const Vec2& ds_hat, double dt,
                                double timestamp) {
    const double dq2 = dq.squaredNorm();
    if (dq2 <= 0.0 || !(dt > 0.0)) return est;
    if (ds_hat.norm() / dt < est.motion_gate) return est;
    JacobianEstimate out = est;
    out.J += est.beta * (ds_hat - est.J * dq) * dq.transpose() / dq2;
    out.last_update = timestamp;
    ++out.updates;
    return out;
}

Vec2 solve_rotation(const JacobianEstimate& est, const Vec2& ds, double max_condition) {
    const double cond = condition_number(est.J);
    if (!est.J.allFinite() || !(cond <= max_condition))
        throw Error(ErrorCode::IllConditionedJacobian,
                    "Jacobian condition number " + std::to_string(cond) + " exceeds limit; recalibrate");
    return est.J.inverse() * ds;
}

Vec2 manual_step(const JacobianEstimate& est, const Vec2& joystick_dir, double speed, double dt,
                 double max_condition) {
    return solve_rotation(est, joystick_dir * speed * dt, max_condition);
}

Vec2 pid_step(PidState& pid, const Vec2& e, double dt) {
    const PidGains& g = pid.gains;
    pid.integral += e * dt;
    pid.integral = pid.integral.cwiseMax(-g.integral_clamp).cwiseMin(g.integral_clamp);
    const Vec2 de = pid.has_prev ? Vec2(e - pid.prev_error) : Vec2::Zero();
    pid.prev_error = e;
    pid.has_prev = true;
    return g.kp * e + g.ki * pid.integral + g.kd * de;
}

std::optional<Vec2> waypoint(const Vec2& r, const Vec2& target, double t_w) {
    const Vec2 d = target - r;
    const double n = d.norm();
    if (n <= t_w) return std::nullopt;
    return Vec2(r + t_w * d / n);
}

}  // namespace magnav
