#include "magnav/plant.hpp"
#include "magnav/errors.hpp"

#include <algorithm>

namespace magnav {

namespace {

Vec3 base_direction(double bend, double azimuth) {
    return {std::sin(bend) * std::cos(azimuth), std::sin(bend) * std::sin(azimuth), std::cos(bend)};
}


Pose depth_base(const PlantParams& params, double depth) {
    return params.base_pose * Eigen::Translation3d(0.0, 0.0, depth);
}

Vec3 slerp_dir(const Vec3& a, const Vec3& b, double u) {
    const double ang = angle_between(a, b);
    if (ang < 1e-12) return b;
    Vec3 axis = a.cross(b);
    if (axis.norm() < 1e-12) axis = any_perpendicular(a);
    return axis_angle(axis, ang * u) * a;
}

}  // namespace

PlantParams PlantParams::horizontal(double x0) {
    PlantParams p;
    Mat3 R;
    R.col(0) = -Vec3::UnitY();
    R.col(1) = -Vec3::UnitZ();
    R.col(2) = Vec3::UnitX();
    p.base_pose = make_pose(R, Vec3(x0, 0.0, 0.0));
    p.camera_offset = make_pose(Mat3::Identity(), Vec3(0.0, 0.0, -2.0));
    return p;
}

PlantParams PlantParams::from_json(const nlohmann::json& j) {
    PlantParams p = horizontal(j.value("base_x_mm", 0.0));
    p.m = j.value("m", p.m);
    p.tau_align = j.value("tau_align_s", p.tau_align);
    p.g_sag = j.value("g_sag", p.g_sag);
    p.bend_max = deg2rad(j.value("bend_max_deg", rad2deg(p.bend_max)));
    p.segment_length = j.value("segment_length_mm", p.segment_length);
    p.depth_max = j.value("depth_max_mm", p.depth_max);
    p.camera_offset.translation().z() = -j.value("camera_setback_mm", 2.0);
    if (p.tau_align <= 0.0) throw Error(ErrorCode::ConfigError, "tau_align must be > 0");
    if (p.bend_max > kPi || p.bend_max <= 0.0)
        throw Error(ErrorCode::ConfigError, "bend_max must be in (0, 180] deg");
    return p;
}

Pose segment_pose(double bend, double azimuth, double length) {
    Vec3 p(0.0, 0.0, length);
    if (bend > 1e-9) {
        const double r = length / bend;
        p = Vec3(r * (1.0 - std::cos(bend)) * std::cos(azimuth),
                 r * (1.0 - std::cos(bend)) * std::sin(azimuth), r * std::sin(bend));
    }
    const Vec3 axis(-std::sin(azimuth), std::cos(azimuth), 0.0);
    return make_pose(axis_angle(axis, bend), p);
}

TipState make_state(const PlantParams& params, double bend, double azimuth, double depth) {
    TipState s;
    s.bend = std::min(bend, params.bend_max);
    s.azimuth = azimuth;
    s.insertion_depth = depth;
    s.tip_pose = depth_base(params, depth) * segment_pose(s.bend, azimuth, params.segment_length);
    s.camera_pose = s.tip_pose * params.camera_offset;
    return s;
}

TipState rest_state(const PlantParams& params, double depth) {
    return make_state(params, 0.0, 0.0, depth);
}

Vec3 tip_direction(const TipState& state, const PlantParams& params) {
    return params.base_pose.linear() * base_direction(state.bend, state.azimuth);
}

Vec3 magnetic_torque(const TipState& state, const PlantParams& params, const FieldState& f) {
    // mT -> T
    return (params.m * tip_direction(state, params)).cross(f.b * 1e-3);
}

TipState step_plant(const TipState& state, const PlantParams& params, const FieldState& f,
                    const Vec3& gravity_dir, double dt) {
    const Mat3& base_R = params.base_pose.linear();
    const Vec3 rest_axis = base_R.col(2);
    const Vec3 d = base_R * base_direction(state.bend, state.azimuth);

    // field direction sagged toward gravity, stronger for weak fields
    const Vec3 bhat = f.direction();
    const Vec3 g = gravity_dir.normalized();
    Vec3 target = bhat;
    const Vec3 bxg = bhat.cross(g);
    const double s = bxg.norm();
    if (params.g_sag != 0.0 && s > 1e-12) {
        const double sag = params.g_sag * params.gravity / f.magnitude * s;
        target = axis_angle(bxg / s, sag) * bhat;
    }

    const double err = angle_between(d, target);
    if (err < 1e-15) return state;
    const double travel = err * (1.0 - std::exp(-dt / params.tau_align));

    Vec3 k = d.cross(target);
    if (k.norm() < 1e-9) {
        k = d.cross(rest_axis);
        if (k.norm() < 1e-9) k = any_perpendicular(d);
    }
    k.normalize();
    const Vec3 kd = k.cross(d);
    auto along = [&](double t) { return Vec3(d * std::cos(t) + kd * std::sin(t)); };

    // stop where the great-circle path would enter the cap beyond bend_max
    const double cos_max = std::cos(params.bend_max);
    auto outside = [&](double t) { return rest_axis.dot(along(t)) < cos_max; };
    double reach = travel;
    const int samples = std::max(2, static_cast<int>(std::ceil(travel / 0.005)) + 1);
    for (int i = 0; i < samples; ++i) {
        const double t = travel * i / (samples - 1);
        if (outside(t)) {
            double lo = i == 0 ? 0.0 : travel * (i - 1) / (samples - 1);
            double hi = t;
            if (i == 0) {
                reach = 0.0;
                break;
            }
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                (outside(mid) ? hi : lo) = mid;
            }
            reach = lo;
            break;
        }
    }

    const Vec3 d_new = base_R.transpose() * along(reach);
    const double bend = std::acos(std::clamp(d_new.z(), -1.0, 1.0));
    double azimuth = state.azimuth;
    if (std::hypot(d_new.x(), d_new.y()) > 1e-12) azimuth = std::atan2(d_new.y(), d_new.x());
    return make_state(params, std::min(bend, params.bend_max), azimuth, state.insertion_depth);
}

TipState advance(const TipState& state, const PlantParams& params, double delta_depth) {
    const double depth = state.insertion_depth + delta_depth;
    if (depth < 0.0 || depth > params.depth_max)
        throw Error(ErrorCode::DepthLimit, "insertion depth " + std::to_string(depth) +
                                               " mm outside [0, " + std::to_string(params.depth_max) + "]");
    return make_state(params, state.bend, state.azimuth, depth);
}

std::vector<Vec3> direction_grid(double max_polar, double polar_step, double az_min, double az_max,
                                 double az_step) {
    std::vector<Vec3> dirs;
    const int n_polar = static_cast<int>(std::floor(max_polar / polar_step + 1e-9));
    const int n_az = static_cast<int>(std::floor((az_max - az_min) / az_step + 1e-9));
    bool forward = true;
    for (int i = 0; i <= n_polar; ++i) {
        const double polar = i * polar_step;
        if (i == 0) {
            dirs.push_back(Vec3::UnitZ());
            continue;
        }
        for (int jj = 0; jj <= n_az; ++jj) {
            const int j = forward ? jj : n_az - jj;
            const double az = az_min + j * az_step;
            dirs.push_back(base_direction(polar, az));
        }
        forward = !forward;
    }
    return dirs;
}

WorkspaceSweep sweep_workspace(const PlantParams& params, double magnitude,
                               const std::vector<Vec3>& directions, const SweepOptions& opts) {
    WorkspaceSweep out;
    const Mat3& base_R = params.base_pose.linear();
    TipState state = rest_state(params, 0.0);
    Vec3 prev_field = Vec3::UnitZ();
    Vec3 prev_tip = tip_direction(state, params);
    Vec3 prev_omega = Vec3::Zero();
    const int settle_steps = static_cast<int>(std::ceil(opts.settle_taus * params.tau_align / opts.dt));

    for (const Vec3& raw : directions) {
        const Vec3 dir = raw.normalized();
        const double delta = angle_between(prev_field, dir);
        // smoothstep ramp whose peak angular acceleration is 30% of the threshold
        const double move_time = std::max(4.0 * opts.dt, std::sqrt(6.0 * delta / (0.3 * opts.accel_threshold)));
        const int move_steps = static_cast<int>(std::ceil(move_time / opts.dt));
        double peak = 0.0;

        for (int i = 1; i <= move_steps + settle_steps; ++i) {
            const double u = std::min(1.0, static_cast<double>(i) / move_steps);
            const double smooth = u * u * (3.0 - 2.0 * u);
            const Vec3 fdir = slerp_dir(prev_field, dir, smooth);
            FieldState f;
            f.magnitude = magnitude;
            f.b = magnitude * (base_R * fdir);
            state = step_plant(state, params, f, opts.gravity_dir, opts.dt);
            const Vec3 tip = tip_direction(state, params);
            const Vec3 omega = prev_tip.cross(tip) / opts.dt;
            peak = std::max(peak, (omega - prev_omega).norm() / opts.dt);
            prev_omega = omega;
            prev_tip = tip;
        }
        prev_field = dir;

        WorkspaceEntry e;
        e.field_dir = dir;
        e.bend = state.bend;
        e.azimuth = state.azimuth;
        e.tip_pose = segment_pose(state.bend, state.azimuth, params.segment_length);
        e.peak_accel = peak;
        (peak > opts.accel_threshold ? out.culled : out.stable).push_back(e);
    }
    return out;
}

}  // namespace magnav
