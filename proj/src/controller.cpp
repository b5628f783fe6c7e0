#include "magnav/controller.hpp"
#include "magnav/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace magnav {

std::string to_string(NavMode m) {
    switch (m) {
        case NavMode::Idle: return "idle";
        case NavMode::Calibrating: return "calibrate";
        case NavMode::Manual: return "manual";
        case NavMode::ShortRange: return "short_range";
        case NavMode::LongRange: return "long_range";
        case NavMode::Explore: return "explore";
        case NavMode::Halted: return "halted";
    }
    return "unknown";
}

std::string to_string(LongRangePhase p) {
    switch (p) {
        case LongRangePhase::OpenLoop: return "open_loop";
        case LongRangePhase::Project: return "project";
        case LongRangePhase::Waypoint: return "waypoint";
        case LongRangePhase::Final: return "final";
    }
    return "unknown";
}

ServoConfig ServoConfig::from_json(const nlohmann::json& j) {
    ServoConfig c;
    c.dt = j.value("dt", c.dt);
    if (j.contains("reference")) c.reference = Vec2(j["reference"][0].get<double>(), j["reference"][1].get<double>());
    c.beta = j.value("beta", c.beta);
    c.motion_gate = j.value("motion_gate", c.motion_gate);
    c.broyden_enabled = j.value("broyden", c.broyden_enabled);
    if (j.contains("pid")) {
        const auto& p = j["pid"];
        c.pid.kp = p.value("kp", c.pid.kp);
        c.pid.ki = p.value("ki", c.pid.ki);
        c.pid.kd = p.value("kd", c.pid.kd);
        c.pid.integral_clamp = p.value("integral_clamp", c.pid.integral_clamp);
    }
    c.slow_speed = j.value("slow_speed", c.slow_speed);
    c.fast_speed = j.value("fast_speed", c.fast_speed);
    c.max_condition = j.value("max_condition", c.max_condition);
    if (j.contains("calibration")) {
        const auto& k = j["calibration"];
        c.calib_dq = deg2rad(k.value("dq_deg", rad2deg(c.calib_dq)));
        c.calib_samples = k.value("samples", c.calib_samples);
        c.calib_settle_ticks = k.value("settle_ticks", c.calib_settle_ticks);
    }
    if (j.contains("long_range")) {
        const auto& l = j["long_range"];
        c.long_range.t_w = l.value("t_w", c.long_range.t_w);
        c.long_range.proximity = l.value("proximity", c.long_range.proximity);
        c.long_range.done = l.value("done", c.long_range.done);
        c.open_loop = l.value("open_loop", c.open_loop);
        c.open_loop_settle_ticks = l.value("settle_ticks", c.open_loop_settle_ticks);
    }
    c.max_dq_per_tick = deg2rad(j.value("max_dq_deg", rad2deg(c.max_dq_per_tick)));
    c.target_margin = j.value("target_margin", c.target_margin);
    c.explore_gain = j.value("explore_gain", c.explore_gain);
    c.keyframe_px = j.value("keyframe_px", c.keyframe_px);
    c.max_invalid_ticks = j.value("max_invalid_ticks", c.max_invalid_ticks);
    c.build_mosaic = j.value("build_mosaic", c.build_mosaic);
    if (j.contains("mask")) {
        c.mask.low = j["mask"].value("low", c.mask.low);
        c.mask.high = j["mask"].value("high", c.mask.high);
    }

    if (!(c.dt > 0.0)) throw Error(ErrorCode::ConfigError, "servo dt must be positive");
    if (c.beta < 0.0 || c.beta > 1.0) throw Error(ErrorCode::ConfigError, "Broyden rate must lie in [0, 1]");
    if (!(c.long_range.done < c.long_range.proximity && c.long_range.proximity < c.long_range.t_w))
        throw Error(ErrorCode::ConfigError, "long-range thresholds must satisfy done < proximity < t_w");
    if (c.calib_samples < 1 || c.calib_settle_ticks < 1 || !(c.calib_dq > 0.0))
        throw Error(ErrorCode::ConfigError, "invalid calibration settings");
    return c;
}

// ---------------------------------------------------------------- telemetry

nlohmann::json TelemetryRecord::to_json() const {
    nlohmann::json j{{"tick", tick},
                     {"t", t},
                     {"frame_id", frame_id},
                     {"mode", mode},
                     {"phase", phase},
                     {"status", status},
                     {"joystick_x", joystick.x()},
                     {"joystick_y", joystick.y()},
                     {"ds_d_x", ds_d.x()},
                     {"ds_d_y", ds_d.y()},
                     {"ds_hat_x", ds_hat.x()},
                     {"ds_hat_y", ds_hat.y()},
                     {"ds_valid", ds_valid},
                     {"e_x", e.x()},
                     {"e_y", e.y()},
                     {"has_error", has_error},
                     {"J11", J(0, 0)},
                     {"J12", J(0, 1)},
                     {"J21", J(1, 0)},
                     {"J22", J(1, 1)},
                     {"calibrated", calibrated},
                     {"broyden_updated", broyden_updated},
                     {"alpha", alpha},
                     {"beta", beta},
                     {"dq_alpha", dq.x()},
                     {"dq_beta", dq.y()},
                     {"inlier_fraction", inlier_fraction},
                     {"waypoints", waypoints},
                     {"events", events},
                     {"halt_cause", halt_cause}};
    if (goal) {
        j["goal_x"] = goal->x();
        j["goal_y"] = goal->y();
    }
    if (leg_start_distance) j["leg_start_distance"] = *leg_start_distance;
    if (target_distance) j["target_distance"] = *target_distance;
    if (!truth.empty()) j["truth"] = truth;
    return j;
}

TelemetryRecord TelemetryRecord::from_json(const nlohmann::json& j) {
    TelemetryRecord r;
    r.tick = j.at("tick").get<long>();
    r.t = j.at("t").get<double>();
    r.frame_id = j.value("frame_id", std::int64_t{0});
    r.mode = j.value("mode", "");
    r.phase = j.value("phase", "");
    r.status = j.value("status", "");
    r.joystick = Vec2(j.value("joystick_x", 0.0), j.value("joystick_y", 0.0));
    r.ds_d = Vec2(j.value("ds_d_x", 0.0), j.value("ds_d_y", 0.0));
    r.ds_hat = Vec2(j.value("ds_hat_x", 0.0), j.value("ds_hat_y", 0.0));
    r.ds_valid = j.value("ds_valid", false);
    r.e = Vec2(j.value("e_x", 0.0), j.value("e_y", 0.0));
    r.has_error = j.value("has_error", false);
    r.J << j.value("J11", 0.0), j.value("J12", 0.0), j.value("J21", 0.0), j.value("J22", 0.0);
    r.calibrated = j.value("calibrated", false);
    r.broyden_updated = j.value("broyden_updated", false);
    r.alpha = j.value("alpha", 0.0);
    r.beta = j.value("beta", 0.0);
    r.dq = Vec2(j.value("dq_alpha", 0.0), j.value("dq_beta", 0.0));
    r.inlier_fraction = j.value("inlier_fraction", 0.0);
    r.waypoints = j.value("waypoints", 0);
    if (j.contains("goal_x")) r.goal = Vec2(j["goal_x"].get<double>(), j["goal_y"].get<double>());
    if (j.contains("leg_start_distance")) r.leg_start_distance = j["leg_start_distance"].get<double>();
    if (j.contains("target_distance")) r.target_distance = j["target_distance"].get<double>();
    if (j.contains("events")) r.events = j["events"].get<std::vector<std::string>>();
    r.halt_cause = j.value("halt_cause", "");
    if (j.contains("truth")) r.truth = j["truth"];
    return r;
}

namespace {
const char* const kTruthColumns[] = {"true_ds_x", "true_ds_y", "true_err_x", "true_err_y", "bend_deg", "azimuth_deg"};
}

std::string TelemetryRecord::csv_header() {
    std::string h =
        "tick,t,frame_id,mode,phase,status,joystick_x,joystick_y,ds_d_x,ds_d_y,ds_hat_x,ds_hat_y,ds_valid,"
        "e_x,e_y,J11,J12,J21,J22,alpha,beta,dq_alpha,dq_beta,inlier_fraction,broyden_updated,waypoints,events";
    for (const char* c : kTruthColumns) h += std::string(",") + c;
    return h;
}

std::string TelemetryRecord::csv_row() const {
    std::ostringstream o;
    o.precision(10);
    std::string ev;
    for (const auto& e : events) ev += (ev.empty() ? "" : ";") + e;
    o << tick << ',' << t << ',' << frame_id << ',' << mode << ',' << phase << ',' << status << ','
      << joystick.x() << ',' << joystick.y() << ',' << ds_d.x() << ',' << ds_d.y() << ',' << ds_hat.x() << ','
      << ds_hat.y() << ',' << (ds_valid ? 1 : 0) << ',' << e.x() << ',' << e.y() << ',' << J(0, 0) << ','
      << J(0, 1) << ',' << J(1, 0) << ',' << J(1, 1) << ',' << alpha << ',' << beta << ',' << dq.x() << ','
      << dq.y() << ',' << inlier_fraction << ',' << (broyden_updated ? 1 : 0) << ',' << waypoints << ',' << ev;
    for (const char* c : kTruthColumns) {
        o << ',';
        if (truth.contains(c) && truth[c].is_number()) o << truth[c].get<double>();
    }
    return o.str();
}

// ---------------------------------------------------------------- controller

NavigationController::NavigationController(ServoConfig cfg, FieldState initial, int width, int height)
    : cfg_(std::move(cfg)),
      field_(initial),
      width_(width),
      height_(height),
      r_(cfg_.reference.value_or(Vec2(width / 2.0, height / 2.0))),
      mosaic_(Mosaic::Policy::FirstWrite, cfg_.mask) {
    pid_.gains = cfg_.pid;
}

const JacobianEstimate& NavigationController::jacobian() const {
    require_calibrated();
    return *J_;
}

void NavigationController::set_jacobian(const JacobianEstimate& J) {
    J_ = J;
    J_->beta = cfg_.beta;
    J_->motion_gate = cfg_.motion_gate;
}

void NavigationController::require_calibrated() const {
    if (!J_) throw Error(ErrorCode::NotCalibrated, "closed-loop modes need a calibrated Jacobian");
}

void NavigationController::start_calibration() {
    calib_ = Calibration{};
    mode_ = NavMode::Calibrating;
    halt_cause_.clear();
    pending_events_.push_back("calibration_start");
}

void NavigationController::set_manual(const Vec2& joystick, double speed) {
    require_calibrated();
    const double n = joystick.norm();
    joystick_ = n > 1.0 ? Vec2(joystick / n) : joystick;
    speed_ = speed;
    mode_ = NavMode::Manual;
    halt_cause_.clear();
}

void NavigationController::start_short_range(const Vec2& target_px) {
    require_calibrated();
    sr_.target = target_px;
    pid_.reset();
    mode_ = NavMode::ShortRange;
    halt_cause_.clear();
    pending_events_.push_back("short_range_start");
}

void NavigationController::start_long_range(const Vec2& target_mosaic) {
    require_calibrated();
    const auto [id, px] = mosaic_.mosaic_to_source(target_mosaic);
    lr_ = LongRange{};
    lr_.target_mosaic = target_mosaic;
    lr_.source_id = id;
    lr_.source_px = px;
    if (cfg_.open_loop) {
        lr_.phase = LongRangePhase::OpenLoop;
        lr_.settle_left = cfg_.open_loop_settle_ticks + 1;
    } else {
        lr_.phase = LongRangePhase::Project;
    }
    pid_.reset();
    mode_ = NavMode::LongRange;
    halt_cause_.clear();
    pending_events_.push_back("long_range_start");
}

void NavigationController::start_explore(const ExploreParams& params) {
    require_calibrated();
    explore_trajectory(params, 0.0);  // validates
    ex_ = Explore{};
    ex_.params = params;
    mode_ = NavMode::Explore;
    halt_cause_.clear();
    pending_events_.push_back("explore_start");
}

void NavigationController::reset_field(const FieldState& f) {
    field_ = f;
    prev_.reset();
    cur_to_mosaic_.reset();
    last_dq_.setZero();
    invalid_ticks_ = 0;
    idle();
}

void NavigationController::halt(const std::string& cause) {
    mode_ = NavMode::Halted;
    halt_cause_ = cause;
    joystick_.setZero();
}

void NavigationController::idle() {
    mode_ = NavMode::Idle;
    joystick_.setZero();
    halt_cause_.clear();
}

Vec2 NavigationController::clamp_dq(const Vec2& dq) const {
    const double n = dq.norm();
    if (!std::isfinite(n)) return Vec2::Zero();
    if (n > cfg_.max_dq_per_tick) return dq * (cfg_.max_dq_per_tick / n);
    return dq;
}

void NavigationController::update_mosaic(const Frame& frame, const HomographyEstimate& H_step,
                                         TelemetryRecord& rec) {
    if (!cfg_.build_mosaic && mode_ != NavMode::Explore) {
        // keep following the view on the finished mosaic by chaining frames
        if (cur_to_mosaic_ && H_step.valid)
            cur_to_mosaic_ = normalize_homography(*cur_to_mosaic_ * H_step.H.inverse());
        else
            cur_to_mosaic_.reset();
        return;
    }
    const FieldAngles angles{field_.alpha, field_.beta};
    if (mosaic_.empty()) {
        mosaic_.add_frame(frame, HomographyEstimate::identity(), angles);
        cur_to_mosaic_ = Mat3::Identity();
        rec.events.push_back("mosaic_anchor");
        return;
    }
    const Frame& key = mosaic_.last().frame;
    HomographyEstimate H = estimate_homography(key, frame, cfg_.mask, cfg_.vision);
    if (!H.valid) H = estimate_homography_wide(key, frame, cfg_.mask, cfg_.vision);
    if (!H.valid) {
        cur_to_mosaic_.reset();
        try {
            mosaic_.add_frame(frame, H, angles);
        } catch (const Error&) {
            rec.events.push_back("mosaic_gap");
        }
        return;
    }
    const Mat3 key_to_mosaic = mosaic_.last().H_to_mosaic;
    cur_to_mosaic_ = normalize_homography(key_to_mosaic * H.H.inverse());
    const Vec2 c(frame.width() / 2.0, frame.height() / 2.0);
    if ((c - apply_homography(H.H, c)).norm() > cfg_.keyframe_px || H.inlier_fraction < 0.6) {
        mosaic_.add_frame(frame, H, angles);
        rec.events.push_back("mosaic_keyframe");
    }
}

Vec2 NavigationController::calibration_tick(TelemetryRecord& rec, const std::optional<Vec2>& ds) {
    const int total = 2 * cfg_.calib_samples;
    auto probe_dq = [&](int p) {
        const double sign = ((p / 2) % 2 == 0) ? 1.0 : -1.0;
        return p % 2 == 0 ? Vec2(sign * cfg_.calib_dq, 0.0) : Vec2(0.0, sign * cfg_.calib_dq);
    };
    rec.phase = "probe_" + std::to_string(calib_.probe);
    if (calib_.settle >= 0) {
        if (ds) calib_.accum += *ds;
        if (++calib_.settle < cfg_.calib_settle_ticks) return Vec2::Zero();
        calib_.responses.push_back(calib_.accum);
        ++calib_.probe;
        calib_.settle = -1;
        calib_.accum.setZero();
    }
    if (calib_.probe < total) {
        calib_.settle = 0;
        return probe_dq(calib_.probe);
    }

    std::size_t next = 0;
    const auto& responses = calib_.responses;
    Probe replay = [&](const Vec2&) { return responses.at(next++); };
    JacobianEstimate est = calibrate_jacobian(replay, cfg_.calib_dq, cfg_.calib_samples);
    est.last_update = rec.t;
    set_jacobian(est);
    mode_ = NavMode::Idle;
    rec.events.push_back("calibrated");
    rec.status = "done";
    return Vec2::Zero();
}

Vec2 NavigationController::pursue(TelemetryRecord& rec, const Vec2& goal) {
    const Vec2 e = r_ - goal;
    rec.e = e;
    rec.has_error = true;
    rec.goal = goal;
    if (e.norm() <= cfg_.long_range.done) {
        rec.status = "reached";
        return Vec2::Zero();
    }
    rec.status = "running";
    // PID acts on the target's image motion; the view has to move the other way
    const Vec2 integral = pid_.integral;
    const Vec2 target_motion = pid_step(pid_, e, cfg_.dt);
    rec.ds_d = -target_motion;
    const Vec2 dq = solve_rotation(*J_, rec.ds_d, cfg_.max_condition);
    // no integration while the rotation command saturates
    if (dq.norm() > cfg_.max_dq_per_tick) pid_.integral = integral;
    return dq;
}

Vec2 NavigationController::short_range_tick(TelemetryRecord& rec, const HomographyEstimate& H, int w, int h) {
    if (H.valid) sr_.target = track_target(sr_.target, H, w, h, cfg_.target_margin);
    const Vec2 dq = pursue(rec, sr_.target);
    if (rec.status == "reached") {
        mode_ = NavMode::Idle;
        rec.events.push_back("reached");
    }
    return H.valid ? dq : Vec2::Zero();
}

std::optional<Vec2> NavigationController::project_from_mosaic(const Frame& frame, TelemetryRecord& rec) {
    auto register_on = [&](const Mosaic::Entry& ref) -> bool {
        HomographyEstimate H;
        if (cur_to_mosaic_)
            H = refine_homography(ref.frame, frame, cur_to_mosaic_->inverse() * ref.H_to_mosaic, cfg_.mask, cfg_.vision);
        if (!H.valid) H = estimate_homography_wide(ref.frame, frame, cfg_.mask, cfg_.vision);
        if (!H.valid) return false;
        cur_to_mosaic_ = normalize_homography(ref.H_to_mosaic * H.H.inverse());
        rec.events.push_back("registered:" + std::to_string(ref.frame_id));
        return true;
    };

    // the frame the target pixel came from, then stored frames near the view
    bool ok = false;
    if (const Mosaic::Entry* src = mosaic_.find(lr_.source_id)) ok = register_on(*src);
    if (!ok && cur_to_mosaic_) {
        const Vec2 here = apply_homography(*cur_to_mosaic_, Vec2(frame.width() / 2.0, frame.height() / 2.0));
        std::vector<const Mosaic::Entry*> near;
        for (const auto& e : mosaic_.entries())
            if (e.frame_id != lr_.source_id) near.push_back(&e);
        const std::size_t n = std::min<std::size_t>(3, near.size());
        std::partial_sort(near.begin(), near.begin() + n, near.end(), [&](const auto* a, const auto* b) {
            return (a->center_mosaic - here).squaredNorm() < (b->center_mosaic - here).squaredNorm();
        });
        for (std::size_t i = 0; i < n && !ok; ++i) ok = register_on(*near[i]);
    }
    if (!ok) return std::nullopt;
    return apply_homography(cur_to_mosaic_->inverse(), lr_.target_mosaic);
}

void NavigationController::project_long_range(TelemetryRecord& rec, const Frame& frame) {
    const auto s = project_from_mosaic(frame, rec);
    if (!s) throw Error(ErrorCode::ProjectionFailed, "not enough shared features between the mosaic and live frame");
    if (!s->allFinite()) throw Error(ErrorCode::ProjectionFailed, "target projects to infinity");
    rec.target_distance = (*s - r_).norm();
    if (const auto wp = waypoint(r_, *s, cfg_.long_range.t_w)) {
        lr_.goal = *wp;
        lr_.phase = LongRangePhase::Waypoint;
        ++lr_.waypoints;
        rec.events.push_back("waypoint");
    } else {
        lr_.goal = *s;
        lr_.phase = LongRangePhase::Final;
        rec.events.push_back("final_leg");
    }
    pid_.reset();
    rec.leg_start_distance = (lr_.goal - r_).norm();
    rec.events.push_back("leg_start");
}

Vec2 NavigationController::long_range_tick(TelemetryRecord& rec, const Frame& frame, const HomographyEstimate& H) {
    if (lr_.phase == LongRangePhase::OpenLoop) {
        if (lr_.settle_left == cfg_.open_loop_settle_ticks + 1) {
            const FieldAngles f = mosaic_.interpolate_field(lr_.target_mosaic);
            field_ = point_field(field_, f.alpha, f.beta);
            rec.events.push_back("open_loop_command");
        }
        if (--lr_.settle_left <= 0) lr_.phase = LongRangePhase::Project;
        rec.phase = to_string(LongRangePhase::OpenLoop);
        rec.status = "running";
        return Vec2::Zero();
    }
    bool have_goal = lr_.phase != LongRangePhase::Project;
    if (have_goal && H.valid) lr_.goal = track_target(lr_.goal, H, width_, height_, cfg_.target_margin);
    if (!have_goal || (lr_.phase == LongRangePhase::Waypoint && (r_ - lr_.goal).norm() < cfg_.long_range.proximity)) {
        project_long_range(rec, frame);
        have_goal = true;
    }
    rec.phase = to_string(lr_.phase);
    rec.waypoints = lr_.waypoints;
    Vec2 dq = pursue(rec, lr_.goal);
    if (rec.status == "reached" && lr_.phase == LongRangePhase::Final && lr_.checks < 3) {
        // confirm against a fresh registration before declaring arrival
        ++lr_.checks;
        const auto s = project_from_mosaic(frame, rec);
        if (s && (r_ - *s).norm() > cfg_.long_range.done) {
            lr_.goal = *s;
            rec.events.push_back("reproject");
            dq = pursue(rec, lr_.goal);
        }
    }
    if (rec.status == "reached" && lr_.phase == LongRangePhase::Final) {
        mode_ = NavMode::Idle;
        rec.events.push_back("reached");
    }
    return (H.valid || rec.leg_start_distance) ? dq : Vec2::Zero();
}

Vec2 NavigationController::explore_tick(TelemetryRecord& rec, const Frame& frame) {
    rec.phase = ex_.params.pattern == ExplorePattern::Spiral ? "spiral" : "raster";
    rec.status = "running";
    if (!cur_to_mosaic_) return Vec2::Zero();
    const Vec2 c(frame.width() / 2.0, frame.height() / 2.0);
    if (!ex_.started) {
        ex_.start = apply_homography(*cur_to_mosaic_, c);
        ex_.t0 = frame.timestamp;
        ex_.started = true;
    }
    const double t = frame.timestamp - ex_.t0;
    if (t >= ex_.params.duration || ex_.params.speed * t >= explore_path_length(ex_.params)) {
        mode_ = NavMode::Idle;
        rec.status = "done";
        rec.events.push_back("explore_done");
        return Vec2::Zero();
    }
    const Mat3 to_image = cur_to_mosaic_->inverse();
    const Vec2 want = apply_homography(to_image, ex_.start + explore_trajectory(ex_.params, t));
    const Vec2 next = apply_homography(to_image, ex_.start + explore_trajectory(ex_.params, t + cfg_.dt));
    rec.e = want - c;
    rec.has_error = true;
    rec.goal = want;
    rec.ds_d = (next - want) + cfg_.explore_gain * (want - c);
    return solve_rotation(*J_, rec.ds_d, cfg_.max_condition);
}

TelemetryRecord NavigationController::tick(const Frame& frame) {
    TelemetryRecord rec;
    rec.tick = tick_++;
    rec.t = frame.timestamp;
    rec.frame_id = frame.frame_id;
    rec.events = std::move(pending_events_);
    pending_events_.clear();
    if (frame.width() != width_ || frame.height() != height_)
        throw Error(ErrorCode::DimensionMismatch, "frame size differs from the configured camera");

    HomographyEstimate H;
    std::optional<Vec2> ds;
    if (prev_) {
        H = estimate_homography(*prev_, frame, cfg_.mask, cfg_.vision);
        rec.inlier_fraction = H.inlier_fraction;
        if (H.valid) ds = center_motion(H, Vec2(width_ / 2.0, height_ / 2.0));
    }
    if (ds) {
        rec.ds_hat = *ds;
        rec.ds_valid = true;
    }

    try {
        update_mosaic(frame, H, rec);
    } catch (const Error& err) {
        rec.events.push_back(std::string("mosaic_error:") + std::string(to_string(err.code())));
    }

    const bool closed_loop = mode_ == NavMode::Manual || mode_ == NavMode::ShortRange || mode_ == NavMode::Explore ||
                             (mode_ == NavMode::LongRange && lr_.phase != LongRangePhase::OpenLoop);
    if (J_ && cfg_.broyden_enabled && closed_loop && ds && last_dq_.norm() > 0.0) {
        const long before = J_->updates;
        *J_ = broyden_update(*J_, last_dq_, *ds, cfg_.dt, rec.t);
        rec.broyden_updated = J_->updates != before;
    }

    const bool needs_vision = mode_ == NavMode::ShortRange || mode_ == NavMode::Explore ||
                              (mode_ == NavMode::LongRange && lr_.phase != LongRangePhase::OpenLoop);
    invalid_ticks_ = (prev_ && !H.valid && needs_vision) ? invalid_ticks_ + 1 : 0;

    Vec2 dq = Vec2::Zero();
    rec.mode = to_string(mode_);
    try {
        if (invalid_ticks_ > cfg_.max_invalid_ticks)
            throw Error(ErrorCode::InvalidHomography, "vision lost for too many consecutive frames");
        switch (mode_) {
            case NavMode::Idle:
            case NavMode::Halted:
                rec.status = mode_ == NavMode::Halted ? "halted" : "idle";
                break;
            case NavMode::Calibrating:
                dq = calibration_tick(rec, ds);
                if (rec.status.empty()) rec.status = "running";
                break;
            case NavMode::Manual:
                rec.joystick = joystick_;
                rec.ds_d = joystick_ * speed_ * cfg_.dt;
                rec.status = "running";
                if (joystick_.norm() > 0.0) dq = manual_step(*J_, joystick_, speed_, cfg_.dt, cfg_.max_condition);
                break;
            case NavMode::ShortRange:
                rec.phase = "final";
                dq = short_range_tick(rec, H, width_, height_);
                break;
            case NavMode::LongRange:
                dq = long_range_tick(rec, frame, H);
                break;
            case NavMode::Explore:
                dq = explore_tick(rec, frame);
                break;
        }
    } catch (const Error& err) {
        halt(std::string(to_string(err.code())));
        rec.status = "halted";
        rec.events.push_back("halted");
        dq.setZero();
    }

    dq = clamp_dq(dq);
    if (dq.norm() > 0.0) field_ = rotate_field(field_, FieldRotation::from(dq));
    last_dq_ = dq;
    prev_ = frame;

    rec.dq = dq;
    rec.alpha = field_.alpha;
    rec.beta = field_.beta;
    rec.calibrated = J_.has_value();
    if (J_) rec.J = J_->J;
    rec.halt_cause = halt_cause_;
    return rec;
}

}  // namespace magnav
