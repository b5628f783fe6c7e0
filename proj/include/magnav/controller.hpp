#pragma once

#include "magnav/magnetics.hpp"
#include "magnav/mosaic.hpp"
#include "magnav/scene.hpp"
#include "magnav/servo.hpp"
#include "magnav/vision.hpp"

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace magnav {

enum class NavMode { Idle, Calibrating, Manual, ShortRange, LongRange, Explore, Halted };
enum class LongRangePhase { OpenLoop, Project, Waypoint, Final };

std::string to_string(NavMode m);
std::string to_string(LongRangePhase p);

struct ServoConfig {
    double dt = 0.04;
    std::optional<Vec2> reference;  // defaults to the image center
    double beta = 0.3;
    double motion_gate = 8.0;
    bool broyden_enabled = true;
    PidGains pid;
    double slow_speed = 40.0;
    double fast_speed = 120.0;
    double max_condition = 1e4;
    double calib_dq = deg2rad(2.0);
    int calib_samples = 4;
    int calib_settle_ticks = 6;
    LongRangeParams long_range;
    bool open_loop = true;
    int open_loop_settle_ticks = 25;
    double max_dq_per_tick = deg2rad(3.0);
    double target_margin = 20.0;
    double explore_gain = 0.3;
    double keyframe_px = 30.0;       // mosaic keyframe spacing
    int max_invalid_ticks = 10;      // consecutive vision failures before halting
    bool build_mosaic = false;       // also stitch outside explore mode
    MaskParams mask;
    VisionOptions vision;

    static ServoConfig from_json(const nlohmann::json& j);
};

/// One control tick as published to telemetry. `truth` is filled in by the
/// simulation harness and is never read by the controller.
struct TelemetryRecord {
    long tick = 0;
    double t = 0.0;
    std::int64_t frame_id = 0;
    std::string mode;
    std::string phase;
    std::string status;
    Vec2 joystick = Vec2::Zero();
    Vec2 ds_d = Vec2::Zero();
    Vec2 ds_hat = Vec2::Zero();
    bool ds_valid = false;
    Vec2 e = Vec2::Zero();
    bool has_error = false;
    Mat2 J = Mat2::Zero();
    bool calibrated = false;
    bool broyden_updated = false;
    double alpha = 0.0;
    double beta = 0.0;
    Vec2 dq = Vec2::Zero();
    double inlier_fraction = 0.0;
    std::optional<Vec2> goal;
    std::optional<double> leg_start_distance;
    std::optional<double> target_distance;  // |projected target - r| at a projection
    int waypoints = 0;
    std::vector<std::string> events;
    std::string halt_cause;
    nlohmann::json truth = nlohmann::json::object();

    nlohmann::json to_json() const;
    static TelemetryRecord from_json(const nlohmann::json& j);
    static std::string csv_header();
    std::string csv_row() const;
};

/// Eye-in-hand navigation controller. Owns the commanded field, the Jacobian
/// estimate and the mosaic; it only ever sees camera frames.
class NavigationController {
public:
    NavigationController(ServoConfig cfg, FieldState initial, int width, int height);

    void start_calibration();
    /// Enter manual mode with the given joystick vector (unit or zero).
    void set_manual(const Vec2& joystick, double speed);
    void start_short_range(const Vec2& target_px);
    void start_long_range(const Vec2& target_mosaic);
    void start_explore(const ExploreParams& params);
    void halt(const std::string& cause = "operator");
    void idle();

    void set_broyden_enabled(bool on) { cfg_.broyden_enabled = on; }
    void set_jacobian(const JacobianEstimate& J);
    void set_build_mosaic(bool on) { cfg_.build_mosaic = on; }
    /// Replace the commanded field and forget the previous frame (the view
    /// jumps). Mode returns to idle; the Jacobian and mosaic are kept.
    void reset_field(const FieldState& f);

    TelemetryRecord tick(const Frame& frame);

    NavMode mode() const { return mode_; }
    const FieldState& field() const { return field_; }
    bool calibrated() const { return J_.has_value(); }
    const JacobianEstimate& jacobian() const;
    const Mosaic& mosaic() const { return mosaic_; }
    Mosaic& mosaic() { return mosaic_; }
    const ServoConfig& config() const { return cfg_; }
    Vec2 reference() const { return r_; }
    const std::string& halt_cause() const { return halt_cause_; }
    /// Current view homography into the mosaic, when registered.
    std::optional<Mat3> view_to_mosaic() const { return cur_to_mosaic_; }

private:
    struct Calibration {
        int probe = 0;       // index over samples * 2 probes
        int settle = -1;     // ticks since the probe was commanded, -1 before
        Vec2 accum = Vec2::Zero();
        std::vector<Vec2> responses;
    };
    struct ShortRange {
        Vec2 target;
    };
    struct LongRange {
        Vec2 target_mosaic;
        std::int64_t source_id = 0;
        Vec2 source_px;
        LongRangePhase phase = LongRangePhase::Project;
        int settle_left = 0;
        Vec2 goal;
        int waypoints = 0;
        int checks = 0;
    };
    struct Explore {
        ExploreParams params;
        Vec2 start;
        double t0 = 0.0;
        bool started = false;
    };

    void require_calibrated() const;
    void update_mosaic(const Frame& frame, const HomographyEstimate& H_step, TelemetryRecord& rec);
    Vec2 calibration_tick(TelemetryRecord& rec, const std::optional<Vec2>& ds);
    Vec2 short_range_tick(TelemetryRecord& rec, const HomographyEstimate& H, int w, int h);
    Vec2 long_range_tick(TelemetryRecord& rec, const Frame& frame, const HomographyEstimate& H);
    std::optional<Vec2> project_from_mosaic(const Frame& frame, TelemetryRecord& rec);
    void project_long_range(TelemetryRecord& rec, const Frame& frame);
    Vec2 pursue(TelemetryRecord& rec, const Vec2& goal);
    Vec2 explore_tick(TelemetryRecord& rec, const Frame& frame);
    Vec2 clamp_dq(const Vec2& dq) const;

    ServoConfig cfg_;
    FieldState field_;
    int width_;
    int height_;
    Vec2 r_;
    NavMode mode_ = NavMode::Idle;
    std::optional<JacobianEstimate> J_;
    PidState pid_;
    Vec2 joystick_ = Vec2::Zero();
    double speed_ = 0.0;
    Calibration calib_;
    ShortRange sr_;
    LongRange lr_;
    Explore ex_;
    std::optional<Frame> prev_;
    Vec2 last_dq_ = Vec2::Zero();
    long tick_ = 0;
    int invalid_ticks_ = 0;
    std::string halt_cause_;
    std::vector<std::string> pending_events_;

    Mosaic mosaic_;
    std::optional<Mat3> cur_to_mosaic_;
    bool registered_ = false;
};

}  // namespace magnav
