#pragma once

#include "magnav/controller.hpp"
#include "magnav/magnetics.hpp"
#include "magnav/plant.hpp"
#include "magnav/scene.hpp"

#include <map>
#include <memory>
#include <optional>

#include <json.hpp>

namespace magnav {

/// Everything needed to build a closed-loop simulation.
struct SimConfig {
    PlantParams plant = PlantParams::horizontal(0.0);
    Surface surface;
    CameraIntrinsics intrinsics;
    ServoConfig servo;
    double field_magnitude = 15.0;     // mT
    double initial_alpha = 0.0;        // rad, field azimuth in S
    double initial_beta = 0.0;         // rad, field elevation in S
    double initial_depth = 0.0;        // mm
    Vec3 gravity_dir{0.0, 0.0, -1.0};
    int substeps = 4;
    Vec3 actuation_position{145.0, 0.0, 0.0};  // mm, tip position in the coil frame
    ActuationMap actuation = ActuationMap::synthetic();
    FieldCapMap caps;
    RenderOptions render;
    bool settle_initial = true;        // relax the tip under the initial field first

    static SimConfig from_json(const nlohmann::json& j);
};

/// Controller + plant + renderer. The controller only receives frames; the
/// ground truth the simulation knows is attached to telemetry as `truth`.
class Simulation {
public:
    explicit Simulation(SimConfig cfg);

    /// Render, run one control tick, apply the field to the plant.
    TelemetryRecord step();

    NavigationController& controller() { return *controller_; }
    const NavigationController& controller() const { return *controller_; }
    const SimConfig& config() const { return cfg_; }
    const Scene& scene() const { return *scene_; }
    const TipState& tip() const { return tip_; }
    double time() const { return t_; }
    long ticks() const { return tick_; }
    /// Frame shown to the operator (last rendered); empty before the first step.
    const Frame& last_frame() const { return last_frame_; }
    std::optional<Pose> frame_pose(std::int64_t frame_id) const;

    void advance(double delta_mm);
    /// Put the tip and the commanded field back to a saved configuration.
    void reset(const TipState& tip, const FieldState& field);

    /// Ground-truth target tracked in the `true_err` telemetry fields.
    void set_truth_target(const std::optional<Vec3>& p) { truth_target_ = p; }
    /// Surface point under `pixel` of the frame with the given id.
    std::optional<Vec3> surface_point(std::int64_t frame_id, const Vec2& pixel) const;

    /// Convenience wrappers that also register the ground-truth target.
    void command_short_range(const Vec2& target_px);
    void command_long_range(const Vec2& target_mosaic);

    /// Current true image position of the ground-truth target.
    std::optional<Vec2> truth_target_px() const;

private:
    SimConfig cfg_;
    std::unique_ptr<Scene> scene_;
    std::unique_ptr<NavigationController> controller_;
    TipState tip_;
    double t_ = 0.0;
    long tick_ = 0;
    Frame last_frame_;
    std::optional<Pose> prev_pose_;
    std::map<std::int64_t, Pose> poses_;
    std::optional<Vec3> truth_target_;
};

}  // namespace magnav
