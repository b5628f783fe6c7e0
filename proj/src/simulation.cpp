#include "magnav/simulation.hpp"
#include "magnav/errors.hpp"

#include <cmath>

namespace magnav {

namespace {

Vec3 vec3(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

SimConfig SimConfig::from_json(const nlohmann::json& j) {
    SimConfig c;
    if (j.contains("plant")) c.plant = PlantParams::from_json(j["plant"]);
    if (j.contains("surface")) c.surface = Surface::from_json(j["surface"]);
    if (j.contains("camera")) c.intrinsics = CameraIntrinsics::from_json(j["camera"]);
    if (j.contains("servo")) c.servo = ServoConfig::from_json(j["servo"]);
    c.field_magnitude = j.value("field_mT", c.field_magnitude);
    if (j.contains("initial_field_deg")) {
        c.initial_alpha = deg2rad(j["initial_field_deg"].at(0).get<double>());
        c.initial_beta = deg2rad(j["initial_field_deg"].at(1).get<double>());
    }
    c.initial_depth = j.value("initial_depth_mm", c.initial_depth);
    if (j.contains("gravity_dir")) c.gravity_dir = vec3(j["gravity_dir"]);
    c.substeps = j.value("substeps", c.substeps);
    if (j.contains("actuation_position_mm")) c.actuation_position = vec3(j["actuation_position_mm"]);
    if (j.contains("actuation")) c.actuation = ActuationMap::from_json(j["actuation"]);
    if (j.contains("field_caps")) c.caps = FieldCapMap::from_json(j["field_caps"]);
    c.render.min_coverage = j.value("min_coverage", c.render.min_coverage);
    c.settle_initial = j.value("settle_initial", c.settle_initial);

    if (!(c.field_magnitude > 0.0)) throw Error(ErrorCode::ConfigError, "field magnitude must be positive");
    if (c.substeps < 1) throw Error(ErrorCode::ConfigError, "substeps must be >= 1");
    if (!check_field_feasible(c.actuation_position, c.field_magnitude, c.caps))
        throw Error(ErrorCode::ConfigError, "field magnitude exceeds the cap at the actuation position");
    return c;
}

Simulation::Simulation(SimConfig cfg) : cfg_(std::move(cfg)) {
    scene_ = std::make_unique<Scene>(cfg_.surface, cfg_.intrinsics);
    const FieldState f0 = field_from_angles(cfg_.field_magnitude, cfg_.initial_alpha, cfg_.initial_beta);
    controller_ = std::make_unique<NavigationController>(cfg_.servo, f0, cfg_.intrinsics.width,
                                                         cfg_.intrinsics.height);
    tip_ = rest_state(cfg_.plant, cfg_.initial_depth);
    if (cfg_.settle_initial) {
        for (int i = 0; i < 400; ++i) tip_ = step_plant(tip_, cfg_.plant, f0, cfg_.gravity_dir, 0.01);
    }
}

std::optional<Pose> Simulation::frame_pose(std::int64_t frame_id) const {
    const auto it = poses_.find(frame_id);
    if (it == poses_.end()) return std::nullopt;
    return it->second;
}

void Simulation::advance(double delta_mm) { tip_ = magnav::advance(tip_, cfg_.plant, delta_mm); }

void Simulation::reset(const TipState& tip, const FieldState& field) {
    tip_ = tip;
    controller_->reset_field(field);
    prev_pose_.reset();
    truth_target_.reset();
}

std::optional<Vec3> Simulation::surface_point(std::int64_t frame_id, const Vec2& pixel) const {
    const auto pose = frame_pose(frame_id);
    if (!pose) return std::nullopt;
    return back_project(*scene_, *pose, pixel);
}

std::optional<Vec2> Simulation::truth_target_px() const {
    if (!truth_target_) return std::nullopt;
    return project(cfg_.intrinsics, tip_.camera_pose, *truth_target_);
}

void Simulation::command_short_range(const Vec2& target_px) {
    controller_->start_short_range(target_px);
    truth_target_ = last_frame_.pixels.empty() ? std::nullopt : surface_point(last_frame_.frame_id, target_px);
}

void Simulation::command_long_range(const Vec2& target_mosaic) {
    controller_->start_long_range(target_mosaic);
    const auto [id, px] = controller_->mosaic().mosaic_to_source(target_mosaic);
    truth_target_ = surface_point(id, px);
}

TelemetryRecord Simulation::step() {
    const std::int64_t id = tick_;
    const Pose pose = tip_.camera_pose;
    Frame frame;
    bool low_coverage = false;
    try {
        frame = render(*scene_, pose, id, t_, cfg_.render);
    } catch (const Error& err) {
        if (err.code() != ErrorCode::LowCoverage) throw;
        frame = render(*scene_, pose, id, t_, RenderOptions{0.0});
        low_coverage = true;
    }
    poses_[id] = pose;
    last_frame_ = frame;

    TelemetryRecord rec = controller_->tick(frame);
    if (low_coverage) rec.events.push_back("low_coverage");

    const Vec2 c(cfg_.intrinsics.width / 2.0, cfg_.intrinsics.height / 2.0);
    if (prev_pose_ && cfg_.surface.kind == Surface::Kind::Plane) {
        const Mat3 H = ground_truth_homography(*prev_pose_, pose, cfg_.surface, cfg_.intrinsics);
        const Vec2 ds = c - apply_homography(H, c);
        rec.truth["true_ds_x"] = ds.x();
        rec.truth["true_ds_y"] = ds.y();
    }
    if (truth_target_) {
        if (const auto p = project(cfg_.intrinsics, pose, *truth_target_)) {
            const Vec2 e = controller_->reference() - *p;
            rec.truth["true_err_x"] = e.x();
            rec.truth["true_err_y"] = e.y();
        }
    }
    rec.truth["bend_deg"] = rad2deg(tip_.bend);
    rec.truth["azimuth_deg"] = rad2deg(tip_.azimuth);

    const FieldState& f = controller_->field();
    try {
        const Vec3 i = solve_currents(cfg_.actuation.model_at(cfg_.actuation_position), f.b);
        rec.truth["currents_A"] = {i.x(), i.y(), i.z()};
    } catch (const CurrentLimitError& err) {
        rec.events.push_back("current_limit");
        rec.truth["current_scale"] = err.scale();
    }

    const double h = cfg_.servo.dt / cfg_.substeps;
    for (int k = 0; k < cfg_.substeps; ++k) tip_ = step_plant(tip_, cfg_.plant, f, cfg_.gravity_dir, h);

    prev_pose_ = pose;
    t_ += cfg_.servo.dt;
    ++tick_;
    return rec;
}

}  // namespace magnav
