#include "magnav/scenario.hpp"
#include "magnav/errors.hpp"
#include "magnav/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>

namespace magnav {

namespace {

const std::set<std::string> kCommands = {"calibrate", "manual",  "short_range", "long_range", "explore",
                                         "halt",      "advance", "wait",        "idle",       "broyden",
                                         "build_mosaic", "save_home", "reset_home"};

Vec2 vec2_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

Scenario Scenario::from_json(const nlohmann::json& j) {
    Scenario s;
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kScenarioSchemaVersion)
            throw Error(ErrorCode::ConfigError, "unsupported scenario schema_version " + std::to_string(version));
        s.name = j.value("name", s.name);
        s.seed = j.value("seed", s.seed);
        s.sim = j.value("sim", nlohmann::json::object());
        s.max_duration_s = j.value("max_duration_s", s.max_duration_s);
        s.frames_every = j.value("frames_every", s.frames_every);
        s.abort_on_halt = j.value("abort_on_halt", s.abort_on_halt);
        for (const auto& step : j.value("script", nlohmann::json::array())) {
            ScriptStep st;
            st.cmd = step.at("cmd").get<std::string>();
            if (!kCommands.count(st.cmd)) throw Error(ErrorCode::ConfigError, "unknown script command '" + st.cmd + "'");
            st.args = step;
            s.script.push_back(std::move(st));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("scenario: ") + e.what());
    }
    if (!(s.max_duration_s >= 0.0)) throw Error(ErrorCode::ConfigError, "max_duration_s must be >= 0");
    if (s.frames_every < 0) throw Error(ErrorCode::ConfigError, "frames_every must be >= 0");
    s.sim_config();  // validates the simulation block
    return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open scenario " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json Scenario::to_json() const {
    nlohmann::json script_j = nlohmann::json::array();
    for (const auto& st : script) script_j.push_back(st.args);
    return {{"schema_version", kScenarioSchemaVersion},
            {"name", name},
            {"seed", seed},
            {"sim", sim},
            {"script", script_j},
            {"max_duration_s", max_duration_s},
            {"frames_every", frames_every},
            {"abort_on_halt", abort_on_halt}};
}

SimConfig Scenario::sim_config() const {
    nlohmann::json j = sim;
    if (!j.contains("surface")) j["surface"] = nlohmann::json::object();
    if (!j["surface"].contains("texture_seed")) j["surface"]["texture_seed"] = seed;
    try {
        return SimConfig::from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("sim: ") + e.what());
    }
}

std::filesystem::path default_output_root() {
    if (const char* env = std::getenv("MAGNAV_OUT"); env && *env) return env;
    return "runs";
}

ScriptRunner::ScriptRunner(const Scenario& scenario, Simulation& sim)
    : sc_(scenario), sim_(sim), rng_(scenario.seed), home_tip_(sim.tip()), home_field_(sim.controller().field()) {}

bool ScriptRunner::budget_left() const { return !aborted_ && sim_.time() < sc_.max_duration_s - 1e-9; }

TelemetryRecord ScriptRunner::tick(std::vector<TelemetryRecord>& out) {
    TelemetryRecord r = sim_.step();
    if (!frame_dir_.empty() && sc_.frames_every > 0 && r.tick % sc_.frames_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%06ld.png", r.tick);
        cv::imwrite((frame_dir_ / name).string(), sim_.last_frame().pixels);
    }
    out.push_back(r);
    for (const auto& e : r.events)
        if (e == "halted" && !commanded_halt_) {
            aborted_ = true;
            abort_cause_ = r.halt_cause;
        }
    return r;
}

void ScriptRunner::run_ticks(int n, std::vector<TelemetryRecord>& out) {
    for (int i = 0; i < n && budget_left(); ++i) tick(out);
}

Vec2 ScriptRunner::view_center_in_mosaic() const {
    const auto& ctl = sim_.controller();
    const Vec2 c(0.5 * sim_.config().intrinsics.width, 0.5 * sim_.config().intrinsics.height);
    if (auto H = ctl.view_to_mosaic()) return apply_homography(*H, c);
    if (ctl.mosaic().empty()) throw Error(ErrorCode::EmptyMosaic, "no mosaic to pick targets from");
    return ctl.mosaic().last().center_mosaic;
}

void ScriptRunner::manual(const nlohmann::json& a, std::vector<TelemetryRecord>& out) {
    auto& ctl = sim_.controller();
    const auto& cfg = ctl.config();
    double speed = cfg.slow_speed;
    if (a.contains("speed")) {
        if (a["speed"].is_string()) speed = a["speed"] == "fast" ? cfg.fast_speed : cfg.slow_speed;
        else speed = a["speed"].get<double>();
    }
    const std::string pattern = a.value("pattern", "constant");
    const double dt = cfg.dt;
    std::vector<double> headings;
    double step_s = a.value("step_s", 3.0);
    double duration = a.value("duration_s", 5.0);
    if (pattern == "steps") {
        for (double h : a.value("headings_deg", std::vector<double>{0.0, 90.0, 180.0, 270.0})) headings.push_back(deg2rad(h));
        duration = step_s * headings.size();
    } else if (pattern != "constant" && pattern != "circle") {
        throw Error(ErrorCode::ConfigError, "unknown manual pattern '" + pattern + "'");
    }
    const Vec2 dir0 = a.contains("direction") ? vec2_from(a["direction"]) : Vec2(1.0, 0.0);
    const double start = deg2rad(a.value("start_deg", 0.0));
    const double rate = deg2rad(a.value("rate_deg_s", 6.3));
    const int ticks = static_cast<int>(std::lround(duration / dt));
    for (int k = 0; k < ticks && budget_left(); ++k) {
        const double t = k * dt;
        Vec2 dir = dir0;
        if (pattern == "circle") dir = Vec2(std::cos(start + rate * t), std::sin(start + rate * t));
        if (pattern == "steps") {
            const std::size_t i = std::min(headings.size() - 1, static_cast<std::size_t>(t / step_s + 1e-9));
            dir = Vec2(std::cos(headings[i]), std::sin(headings[i]));
        }
        if (dir.norm() > 0.0) dir.normalize();
        ctl.set_manual(dir, speed);
        tick(out);
    }
    if (!aborted_) {
        ctl.set_manual(Vec2::Zero(), speed);
        ctl.idle();
    }
}

void ScriptRunner::short_range(const nlohmann::json& a, std::vector<TelemetryRecord>& out) {
    auto& ctl = sim_.controller();
    std::vector<Vec2> offsets;
    if (a.contains("targets")) {
        for (const auto& t : a["targets"]) offsets.push_back(vec2_from(t));
    } else {
        const int n = a.value("random", 1);
        const double max_px = a.value("max_px", 150.0), min_px = a.value("min_px", 20.0);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        for (int i = 0; i < n; ++i) {
            Vec2 d;
            do d = max_px * Vec2(U(rng_), U(rng_));
            while (d.norm() > max_px || d.norm() < min_px);
            offsets.push_back(d);
        }
    }
    const bool reset = a.value("reset_home", false);
    const int timeout = a.value("timeout_ticks", 400);
    for (const auto& d : offsets) {
        if (!budget_left()) return;
        if (reset) sim_.reset(home_tip_, home_field_);
        tick(out);
        if (aborted_) return;
        sim_.command_short_range(ctl.reference() + d);
        for (int k = 0; k < timeout && ctl.mode() == NavMode::ShortRange && budget_left(); ++k) tick(out);
        if (ctl.mode() == NavMode::ShortRange) ctl.idle();
    }
}

void ScriptRunner::long_range(const nlohmann::json& a, std::vector<TelemetryRecord>& out) {
    auto& ctl = sim_.controller();
    const int timeout = a.value("timeout_ticks", 2000);
    std::vector<Vec2> targets;
    const bool random = !a.contains("targets");
    if (!random)
        for (const auto& t : a["targets"]) targets.push_back(vec2_from(t));
    const int n = random ? a.value("random", 1) : static_cast<int>(targets.size());
    const double min_px = a.value("min_px", 200.0), max_px = a.value("max_px", 400.0), margin = a.value("margin_px", 60.0);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec2 from = view_center_in_mosaic();
    for (int i = 0; i < n; ++i) {
        if (!budget_left()) return;
        Vec2 target;
        if (random) {
            const auto& m = ctl.mosaic();
            for (int tries = 0;; ++tries) {
                if (tries > 20000) throw Error(ErrorCode::UnpaintedRegion, "no painted long-range target found");
                const double d = min_px + (max_px - min_px) * U(rng_);
                const double ang = 2.0 * kPi * U(rng_);
                target = from + d * Vec2(std::cos(ang), std::sin(ang));
                bool ok = true;
                for (int q = 0; q < 16 && ok; ++q)
                    ok = m.is_painted(target + margin * Vec2(std::cos(q * kPi / 8), std::sin(q * kPi / 8)));
                if (ok) break;
            }
        } else {
            target = targets[i];
        }
        tick(out);
        if (aborted_) return;
        sim_.command_long_range(target);
        for (int k = 0; k < timeout && ctl.mode() == NavMode::LongRange && budget_left(); ++k) tick(out);
        if (ctl.mode() == NavMode::LongRange) ctl.idle();
        from = target;
    }
}

void ScriptRunner::execute(const ScriptStep& step, std::vector<TelemetryRecord>& out) {
    auto& ctl = sim_.controller();
    const auto& a = step.args;
    const double dt = ctl.config().dt;
    try {
        if (step.cmd == "calibrate") {
            ctl.start_calibration();
            const int timeout = static_cast<int>(a.value("timeout_s", 20.0) / dt);
            for (int k = 0; k < timeout && ctl.mode() == NavMode::Calibrating && budget_left(); ++k) tick(out);
            if (ctl.mode() == NavMode::Calibrating && !aborted_) {
                aborted_ = true;
                abort_cause_ = "calibration_timeout";
            }
        } else if (step.cmd == "manual") {
            manual(a, out);
        } else if (step.cmd == "short_range") {
            short_range(a, out);
        } else if (step.cmd == "long_range") {
            long_range(a, out);
        } else if (step.cmd == "explore") {
            ExploreParams p;
            p.pattern = a.value("pattern", "spiral") == "raster" ? ExplorePattern::Raster : ExplorePattern::Spiral;
            p.speed = a.value("speed", p.speed);
            p.pitch = a.value("pitch", p.pitch);
            p.width = a.value("width", p.width);
            p.height = a.value("height", p.height);
            p.duration = a.value("duration_s", p.duration);
            ctl.start_explore(p);
            const int timeout = static_cast<int>((p.duration + a.value("grace_s", 5.0)) / dt);
            for (int k = 0; k < timeout && ctl.mode() == NavMode::Explore && budget_left(); ++k) tick(out);
            if (ctl.mode() == NavMode::Explore) ctl.idle();
        } else if (step.cmd == "halt") {
            commanded_halt_ = true;
            ctl.halt("operator");
            run_ticks(1, out);
        } else if (step.cmd == "advance") {
            sim_.advance(a.at("mm").get<double>());
        } else if (step.cmd == "wait") {
            run_ticks(static_cast<int>(std::lround(a.value("duration_s", 1.0) / dt)), out);
        } else if (step.cmd == "idle") {
            commanded_halt_ = false;
            ctl.idle();
        } else if (step.cmd == "broyden") {
            ctl.set_broyden_enabled(a.value("enabled", true));
        } else if (step.cmd == "build_mosaic") {
            ctl.set_build_mosaic(a.value("enabled", true));
        } else if (step.cmd == "save_home") {
            home_tip_ = sim_.tip();
            home_field_ = ctl.field();
        } else if (step.cmd == "reset_home") {
            sim_.reset(home_tip_, home_field_);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, "script step '" + step.cmd + "': " + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        aborted_ = true;
        abort_cause_ = std::string(to_string(e.code()));
    }
}

RunResult run_scenario(const Scenario& scenario, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    const SimConfig cfg = scenario.sim_config();
    Simulation sim(cfg);
    ScriptRunner runner(scenario, sim);

    RunResult res;
    res.out_dir = out_dir;
    fs::create_directories(out_dir);
    if (scenario.frames_every > 0) {
        fs::create_directories(out_dir / "frames");
        runner.set_frame_dir(out_dir / "frames");
    }

    for (const auto& step : scenario.script) {
        if (runner.aborted() || sim.time() >= scenario.max_duration_s - 1e-9) break;
        runner.execute(step, res.telemetry);
    }

    res.header = {{"schema_version", kScenarioSchemaVersion},
                  {"scenario", scenario.name},
                  {"seed", scenario.seed},
                  {"dt", cfg.servo.dt},
                  {"motion_gate", cfg.servo.motion_gate},
                  {"width", cfg.intrinsics.width},
                  {"height", cfg.intrinsics.height}};
    res.report = compute_report(res.header, res.telemetry);

    {
        std::ofstream jl(out_dir / "telemetry.jsonl");
        jl << nlohmann::json{{"header", res.header}}.dump() << '\n';
        for (const auto& r : res.telemetry) jl << r.to_json().dump() << '\n';
        std::ofstream csv(out_dir / "telemetry.csv");
        csv << TelemetryRecord::csv_header() << '\n';
        for (const auto& r : res.telemetry) csv << r.csv_row() << '\n';
        std::ofstream rep(out_dir / "report.json");
        rep << res.report.dump(2) << '\n';
    }
    const auto& mosaic = sim.controller().mosaic();
    if (!mosaic.empty()) mosaic.export_snapshot(out_dir / "mosaic.png", out_dir / "mosaic.json");

    if (runner.aborted() && scenario.abort_on_halt)
        throw Error(ErrorCode::ScenarioAborted, "scenario '" + scenario.name + "' aborted: " + runner.abort_cause());
    return res;
}

std::pair<nlohmann::json, std::vector<TelemetryRecord>> read_telemetry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open telemetry " + path.string());
    nlohmann::json header = nlohmann::json::object();
    std::vector<TelemetryRecord> records;
    std::string line;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (j.contains("header")) header = j["header"];
            else records.push_back(TelemetryRecord::from_json(j));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
    return {header, records};
}

nlohmann::json report_from_telemetry(const std::filesystem::path& path) {
    const auto [header, records] = read_telemetry(path);
    return compute_report(header, records);
}

}  // namespace magnav
