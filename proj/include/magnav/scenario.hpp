#pragma once

#include "magnav/controller.hpp"
#include "magnav/simulation.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace magnav {

constexpr int kScenarioSchemaVersion = 1;

struct ScriptStep {
    std::string cmd;
    nlohmann::json args = nlohmann::json::object();
};

/// A scripted closed-loop experiment. Every random choice derives from `seed`.
struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    nlohmann::json sim = nlohmann::json::object();  // SimConfig JSON
    std::vector<ScriptStep> script;
    double max_duration_s = 600.0;  // simulated time budget for the whole script
    int frames_every = 0;           // 0: no frame dumps
    bool abort_on_halt = true;

    /// Throws ConfigError on schema mismatch, unknown commands or bad values.
    static Scenario from_json(const nlohmann::json& j);
    static Scenario load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    /// Simulation config with the scenario seed applied to the texture unless fixed.
    SimConfig sim_config() const;
};

struct RunResult {
    std::filesystem::path out_dir;
    nlohmann::json header;
    std::vector<TelemetryRecord> telemetry;
    nlohmann::json report;
};

/// `$MAGNAV_OUT` when set, otherwise `runs` under the working directory.
std::filesystem::path default_output_root();

/// Executes the script in simulated time and writes telemetry.jsonl,
/// telemetry.csv, report.json, mosaic.png (when stitched) and frames/.
/// A controller halt that was not commanded throws ScenarioAborted after the
/// artifacts are written, unless abort_on_halt is off.
RunResult run_scenario(const Scenario& scenario, const std::filesystem::path& out_dir);

/// Reads a telemetry.jsonl file (header line, then one record per line).
std::pair<nlohmann::json, std::vector<TelemetryRecord>> read_telemetry(const std::filesystem::path& path);

/// Recomputes the report of a telemetry file.
nlohmann::json report_from_telemetry(const std::filesystem::path& path);

/// Step-by-step script interpreter around a Simulation; used by run_scenario
/// and by tests that need to interleave their own checks.
class ScriptRunner {
public:
    ScriptRunner(const Scenario& scenario, Simulation& sim);

    /// Runs one script step to completion; records are appended to `out`.
    void execute(const ScriptStep& step, std::vector<TelemetryRecord>& out);
    /// Write every `frames_every`-th rendered frame as PNG into `dir`.
    void set_frame_dir(const std::filesystem::path& dir) { frame_dir_ = dir; }
    bool aborted() const { return aborted_; }
    const std::string& abort_cause() const { return abort_cause_; }

private:
    TelemetryRecord tick(std::vector<TelemetryRecord>& out);
    bool budget_left() const;
    void run_ticks(int n, std::vector<TelemetryRecord>& out);
    void manual(const nlohmann::json& a, std::vector<TelemetryRecord>& out);
    void short_range(const nlohmann::json& a, std::vector<TelemetryRecord>& out);
    void long_range(const nlohmann::json& a, std::vector<TelemetryRecord>& out);
    Vec2 view_center_in_mosaic() const;

    const Scenario& sc_;
    Simulation& sim_;
    std::mt19937_64 rng_;
    TipState home_tip_;
    FieldState home_field_;
    bool commanded_halt_ = false;
    bool aborted_ = false;
    std::string abort_cause_;
    std::filesystem::path frame_dir_;
};

}  // namespace magnav
