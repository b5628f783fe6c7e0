#include "magnav/errors.hpp"
#include "magnav/mesh.hpp"
#include "magnav/metrics.hpp"
#include "magnav/protocol.hpp"
#include "magnav/scenario.hpp"
#include "magnav/workspace.hpp"

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

std::pair<std::string, int> split_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw magnav::Error(magnav::ErrorCode::ConfigError, "bind must be HOST:PORT");
    try {
        return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
    } catch (const std::exception&) {
        throw magnav::Error(magnav::ErrorCode::ConfigError, "bad port in '" + bind + "'");
    }
}

}  // namespace

int main(int argc, char** argv) {
    using namespace magnav;
    CLI::App app{"Magnetic endoscope navigation simulator"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir, bind = "127.0.0.1:7878", mesh_path, sweep_path, telemetry_path, dome_path;
    std::optional<std::uint64_t> seed;
    double rate_hz = 25.0;
    std::vector<double> dome_axes{120.0, 100.0, 90.0};
    std::vector<int> dome_res{96, 32, 10};

    auto* run = app.add_subcommand("run", "Run a scenario in simulated time and write its artifacts");
    run->add_option("scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory (default: $MAGNAV_OUT/<name> or runs/<name>)");
    run->add_option("--seed", seed, "Override the scenario seed");

    auto* serve = app.add_subcommand("serve", "Serve an interactive session over line-delimited JSON");
    serve->add_option("scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    serve->add_option("--bind", bind, "HOST:PORT");
    serve->add_option("--rate", rate_hz, "Control rate in Hz (0: as fast as possible)");

    auto* ws = app.add_subcommand("workspace", "Compare rigid and flexible ablation angles on a mesh");
    ws->add_option("mesh", mesh_path, "ASCII STL or OBJ mesh")->required()->check(CLI::ExistingFile);
    ws->add_option("sweep", sweep_path, "Sweep configuration JSON")->required()->check(CLI::ExistingFile);
    ws->add_option("--out", out_dir, "Output directory");

    auto* rep = app.add_subcommand("report", "Recompute the metrics report of a telemetry file");
    rep->add_option("telemetry", telemetry_path, "telemetry.jsonl")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", out_dir, "Write report.json here instead of stdout");

    auto* dome = app.add_subcommand("dome", "Write the procedural half-ellipsoid test mesh");
    dome->add_option("path", dome_path, "Output .obj or .stl")->required();
    dome->add_option("--axes", dome_axes, "Semi-axes a b c in mm")->expected(3);
    dome->add_option("--resolution", dome_res, "Azimuth, elevation and base-ring counts")->expected(3);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            Scenario sc = Scenario::load(scenario_path);
            if (seed) sc.seed = *seed;
            const std::filesystem::path dir = out_dir.empty() ? default_output_root() / sc.name : std::filesystem::path(out_dir);
            const RunResult res = run_scenario(sc, dir);
            std::cout << "wrote " << res.telemetry.size() << " ticks to " << dir.string() << '\n';
        } else if (*serve) {
            const Scenario sc = Scenario::load(scenario_path);
            const auto [host, port] = split_bind(bind);
            Session session(sc);
            ServerOptions opts;
            opts.host = host;
            opts.port = port;
            opts.rate_hz = rate_hz;
            Server server(session, opts);
            server.start();
            std::cout << "listening on " << host << ':' << server.port() << std::endl;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
        } else if (*ws) {
            const TriMesh mesh = load_mesh(mesh_path);
            std::ifstream in(sweep_path);
            const auto cfg = WorkspaceStudyConfig::from_json(nlohmann::json::parse(in));
            const WorkspaceStudy study = run_workspace_study(mesh, cfg);
            const std::filesystem::path dir = out_dir.empty() ? default_output_root() / "workspace" : std::filesystem::path(out_dir);
            write_workspace_study(study, mesh, dir);
            std::cout << study.summary().dump(2) << '\n';
        } else if (*rep) {
            const nlohmann::json report = report_from_telemetry(telemetry_path);
            if (out_dir.empty()) {
                std::cout << report.dump(2) << '\n';
            } else {
                std::filesystem::create_directories(out_dir);
                std::ofstream(std::filesystem::path(out_dir) / "report.json") << report.dump(2) << '\n';
            }
        } else if (*dome) {
            const TriMesh mesh = make_dome(dome_axes[0], dome_axes[1], dome_axes[2], dome_res[0], dome_res[1], dome_res[2]);
            const std::filesystem::path p(dome_path);
            if (p.extension() == ".stl") write_stl_ascii(mesh, p);
            else write_obj(mesh, p);
        }
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
