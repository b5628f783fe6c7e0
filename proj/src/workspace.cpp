#include "magnav/workspace.hpp"
#include "magnav/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace magnav {

namespace {

std::vector<double> range_values(double lo, double hi, double step) {
    std::vector<double> v;
    const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
    for (int i = 0; i <= n; ++i) v.push_back(lo + i * step);
    return v;
}

Mat3 axis_frame(const Vec3& d) {
    Vec3 x = Vec3::UnitX() - Vec3::UnitX().dot(d) * d;
    x = x.norm() < 1e-9 ? any_perpendicular(d) : x.normalized();
    Mat3 R;
    R.col(0) = x;
    R.col(1) = d.cross(x);
    R.col(2) = d;
    return R;
}

void cast_poses(const PoseSet& poses, std::size_t begin, std::size_t end, const MeshGrid* grid,
                const TriMesh& mesh, const AngleMapOptions& opts, AngleMap& out) {
    for (std::size_t p = begin; p < end; ++p) {
        const Pose pose = poses.at(p);
        const Vec3 o = pose.translation();
        const Vec3 d = pose.linear().col(2).normalized();
        const auto hit = grid ? grid->intersect(o, d, opts.d_max) : intersect_brute(mesh, o, d, opts.d_max);
        if (!hit || hit->distance < opts.d_min || hit->distance > opts.d_max) continue;
        const Vec3& n = mesh.normals[hit->triangle];
        if (opts.inner_only && d.dot(n) <= 0.0) continue;
        out.record(hit->triangle, ablation_angle(d, n), hit->distance);
    }
}

}  // namespace

Pose InsertionFrame::pose() const {
    const Vec3 z = inward.normalized();
    Vec3 x = anterior - anterior.dot(z) * z;
    if (x.norm() < 1e-9) throw Error(ErrorCode::ConfigError, "anterior axis parallel to the insertion normal");
    x.normalize();
    Mat3 R;
    R.col(0) = x;
    R.col(1) = z.cross(x);
    R.col(2) = z;
    return make_pose(R, point);
}

void InsertionSweep::validate() const {
    const double max = deg2rad(90.0) + 1e-9;
    if (psi_step <= 0 || phi_step <= 0 || l_step <= 0)
        throw Error(ErrorCode::ConfigError, "sweep steps must be positive");
    if (psi_min < 0 || psi_max > max || psi_min > psi_max || phi_min < 0 || phi_max > max || phi_min > phi_max)
        throw Error(ErrorCode::ConfigError, "insertion angles must lie within [0, 90] deg");
    if (l_min < 0 || l_min > l_max) throw Error(ErrorCode::ConfigError, "bad insertion depth range");
}

std::vector<double> InsertionSweep::psi_values() const { return range_values(psi_min, psi_max, psi_step); }
std::vector<double> InsertionSweep::phi_values() const { return range_values(phi_min, phi_max, phi_step); }
std::vector<double> InsertionSweep::l_values() const { return range_values(l_min, l_max, l_step); }

Vec3 InsertionSweep::axis(double psi, double phi) {
    return Vec3(std::tan(psi), std::tan(phi), 1.0).normalized();
}

InsertionSweep InsertionSweep::from_json(const nlohmann::json& j) {
    InsertionSweep s;
    auto deg = [&](const char* key, double& v) {
        if (j.contains(key)) v = deg2rad(j.at(key).get<double>());
    };
    auto range = [&](const char* key, double& lo, double& hi, bool angle) {
        if (!j.contains(key)) return;
        const auto r = j.at(key).get<std::vector<double>>();
        if (r.size() != 2) throw Error(ErrorCode::ConfigError, std::string(key) + " must be [min, max]");
        lo = angle ? deg2rad(r[0]) : r[0];
        hi = angle ? deg2rad(r[1]) : r[1];
    };
    try {
        range("psi_deg", s.psi_min, s.psi_max, true);
        range("phi_deg", s.phi_min, s.phi_max, true);
        range("depth_mm", s.l_min, s.l_max, false);
        deg("psi_step_deg", s.psi_step);
        deg("phi_step_deg", s.phi_step);
        deg("psi_offset_deg", s.psi_offset);
        deg("phi_offset_deg", s.phi_offset);
        if (j.contains("depth_step_mm")) s.l_step = j.at("depth_step_mm").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("sweep: ") + e.what());
    }
    s.validate();
    return s;
}

Pose arc_pose(double radius, double arc_length) {
    const double theta = arc_length / radius;
    return make_pose(axis_angle(Vec3::UnitY(), theta),
                     Vec3(radius * (1.0 - std::cos(theta)), 0.0, radius * std::sin(theta)));
}

PoseSet PoseSet::from(std::vector<Pose> poses) {
    auto shared = std::make_shared<const std::vector<Pose>>(std::move(poses));
    return {shared->size(), [shared](std::size_t i) { return (*shared)[i]; }};
}

std::vector<Pose> PoseSet::materialize() const {
    std::vector<Pose> out;
    out.reserve(size);
    for (std::size_t i = 0; i < size; ++i) out.push_back(at(i));
    return out;
}

PoseSet constant_curvature_pose_set(const InsertionFrame& frame, const InsertionSweep& sweep, double radius) {
    if (!(radius > 0.0)) throw Error(ErrorCode::ConfigError, "curvature radius must be positive");
    sweep.validate();
    std::vector<Pose> bases;
    const Pose F = frame.pose();
    for (double psi : sweep.psi_values())
        for (double phi : sweep.phi_values())
            bases.push_back(F * make_pose(axis_frame(InsertionSweep::axis(psi + sweep.psi_offset, phi + sweep.phi_offset)),
                                          Vec3::Zero()));
    const auto ls = sweep.l_values();
    const std::size_t nl = ls.size();
    return {bases.size() * nl, [bases = std::move(bases), ls, nl, radius](std::size_t i) {
                return bases[i / nl] * arc_pose(radius, ls[i % nl]);
            }};
}

std::vector<Pose> constant_curvature_poses(const InsertionFrame& frame, const InsertionSweep& sweep, double radius) {
    return constant_curvature_pose_set(frame, sweep, radius).materialize();
}

WorkspaceTable::WorkspaceTable(std::vector<WorkspaceEntry> entries, double segment_length)
    : entries_(std::move(entries)), length_(segment_length) {
    if (entries_.empty()) throw Error(ErrorCode::EmptyWorkspaceTable, "workspace table has no stable entries");
}

std::pair<double, double> WorkspaceTable::interpolate_bend(const Vec3& field_dir, int k) const {
    const Vec3 q = field_dir.normalized();
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) d.emplace_back(angle_between(q, entries_[i].field_dir), i);
    const std::size_t n = std::min<std::size_t>(std::max(k, 1), d.size());
    std::partial_sort(d.begin(), d.begin() + n, d.end());
    if (d[0].first < 1e-9) return {entries_[d[0].second].bend, entries_[d[0].second].azimuth};
    double wsum = 0.0, bend = 0.0;
    Vec2 az = Vec2::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = entries_[d[i].second];
        const double w = 1.0 / d[i].first;
        wsum += w;
        bend += w * e.bend;
        // azimuth blended through the bend-weighted planar direction
        az += w * std::max(e.bend, 1e-6) * Vec2(std::cos(e.azimuth), std::sin(e.azimuth));
    }
    return {bend / wsum, std::atan2(az.y(), az.x())};
}

Pose WorkspaceTable::interpolate(const Vec3& field_dir, int k) const {
    const Vec3 q = field_dir.normalized();
    for (const auto& e : entries_)
        if (angle_between(q, e.field_dir) < 1e-9) return e.tip_pose;
    const auto [bend, az] = interpolate_bend(q, k);
    return segment_pose(bend, az, length_);
}

PoseSet flexible_tip_pose_set(const InsertionFrame& frame, const InsertionSweep& sweep, const WorkspaceTable& table,
                              const std::vector<Vec3>& queries) {
    sweep.validate();
    std::vector<Pose> bends;
    if (queries.empty()) {
        for (const auto& e : table.entries()) bends.push_back(e.tip_pose);
    } else {
        for (const auto& q : queries) bends.push_back(table.interpolate(q));
    }
    const Pose F = frame.pose();
    std::vector<Pose> bases;
    for (double psi : sweep.psi_values())
        for (double phi : sweep.phi_values()) {
            const Vec3 d = InsertionSweep::axis(psi + sweep.psi_offset, phi + sweep.phi_offset);
            const Mat3 R = axis_frame(d);
            for (double l : sweep.l_values()) bases.push_back(F * make_pose(R, l * d));
        }
    const std::size_t nb = bends.size();
    return {bases.size() * nb, [bases = std::move(bases), bends = std::move(bends), nb](std::size_t i) {
                return bases[i / nb] * bends[i % nb];
            }};
}

std::vector<Pose> flexible_tip_poses(const InsertionFrame& frame, const InsertionSweep& sweep,
                                     const WorkspaceTable& table, const std::vector<Vec3>& queries) {
    return flexible_tip_pose_set(frame, sweep, table, queries).materialize();
}

std::size_t AngleMap::reached_count() const {
    return static_cast<std::size_t>(std::count_if(alpha.begin(), alpha.end(), [](double a) { return a > 0.0; }));
}

void AngleMap::record(std::size_t tri, double a, double d) {
    if (!(a > 0.0)) return;
    ++hits[tri];
    if (a > alpha[tri] || (a == alpha[tri] && d < distance[tri])) {
        alpha[tri] = a;
        distance[tri] = d;
    }
}

void AngleMap::merge(const AngleMap& other) {
    if (other.alpha.size() != alpha.size()) throw Error(ErrorCode::DimensionMismatch, "angle maps differ in size");
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        hits[i] += other.hits[i];
        const double a = other.alpha[i];
        if (a > alpha[i] || (a == alpha[i] && a > 0.0 && other.distance[i] < distance[i])) {
            alpha[i] = a;
            distance[i] = other.distance[i];
        }
    }
}

double ablation_angle(const Vec3& dir, const Vec3& n) {
    return std::asin(std::clamp(std::abs(dir.normalized().dot(n.normalized())), 0.0, 1.0));
}

AngleMap ablation_angle_map(const std::vector<Pose>& poses, const TriMesh& mesh, const AngleMapOptions& opts) {
    return ablation_angle_map(PoseSet{poses.size(), [&poses](std::size_t i) { return poses[i]; }}, mesh, opts);
}

AngleMap ablation_angle_map(const PoseSet& poses, const TriMesh& mesh, const AngleMapOptions& opts) {
    if (mesh.size() == 0) throw Error(ErrorCode::MeshFormat, "mesh has no triangles");
    const MeshGrid grid(mesh);
    int threads = opts.threads > 0 ? opts.threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, std::max(1, static_cast<int>(poses.size / 256)));
    std::vector<AngleMap> parts(threads, AngleMap(mesh.size()));
    std::vector<std::thread> pool;
    const std::size_t chunk = (poses.size + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::size_t b = std::min(poses.size, t * chunk), e = std::min(poses.size, b + chunk);
        if (threads == 1) {
            cast_poses(poses, b, e, &grid, mesh, opts, parts[t]);
        } else {
            pool.emplace_back([&, t, b, e] { cast_poses(poses, b, e, &grid, mesh, opts, parts[t]); });
        }
    }
    for (auto& th : pool) th.join();
    AngleMap out(mesh.size());
    for (const auto& p : parts) out.merge(p);
    return out;
}

AngleMap ablation_angle_map_brute(const std::vector<Pose>& poses, const TriMesh& mesh, const AngleMapOptions& opts) {
    if (mesh.size() == 0) throw Error(ErrorCode::MeshFormat, "mesh has no triangles");
    AngleMap out(mesh.size());
    cast_poses(PoseSet{poses.size(), [&poses](std::size_t i) { return poses[i]; }}, 0, poses.size(), nullptr, mesh, opts, out);
    return out;
}

AngleMap smooth_angle_map(const AngleMap& map, const TriMesh& mesh) {
    std::vector<std::vector<int>> by_vertex(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.size(); ++i)
        for (int v : mesh.triangles[i]) by_vertex[v].push_back(static_cast<int>(i));
    AngleMap out = map;
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        if (!map.reached(i)) continue;
        std::vector<int> nb;
        for (int v : mesh.triangles[i]) nb.insert(nb.end(), by_vertex[v].begin(), by_vertex[v].end());
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        double w = 0.0, s = 0.0;
        for (int j : nb) {
            if (!map.reached(j)) continue;
            w += mesh.areas[j];
            s += mesh.areas[j] * map.alpha[j];
        }
        out.alpha[i] = s / w;
    }
    return out;
}

CoverageStats coverage_stats(const AngleMap& map, const TriMesh& mesh, const std::vector<bool>& region,
                             const std::vector<double>& thresholds) {
    if (region.size() != mesh.size() || map.alpha.size() != mesh.size())
        throw Error(ErrorCode::DimensionMismatch, "region mask and angle map must match the mesh");
    CoverageStats s;
    s.thresholds = thresholds;
    s.fraction.assign(thresholds.size(), 0.0);
    double reached = 0.0;
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        if (!region[i]) continue;
        s.region_area += mesh.areas[i];
        if (!map.reached(i)) continue;
        reached += mesh.areas[i];
        for (std::size_t k = 0; k < thresholds.size(); ++k)
            if (map.alpha[i] >= thresholds[k] - 1e-12) s.fraction[k] += mesh.areas[i];
    }
    if (!(s.region_area > 0.0)) throw Error(ErrorCode::EmptyRegion, "region mask selects no triangles");
    for (double& f : s.fraction) f /= s.region_area;
    s.reached_fraction = reached / s.region_area;
    return s;
}

std::vector<bool> region_above(const TriMesh& mesh, double z_min) {
    std::vector<bool> r(mesh.size());
    for (std::size_t i = 0; i < mesh.size(); ++i) r[i] = mesh.centroid(i).z() >= z_min;
    return r;
}

void write_angle_map_csv(const AngleMap& map, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
    out << "triangle_id,best_alpha_deg,d_mm\n";
    for (std::size_t i = 0; i < map.alpha.size(); ++i) {
        out << i << ',';
        if (map.reached(i)) out << rad2deg(map.alpha[i]) << ',' << map.distance[i] << '\n';
        else out << ",\n";
    }
}

cv::Mat render_heatmap(const TriMesh& mesh, const AngleMap& map, int size) {
    cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
    if (mesh.size() == 0) return img;
    Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const double span = std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1e-9});
    const double scale = 0.9 * size / span;
    const cv::Point2d centre(0.5 * (lo.x() + hi.x()), 0.5 * (lo.y() + hi.y()));

    cv::Mat levels(1, 256, CV_8UC1);
    for (int i = 0; i < 256; ++i) levels.at<uchar>(i) = static_cast<uchar>(i);
    cv::Mat lut;
    cv::applyColorMap(levels, lut, cv::COLORMAP_JET);

    std::vector<std::size_t> order(mesh.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mesh.centroid(a).z() < mesh.centroid(b).z(); });
    for (std::size_t i : order) {
        if (mesh.normals[i].z() <= 0.0) continue;
        std::vector<cv::Point> pts;
        for (int k = 0; k < 3; ++k) {
            const Vec3& v = mesh.corner(i, k);
            pts.emplace_back(cvRound(0.5 * size + (v.x() - centre.x) * scale),
                             cvRound(0.5 * size - (v.y() - centre.y) * scale));
        }
        cv::Scalar color(160, 160, 160);
        if (map.reached(i)) {
            const int idx = std::clamp(static_cast<int>(std::lround(255.0 * map.alpha[i] / (0.5 * kPi))), 0, 255);
            const auto c = lut.at<cv::Vec3b>(0, idx);
            color = cv::Scalar(c[0], c[1], c[2]);
        }
        cv::fillConvexPoly(img, pts, color, cv::LINE_AA);
    }
    return img;
}

}  // namespace magnav

namespace magnav {

InsertionFrame dome_lateral_insertion(double a, double c, double elevation) {
    InsertionFrame f;
    f.point = Vec3(-a * std::cos(elevation), 0.0, c * std::sin(elevation));
    f.inward = -Vec3(f.point.x() / (a * a), 0.0, f.point.z() / (c * c)).normalized();
    f.anterior = Vec3::UnitZ();
    return f;
}

WorkspaceStudyConfig WorkspaceStudyConfig::from_json(const nlohmann::json& j) {
    WorkspaceStudyConfig c;
    auto v3 = [](const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
    try {
        if (j.contains("insertion")) {
            const auto& in = j["insertion"];
            if (in.contains("lateral_elevation_deg")) {
                const auto axes = in.value("dome_axes_mm", std::vector<double>{120.0, 100.0, 90.0});
                if (axes.size() != 3) throw Error(ErrorCode::ConfigError, "dome_axes_mm needs three values");
                c.insertion = dome_lateral_insertion(axes[0], axes[2], deg2rad(in["lateral_elevation_deg"].get<double>()));
            } else {
                c.insertion.point = v3(in.at("point_mm"));
                c.insertion.inward = v3(in.at("inward"));
                if (in.contains("anterior")) c.insertion.anterior = v3(in["anterior"]);
            }
        }
        if (j.contains("sweep")) c.sweep = InsertionSweep::from_json(j["sweep"]);
        c.rigid_radius = j.value("rigid_radius_mm", c.rigid_radius);
        if (j.contains("flexible")) {
            const auto& f = j["flexible"];
            if (f.contains("plant")) c.plant = PlantParams::from_json(f["plant"]);
            c.field_magnitude = f.value("field_mT", c.field_magnitude);
            if (f.contains("max_polar_deg")) c.max_polar = deg2rad(f["max_polar_deg"].get<double>());
            if (f.contains("polar_step_deg")) c.polar_step = deg2rad(f["polar_step_deg"].get<double>());
            if (f.contains("azimuth_step_deg")) c.azimuth_step = deg2rad(f["azimuth_step_deg"].get<double>());
        }
        if (j.contains("d_range_mm")) {
            c.map.d_min = j["d_range_mm"].at(0).get<double>();
            c.map.d_max = j["d_range_mm"].at(1).get<double>();
        }
        c.map.threads = j.value("threads", c.map.threads);
        if (j.contains("region")) c.region_z_min = j["region"].value("z_min_mm", c.region_z_min);
        if (j.contains("thresholds_deg")) {
            c.thresholds.clear();
            for (double t : j["thresholds_deg"].get<std::vector<double>>()) c.thresholds.push_back(deg2rad(t));
        }
        c.smooth = j.value("smooth", c.smooth);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("workspace config: ") + e.what());
    }
    if (!(c.map.d_min >= 0.0) || !(c.map.d_max > c.map.d_min)) throw Error(ErrorCode::ConfigError, "bad d range");
    if (!(c.rigid_radius > 0.0)) throw Error(ErrorCode::ConfigError, "rigid radius must be positive");
    if (!(c.polar_step > 0.0) || !(c.azimuth_step > 0.0)) throw Error(ErrorCode::ConfigError, "bend grid steps must be positive");
    return c;
}

nlohmann::json WorkspaceStudy::summary() const {
    auto cov = [](const CoverageStats& s) {
        nlohmann::json t = nlohmann::json::object();
        for (std::size_t i = 0; i < s.thresholds.size(); ++i)
            t[std::to_string(static_cast<int>(std::lround(rad2deg(s.thresholds[i]))))] = 100.0 * s.fraction[i];
        return nlohmann::json{{"percent_at_or_above_deg", t},
                              {"reached_percent", 100.0 * s.reached_fraction},
                              {"region_area_mm2", s.region_area}};
    };
    return {{"rigid", cov(rigid_coverage)},
            {"flexible", cov(flexible_coverage)},
            {"rigid_poses", rigid_poses},
            {"flexible_poses", flexible_poses},
            {"table_entries", table_entries}};
}

WorkspaceStudy run_workspace_study(const TriMesh& mesh, const WorkspaceStudyConfig& cfg) {
    WorkspaceStudy s;
    const auto dirs = direction_grid(cfg.max_polar, cfg.polar_step, 0.0, 2.0 * kPi - cfg.azimuth_step, cfg.azimuth_step);
    const WorkspaceSweep sweep = sweep_workspace(cfg.plant, cfg.field_magnitude, dirs);
    const WorkspaceTable table(sweep.stable, cfg.plant.segment_length);
    s.table_entries = table.entries().size();

    const PoseSet rigid = constant_curvature_pose_set(cfg.insertion, cfg.sweep, cfg.rigid_radius);
    const PoseSet flex = flexible_tip_pose_set(cfg.insertion, cfg.sweep, table);
    s.rigid_poses = rigid.size;
    s.flexible_poses = flex.size;
    s.rigid = ablation_angle_map(rigid, mesh, cfg.map);
    s.flexible = ablation_angle_map(flex, mesh, cfg.map);
    if (cfg.smooth) {
        s.rigid = smooth_angle_map(s.rigid, mesh);
        s.flexible = smooth_angle_map(s.flexible, mesh);
    }
    const auto region = region_above(mesh, cfg.region_z_min);
    s.rigid_coverage = coverage_stats(s.rigid, mesh, region, cfg.thresholds);
    s.flexible_coverage = coverage_stats(s.flexible, mesh, region, cfg.thresholds);
    return s;
}

void write_workspace_study(const WorkspaceStudy& study, const TriMesh& mesh, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_angle_map_csv(study.rigid, dir / "rigid.csv");
    write_angle_map_csv(study.flexible, dir / "flexible.csv");
    cv::imwrite((dir / "rigid.png").string(), render_heatmap(mesh, study.rigid));
    cv::imwrite((dir / "flexible.png").string(), render_heatmap(mesh, study.flexible));
    std::ofstream out(dir / "coverage.json");
    out << study.summary().dump(2) << '\n';
}

}  // namespace magnav
