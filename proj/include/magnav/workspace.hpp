#pragma once

#include "magnav/geometry.hpp"
#include "magnav/mesh.hpp"
#include "magnav/plant.hpp"

#include <filesystem>
#include <functional>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

namespace magnav {

/// Trocar frame: origin on the wall, z into the cavity, x toward the anterior side.
struct InsertionFrame {
    Vec3 point = Vec3::Zero();
    Vec3 inward = Vec3::UnitZ();
    Vec3 anterior = Vec3::UnitX();

    /// Orthonormalized pose of the frame in the mesh coordinates.
    Pose pose() const;
};

/// psi and phi tilt the insertion axis from the inward normal toward the
/// anterior (x) and lateral (y) trocar axes; each is shifted by its offset so
/// that the [0, 90] deg sweep straddles the normal.
struct InsertionSweep {
    double psi_min = 0.0, psi_max = deg2rad(90.0), psi_step = deg2rad(2.0);
    double phi_min = 0.0, phi_max = deg2rad(90.0), phi_step = deg2rad(2.0);
    double psi_offset = deg2rad(-45.0), phi_offset = deg2rad(-45.0);
    double l_min = 0.0, l_max = 100.0, l_step = 2.0;  // mm

    void validate() const;
    std::vector<double> psi_values() const;
    std::vector<double> phi_values() const;
    std::vector<double> l_values() const;
    /// Unit insertion axis in the trocar frame for offset-applied tilts.
    static Vec3 axis(double psi, double phi);
    static InsertionSweep from_json(const nlohmann::json& j);
};

/// Tip pose of a circular arc that starts at the origin tangent to +z and
/// curves toward +x.
Pose arc_pose(double radius, double arc_length);

/// Lazily indexed pose collection; `at` must be safe to call concurrently.
struct PoseSet {
    std::size_t size = 0;
    std::function<Pose(std::size_t)> at;

    static PoseSet from(std::vector<Pose> poses);
    std::vector<Pose> materialize() const;
};

PoseSet constant_curvature_pose_set(const InsertionFrame& frame, const InsertionSweep& sweep, double radius = 210.0);
std::vector<Pose> constant_curvature_poses(const InsertionFrame& frame, const InsertionSweep& sweep,
                                           double radius = 210.0);

/// Free-space bend table of the flexible tip, keyed by field direction.
class WorkspaceTable {
public:
    WorkspaceTable(std::vector<WorkspaceEntry> entries, double segment_length);

    /// Exact entry for a tabulated direction; otherwise bend and azimuth are
    /// blended by inverse angular distance over the k nearest entries.
    Pose interpolate(const Vec3& field_dir, int k = 3) const;
    /// Blended (bend, azimuth) for a direction.
    std::pair<double, double> interpolate_bend(const Vec3& field_dir, int k = 3) const;

    const std::vector<WorkspaceEntry>& entries() const { return entries_; }
    double segment_length() const { return length_; }

private:
    std::vector<WorkspaceEntry> entries_;
    double length_;
};

/// Straight shaft inserted to depth l along the sweep axis, composed with
/// every table pose (or the supplied query directions, interpolated).
PoseSet flexible_tip_pose_set(const InsertionFrame& frame, const InsertionSweep& sweep, const WorkspaceTable& table,
                              const std::vector<Vec3>& queries = {});
std::vector<Pose> flexible_tip_poses(const InsertionFrame& frame, const InsertionSweep& sweep,
                                     const WorkspaceTable& table, const std::vector<Vec3>& queries = {});

struct AngleMapOptions {
    double d_min = 3.0;   // mm
    double d_max = 10.0;  // mm
    bool inner_only = true;  // only rays striking a face from the inside (outward normals)
    int threads = 0;         // 0: hardware concurrency
};

/// Per-triangle best ablation angle; alpha < 0 marks an unreached triangle.
struct AngleMap {
    std::vector<double> alpha;     // rad
    std::vector<double> distance;  // mm, at the best alpha
    std::vector<int> hits;

    explicit AngleMap(std::size_t n = 0) : alpha(n, -1.0), distance(n, 0.0), hits(n, 0) {}
    bool reached(std::size_t i) const { return alpha[i] > 0.0; }
    std::size_t reached_count() const;
    /// Keep the larger alpha (smaller distance on ties). Commutative and associative.
    void merge(const AngleMap& other);
    void record(std::size_t tri, double alpha, double d);
};

/// Angle between a unit ray and the plane of a triangle with unit normal n.
double ablation_angle(const Vec3& dir, const Vec3& n);

AngleMap ablation_angle_map(const PoseSet& poses, const TriMesh& mesh, const AngleMapOptions& opts = {});
AngleMap ablation_angle_map(const std::vector<Pose>& poses, const TriMesh& mesh, const AngleMapOptions& opts = {});
/// Exhaustive reference over all pose/triangle pairs, single threaded.
AngleMap ablation_angle_map_brute(const std::vector<Pose>& poses, const TriMesh& mesh,
                                  const AngleMapOptions& opts = {});

/// Area-weighted average over reached triangles sharing a vertex.
AngleMap smooth_angle_map(const AngleMap& map, const TriMesh& mesh);

struct CoverageStats {
    std::vector<double> thresholds;  // rad
    std::vector<double> fraction;    // area fraction of the region, [0, 1]
    double reached_fraction = 0.0;
    double region_area = 0.0;
};

/// Throws EmptyRegion if the mask selects nothing.
CoverageStats coverage_stats(const AngleMap& map, const TriMesh& mesh, const std::vector<bool>& region,
                             const std::vector<double>& thresholds = {deg2rad(45.0), deg2rad(70.0)});

/// Triangles whose centroid lies at or above z_min.
std::vector<bool> region_above(const TriMesh& mesh, double z_min);

void write_angle_map_csv(const AngleMap& map, const std::filesystem::path& path);
/// Orthographic view along -z (x right, y up), colored by best alpha.
cv::Mat render_heatmap(const TriMesh& mesh, const AngleMap& map, int size = 600);

/// Rigid-versus-flexible comparison on one mesh, as configured by a sweep file.
struct WorkspaceStudyConfig {
    InsertionFrame insertion;
    InsertionSweep sweep;
    double rigid_radius = 210.0;  // mm
    PlantParams plant;
    double field_magnitude = 15.0;  // mT
    double max_polar = deg2rad(150.0);
    double polar_step = deg2rad(10.0);
    double azimuth_step = deg2rad(20.0);
    AngleMapOptions map;
    double region_z_min = 45.0;  // mm, anterior region: centroids at or above
    std::vector<double> thresholds{deg2rad(45.0), deg2rad(70.0)};
    bool smooth = false;

    /// `insertion.lateral_elevation_deg` places the trocar on the -x wall of a
    /// dome with the given semi-axes instead of an explicit point.
    static WorkspaceStudyConfig from_json(const nlohmann::json& j);
};

/// Lateral trocar on the -x side of a half-ellipsoid (a, b, c) at the given
/// elevation, pointing along the inward normal with +z as anterior.
InsertionFrame dome_lateral_insertion(double a, double c, double elevation);

struct WorkspaceStudy {
    AngleMap rigid;
    AngleMap flexible;
    CoverageStats rigid_coverage;
    CoverageStats flexible_coverage;
    std::size_t rigid_poses = 0;
    std::size_t flexible_poses = 0;
    std::size_t table_entries = 0;
    nlohmann::json summary() const;
};

WorkspaceStudy run_workspace_study(const TriMesh& mesh, const WorkspaceStudyConfig& cfg);
/// Writes rigid.csv, flexible.csv, rigid.png, flexible.png and coverage.json.
void write_workspace_study(const WorkspaceStudy& study, const TriMesh& mesh, const std::filesystem::path& dir);

}  // namespace magnav
