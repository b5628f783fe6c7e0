#pragma once

#include "magnav/geometry.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace magnav {

/// Triangle soup with per-triangle unit normals (right-hand winding) and areas.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> normals;
    std::vector<double> areas;

    /// Builds normals and areas. Throws MeshFormat on bad indices or
    /// degenerate triangles (area <= 1e-9 mm^2).
    static TriMesh build(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles);

    std::size_t size() const { return triangles.size(); }
    Vec3 centroid(std::size_t i) const;
    const Vec3& corner(std::size_t i, int k) const { return vertices[triangles[i][k]]; }
};

TriMesh parse_stl_ascii(std::istream& in);
TriMesh parse_obj(std::istream& in);
/// Dispatches on the file extension (.stl / .obj). Throws MeshFormat.
TriMesh load_mesh(const std::filesystem::path& path);
void write_obj(const TriMesh& mesh, const std::filesystem::path& path);
void write_stl_ascii(const TriMesh& mesh, const std::filesystem::path& path);

/// Half-ellipsoid shell z >= 0 with semi-axes (a, b, c), closed by a disc at
/// z = 0. Normals point outward.
TriMesh make_dome(double a, double b, double c, int n_azimuth = 72, int n_elevation = 24, int n_base_rings = 8);

struct RayHit {
    int triangle = -1;
    double distance = 0.0;
};

/// Two-sided ray/triangle test; distance along the unit direction.
std::optional<double> intersect_triangle(const TriMesh& mesh, std::size_t tri, const Vec3& origin, const Vec3& dir);

/// Nearest hit with distance in (0, t_max], ties broken by lower triangle index.
std::optional<RayHit> intersect_brute(const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double t_max);

/// Uniform-grid accelerated nearest-hit queries; results match intersect_brute.
class MeshGrid {
public:
    explicit MeshGrid(const TriMesh& mesh, int cells_per_axis = 0);

    std::optional<RayHit> intersect(const Vec3& origin, const Vec3& dir, double t_max) const;
    /// Even-odd crossing count along a fixed direction (closed meshes only).
    bool inside(const Vec3& p) const;
    const TriMesh& mesh() const { return mesh_; }

private:
    const std::vector<int>& cell(int x, int y, int z) const { return cells_[(z * n_[1] + y) * n_[0] + x]; }

    const TriMesh& mesh_;
    Vec3 lo_, hi_, size_;
    std::array<int, 3> n_{1, 1, 1};
    std::vector<std::vector<int>> cells_;
};

}  // namespace magnav
