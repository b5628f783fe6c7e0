#include "magnav/mesh.hpp"
#include "magnav/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

namespace magnav {

TriMesh TriMesh::build(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles) {
    TriMesh m;
    m.vertices = std::move(vertices);
    m.triangles = std::move(triangles);
    m.normals.reserve(m.triangles.size());
    m.areas.reserve(m.triangles.size());
    const int nv = static_cast<int>(m.vertices.size());
    for (std::size_t i = 0; i < m.triangles.size(); ++i) {
        for (int k : m.triangles[i])
            if (k < 0 || k >= nv) throw Error(ErrorCode::MeshFormat, "triangle " + std::to_string(i) + " has a bad vertex index");
        const Vec3 c = (m.corner(i, 1) - m.corner(i, 0)).cross(m.corner(i, 2) - m.corner(i, 0));
        const double area = 0.5 * c.norm();
        if (!(area > 1e-9)) throw Error(ErrorCode::MeshFormat, "triangle " + std::to_string(i) + " is degenerate");
        m.normals.push_back(c.normalized());
        m.areas.push_back(area);
    }
    return m;
}

Vec3 TriMesh::centroid(std::size_t i) const { return (corner(i, 0) + corner(i, 1) + corner(i, 2)) / 3.0; }

TriMesh parse_stl_ascii(std::istream& in) {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> tris;
    std::string tok;
    bool solid = false;
    std::array<int, 3> cur{};
    int k = 0;
    while (in >> tok) {
        if (tok == "solid") {
            solid = true;
            std::getline(in, tok);
        } else if (tok == "vertex") {
            Vec3 v;
            if (!(in >> v.x() >> v.y() >> v.z())) throw Error(ErrorCode::MeshFormat, "malformed STL vertex");
            if (k > 2) throw Error(ErrorCode::MeshFormat, "STL facet with more than three vertices");
            cur[k++] = static_cast<int>(verts.size());
            verts.push_back(v);
        } else if (tok == "endloop") {
            if (k != 3) throw Error(ErrorCode::MeshFormat, "STL facet without three vertices");
            tris.push_back(cur);
            k = 0;
        }
    }
    if (!solid) throw Error(ErrorCode::MeshFormat, "not an ASCII STL file");
    return TriMesh::build(std::move(verts), std::move(tris));
}

TriMesh parse_obj(std::istream& in) {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> tris;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z())) throw Error(ErrorCode::MeshFormat, "malformed OBJ vertex: " + line);
            verts.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string item;
            while (ls >> item) {
                int i = 0;
                try {
                    i = std::stoi(item.substr(0, item.find('/')));
                } catch (const std::exception&) {
                    throw Error(ErrorCode::MeshFormat, "malformed OBJ face: " + line);
                }
                idx.push_back(i < 0 ? static_cast<int>(verts.size()) + i : i - 1);
            }
            if (idx.size() < 3) throw Error(ErrorCode::MeshFormat, "OBJ face with fewer than three vertices");
            for (std::size_t j = 1; j + 1 < idx.size(); ++j) tris.push_back({idx[0], idx[j], idx[j + 1]});
        }
    }
    return TriMesh::build(std::move(verts), std::move(tris));
}

TriMesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MeshFormat, "cannot open mesh " + path.string());
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".stl") return parse_stl_ascii(in);
    if (ext == ".obj") return parse_obj(in);
    throw Error(ErrorCode::MeshFormat, "unsupported mesh format " + ext);
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    out.precision(10);
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

void write_stl_ascii(const TriMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    out.precision(10);
    out << "solid mesh\n";
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        const Vec3& n = mesh.normals[i];
        out << "  facet normal " << n.x() << ' ' << n.y() << ' ' << n.z() << "\n    outer loop\n";
        for (int k = 0; k < 3; ++k) {
            const Vec3& v = mesh.corner(i, k);
            out << "      vertex " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
        }
        out << "    endloop\n  endfacet\n";
    }
    out << "endsolid mesh\n";
}

TriMesh make_dome(double a, double b, double c, int n_azimuth, int n_elevation, int n_base_rings) {
    std::vector<Vec3> v;
    std::vector<std::array<int, 3>> t;
    // shell rings from the rim (elevation 0) up to the pole
    auto ring_index = [&](int ring, int j) { return ring * n_azimuth + (j % n_azimuth); };
    for (int i = 0; i < n_elevation; ++i) {
        const double el = 0.5 * kPi * i / n_elevation;
        for (int j = 0; j < n_azimuth; ++j) {
            const double az = 2.0 * kPi * j / n_azimuth;
            v.emplace_back(a * std::cos(el) * std::cos(az), b * std::cos(el) * std::sin(az), c * std::sin(el));
        }
    }
    const int pole = static_cast<int>(v.size());
    v.emplace_back(0.0, 0.0, c);
    for (int i = 0; i + 1 < n_elevation; ++i) {
        for (int j = 0; j < n_azimuth; ++j) {
            t.push_back({ring_index(i, j), ring_index(i, j + 1), ring_index(i + 1, j + 1)});
            t.push_back({ring_index(i, j), ring_index(i + 1, j + 1), ring_index(i + 1, j)});
        }
    }
    for (int j = 0; j < n_azimuth; ++j) t.push_back({ring_index(n_elevation - 1, j), ring_index(n_elevation - 1, j + 1), pole});

    // base disc: concentric rings sharing the rim vertices, facing -z
    int outer = 0;  // first index of the current outer ring
    for (int r = n_base_rings - 1; r >= 1; --r) {
        const double s = static_cast<double>(r) / n_base_rings;
        const int inner = static_cast<int>(v.size());
        for (int j = 0; j < n_azimuth; ++j) {
            const double az = 2.0 * kPi * j / n_azimuth;
            v.emplace_back(s * a * std::cos(az), s * b * std::sin(az), 0.0);
        }
        for (int j = 0; j < n_azimuth; ++j) {
            const int o0 = outer + j, o1 = outer + (j + 1) % n_azimuth;
            const int i0 = inner + j, i1 = inner + (j + 1) % n_azimuth;
            t.push_back({o0, i1, o1});
            t.push_back({o0, i0, i1});
        }
        outer = inner;
    }
    const int centre = static_cast<int>(v.size());
    v.emplace_back(0.0, 0.0, 0.0);
    for (int j = 0; j < n_azimuth; ++j) t.push_back({outer + j, centre, outer + (j + 1) % n_azimuth});
    return TriMesh::build(std::move(v), std::move(t));
}

std::optional<double> intersect_triangle(const TriMesh& mesh, std::size_t tri, const Vec3& origin, const Vec3& dir) {
    // Moller-Trumbore
    const Vec3& p0 = mesh.corner(tri, 0);
    const Vec3 e1 = mesh.corner(tri, 1) - p0;
    const Vec3 e2 = mesh.corner(tri, 2) - p0;
    const Vec3 p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-14) return std::nullopt;
    const double inv = 1.0 / det;
    const Vec3 s = origin - p0;
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) return std::nullopt;
    const Vec3 q = s.cross(e1);
    const double w = dir.dot(q) * inv;
    if (w < 0.0 || u + w > 1.0) return std::nullopt;
    const double t = e2.dot(q) * inv;
    if (t <= 1e-9) return std::nullopt;
    return t;
}

std::optional<RayHit> intersect_brute(const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double t_max) {
    std::optional<RayHit> best;
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        const auto t = intersect_triangle(mesh, i, origin, dir);
        if (t && *t <= t_max && (!best || *t < best->distance)) best = RayHit{static_cast<int>(i), *t};
    }
    return best;
}

MeshGrid::MeshGrid(const TriMesh& mesh, int cells_per_axis) : mesh_(mesh) {
    lo_ = Vec3::Constant(std::numeric_limits<double>::max());
    hi_ = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (const auto& v : mesh.vertices) {
        lo_ = lo_.cwiseMin(v);
        hi_ = hi_.cwiseMax(v);
    }
    if (mesh.vertices.empty()) lo_ = hi_ = Vec3::Zero();
    lo_ -= Vec3::Constant(1e-6);
    hi_ += Vec3::Constant(1e-6);
    const Vec3 ext = hi_ - lo_;
    if (cells_per_axis <= 0) {
        const double cells = std::max(1.0, 2.0 * std::cbrt(static_cast<double>(mesh.size())));
        const double unit = std::cbrt(ext.prod() / (cells * cells * cells));
        for (int k = 0; k < 3; ++k) n_[k] = std::clamp(static_cast<int>(std::ceil(ext[k] / std::max(unit, 1e-9))), 1, 256);
    } else {
        n_ = {cells_per_axis, cells_per_axis, cells_per_axis};
    }
    size_ = ext.cwiseQuotient(Vec3(n_[0], n_[1], n_[2]));
    cells_.assign(static_cast<std::size_t>(n_[0]) * n_[1] * n_[2], {});
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        Vec3 a = mesh.corner(i, 0).cwiseMin(mesh.corner(i, 1)).cwiseMin(mesh.corner(i, 2));
        Vec3 b = mesh.corner(i, 0).cwiseMax(mesh.corner(i, 1)).cwiseMax(mesh.corner(i, 2));
        std::array<int, 3> c0, c1;
        for (int k = 0; k < 3; ++k) {
            c0[k] = std::clamp(static_cast<int>(std::floor((a[k] - lo_[k]) / size_[k])), 0, n_[k] - 1);
            c1[k] = std::clamp(static_cast<int>(std::floor((b[k] - lo_[k]) / size_[k])), 0, n_[k] - 1);
        }
        for (int z = c0[2]; z <= c1[2]; ++z)
            for (int y = c0[1]; y <= c1[1]; ++y)
                for (int x = c0[0]; x <= c1[0]; ++x) cells_[(z * n_[1] + y) * n_[0] + x].push_back(static_cast<int>(i));
    }
}

std::optional<RayHit> MeshGrid::intersect(const Vec3& origin, const Vec3& dir, double t_max) const {
    // clip the ray segment to the grid box
    double t0 = 0.0, t1 = t_max;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(dir[k]) < 1e-15) {
            if (origin[k] < lo_[k] || origin[k] > hi_[k]) return std::nullopt;
            continue;
        }
        double a = (lo_[k] - origin[k]) / dir[k];
        double b = (hi_[k] - origin[k]) / dir[k];
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
        if (t0 > t1) return std::nullopt;
    }

    const Vec3 p = origin + t0 * dir;
    std::array<int, 3> c, step;
    Vec3 t_next, t_delta;
    for (int k = 0; k < 3; ++k) {
        c[k] = std::clamp(static_cast<int>(std::floor((p[k] - lo_[k]) / size_[k])), 0, n_[k] - 1);
        if (dir[k] > 0) {
            step[k] = 1;
            t_next[k] = (lo_[k] + (c[k] + 1) * size_[k] - origin[k]) / dir[k];
            t_delta[k] = size_[k] / dir[k];
        } else if (dir[k] < 0) {
            step[k] = -1;
            t_next[k] = (lo_[k] + c[k] * size_[k] - origin[k]) / dir[k];
            t_delta[k] = -size_[k] / dir[k];
        } else {
            step[k] = 0;
            t_next[k] = std::numeric_limits<double>::infinity();
            t_delta[k] = std::numeric_limits<double>::infinity();
        }
    }

    std::optional<RayHit> best;
    while (true) {
        for (int i : cell(c[0], c[1], c[2])) {
            const auto t = intersect_triangle(mesh_, i, origin, dir);
            if (!t || *t > t_max) continue;
            if (!best || *t < best->distance || (*t == best->distance && i < best->triangle)) best = RayHit{i, *t};
        }
        int k = 0;
        if (t_next[1] < t_next[k]) k = 1;
        if (t_next[2] < t_next[k]) k = 2;
        const double exit = t_next[k];
        // a hit inside this cell's span cannot be beaten by later cells
        if (best && best->distance < exit) break;
        if (exit > t1) break;
        c[k] += step[k];
        if (c[k] < 0 || c[k] >= n_[k]) break;
        t_next[k] += t_delta[k];
    }
    return best;
}

bool MeshGrid::inside(const Vec3& p) const {
    // irrational-ish direction to avoid edges and vertices
    const Vec3 dir = Vec3(0.5773, 0.5774, 0.5773503).normalized();
    int crossings = 0;
    for (std::size_t i = 0; i < mesh_.size(); ++i)
        if (intersect_triangle(mesh_, i, p, dir)) ++crossings;
    return crossings % 2 == 1;
}

}  // namespace magnav
