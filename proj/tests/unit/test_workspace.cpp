#include <doctest.h>

#include "magnav/errors.hpp"
#include "magnav/workspace.hpp"

#include <random>
#include <sstream>

using namespace magnav;

namespace {

// Square plate in z = 0 with outward normal +z.
TriMesh plate(double half = 20.0) {
    return TriMesh::build({{-half, -half, 0}, {half, -half, 0}, {half, half, 0}, {-half, half, 0}},
                          {{0, 1, 2}, {0, 2, 3}});
}

Pose ray(const Vec3& origin, const Vec3& dir) {
    Mat3 R = minimal_rotation(Vec3::UnitZ(), dir.normalized());
    return make_pose(R, origin);
}

// 2 x 5 quads of a shallow bowl z = 0.02 (x^2 + y^2): 20 triangles, normals +z-ish.
TriMesh toy_bowl() {
    std::vector<Vec3> v;
    for (int j = 0; j <= 2; ++j)
        for (int i = 0; i <= 5; ++i) {
            const double x = -10.0 + 4.0 * i;
            const double y = -4.0 + 4.0 * j;
            v.emplace_back(x, y, 0.02 * (x * x + y * y));
        }
    std::vector<std::array<int, 3>> t;
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 5; ++i) {
            const int a = j * 6 + i;
            t.push_back({a, a + 1, a + 7});
            t.push_back({a, a + 7, a + 6});
        }
    return TriMesh::build(v, t);
}

AngleMapOptions single_thread() {
    AngleMapOptions o;
    o.threads = 1;
    return o;
}

}  // namespace

TEST_SUITE("workspace") {

TEST_CASE("perpendicular, oblique and out-of-range rays") {
    const TriMesh m = plate();
    const AngleMapOptions o = single_thread();
    AngleMap a = ablation_angle_map(std::vector<Pose>{ray({0, 0, -5}, {0, 0, 1})}, m, o);
    REQUIRE(a.reached_count() == 1);
    const std::size_t hit = a.reached(0) ? 0 : 1;
    CHECK(rad2deg(a.alpha[hit]) == doctest::Approx(90.0));
    CHECK(a.distance[hit] == doctest::Approx(5.0));

    const Vec3 d = Vec3(1, 0, 1).normalized();
    a = ablation_angle_map(std::vector<Pose>{ray(Vec3(0, 0, 0) - 6.0 * d, d)}, m, o);
    REQUIRE(a.reached_count() == 1);
    for (std::size_t i = 0; i < 2; ++i)
        if (a.reached(i)) {
            CHECK(rad2deg(a.alpha[i]) == doctest::Approx(45.0));
            CHECK(a.distance[i] == doctest::Approx(6.0));
        }

    a = ablation_angle_map(std::vector<Pose>{ray({0, 0, -12}, {0, 0, 1})}, m, o);
    CHECK(a.reached_count() == 0);
    a = ablation_angle_map(std::vector<Pose>{ray({0, 0, -2}, {0, 0, 1})}, m, o);
    CHECK(a.reached_count() == 0);
    a = ablation_angle_map(std::vector<Pose>{ray({0, 0, 5}, {0, 0, -1})}, m, o);
    CHECK(a.reached_count() == 0);
}

TEST_CASE("ablation angle") {
    CHECK(rad2deg(ablation_angle(Vec3(0, 0, 1), Vec3(0, 0, 1))) == doctest::Approx(90.0));
    CHECK(rad2deg(ablation_angle(Vec3(1, 0, 1).normalized(), Vec3(0, 0, 1))) == doctest::Approx(45.0));
}

TEST_CASE("constant curvature arc geometry") {
    const Pose start = arc_pose(210.0, 0.0);
    CHECK(start.translation().norm() < 1e-12);
    CHECK((start.linear().col(2) - Vec3::UnitZ()).norm() < 1e-12);

    const Pose quarter = arc_pose(210.0, kPi / 2 * 210.0);
    CHECK(std::abs(quarter.linear().col(2).dot(Vec3::UnitZ())) < 1e-12);
    CHECK(rad2deg(angle_between(quarter.linear().col(2), Vec3::UnitZ())) == doctest::Approx(90.0));

    const Pose p = arc_pose(210.0, 100.0);
    CHECK(p.translation().norm() == doctest::Approx(2.0 * 210.0 * std::sin(100.0 / (2.0 * 210.0))));
}

TEST_CASE("rigid pose set starts at the insertion point") {
    InsertionFrame f;
    f.point = Vec3(5, -3, 2);
    f.inward = Vec3(0, 1, 0);
    f.anterior = Vec3(0, 0, 1);
    InsertionSweep s;
    s.psi_min = s.psi_max = deg2rad(45);
    s.phi_min = s.phi_max = deg2rad(45);
    s.l_min = 0;
    s.l_max = 100;
    s.l_step = 50;
    const auto poses = constant_curvature_poses(f, s, 210.0);
    REQUIRE(poses.size() == 3);
    CHECK((poses[0].translation() - f.point).norm() < 1e-9);
    CHECK((poses[0].linear().col(2) - f.inward).norm() < 1e-9);
    CHECK((poses[2].translation() - f.point).norm() == doctest::Approx(2.0 * 210.0 * std::sin(100.0 / 420.0)));
    CHECK(constant_curvature_pose_set(f, s).size == 3);
}

TEST_CASE("sweep validation") {
    InsertionSweep s;
    s.psi_max = deg2rad(120);
    CHECK_THROWS_AS(s.validate(), Error);
    InsertionSweep t;
    t.l_step = 0.0;
    CHECK_THROWS_AS(t.validate(), Error);
    CHECK(InsertionSweep{}.psi_values().size() == 46);
    CHECK(InsertionSweep{}.l_values().size() == 51);
}

TEST_CASE("workspace table") {
    CHECK_THROWS_AS(WorkspaceTable({}, 40.0), Error);

    const PlantParams p = PlantParams::horizontal();
    const auto dirs = direction_grid(deg2rad(90), deg2rad(15), 0.0, deg2rad(330), deg2rad(30));
    const WorkspaceSweep sw = sweep_workspace(p, 15.0, dirs);
    const WorkspaceTable table(sw.stable, p.segment_length);
    for (const auto& e : table.entries()) {
        const Pose q = table.interpolate(e.field_dir);
        CHECK((q.matrix() - e.tip_pose.matrix()).norm() < 1e-12);
    }

    // between two neighbours along the same azimuth
    const Vec3 a(std::sin(deg2rad(30)), 0, std::cos(deg2rad(30)));
    const Vec3 b(std::sin(deg2rad(45)), 0, std::cos(deg2rad(45)));
    const double ba = table.interpolate_bend(a).first;
    const double bb = table.interpolate_bend(b).first;
    const Vec3 mid = (a + b).normalized();
    const double bm = table.interpolate_bend(mid, 2).first;
    CHECK(bm >= std::min(ba, bb) - 1e-9);
    CHECK(bm <= std::max(ba, bb) + 1e-9);
}

TEST_CASE("zero bend gives the straight insertion pose") {
    WorkspaceEntry e;
    e.field_dir = Vec3::UnitZ();
    e.tip_pose = segment_pose(0.0, 0.0, 40.0);
    const WorkspaceTable table({e}, 40.0);
    InsertionFrame f;
    f.point = Vec3(1, 2, 3);
    f.inward = Vec3(1, 0, 0);
    f.anterior = Vec3(0, 0, 1);
    InsertionSweep s;
    s.psi_min = s.psi_max = deg2rad(45);
    s.phi_min = s.phi_max = deg2rad(45);
    s.l_min = 0;
    s.l_max = 20;
    s.l_step = 10;
    const auto poses = flexible_tip_poses(f, s, table);
    REQUIRE(poses.size() == 3);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const double l = 10.0 * i;
        CHECK((poses[i].translation() - (f.point + (l + 40.0) * f.inward)).norm() < 1e-9);
        CHECK((poses[i].linear().col(2) - f.inward).norm() < 1e-9);
    }
}

TEST_CASE("coverage arithmetic") {
    const TriMesh m = plate();
    std::vector<bool> all(m.size(), true);
    AngleMap full(m.size());
    full.record(0, deg2rad(90), 5);
    full.record(1, deg2rad(90), 5);
    CoverageStats c = coverage_stats(full, m, all);
    CHECK(c.fraction[0] == doctest::Approx(1.0));
    CHECK(c.fraction[1] == doctest::Approx(1.0));

    AngleMap half(m.size());
    half.record(0, deg2rad(50), 5);
    c = coverage_stats(half, m, all);
    CHECK(c.fraction[0] == doctest::Approx(0.5));
    CHECK(c.fraction[1] == doctest::Approx(0.0));
    CHECK(c.reached_fraction == doctest::Approx(0.5));

    try {
        coverage_stats(full, m, std::vector<bool>(m.size(), false));
        FAIL("expected EmptyRegion");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyRegion);
    }
    CHECK_THROWS_AS(coverage_stats(full, m, std::vector<bool>(5, true)), Error);
}

TEST_CASE("toy mesh matches exhaustive enumeration") {
    const TriMesh m = toy_bowl();
    REQUIRE(m.size() == 20);
    std::vector<Pose> poses;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 300; ++i) {
        const Vec3 o(9.0 * u(rng), 3.5 * u(rng), -2.0 - 8.0 * (0.5 + 0.5 * u(rng)));
        const Vec3 d = Vec3(0.8 * u(rng), 0.8 * u(rng), 1.0).normalized();
        poses.push_back(ray(o, d));
    }

    AngleMap oracle(m.size());
    for (const Pose& p : poses) {
        const Vec3 o = p.translation();
        const Vec3 d = p.linear().col(2);
        int best = -1;
        double best_t = 1e18;
        for (std::size_t t = 0; t < m.size(); ++t) {
            const auto hit = intersect_triangle(m, t, o, d);
            if (hit && *hit < best_t) {
                best_t = *hit;
                best = static_cast<int>(t);
            }
        }
        if (best < 0 || best_t < 3.0 || best_t > 10.0) continue;
        if (d.dot(m.normals[best]) <= 0.0) continue;
        const double alpha = std::asin(std::min(1.0, std::abs(d.dot(m.normals[best]))));
        if (alpha > oracle.alpha[best]) {
            oracle.alpha[best] = alpha;
            oracle.distance[best] = best_t;
        }
    }
    const AngleMap got = ablation_angle_map(poses, m, single_thread());
    CHECK(got.reached_count() > 5);
    for (std::size_t t = 0; t < m.size(); ++t) {
        CHECK(got.reached(t) == oracle.reached(t));
        if (oracle.reached(t)) CHECK(got.alpha[t] == doctest::Approx(oracle.alpha[t]).epsilon(1e-12));
    }

    std::vector<bool> region(m.size(), true);
    double area = 0.0, a45 = 0.0, a70 = 0.0;
    for (std::size_t t = 0; t < m.size(); ++t) {
        area += m.areas[t];
        if (oracle.reached(t) && oracle.alpha[t] >= deg2rad(45)) a45 += m.areas[t];
        if (oracle.reached(t) && oracle.alpha[t] >= deg2rad(70)) a70 += m.areas[t];
    }
    const CoverageStats c = coverage_stats(got, m, region);
    CHECK(c.fraction[0] == doctest::Approx(a45 / area).epsilon(1e-12));
    CHECK(c.fraction[1] == doctest::Approx(a70 / area).epsilon(1e-12));
}

TEST_CASE("grid queries match brute force") {
    const TriMesh dome = make_dome(120, 100, 90, 48, 16, 6);
    const MeshGrid grid(dome);
    std::mt19937_64 rng(19);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 3000; ++i) {
        const Vec3 o(100 * u(rng), 80 * u(rng), 45 + 45 * u(rng));
        const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
        const double t_max = i % 2 ? 15.0 : 500.0;
        const auto a = grid.intersect(o, d, t_max);
        const auto b = intersect_brute(dome, o, d, t_max);
        REQUIRE(a.has_value() == b.has_value());
        if (a) {
            CHECK(a->triangle == b->triangle);
            CHECK(a->distance == doctest::Approx(b->distance).epsilon(1e-12));
        }
    }
    CHECK(grid.inside(Vec3(0, 0, 30)));
    CHECK_FALSE(grid.inside(Vec3(0, 0, 200)));
}

TEST_CASE("angle map properties on the dome") {
    const TriMesh dome = make_dome(120, 100, 90, 48, 16, 6);
    const InsertionFrame f = dome_lateral_insertion(120, 90, deg2rad(5));
    InsertionSweep s;
    s.psi_step = s.phi_step = deg2rad(6);
    s.l_step = 5;
    const auto poses = constant_curvature_poses(f, s);
    AngleMapOptions o;
    o.threads = 2;
    const AngleMap threaded = ablation_angle_map(poses, dome, o);
    const AngleMap brute = ablation_angle_map_brute(poses, dome, o);
    REQUIRE(threaded.reached_count() > 0);
    for (std::size_t t = 0; t < dome.size(); ++t) {
        CHECK(threaded.reached(t) == brute.reached(t));
        if (brute.reached(t)) {
            CHECK(threaded.alpha[t] == brute.alpha[t]);
            CHECK(threaded.alpha[t] > 0.0);
            CHECK(threaded.alpha[t] <= kPi / 2 + 1e-12);
        }
    }

    AngleMapOptions narrow = o;
    narrow.d_min = 4.0;
    narrow.d_max = 8.0;
    const AngleMap shrunk = ablation_angle_map(poses, dome, narrow);
    for (std::size_t t = 0; t < dome.size(); ++t)
        if (shrunk.reached(t)) CHECK(shrunk.alpha[t] <= threaded.alpha[t]);
        else if (!threaded.reached(t)) CHECK_FALSE(shrunk.reached(t));

    // merge order independence
    std::vector<AngleMap> parts;
    const std::size_t chunk = poses.size() / 5 + 1;
    for (std::size_t i = 0; i < poses.size(); i += chunk) {
        std::vector<Pose> sub(poses.begin() + i, poses.begin() + std::min(poses.size(), i + chunk));
        parts.push_back(ablation_angle_map_brute(sub, dome, o));
    }
    AngleMap forward(dome.size()), backward(dome.size());
    for (const auto& p : parts) forward.merge(p);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) backward.merge(*it);
    CHECK(forward.alpha == backward.alpha);
    CHECK(forward.distance == backward.distance);
    CHECK(forward.alpha == brute.alpha);
}

TEST_CASE("smoothing keeps reached set and bounds") {
    const TriMesh m = toy_bowl();
    AngleMap a(m.size());
    a.record(3, deg2rad(80), 5);
    a.record(4, deg2rad(40), 5);
    const AngleMap s = smooth_angle_map(a, m);
    CHECK(s.reached_count() == a.reached_count());
    for (std::size_t t = 0; t < m.size(); ++t)
        if (s.reached(t)) {
            CHECK(s.alpha[t] >= deg2rad(40) - 1e-12);
            CHECK(s.alpha[t] <= deg2rad(80) + 1e-12);
        }
}

TEST_CASE("mesh parsing") {
    std::istringstream stl(R"(solid t
facet normal 0 0 1
 outer loop
  vertex 0 0 0
  vertex 1 0 0
  vertex 0 1 0
 endloop
endfacet
endsolid t
)");
    const TriMesh a = parse_stl_ascii(stl);
    REQUIRE(a.size() == 1);
    CHECK((a.normals[0] - Vec3::UnitZ()).norm() < 1e-12);
    CHECK(a.areas[0] == doctest::Approx(0.5));

    std::istringstream obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\nf -4 -3 -2\n");
    const TriMesh b = parse_obj(obj);
    CHECK(b.size() == 3);

    std::istringstream bad_index("v 0 0 0\nv 1 0 0\nf 1 2 7\n");
    try {
        parse_obj(bad_index);
        FAIL("expected MeshFormat");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MeshFormat);
    }
    std::istringstream degenerate("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n");
    CHECK_THROWS_AS(parse_obj(degenerate), Error);
}

TEST_CASE("mesh files round trip") {
    const TriMesh dome = make_dome(60, 50, 40, 12, 6, 3);
    const auto dir = std::filesystem::temp_directory_path() / "magnav_mesh_test";
    std::filesystem::create_directories(dir);
    write_obj(dome, dir / "d.obj");
    write_stl_ascii(dome, dir / "d.stl");
    for (const char* name : {"d.obj", "d.stl"}) {
        const TriMesh back = load_mesh(dir / name);
        REQUIRE(back.size() == dome.size());
        for (std::size_t t = 0; t < dome.size(); ++t) CHECK((back.centroid(t) - dome.centroid(t)).norm() < 1e-4);
    }
    CHECK_THROWS_AS(load_mesh(dir / "d.ply"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("dome normals point outward") {
    const TriMesh dome = make_dome(120, 100, 90);
    const MeshGrid grid(dome);
    for (std::size_t t = 0; t < dome.size(); t += 37) {
        const Vec3 c = dome.centroid(t);
        CHECK_FALSE(grid.inside(c + 0.5 * dome.normals[t]));
        CHECK(grid.inside(c - 0.5 * dome.normals[t]));
    }
}

}
