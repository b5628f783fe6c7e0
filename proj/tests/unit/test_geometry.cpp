#include <doctest.h>

#include "magnav/geometry.hpp"

#include <random>

using namespace magnav;

TEST_SUITE("geometry") {

TEST_CASE("axis rotations agree with axis_angle") {
    const double a = 0.7;
    CHECK((rot_x(a) - axis_angle(Vec3::UnitX(), a)).norm() < 1e-12);
    CHECK((rot_y(a) - axis_angle(Vec3::UnitY(), a)).norm() < 1e-12);
    CHECK((rot_z(a) - axis_angle(Vec3(0, 0, 5), a)).norm() < 1e-12);
    CHECK((rot_z(kPi / 2) * Vec3::UnitX() - Vec3::UnitY()).norm() < 1e-12);
}

TEST_CASE("angle_between is robust near 0 and pi") {
    CHECK(angle_between(Vec3::UnitX(), Vec3::UnitX()) == doctest::Approx(0.0));
    CHECK(angle_between(Vec3::UnitX(), -Vec3::UnitX()) == doctest::Approx(kPi));
    CHECK(angle_between(Vec3::UnitX(), Vec3(1, 1e-9, 0)) == doctest::Approx(1e-9).epsilon(1e-6));
    CHECK(angle_between(Vec3(2, 0, 0), Vec3(0, 0, 3)) == doctest::Approx(kPi / 2));
}

TEST_CASE("signed_angle and wrap_angle") {
    CHECK(signed_angle(Vec2(1, 0), Vec2(0, 1)) == doctest::Approx(kPi / 2));
    CHECK(signed_angle(Vec2(1, 0), Vec2(0, -1)) == doctest::Approx(-kPi / 2));
    CHECK(wrap_angle(3 * kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(0.25) == doctest::Approx(0.25));
}

TEST_CASE("minimal_rotation carries from onto to") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Vec3 a = Vec3(n(rng), n(rng), n(rng)).normalized();
        const Vec3 b = Vec3(n(rng), n(rng), n(rng)).normalized();
        const Mat3 R = minimal_rotation(a, b);
        CHECK((R * a - b).norm() < 1e-9);
        CHECK(R.determinant() == doctest::Approx(1.0));
    }
    const Mat3 R = minimal_rotation(Vec3::UnitZ(), -Vec3::UnitZ());
    CHECK((R * Vec3::UnitZ() + Vec3::UnitZ()).norm() < 1e-9);
    CHECK(any_perpendicular(Vec3(0, 0, 2)).dot(Vec3::UnitZ()) == doctest::Approx(0.0));
}

TEST_CASE("homography helpers") {
    Mat3 H;
    H << 2, 0, 4, 0, 2, -6, 0, 0, 2;
    const Mat3 Hn = normalize_homography(H);
    CHECK(Hn(2, 2) == 1.0);
    const Vec2 p = apply_homography(Hn, Vec2(10, 20));
    CHECK(p.x() == doctest::Approx(12.0));
    CHECK(p.y() == doctest::Approx(17.0));
}

TEST_CASE("condition number") {
    Eigen::MatrixXd m(2, 2);
    m << 4, 0, 0, 1;
    CHECK(condition_number(m) == doctest::Approx(4.0));
    m << 1, 1, 1, 1;
    CHECK(condition_number(m) > 1e12);
}

}
