#include <doctest.h>

#include "magnav/errors.hpp"
#include "magnav/scene.hpp"

#include <opencv2/imgproc.hpp>

#include <random>

using namespace magnav;

namespace {

const Scene& plane_scene() {
    static const Scene scene{Surface{}, CameraIntrinsics{}};
    return scene;
}

Pose looking_down(double x, double y, double d) {
    return make_pose(Mat3::Identity(), Vec3(x, y, -d));
}

}  // namespace

TEST_SUITE("scene") {

TEST_CASE("axial point projects to the principal point") {
    const CameraIntrinsics k;
    const auto p = project(k, looking_down(0, 0, 20), Vec3(0, 0, 0));
    REQUIRE(p);
    CHECK(p->x() == doctest::Approx(k.cx));
    CHECK(p->y() == doctest::Approx(k.cy));
    CHECK_FALSE(project(k, looking_down(0, 0, 20), Vec3(0, 0, -30)));
}

TEST_CASE("corner markers project by the pinhole formula") {
    CameraIntrinsics k;
    k.fx = 320;
    k.fy = 310;
    k.cx = 190;
    k.cy = 205;
    const Pose cam = make_pose(rot_x(0.1) * rot_y(-0.05), Vec3(1.5, -2.0, -25.0));
    for (const Vec3& pw : {Vec3(-5, -5, 0), Vec3(5, -5, 0), Vec3(5, 5, 0), Vec3(-5, 5, 0)}) {
        const Mat3 R = cam.linear().transpose();
        const Vec3 t = -R * cam.translation();
        const Vec3 q = k.K() * (R * pw + t);
        const auto p = project(k, cam, pw);
        REQUIRE(p);
        CHECK(p->x() == doctest::Approx(q.x() / q.z()).epsilon(1e-12));
        CHECK(p->y() == doctest::Approx(q.y() / q.z()).epsilon(1e-12));
    }
}

TEST_CASE("rendering is deterministic") {
    const Pose cam = looking_down(3, -2, 20);
    const Frame a = render(plane_scene(), cam);
    const Frame b = render(plane_scene(), cam);
    CHECK(cv::norm(a.pixels, b.pixels, cv::NORM_INF) == 0.0);
    CHECK(a.width() == 400);
    CHECK(a.height() == 400);
    const Scene other{Surface{}, CameraIntrinsics{}};
    CHECK(cv::norm(a.pixels, render(other, cam).pixels, cv::NORM_INF) == 0.0);
}

TEST_CASE("texture depends on the seed") {
    Surface s;
    s.texture_seed = 99;
    const Scene other{s, CameraIntrinsics{}};
    const Pose cam = looking_down(0, 0, 20);
    CHECK(cv::norm(render(plane_scene(), cam).pixels, render(other, cam).pixels, cv::NORM_L1) > 0.0);
}

TEST_CASE("low coverage is reported") {
    const Pose away = make_pose(rot_x(kPi), Vec3(0, 0, -20));
    try {
        render(plane_scene(), away);
        FAIL("expected LowCoverage");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LowCoverage);
    }
}

TEST_CASE("ground truth homography properties") {
    const CameraIntrinsics k;
    const Surface s;
    const Pose a = looking_down(0, 0, 20);
    const Pose b = make_pose(rot_x(0.05), Vec3(1.0, 0.5, -21.0));
    const Pose c = make_pose(rot_y(-0.04) * rot_z(0.1), Vec3(-0.5, 2.0, -19.0));
    CHECK((ground_truth_homography(a, a, s, k) - Mat3::Identity()).norm() < 1e-12);
    const Mat3 ac = ground_truth_homography(a, c, s, k);
    const Mat3 composed = normalize_homography(ground_truth_homography(b, c, s, k) * ground_truth_homography(a, b, s, k));
    CHECK((ac - composed).norm() < 1e-9);
}

TEST_CASE("lateral translation gives the similar-triangles shift") {
    const CameraIntrinsics k;
    const Mat3 H = ground_truth_homography(looking_down(0, 0, 20), looking_down(1, 0, 20), Surface{}, k);
    const Vec2 shift = apply_homography(H, Vec2(200, 200)) - Vec2(200, 200);
    CHECK(shift.x() == doctest::Approx(-300.0 * 1.0 / 20.0));
    CHECK(std::abs(shift.y()) < 1e-9);
}

TEST_CASE("non planar surfaces have no plane homography") {
    Surface s;
    s.kind = Surface::Kind::SphereCap;
    try {
        ground_truth_homography(looking_down(0, 0, 20), looking_down(1, 0, 20), s, CameraIntrinsics{});
        FAIL("expected NonPlanarSurface");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonPlanarSurface);
    }
}

TEST_CASE("projection round trip") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 400.0);
    const Pose cam = make_pose(rot_x(0.2) * rot_y(0.1), Vec3(2, 1, -20));
    for (int i = 0; i < 500; ++i) {
        const Vec2 px(u(rng), u(rng));
        const auto p = back_project(plane_scene(), cam, px);
        REQUIRE(p);
        CHECK(std::abs(p->z()) < 1e-9);
        const auto q = project(plane_scene().intrinsics, cam, *p);
        REQUIRE(q);
        CHECK((*q - px).norm() < 1e-6);
    }
}

TEST_CASE("sphere cap round trip") {
    Surface s;
    s.kind = Surface::Kind::SphereCap;
    s.sphere_radius = 60.0;
    const Scene scene{s, CameraIntrinsics{}};
    const Pose cam = looking_down(0, 0, 20);
    const Frame f = render(scene, cam);
    CHECK(f.width() == 400);
    for (const Vec2& px : {Vec2(10, 10), Vec2(200, 200), Vec2(390, 120)}) {
        const auto p = back_project(scene, cam, px);
        REQUIRE(p);
        CHECK(((*p - Vec3(0, 0, 60)).norm()) == doctest::Approx(60.0));
        CHECK((*project(scene.intrinsics, cam, *p) - px).norm() < 1e-6);
    }
}

TEST_CASE("warping by the ground truth homography reproduces the next frame") {
    const Pose a = looking_down(0, 0, 20);
    const Pose b = make_pose(rot_x(0.03) * rot_z(0.05), Vec3(0.8, -0.6, -20.5));
    const Frame fa = render(plane_scene(), a);
    const Frame fb = render(plane_scene(), b);
    const Mat3 H = ground_truth_homography(a, b, plane_scene().surface, plane_scene().intrinsics);
    cv::Mat Hcv(3, 3, CV_64F);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) Hcv.at<double>(r, c) = H(r, c);
    cv::Mat warped;
    cv::Mat valid;
    cv::warpPerspective(fa.pixels, warped, Hcv, fb.pixels.size(), cv::INTER_LINEAR);
    cv::warpPerspective(cv::Mat(fa.pixels.size(), CV_8U, cv::Scalar(255)), valid, Hcv, fb.pixels.size(),
                        cv::INTER_NEAREST);
    cv::erode(valid, valid, cv::Mat(), cv::Point(-1, -1), 2);
    cv::Mat diff;
    cv::absdiff(warped, fb.pixels, diff);
    const double mean = cv::mean(diff, valid)[0];
    CHECK(cv::countNonZero(valid) > 100000);
    CHECK(mean < 2.0);
}

TEST_CASE("highlights are saturated") {
    Surface s;
    s.highlights.push_back({100, 120, 8});
    const Scene scene{s, CameraIntrinsics{}};
    const Frame f = render(scene, looking_down(0, 0, 20));
    CHECK(f.pixels.at<std::uint8_t>(120, 100) == 255);
}

}
