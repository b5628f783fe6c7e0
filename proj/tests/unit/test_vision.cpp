#include <doctest.h>

#include "magnav/errors.hpp"
#include "magnav/scene.hpp"
#include "magnav/vision.hpp"

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

Frame gray(int value, int size = 400) {
    Frame f;
    f.pixels = cv::Mat(size, size, CV_8U, cv::Scalar(value));
    return f;
}

HomographyEstimate translation(double tx, double ty) {
    HomographyEstimate h = HomographyEstimate::identity();
    h.H(0, 2) = tx;
    h.H(1, 2) = ty;
    return h;
}

}  // namespace

TEST_SUITE("vision") {

TEST_CASE("mask_frame thresholds") {
    const MaskParams p{10, 240};
    CHECK(cv::countNonZero(mask_frame(gray(128), p)) == 400 * 400);
    CHECK(cv::countNonZero(mask_frame(gray(0), p)) == 0);
    Frame f = gray(128);
    cv::circle(f.pixels, cv::Point(200, 200), 20, cv::Scalar(255), cv::FILLED);
    const cv::Mat m = mask_frame(f, p);
    CHECK(m.at<std::uint8_t>(200, 200) == 0);
    CHECK(m.at<std::uint8_t>(20, 20) == 255);
}

TEST_CASE("identical frames give the identity") {
    const Frame f = render(plane_scene(), looking_down(0, 0, 20));
    const HomographyEstimate h = estimate_homography(f, f);
    REQUIRE(h.valid);
    CHECK((h.H - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(h.H(2, 2) == 1.0);
}

TEST_CASE("shifted pair recovers the translation") {
    const Frame a = render(plane_scene(), looking_down(0, 0, 20));
    // 300 px focal at 20 mm: 1/3 mm moves the image by 5 px
    const Frame b = render(plane_scene(), looking_down(-1.0 / 3.0, 0, 20));
    const HomographyEstimate h = estimate_homography(a, b);
    REQUIRE(h.valid);
    const Vec2 t = apply_homography(h.H, Vec2(200, 200)) - Vec2(200, 200);
    CHECK(std::abs(t.x() - 5.0) < 0.5);
    CHECK(std::abs(t.y()) < 0.5);
}

TEST_CASE("textureless frames are rejected") {
    const HomographyEstimate h = estimate_homography(gray(128), gray(128));
    CHECK_FALSE(h.valid);
}

TEST_CASE("mismatched sizes throw") {
    try {
        estimate_homography(gray(128, 400), gray(128, 300));
        FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
}

TEST_CASE("center_motion contract") {
    const Vec2 c(200, 200);
    CHECK(center_motion(HomographyEstimate::identity(), c) == Vec2::Zero());
    const Vec2 d = center_motion(translation(3, -7), c);
    CHECK(d.x() == doctest::Approx(-3.0));
    CHECK(d.y() == doctest::Approx(7.0));
    HomographyEstimate bad;
    CHECK_THROWS_AS(center_motion(bad, c), Error);
}

TEST_CASE("center_motion matches ground truth for a camera pan") {
    const Pose a = looking_down(0, 0, 20);
    const Pose b = make_pose(rot_y(deg2rad(1.0)), Vec3(0, 0, -20));
    const Frame fa = render(plane_scene(), a);
    const Frame fb = render(plane_scene(), b);
    const Mat3 Hgt = ground_truth_homography(a, b, plane_scene().surface, plane_scene().intrinsics);
    const Vec2 c = plane_scene().intrinsics.center();
    const Vec2 truth = c - apply_homography(Hgt, c);
    const HomographyEstimate h = estimate_homography(fa, fb);
    REQUIRE(h.valid);
    CHECK((center_motion(h, c) - truth).norm() < 0.5);
}

TEST_CASE("track_target") {
    const Vec2 c(200, 200);
    const Vec2 same = track_target(c, HomographyEstimate::identity(), 400, 400);
    CHECK((same - c).norm() == 0.0);
    const Vec2 moved = track_target(c, translation(-3, 4), 400, 400);
    CHECK((moved - Vec2(197, 204)).norm() < 1e-12);
    try {
        track_target(Vec2(390, 200), translation(100, 0), 400, 400);
        FAIL("expected TargetLost");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TargetLost);
    }
}

TEST_CASE("saturated blobs do not change the center motion") {
    const Pose a = looking_down(0, 0, 20);
    const Pose b = make_pose(rot_x(deg2rad(0.5)), Vec3(0.2, 0.3, -20));
    Surface s;
    // 4 discs of radius 35 px cover about 9.6% of the image
    s.highlights = {{100, 100, 35}, {300, 110, 35}, {120, 290, 35}, {290, 300, 35}};
    const Scene lit{s, CameraIntrinsics{}};
    const Vec2 c(200, 200);
    const HomographyEstimate plain = estimate_homography(render(plane_scene(), a), render(plane_scene(), b));
    const HomographyEstimate blobs = estimate_homography(render(lit, a), render(lit, b));
    REQUIRE(plain.valid);
    REQUIRE(blobs.valid);
    CHECK((center_motion(plain, c) - center_motion(blobs, c)).norm() < 1.0);
}

TEST_CASE("rendered sequence center velocity error") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Vec2 c = plane_scene().intrinsics.center();
    Pose prev = looking_down(0, 0, 20);
    Frame fprev = render(plane_scene(), prev);
    double sum = 0.0;
    const int n = 20;
    for (int i = 0; i < n; ++i) {
        const Pose cur = prev * make_pose(rot_x(deg2rad(0.5 * u(rng))) * rot_y(deg2rad(0.5 * u(rng))),
                                          Vec3(0.3 * u(rng), 0.3 * u(rng), 0.2 * u(rng)));
        const Frame fcur = render(plane_scene(), cur);
        const Mat3 Hgt = ground_truth_homography(prev, cur, plane_scene().surface, plane_scene().intrinsics);
        const HomographyEstimate h = estimate_homography(fprev, fcur);
        REQUIRE(h.valid);
        sum += (center_motion(h, c) - (c - apply_homography(Hgt, c))).norm();
        prev = cur;
        fprev = fcur;
    }
    CHECK(sum / n <= 1.5);
}

TEST_CASE("wide baseline estimate and refinement") {
    CameraIntrinsics k;
    k.fx = k.fy = 600.0;
    const Scene scene{Surface{}, k};
    const Pose a = looking_down(0, 0, 70);
    const Pose b = make_pose(rot_z(0.1), Vec3(5.0, -2.0, -70));
    const Frame fa = render(scene, a);
    const Frame fb = render(scene, b);
    const Mat3 Hgt = ground_truth_homography(a, b, scene.surface, k);
    const Vec2 c(200, 200);
    const HomographyEstimate w = estimate_homography_wide(fa, fb);
    REQUIRE(w.valid);
    CHECK((apply_homography(w.H, c) - apply_homography(Hgt, c)).norm() < 0.5);
    Mat3 rough = Hgt;
    rough(0, 2) += 4.0;
    const HomographyEstimate r = refine_homography(fa, fb, rough);
    REQUIRE(r.valid);
    CHECK((apply_homography(r.H, c) - apply_homography(Hgt, c)).norm() < 1.0);
}

}
