#pragma once

#include "magnav/geometry.hpp"

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

namespace magnav {

struct CameraIntrinsics {
    double fx = 300.0;
    double fy = 300.0;
    double cx = 200.0;
    double cy = 200.0;
    int width = 400;
    int height = 400;

    Mat3 K() const;
    Vec2 center() const { return {cx, cy}; }
    static CameraIntrinsics from_json(const nlohmann::json& j);
};

/// 8-bit grayscale endoscopic image.
struct Frame {
    cv::Mat pixels;
    double timestamp = 0.0;
    std::int64_t frame_id = 0;

    int width() const { return pixels.cols; }
    int height() const { return pixels.rows; }
};

/// Saturated disc fixed in image space (specular reflection / guide light).
struct Highlight {
    double u = 0.0;
    double v = 0.0;
    double radius = 10.0;
};

struct VesselParams {
    int count = 14;
    double width_mm = 0.6;
    double contrast = 60.0;
};

struct Surface {
    enum class Kind { Plane, SphereCap };

    Kind kind = Kind::Plane;
    /// Surface frame: the surface passes through the origin with normal +z,
    /// texture coordinates are (x, y) in mm.
    Pose pose = Pose::Identity();
    /// Signed sphere radius for SphereCap; the centre sits at (0, 0, radius)
    /// in the surface frame, so positive radii are concave toward +z.
    double sphere_radius = 80.0;
    std::uint64_t texture_seed = 1;
    VesselParams vessels;
    double texture_extent_mm = 160.0;
    double texture_resolution_mm = 0.05;
    std::vector<Highlight> highlights;
    double noise_sigma = 0.0;  // gray levels, seeded by frame id

    static Surface from_json(const nlohmann::json& j);
};

/// Baked procedural texture for a surface (smooth noise with dark vessels).
class Texture {
public:
    explicit Texture(const Surface& surface);

    const cv::Mat& image() const { return image_; }
    /// Texel coordinates of a surface point (x, y) in mm.
    Vec2 texel(const Vec2& xy_mm) const;
    double resolution() const { return resolution_; }
    double extent() const { return extent_; }

private:
    cv::Mat image_;
    double resolution_;
    double extent_;
};

struct Scene {
    Surface surface;
    Texture texture;
    CameraIntrinsics intrinsics;

    Scene(Surface s, CameraIntrinsics k) : surface(std::move(s)), texture(surface), intrinsics(k) {}
};

struct RenderOptions {
    double min_coverage = 0.5;
};

/// Ray-cast the surface from `camera_pose` (camera -> S, z forward, x right,
/// y down). Throws LowCoverage when fewer than min_coverage of the rays hit.
Frame render(const Scene& scene, const Pose& camera_pose, std::int64_t frame_id = 0,
             double timestamp = 0.0, const RenderOptions& opts = {});

/// Pinhole projection of a world point; nullopt if behind the camera.
std::optional<Vec2> project(const CameraIntrinsics& k, const Pose& camera_pose, const Vec3& p_world);

/// Intersection of the pixel's viewing ray with the surface, in S.
std::optional<Vec3> back_project(const Scene& scene, const Pose& camera_pose, const Vec2& pixel);

/// Plane-induced homography carrying pixels of the camera at pose_a onto the
/// camera at pose_b, normalized with H(2,2) = 1. Throws NonPlanarSurface.
Mat3 ground_truth_homography(const Pose& pose_a, const Pose& pose_b, const Surface& surface,
                             const CameraIntrinsics& k);

/// Homography from plane coordinates (x, y, 1) in mm to pixels.
Mat3 plane_to_image(const Pose& camera_pose, const Surface& surface, const CameraIntrinsics& k);

}  // namespace magnav
