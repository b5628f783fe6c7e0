#include "magnav/scene.hpp"
#include "magnav/errors.hpp"

#include <algorithm>
#include <random>

#include <opencv2/imgproc.hpp>

namespace magnav {

namespace {

// Portable uniform doubles from a 64-bit engine (std distributions are
// implementation-defined, which would break cross-platform determinism).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        const double u1 = std::max(uniform(), 1e-300);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

private:
    std::mt19937_64 eng_;
};

cv::Mat smooth_noise(int size, Rng& rng) {
    cv::Mat acc(size, size, CV_32F, cv::Scalar(0));
    double amp = 1.0;
    for (int cells = 6; cells <= size / 6; cells *= 2) {
        cv::Mat grid(cells + 1, cells + 1, CV_32F);
        for (int r = 0; r <= cells; ++r)
            for (int c = 0; c <= cells; ++c) grid.at<float>(r, c) = static_cast<float>(rng.uniform(-1.0, 1.0));
        cv::Mat up;
        cv::resize(grid, up, cv::Size(size, size), 0, 0, cv::INTER_CUBIC);
        acc += up * amp;
        amp *= 0.8;
    }
    cv::Scalar mean, stddev;
    cv::meanStdDev(acc, mean, stddev);
    acc = (acc - mean[0]) * (28.0 / std::max(1e-6, stddev[0])) + 140.0;
    return acc;
}

void draw_vessels(cv::Mat& tex, const Surface& s, Rng& rng) {
    const int size = tex.rows;
    const double res = s.texture_resolution_mm;
    cv::Mat mask(size, size, CV_32F, cv::Scalar(0));
    const double step_mm = 0.5;
    for (int v = 0; v < s.vessels.count; ++v) {
        double x = rng.uniform(0.1, 0.9) * size;
        double y = rng.uniform(0.1, 0.9) * size;
        double heading = rng.uniform(0.0, 2.0 * kPi);
        double width = s.vessels.width_mm * rng.uniform(0.6, 1.6);
        const int steps = static_cast<int>(s.texture_extent_mm * 1.2 / step_mm);
        std::vector<cv::Point> pts;
        for (int i = 0; i < steps; ++i) {
            pts.emplace_back(cvRound(x * 16), cvRound(y * 16));
            heading += rng.normal() * 0.12;
            x += std::cos(heading) * step_mm / res;
            y += std::sin(heading) * step_mm / res;
            if (x < 0 || y < 0 || x >= size || y >= size) break;
            if (i > 0 && i % 60 == 0 && width > 0.2) {
                // taper and occasionally branch
                width *= 0.85;
                if (rng.uniform() < 0.5) heading += rng.uniform() < 0.5 ? 0.7 : -0.7;
            }
        }
        if (pts.size() > 1) {
            const int thick = std::max(1, static_cast<int>(std::lround(width / res)));
            cv::polylines(mask, pts, false, cv::Scalar(1.0), thick, cv::LINE_AA, 4);
        }
    }
    const double sigma = std::max(0.8, 0.25 * s.vessels.width_mm / res);
    cv::GaussianBlur(mask, mask, cv::Size(0, 0), sigma);
    tex -= mask * s.vessels.contrast;
}

Vec3 vec3_from(const nlohmann::json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

// Ray parameter of the first surface hit in the surface frame, or -1.
double intersect(const Surface& s, const Vec3& o, const Vec3& d) {
    if (s.kind == Surface::Kind::Plane) {
        if (std::abs(d.z()) < 1e-12) return -1.0;
        const double t = -o.z() / d.z();
        return t > 0.0 ? t : -1.0;
    }
    const Vec3 c(0.0, 0.0, s.sphere_radius);
    const Vec3 oc = o - c;
    const double a = d.squaredNorm();
    const double b = 2.0 * oc.dot(d);
    const double cc = oc.squaredNorm() - s.sphere_radius * s.sphere_radius;
    const double disc = b * b - 4.0 * a * cc;
    if (disc < 0.0) return -1.0;
    const double sq = std::sqrt(disc);
    const double t0 = (-b - sq) / (2.0 * a);
    const double t1 = (-b + sq) / (2.0 * a);
    if (t0 > 0.0) return t0;
    if (t1 > 0.0) return t1;
    return -1.0;
}

}  // namespace

Mat3 CameraIntrinsics::K() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

CameraIntrinsics CameraIntrinsics::from_json(const nlohmann::json& j) {
    CameraIntrinsics k;
    k.width = j.value("width", k.width);
    k.height = j.value("height", k.height);
    const double f = j.value("focal_px", 300.0);
    k.fx = j.value("fx", f);
    k.fy = j.value("fy", f);
    k.cx = j.value("cx", k.width / 2.0);
    k.cy = j.value("cy", k.height / 2.0);
    if (k.fx <= 0 || k.fy <= 0) throw Error(ErrorCode::ConfigError, "focal lengths must be > 0");
    if (k.cx < 0 || k.cy < 0 || k.cx > k.width || k.cy > k.height)
        throw Error(ErrorCode::ConfigError, "principal point outside image");
    return k;
}

Surface Surface::from_json(const nlohmann::json& j) {
    Surface s;
    const std::string kind = j.value("kind", "plane");
    if (kind == "plane") s.kind = Kind::Plane;
    else if (kind == "sphere_cap") s.kind = Kind::SphereCap;
    else throw Error(ErrorCode::ConfigError, "unknown surface kind '" + kind + "'");
    // default: wall facing -x at distance x_mm, texture x along +y, y along -z
    Mat3 R;
    R.col(0) = Vec3::UnitY();
    R.col(1) = -Vec3::UnitZ();
    R.col(2) = -Vec3::UnitX();
    Vec3 origin(j.value("distance_mm", 70.0), 0.0, 0.0);
    if (j.contains("origin_mm")) origin = vec3_from(j.at("origin_mm"));
    if (j.contains("normal")) {
        const Vec3 n = vec3_from(j.at("normal")).normalized();
        R = minimal_rotation(-Vec3::UnitX(), n) * R;
    }
    s.pose = make_pose(R, origin);
    s.sphere_radius = j.value("sphere_radius_mm", s.sphere_radius);
    s.texture_seed = j.value("texture_seed", s.texture_seed);
    s.texture_extent_mm = j.value("texture_extent_mm", s.texture_extent_mm);
    s.texture_resolution_mm = j.value("texture_resolution_mm", s.texture_resolution_mm);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    if (j.contains("vessels")) {
        const auto& v = j.at("vessels");
        s.vessels.count = v.value("count", s.vessels.count);
        s.vessels.width_mm = v.value("width_mm", s.vessels.width_mm);
        s.vessels.contrast = v.value("contrast", s.vessels.contrast);
    }
    if (j.contains("highlights")) {
        for (const auto& h : j.at("highlights"))
            s.highlights.push_back({h.at(0).get<double>(), h.at(1).get<double>(), h.at(2).get<double>()});
    }
    if (s.texture_resolution_mm <= 0 || s.texture_extent_mm <= 0)
        throw Error(ErrorCode::ConfigError, "texture extent and resolution must be > 0");
    return s;
}

Texture::Texture(const Surface& surface)
    : resolution_(surface.texture_resolution_mm), extent_(surface.texture_extent_mm) {
    const int size = static_cast<int>(std::lround(extent_ / resolution_));
    Rng rng(surface.texture_seed * 0x9E3779B97F4A7C15ull + 17);
    cv::Mat tex = smooth_noise(size, rng);
    draw_vessels(tex, surface, rng);
    // keep the texture inside the default mask band so only reflections and
    // off-surface pixels are excluded by thresholding
    cv::Mat clipped = cv::max(cv::min(tex, 225.0), 30.0);
    clipped.convertTo(image_, CV_8U);
}

Vec2 Texture::texel(const Vec2& xy) const {
    return (xy.array() + extent_ / 2.0) / resolution_ - 0.5;
}

Frame render(const Scene& scene, const Pose& camera_pose, std::int64_t frame_id, double timestamp,
             const RenderOptions& opts) {
    const auto& k = scene.intrinsics;
    const Pose T = scene.surface.pose.inverse() * camera_pose;
    const Mat3 R = T.linear();
    const Vec3 o = T.translation();

    cv::Mat map_x(k.height, k.width, CV_32F);
    cv::Mat map_y(k.height, k.width, CV_32F);
    long hits = 0;
    for (int v = 0; v < k.height; ++v) {
        float* mx = map_x.ptr<float>(v);
        float* my = map_y.ptr<float>(v);
        for (int u = 0; u < k.width; ++u) {
            const Vec3 dir = R * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
            const double t = intersect(scene.surface, o, dir);
            if (t <= 0.0) {
                mx[u] = my[u] = -1e6f;
                continue;
            }
            const Vec3 p = o + t * dir;
            const Vec2 tx = scene.texture.texel(p.head<2>());
            mx[u] = static_cast<float>(tx.x());
            my[u] = static_cast<float>(tx.y());
            ++hits;
        }
    }
    const double coverage = static_cast<double>(hits) / (static_cast<double>(k.width) * k.height);
    if (coverage < opts.min_coverage)
        throw Error(ErrorCode::LowCoverage, "surface covers only " + std::to_string(coverage * 100.0) +
                                                "% of the image");

    Frame f;
    f.frame_id = frame_id;
    f.timestamp = timestamp;
    cv::remap(scene.texture.image(), f.pixels, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_CONSTANT,
              cv::Scalar(0));

    if (scene.surface.noise_sigma > 0.0) {
        Rng rng(scene.surface.texture_seed ^ (static_cast<std::uint64_t>(frame_id) * 0xD1B54A32D192ED03ull));
        for (int v = 0; v < f.pixels.rows; ++v) {
            auto* row = f.pixels.ptr<std::uint8_t>(v);
            for (int u = 0; u < f.pixels.cols; ++u) {
                if (row[u] == 0) continue;
                const double val = row[u] + rng.normal() * scene.surface.noise_sigma;
                row[u] = static_cast<std::uint8_t>(std::clamp(std::lround(val), 1L, 255L));
            }
        }
    }
    for (const auto& h : scene.surface.highlights)
        cv::circle(f.pixels, cv::Point(cvRound(h.u), cvRound(h.v)), cvRound(h.radius), cv::Scalar(255), cv::FILLED);
    return f;
}

std::optional<Vec2> project(const CameraIntrinsics& k, const Pose& camera_pose, const Vec3& p_world) {
    const Vec3 pc = camera_pose.inverse() * p_world;
    if (pc.z() <= 0.0) return std::nullopt;
    const Vec3 q = k.K() * pc;
    return Vec2(q.x() / q.z(), q.y() / q.z());
}

std::optional<Vec3> back_project(const Scene& scene, const Pose& camera_pose, const Vec2& pixel) {
    const auto& k = scene.intrinsics;
    const Pose T = scene.surface.pose.inverse() * camera_pose;
    const Vec3 dir = T.linear() * Vec3((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
    const double t = intersect(scene.surface, T.translation(), dir);
    if (t <= 0.0) return std::nullopt;
    return scene.surface.pose * (T.translation() + t * dir);
}

Mat3 plane_to_image(const Pose& camera_pose, const Surface& surface, const CameraIntrinsics& k) {
    if (surface.kind != Surface::Kind::Plane)
        throw Error(ErrorCode::NonPlanarSurface, "plane-induced homography needs a planar surface");
    const Pose cam_from_surface = camera_pose.inverse() * surface.pose;
    Mat3 G;
    G.col(0) = cam_from_surface.linear().col(0);
    G.col(1) = cam_from_surface.linear().col(1);
    G.col(2) = cam_from_surface.translation();
    return k.K() * G;
}

Mat3 ground_truth_homography(const Pose& pose_a, const Pose& pose_b, const Surface& surface,
                             const CameraIntrinsics& k) {
    const Mat3 Ga = plane_to_image(pose_a, surface, k);
    const Mat3 Gb = plane_to_image(pose_b, surface, k);
    return normalize_homography(Gb * Ga.inverse());
}

}  // namespace magnav
