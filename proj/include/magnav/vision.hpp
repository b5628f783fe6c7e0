#pragma once

#include "magnav/geometry.hpp"
#include "magnav/scene.hpp"

#include <opencv2/core.hpp>

namespace magnav {

/// Pixels outside [low, high] are excluded from matching (reflections and
/// under-exposed areas).
struct MaskParams {
    int low = 15;
    int high = 235;
};

struct HomographyEstimate {
    enum class Method { None, SparseFlow, DenseEcc, Features };

    Mat3 H = Mat3::Identity();  // prev -> cur, H(2,2) == 1
    double inlier_fraction = 0.0;
    int inliers = 0;
    bool valid = false;
    Method method = Method::None;

    static HomographyEstimate identity() { return {Mat3::Identity(), 1.0, 0, true, Method::None}; }
};

struct VisionOptions {
    int max_corners = 400;
    double corner_quality = 0.005;
    double min_corner_distance = 7.0;
    int lk_window = 21;
    int lk_levels = 3;
    double forward_backward_px = 0.7;
    double ransac_px = 1.0;
    int mask_margin_px = 10;
    int min_features = 20;         // below this, fall back to dense alignment
    double min_inlier_fraction = 0.4;
    int min_inliers = 12;
    double min_ecc_correlation = 0.8;
    int orb_features = 1500;
    double orb_ratio = 0.8;
};

/// 8-bit mask, 255 where low <= pixel <= high.
cv::Mat mask_frame(const Frame& frame, const MaskParams& params);

/// Homography carrying pixels of `prev` onto `cur` from sparse optical flow on
/// masked corners, with a dense fallback on low texture. Throws
/// DimensionMismatch.
HomographyEstimate estimate_homography(const Frame& prev, const Frame& cur, const MaskParams& mask = {},
                                       const VisionOptions& opts = {});

/// Same contract for wide-baseline pairs (stored mosaic frame vs live frame):
/// binary feature matching, then flow refinement seeded by the match.
HomographyEstimate estimate_homography_wide(const Frame& ref, const Frame& cur, const MaskParams& mask = {},
                                            const VisionOptions& opts = {});

/// Polish an approximate ref -> cur homography: warp `ref` by H_init and
/// estimate the small residual with sparse flow.
HomographyEstimate refine_homography(const Frame& ref, const Frame& cur, const Mat3& H_init, const MaskParams& mask = {},
                                     const VisionOptions& opts = {});

/// Image-point motion between the two frames expressed in the current frame:
/// center - H * center. Throws InvalidHomography.
Vec2 center_motion(const HomographyEstimate& H, const Vec2& center);

/// Project a tracked target into the current frame. Throws InvalidHomography
/// or TargetLost if the result leaves the frame by more than `margin` px.
Vec2 track_target(const Vec2& prev_target, const HomographyEstimate& H, int width, int height,
                  double margin = 20.0);

}  // namespace magnav
