#include "magnav/vision.hpp"
#include "magnav/errors.hpp"

#include <opencv2/calib3d.hpp>
#include <opencv2/features2d.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/video/tracking.hpp>

namespace magnav {

namespace {

cv::Mat eroded(const cv::Mat& mask, int margin) {
    if (margin <= 0) return mask;
    cv::Mat out;
    cv::erode(mask, out, cv::getStructuringElement(cv::MORPH_RECT, cv::Size(2 * margin + 1, 2 * margin + 1)),
              cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
    return out;
}

Mat3 to_eigen(const cv::Mat& m) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out(r, c) = m.at<double>(r, c);
    return out;
}

bool inside_mask(const cv::Mat& mask, const cv::Point2f& p) {
    const int x = cvRound(p.x);
    const int y = cvRound(p.y);
    return x >= 0 && y >= 0 && x < mask.cols && y < mask.rows && mask.at<std::uint8_t>(y, x) != 0;
}

// Robust fit on correspondences followed by a least-squares refit on inliers.
HomographyEstimate fit(const std::vector<cv::Point2f>& src, const std::vector<cv::Point2f>& dst,
                       std::size_t attempted, double ransac_px, const VisionOptions& opts,
                       HomographyEstimate::Method method) {
    HomographyEstimate est;
    est.method = method;
    if (src.size() < 4 || attempted == 0) return est;
    std::vector<std::uint8_t> inlier_mask;
    cv::Mat H = cv::findHomography(src, dst, cv::RANSAC, ransac_px, inlier_mask, 2000, 0.995);
    if (H.empty()) return est;
    std::vector<cv::Point2f> s_in, d_in;
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (inlier_mask[i]) {
            s_in.push_back(src[i]);
            d_in.push_back(dst[i]);
        }
    }
    if (s_in.size() >= 8) {
        cv::Mat refined = cv::findHomography(s_in, d_in, 0);
        if (!refined.empty()) H = refined;
    }
    est.H = normalize_homography(to_eigen(H));
    est.inliers = static_cast<int>(s_in.size());
    est.inlier_fraction = static_cast<double>(s_in.size()) / static_cast<double>(attempted);
    est.valid = est.H.allFinite() && est.inliers >= opts.min_inliers &&
                est.inlier_fraction >= opts.min_inlier_fraction;
    return est;
}

// Pyramidal LK with a forward-backward consistency check. `guess`, when
// non-empty, seeds the forward flow.
void track_points(const cv::Mat& a, const cv::Mat& b, const std::vector<cv::Point2f>& pts,
                  std::vector<cv::Point2f> guess, const cv::Mat& b_mask, const VisionOptions& opts,
                  std::vector<cv::Point2f>& src, std::vector<cv::Point2f>& dst) {
    const cv::Size win(opts.lk_window, opts.lk_window);
    const cv::TermCriteria crit(cv::TermCriteria::COUNT | cv::TermCriteria::EPS, 30, 0.01);
    std::vector<std::uint8_t> st_f, st_b;
    std::vector<float> err;
    int flags = 0;
    if (!guess.empty()) flags = cv::OPTFLOW_USE_INITIAL_FLOW;
    else guess = pts;
    cv::calcOpticalFlowPyrLK(a, b, pts, guess, st_f, err, win, opts.lk_levels, crit, flags);
    std::vector<cv::Point2f> back = pts;
    cv::calcOpticalFlowPyrLK(b, a, guess, back, st_b, err, win, opts.lk_levels, crit,
                             cv::OPTFLOW_USE_INITIAL_FLOW);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!st_f[i] || !st_b[i]) continue;
        const cv::Point2f d = back[i] - pts[i];
        if (d.dot(d) > opts.forward_backward_px * opts.forward_backward_px) continue;
        if (!inside_mask(b_mask, guess[i])) continue;
        src.push_back(pts[i]);
        dst.push_back(guess[i]);
    }
}

HomographyEstimate dense_fallback(const Frame& prev, const Frame& cur, const cv::Mat& prev_mask,
                                  const VisionOptions& opts) {
    HomographyEstimate est;
    est.method = HomographyEstimate::Method::DenseEcc;
    if (static_cast<std::size_t>(cv::countNonZero(prev_mask)) < prev_mask.total() / 10) return est;
    cv::Mat warp = cv::Mat::eye(3, 3, CV_32F);
    try {
        const double rho = cv::findTransformECC(prev.pixels, cur.pixels, warp, cv::MOTION_HOMOGRAPHY,
                                                cv::TermCriteria(cv::TermCriteria::COUNT | cv::TermCriteria::EPS, 60, 1e-6),
                                                prev_mask, 5);
        cv::Mat w64;
        warp.convertTo(w64, CV_64F);
        est.H = normalize_homography(to_eigen(w64));
        est.inlier_fraction = std::max(0.0, rho);
        est.valid = est.H.allFinite() && rho >= opts.min_ecc_correlation;
    } catch (const cv::Exception&) {
        est.valid = false;
    }
    return est;
}

}  // namespace

cv::Mat mask_frame(const Frame& frame, const MaskParams& params) {
    cv::Mat mask;
    cv::inRange(frame.pixels, cv::Scalar(params.low), cv::Scalar(params.high), mask);
    return mask;
}

HomographyEstimate estimate_homography(const Frame& prev, const Frame& cur, const MaskParams& mask,
                                       const VisionOptions& opts) {
    if (prev.pixels.size() != cur.pixels.size() || prev.pixels.type() != cur.pixels.type())
        throw Error(ErrorCode::DimensionMismatch, "frames differ in size or type");

    const cv::Mat prev_mask = eroded(mask_frame(prev, mask), opts.mask_margin_px);
    const cv::Mat cur_mask = eroded(mask_frame(cur, mask), opts.mask_margin_px);

    std::vector<cv::Point2f> corners;
    cv::goodFeaturesToTrack(prev.pixels, corners, opts.max_corners, opts.corner_quality,
                            opts.min_corner_distance, prev_mask, 5);
    if (static_cast<int>(corners.size()) < opts.min_features) return dense_fallback(prev, cur, prev_mask, opts);

    std::vector<cv::Point2f> src, dst;
    track_points(prev.pixels, cur.pixels, corners, {}, cur_mask, opts, src, dst);
    return fit(src, dst, corners.size(), opts.ransac_px, opts, HomographyEstimate::Method::SparseFlow);
}

HomographyEstimate estimate_homography_wide(const Frame& ref, const Frame& cur, const MaskParams& mask,
                                            const VisionOptions& opts) {
    if (ref.pixels.size() != cur.pixels.size() || ref.pixels.type() != cur.pixels.type())
        throw Error(ErrorCode::DimensionMismatch, "frames differ in size or type");
    const cv::Mat ref_mask = eroded(mask_frame(ref, mask), opts.mask_margin_px);
    const cv::Mat cur_mask = eroded(mask_frame(cur, mask), opts.mask_margin_px);

    auto orb = cv::ORB::create(opts.orb_features);
    std::vector<cv::KeyPoint> kp_r, kp_c;
    cv::Mat desc_r, desc_c;
    orb->detectAndCompute(ref.pixels, ref_mask, kp_r, desc_r);
    orb->detectAndCompute(cur.pixels, cur_mask, kp_c, desc_c);
    HomographyEstimate coarse;
    coarse.method = HomographyEstimate::Method::Features;
    if (desc_r.empty() || desc_c.empty()) return coarse;

    cv::BFMatcher matcher(cv::NORM_HAMMING);
    std::vector<std::vector<cv::DMatch>> knn;
    matcher.knnMatch(desc_r, desc_c, knn, 2);
    std::vector<cv::Point2f> src, dst;
    for (const auto& m : knn) {
        if (m.size() == 2 && m[0].distance < opts.orb_ratio * m[1].distance) {
            src.push_back(kp_r[m[0].queryIdx].pt);
            dst.push_back(kp_c[m[0].trainIdx].pt);
        }
    }
    coarse = fit(src, dst, src.size(), 3.0, opts, HomographyEstimate::Method::Features);
    if (!coarse.valid) return coarse;

    HomographyEstimate fine = refine_homography(ref, cur, coarse.H, mask, opts);
    return fine.valid ? fine : coarse;
}

HomographyEstimate refine_homography(const Frame& ref, const Frame& cur, const Mat3& H_init, const MaskParams& mask,
                                     const VisionOptions& opts) {
    if (ref.pixels.size() != cur.pixels.size() || ref.pixels.type() != cur.pixels.type())
        throw Error(ErrorCode::DimensionMismatch, "frames differ in size or type");
    HomographyEstimate out;
    if (!H_init.allFinite() || std::abs(H_init.determinant()) < 1e-12) return out;
    cv::Mat Hcv(3, 3, CV_64F);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) Hcv.at<double>(r, c) = H_init(r, c);
    Frame warped{cv::Mat(), ref.timestamp, ref.frame_id};
    cv::warpPerspective(ref.pixels, warped.pixels, Hcv, ref.pixels.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                        cv::Scalar(0));
    const HomographyEstimate residual = estimate_homography(warped, cur, mask, opts);
    if (!residual.valid) return residual;
    out = residual;
    out.H = normalize_homography(residual.H * H_init);
    out.valid = out.H.allFinite();
    return out;
}

Vec2 center_motion(const HomographyEstimate& H, const Vec2& center) {
    if (!H.valid) throw Error(ErrorCode::InvalidHomography, "center motion needs a valid homography");
    return center - apply_homography(H.H, center);
}

Vec2 track_target(const Vec2& prev_target, const HomographyEstimate& H, int width, int height, double margin) {
    if (!H.valid) throw Error(ErrorCode::InvalidHomography, "target tracking needs a valid homography");
    const Vec2 p = apply_homography(H.H, prev_target);
    if (!p.allFinite() || p.x() < -margin || p.y() < -margin || p.x() > width + margin ||
        p.y() > height + margin)
        throw Error(ErrorCode::TargetLost, "target left the field of view");
    return p;
}

}  // namespace magnav
