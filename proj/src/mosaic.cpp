#include "magnav/mosaic.hpp"
#include "magnav/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace magnav {

namespace {

cv::Mat to_cv(const Mat3& m) {
    cv::Mat out(3, 3, CV_64F);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.at<double>(r, c) = m(r, c);
    return out;
}

std::array<Vec2, 4> frame_corners(const Frame& f) {
    const double w = f.width() - 1.0;
    const double h = f.height() - 1.0;
    return {Vec2(0, 0), Vec2(w, 0), Vec2(w, h), Vec2(0, h)};
}

}  // namespace

Mosaic::Mosaic(Policy policy, MaskParams mask, int max_extent)
    : policy_(policy), mask_(mask), max_extent_(max_extent) {}

const Mosaic::Entry* Mosaic::find(std::int64_t frame_id) const {
    for (const auto& e : entries_)
        if (e.frame_id == frame_id) return &e;
    return nullptr;
}

void Mosaic::ensure_canvas(const MosaicBounds& needed) {
    // canvas-space box that must be covered
    double x0 = needed.min_x + origin_.x();
    double y0 = needed.min_y + origin_.y();
    double x1 = needed.max_x + origin_.x();
    double y1 = needed.max_y + origin_.y();
    int left = 0, top = 0, w = canvas_.cols, h = canvas_.rows;
    // doubling growth on the side that overflows
    while (x0 + left < 0 && w < max_extent_) { const int grow = std::min(w, max_extent_ - w); left += grow; w += grow; }
    while (y0 + top < 0 && h < max_extent_) { const int grow = std::min(h, max_extent_ - h); top += grow; h += grow; }
    while (x1 + left >= w && w < max_extent_) w += std::min(w, max_extent_ - w);
    while (y1 + top >= h && h < max_extent_) h += std::min(h, max_extent_ - h);
    if (left == 0 && top == 0 && w == canvas_.cols && h == canvas_.rows) return;

    cv::Mat canvas(h, w, CV_8U, cv::Scalar(0));
    cv::Mat owner(h, w, CV_32S, cv::Scalar(-1));
    canvas_.copyTo(canvas(cv::Rect(left, top, canvas_.cols, canvas_.rows)));
    owner_.copyTo(owner(cv::Rect(left, top, owner_.cols, owner_.rows)));
    canvas_ = canvas;
    owner_ = owner;
    origin_ += Vec2(left, top);
}

void Mosaic::paint(const Entry& e) {
    MosaicBounds box{1e300, 1e300, -1e300, -1e300};
    for (const Vec2& c : frame_corners(e.frame)) {
        const Vec3 q = e.H_to_mosaic * Vec3(c.x(), c.y(), 1.0);
        if (q.z() <= 1e-9) return;  // footprint crosses the anchor horizon
        const Vec2 p = q.head<2>() / q.z();
        box.min_x = std::min(box.min_x, p.x());
        box.min_y = std::min(box.min_y, p.y());
        box.max_x = std::max(box.max_x, p.x());
        box.max_y = std::max(box.max_y, p.y());
    }
    bounds_.min_x = std::min(bounds_.min_x, box.min_x);
    bounds_.min_y = std::min(bounds_.min_y, box.min_y);
    bounds_.max_x = std::max(bounds_.max_x, box.max_x);
    bounds_.max_y = std::max(bounds_.max_y, box.max_y);
    ensure_canvas(box);

    const cv::Rect want(cvFloor(box.min_x + origin_.x()), cvFloor(box.min_y + origin_.y()),
                        cvCeil(box.max_x - box.min_x) + 2, cvCeil(box.max_y - box.min_y) + 2);
    const cv::Rect roi = want & cv::Rect(0, 0, canvas_.cols, canvas_.rows);
    if (roi.empty()) return;

    Mat3 shift = Mat3::Identity();
    shift(0, 2) = origin_.x() - roi.x;
    shift(1, 2) = origin_.y() - roi.y;
    const cv::Mat M = to_cv(shift * e.H_to_mosaic);

    cv::Mat warped, warped_mask, valid;
    cv::warpPerspective(e.frame.pixels, warped, M, roi.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(0));
    cv::inRange(e.frame.pixels, cv::Scalar(mask_.low), cv::Scalar(mask_.high), valid);
    cv::erode(valid, valid, cv::Mat(), cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
    cv::warpPerspective(valid, warped_mask, M, roi.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(0));

    const int index = static_cast<int>(entries_.size()) - 1;
    long painted = 0;
    for (int r = 0; r < roi.height; ++r) {
        const auto* src = warped.ptr<std::uint8_t>(r);
        const auto* ok = warped_mask.ptr<std::uint8_t>(r);
        auto* dst = canvas_.ptr<std::uint8_t>(r + roi.y) + roi.x;
        auto* own = owner_.ptr<int>(r + roi.y) + roi.x;
        for (int c = 0; c < roi.width; ++c) {
            if (!ok[c]) continue;
            if (own[c] >= 0 && policy_ == Policy::FirstWrite) continue;
            dst[c] = src[c];
            own[c] = index;
            ++painted;
        }
    }
    entries_.back().painted = painted;
}

const Mosaic::Entry& Mosaic::add_frame(const Frame& frame, const HomographyEstimate& H_cur_prev, FieldAngles field) {
    Entry e;
    e.frame_id = frame.frame_id;
    e.field = field;
    e.frame = Frame{frame.pixels.clone(), frame.timestamp, frame.frame_id};

    if (entries_.empty()) {
        const int w = frame.width();
        const int h = frame.height();
        canvas_ = cv::Mat(2 * h, 2 * w, CV_8U, cv::Scalar(0));
        owner_ = cv::Mat(2 * h, 2 * w, CV_32S, cv::Scalar(-1));
        origin_ = Vec2(w / 2.0, h / 2.0);
        bounds_ = {0.0, 0.0, w - 1.0, h - 1.0};
        anchor_id_ = frame.frame_id;
        e.H_to_mosaic = Mat3::Identity();
    } else {
        if (!H_cur_prev.valid || !H_cur_prev.H.allFinite() || std::abs(H_cur_prev.H.determinant()) < 1e-12) {
            ++gaps_;
            throw Error(ErrorCode::InvalidHomography, "frame " + std::to_string(frame.frame_id) +
                                                          " skipped: no valid homography to the previous frame");
        }
        e.H_to_mosaic = normalize_homography(entries_.back().H_to_mosaic * H_cur_prev.H.inverse());
    }
    e.center_mosaic = apply_homography(e.H_to_mosaic, Vec2(frame.width() / 2.0, frame.height() / 2.0));
    entries_.push_back(std::move(e));
    paint(entries_.back());
    return entries_.back();
}

bool Mosaic::is_painted(const Vec2& target) const {
    if (entries_.empty()) return false;
    const int x = static_cast<int>(std::lround(target.x() + origin_.x()));
    const int y = static_cast<int>(std::lround(target.y() + origin_.y()));
    if (x < 0 || y < 0 || x >= owner_.cols || y >= owner_.rows) return false;
    return owner_.at<int>(y, x) >= 0;
}

std::pair<std::int64_t, Vec2> Mosaic::mosaic_to_source(const Vec2& target) const {
    if (!is_painted(target))
        throw Error(ErrorCode::UnpaintedRegion, "mosaic point is not covered by any frame");
    const int x = static_cast<int>(std::lround(target.x() + origin_.x()));
    const int y = static_cast<int>(std::lround(target.y() + origin_.y()));
    const Entry& e = entries_[owner_.at<int>(y, x)];
    return {e.frame_id, apply_homography(e.H_to_mosaic.inverse(), target)};
}

FieldAngles Mosaic::interpolate_field(const Vec2& target, int k) const {
    if (entries_.empty()) throw Error(ErrorCode::EmptyMosaic, "no frames stored in the mosaic");
    std::vector<std::pair<double, const Entry*>> near;
    near.reserve(entries_.size());
    for (const auto& e : entries_) near.emplace_back((e.center_mosaic - target).norm(), &e);
    const std::size_t n = std::min<std::size_t>(std::max(1, k), near.size());
    std::partial_sort(near.begin(), near.begin() + n, near.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
    if (near.front().first < 1e-9) return near.front().second->field;
    double sa = 0, ca = 0, sb = 0, cb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 1.0 / near[i].first;
        sa += w * std::sin(near[i].second->field.alpha);
        ca += w * std::cos(near[i].second->field.alpha);
        sb += w * std::sin(near[i].second->field.beta);
        cb += w * std::cos(near[i].second->field.beta);
    }
    return {std::atan2(sa, ca), std::atan2(sb, cb)};
}

nlohmann::json Mosaic::table_json() const {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& e : entries_) {
        nlohmann::json H = nlohmann::json::array();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) H.push_back(e.H_to_mosaic(r, c));
        frames.push_back({{"frame_id", e.frame_id}, {"H", H}, {"alpha", e.field.alpha},
                          {"beta", e.field.beta}, {"painted_px", e.painted}});
    }
    return {{"anchor_frame_id", anchor_id_},
            {"origin", {origin_.x(), origin_.y()}},
            {"canvas", {canvas_.cols, canvas_.rows}},
            {"gaps", gaps_},
            {"frames", frames}};
}

void Mosaic::export_snapshot(const std::filesystem::path& png, const std::filesystem::path& sidecar) const {
    if (!canvas_.empty()) cv::imwrite(png.string(), canvas_);
    std::ofstream out(sidecar);
    out << table_json().dump(2) << "\n";
}

}  // namespace magnav
