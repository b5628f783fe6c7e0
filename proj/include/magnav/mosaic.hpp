#pragma once

#include "magnav/geometry.hpp"
#include "magnav/scene.hpp"
#include "magnav/vision.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

namespace magnav {

/// Orientation pair recorded with each frame (field azimuth/elevation).
struct FieldAngles {
    double alpha = 0.0;
    double beta = 0.0;
};

/// Axis-aligned box in mosaic coordinates (anchor-frame pixels).
struct MosaicBounds {
    double min_x = 0.0;
    double min_y = 0.0;
    double max_x = 0.0;
    double max_y = 0.0;
};

/// Sequentially stitched mosaic. Mosaic coordinates are the pixel coordinates
/// of the anchor frame; the canvas stores them shifted by `origin()`.
class Mosaic {
public:
    enum class Policy { FirstWrite, LastWrite };

    struct Entry {
        std::int64_t frame_id = 0;
        Mat3 H_to_mosaic = Mat3::Identity();
        FieldAngles field;
        Vec2 center_mosaic = Vec2::Zero();
        Frame frame;
        long painted = 0;
    };

    explicit Mosaic(Policy policy = Policy::FirstWrite, MaskParams mask = {}, int max_extent = 6000);

    /// Register `frame` against the most recently added frame; H_cur_prev maps
    /// that frame onto `frame`. The first call places the anchor and ignores
    /// H. Throws InvalidHomography (and counts a gap) when H is invalid.
    const Entry& add_frame(const Frame& frame, const HomographyEstimate& H_cur_prev, FieldAngles field);

    /// Frame that contributed the canvas pixel under `target`, and the target
    /// in that frame's pixel coordinates. Throws UnpaintedRegion.
    std::pair<std::int64_t, Vec2> mosaic_to_source(const Vec2& target) const;

    /// Inverse-distance blend (on the unit circle) of the field angles of the
    /// k nearest frame centres. Throws EmptyMosaic.
    FieldAngles interpolate_field(const Vec2& target, int k = 4) const;

    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    const Entry& last() const { return entries_.back(); }
    const Entry* find(std::int64_t frame_id) const;
    std::int64_t anchor_id() const { return anchor_id_; }
    int gaps() const { return gaps_; }

    bool is_painted(const Vec2& target) const;
    const cv::Mat& canvas() const { return canvas_; }
    const cv::Mat& owner() const { return owner_; }
    /// Canvas pixel of mosaic coordinate (0, 0).
    Vec2 origin() const { return origin_; }
    /// Union of the footprints of all added frames.
    MosaicBounds painted_bounds() const { return bounds_; }

    nlohmann::json table_json() const;
    /// PNG of the canvas plus a sidecar JSON frame table.
    void export_snapshot(const std::filesystem::path& png, const std::filesystem::path& sidecar) const;

private:
    void ensure_canvas(const MosaicBounds& needed);
    void paint(const Entry& e);

    Policy policy_;
    MaskParams mask_;
    int max_extent_;
    std::vector<Entry> entries_;
    std::int64_t anchor_id_ = -1;
    int gaps_ = 0;
    cv::Mat canvas_;
    cv::Mat owner_;  // CV_32S, -1 where unpainted, else index into entries_
    Vec2 origin_ = Vec2::Zero();
    MosaicBounds bounds_;
};

}  // namespace magnav
