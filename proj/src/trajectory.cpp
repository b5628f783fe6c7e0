#include "magnav/errors.hpp"
#include "magnav/servo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace magnav {

namespace {

// Archimedean spiral r = c*theta: arc length from the centre.
double spiral_arc(double c, double theta) {
    return 0.5 * c * (theta * std::sqrt(1.0 + theta * theta) + std::asinh(theta));
}

Vec2 spiral_point(const ExploreParams& p, double s) {
    const double c = p.pitch / (2.0 * kPi);
    if (s <= 0.0 || c <= 0.0) return Vec2::Zero();
    // Newton on arc length, starting from the large-theta approximation
    double theta = std::sqrt(2.0 * s / c);
    for (int i = 0; i < 50; ++i) {
        const double f = spiral_arc(c, theta) - s;
        const double df = c * std::sqrt(1.0 + theta * theta);
        const double step = f / df;
        theta = std::max(0.0, theta - step);
        if (std::abs(step) < 1e-12) break;
    }
    return c * theta * Vec2(std::cos(theta), std::sin(theta));
}

struct RasterSegment {
    bool turn = false;
    Vec2 a, b;         // straight: endpoints
    Vec2 centre;       // turn: semicircle centre
    double radius = 0; // turn radius
    double side = 1;   // +1 turns on the right edge, -1 on the left
    double length = 0;
};

std::vector<RasterSegment> raster_segments(const ExploreParams& p) {
    std::vector<double> rows;
    for (double y = 0.0; y < p.height - 1e-9; y += p.pitch) rows.push_back(y);
    rows.push_back(p.height);
    std::vector<RasterSegment> segs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const bool rightward = (i % 2 == 0);
        RasterSegment s;
        s.a = Vec2(rightward ? 0.0 : p.width, rows[i]);
        s.b = Vec2(rightward ? p.width : 0.0, rows[i]);
        s.length = p.width;
        segs.push_back(s);
        if (i + 1 < rows.size()) {
            RasterSegment t;
            t.turn = true;
            t.radius = 0.5 * (rows[i + 1] - rows[i]);
            t.centre = Vec2(s.b.x(), rows[i] + t.radius);
            t.side = rightward ? 1.0 : -1.0;
            t.length = kPi * t.radius;
            segs.push_back(t);
        }
    }
    return segs;
}

Vec2 raster_point(const ExploreParams& p, double s) {
    const auto segs = raster_segments(p);
    for (const auto& seg : segs) {
        if (s <= seg.length || &seg == &segs.back()) {
            const double u = std::clamp(s, 0.0, seg.length);
            if (!seg.turn) return seg.a + (seg.b - seg.a) * (seg.length > 0 ? u / seg.length : 0.0);
            // semicircle from the top of the turn to its bottom, bulging outward
            const double phi = u / seg.radius;
            return seg.centre + seg.radius * Vec2(seg.side * std::sin(phi), -std::cos(phi));
        }
        s -= seg.length;
    }
    return Vec2::Zero();
}

}  // namespace

double explore_path_length(const ExploreParams& params) {
    if (params.pattern == ExplorePattern::Spiral) return std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (const auto& seg : raster_segments(params)) total += seg.length;
    return total;
}

Vec2 explore_trajectory(const ExploreParams& params, double t) {
    if (!(params.speed > 0.0) || !(params.pitch > 0.0))
        throw Error(ErrorCode::ConfigError, "explore speed and pitch must be positive");
    const double s = params.speed * std::max(0.0, t);
    if (params.pattern == ExplorePattern::Spiral) return spiral_point(params, s);
    return raster_point(params, s);
}

}  // namespace magnav
