#pragma once

#include "magnav/controller.hpp"
#include "magnav/geometry.hpp"

#include <optional>
#include <vector>

#include <json.hpp>

namespace magnav {

/// Unsigned angle between two image motions, radians.
double direction_error(const Vec2& desired, const Vec2& realized);

double median(std::vector<double> v);
/// Median absolute deviation from the median.
double mad(const std::vector<double>& v);

struct DirectionErrorStats {
    std::vector<double> errors;  // rad, gated ticks only
    double median = 0.0;
    double mad = 0.0;
    double peak = 0.0;
    std::size_t count() const { return errors.size(); }
    nlohmann::json to_json() const;
};

/// desired[k] is compared with realized[k]; only samples with
/// |realized| / dt >= gate (px/s) count.
DirectionErrorStats direction_error_stats(const std::vector<Vec2>& desired, const std::vector<Vec2>& realized,
                                          double dt, double gate);

struct StepResponse {
    double delay = 0.0;      // s, to 10% error reduction
    double fall_time = 0.0;  // s, 90% -> 10% of the initial error
    double travel = 0.0;     // px, initial error
    nlohmann::json to_json() const;
};

/// Trace starts at command issue. Throws NoConvergence if the error never
/// drops to 10% of its initial value.
StepResponse step_response_stats(const std::vector<double>& t, const std::vector<double>& error);

struct WeightedMedian {
    double value = 0.0;
    bool degenerate = false;  // all weights zero, unweighted median used
};

/// Smallest value whose cumulative weight reaches half the total.
/// Throws DegenerateWeights only when the input is empty.
WeightedMedian weighted_median(const std::vector<double>& values, const std::vector<double>& weights);

struct TrajectoryErrorStats {
    std::vector<double> e_p;  // per-sample distance to the reference path
    double accuracy = 0.0;    // weighted median of the pairwise means
    double precision = 0.0;   // weighted median absolute deviation
    bool degenerate = false;
    nlohmann::json to_json() const;
};

double distance_to_polyline(const Vec2& p, const std::vector<Vec2>& path);

/// Throws ConfigError with fewer than two samples or an empty path.
TrajectoryErrorStats trajectory_error_stats(const std::vector<Vec2>& samples, const std::vector<Vec2>& path);
/// Same statistics computed from precomputed per-sample errors.
TrajectoryErrorStats trajectory_error_stats(const std::vector<double>& e_p);

struct SquareStats {
    std::vector<double> sides;  // px
    double asymmetry = 0.0;     // (max - min) / mean
    double closure = 0.0;       // px, distance between start and end
    nlohmann::json to_json() const;
};

/// Side lengths of a closed path given its corner indices (first and last
/// index included).
SquareStats square_stats(const std::vector<Vec2>& positions, const std::vector<std::size_t>& corners);

struct TransientStats {
    double peak = 0.0;     // rad, within the first `window` gated samples after the step
    double settled = 0.0;  // rad, median over the second half of the segment
    nlohmann::json to_json() const;
};

/// Per-segment direction-error transients for a stepwise joystick script.
TransientStats transient_stats(const std::vector<double>& errors, std::size_t window);

/// Summary metrics recomputed from a telemetry stream. `header` carries dt and
/// the motion gate; the returned JSON has no NaN values.
nlohmann::json compute_report(const nlohmann::json& header, const std::vector<TelemetryRecord>& records);

}  // namespace magnav
