#include "magnav/metrics.hpp"
#include "magnav/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace magnav {

namespace {

nlohmann::json finite_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

bool has_event(const TelemetryRecord& r, const std::string& e) {
    return std::find(r.events.begin(), r.events.end(), e) != r.events.end();
}

std::optional<Vec2> truth_vec(const TelemetryRecord& r, const char* x, const char* y) {
    if (!r.truth.contains(x) || !r.truth.contains(y) || r.truth[x].is_null() || r.truth[y].is_null()) return std::nullopt;
    return Vec2(r.truth[x].get<double>(), r.truth[y].get<double>());
}

}  // namespace

double direction_error(const Vec2& desired, const Vec2& realized) {
    return std::abs(signed_angle(desired, realized));
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + n, v.end());
    if (v.size() % 2 == 1) return v[n];
    const double hi = v[n];
    return 0.5 * (*std::max_element(v.begin(), v.begin() + n) + hi);
}

double mad(const std::vector<double>& v) {
    const double m = median(v);
    std::vector<double> d;
    d.reserve(v.size());
    for (double x : v) d.push_back(std::abs(x - m));
    return median(d);
}

nlohmann::json DirectionErrorStats::to_json() const {
    if (errors.empty()) return {{"count", 0}, {"median_deg", nullptr}, {"mad_deg", nullptr}, {"peak_deg", nullptr}};
    return {{"count", errors.size()},
            {"median_deg", rad2deg(median)},
            {"mad_deg", rad2deg(mad)},
            {"peak_deg", rad2deg(peak)}};
}

DirectionErrorStats direction_error_stats(const std::vector<Vec2>& desired, const std::vector<Vec2>& realized,
                                          double dt, double gate) {
    if (desired.size() != realized.size())
        throw Error(ErrorCode::DimensionMismatch, "desired and realized series differ in length");
    if (!(dt > 0.0)) throw Error(ErrorCode::ConfigError, "dt must be positive");
    DirectionErrorStats s;
    for (std::size_t k = 0; k < desired.size(); ++k) {
        if (desired[k].norm() <= 0.0 || realized[k].norm() / dt < gate) continue;
        s.errors.push_back(direction_error(desired[k], realized[k]));
    }
    if (!s.errors.empty()) {
        s.median = magnav::median(s.errors);
        s.mad = magnav::mad(s.errors);
        s.peak = *std::max_element(s.errors.begin(), s.errors.end());
    }
    return s;
}

nlohmann::json StepResponse::to_json() const {
    return {{"delay_s", delay}, {"fall_time_s", fall_time}, {"travel_px", travel}};
}

StepResponse step_response_stats(const std::vector<double>& t, const std::vector<double>& error) {
    if (t.size() != error.size() || t.empty()) throw Error(ErrorCode::ConfigError, "step response needs a nonempty trace");
    StepResponse r;
    r.travel = error.front();
    const double hi = 0.9 * r.travel, lo = 0.1 * r.travel;
    std::optional<double> t90, t10;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (!t90 && error[k] <= hi) t90 = t[k];
        if (!t10 && error[k] <= lo) t10 = t[k];
    }
    if (!t10) throw Error(ErrorCode::NoConvergence, "error never fell below 10% of its initial value");
    r.delay = *t90 - t.front();
    r.fall_time = *t10 - *t90;
    return r;
}

WeightedMedian weighted_median(const std::vector<double>& values, const std::vector<double>& weights) {
    if (values.size() != weights.size()) throw Error(ErrorCode::DimensionMismatch, "values and weights differ in length");
    if (values.empty()) throw Error(ErrorCode::DegenerateWeights, "weighted median of an empty set");
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) return {median(values), true};
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    double cum = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        cum += weights[order[i]];
        // include every sample tied with the current value before testing
        if (i + 1 < order.size() && values[order[i + 1]] == values[order[i]]) continue;
        if (cum >= 0.5 * total) return {values[order[i]], false};
    }
    return {values[order.back()], false};
}

double distance_to_polyline(const Vec2& p, const std::vector<Vec2>& path) {
    if (path.empty()) throw Error(ErrorCode::ConfigError, "empty reference path");
    if (path.size() == 1) return (p - path[0]).norm();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        const Vec2 a = path[i], d = path[i + 1] - a;
        const double len2 = d.squaredNorm();
        const double u = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
        best = std::min(best, (p - (a + u * d)).norm());
    }
    return best;
}

nlohmann::json TrajectoryErrorStats::to_json() const {
    return {{"samples", e_p.size()}, {"accuracy_px", accuracy}, {"precision_px", precision}, {"degenerate_weights", degenerate}};
}

TrajectoryErrorStats trajectory_error_stats(const std::vector<double>& e_p) {
    if (e_p.size() < 2) throw Error(ErrorCode::ConfigError, "trajectory statistics need at least two samples");
    TrajectoryErrorStats s;
    s.e_p = e_p;
    std::vector<double> means, weights;
    for (std::size_t n = 1; n < e_p.size(); ++n) {
        means.push_back(0.5 * (e_p[n - 1] + e_p[n]));
        weights.push_back(std::abs(e_p[n] - e_p[n - 1]));
    }
    const WeightedMedian acc = weighted_median(means, weights);
    std::vector<double> dev;
    for (double m : means) dev.push_back(std::abs(m - acc.value));
    const WeightedMedian prec = weighted_median(dev, weights);
    s.accuracy = acc.value;
    s.precision = prec.value;
    s.degenerate = acc.degenerate;
    return s;
}

TrajectoryErrorStats trajectory_error_stats(const std::vector<Vec2>& samples, const std::vector<Vec2>& path) {
    std::vector<double> e;
    e.reserve(samples.size());
    for (const auto& p : samples) e.push_back(distance_to_polyline(p, path));
    return trajectory_error_stats(e);
}

nlohmann::json SquareStats::to_json() const {
    return {{"sides_px", sides}, {"asymmetry", asymmetry}, {"closure_px", closure}};
}

SquareStats square_stats(const std::vector<Vec2>& positions, const std::vector<std::size_t>& corners) {
    if (corners.size() < 2) throw Error(ErrorCode::ConfigError, "a closed path needs at least two corners");
    SquareStats s;
    for (std::size_t i = 0; i + 1 < corners.size(); ++i) {
        if (corners[i + 1] >= positions.size()) throw Error(ErrorCode::ConfigError, "corner index out of range");
        s.sides.push_back((positions[corners[i + 1]] - positions[corners[i]]).norm());
    }
    const double mean = std::accumulate(s.sides.begin(), s.sides.end(), 0.0) / s.sides.size();
    const auto [mn, mx] = std::minmax_element(s.sides.begin(), s.sides.end());
    s.asymmetry = mean > 0.0 ? (*mx - *mn) / mean : 0.0;
    s.closure = (positions[corners.back()] - positions[corners.front()]).norm();
    return s;
}

nlohmann::json TransientStats::to_json() const {
    return {{"peak_deg", rad2deg(peak)}, {"settled_deg", rad2deg(settled)}};
}

TransientStats transient_stats(const std::vector<double>& errors, std::size_t window) {
    TransientStats s;
    if (errors.empty()) return s;
    const std::size_t w = std::min(window, errors.size());
    s.peak = *std::max_element(errors.begin(), errors.begin() + w);
    s.settled = median(std::vector<double>(errors.begin() + errors.size() / 2, errors.end()));
    return s;
}

nlohmann::json compute_report(const nlohmann::json& header, const std::vector<TelemetryRecord>& records) {
    const double dt = header.value("dt", 0.04);
    const double gate = header.value("motion_gate", 8.0);
    nlohmann::json report;
    report["ticks"] = records.size();
    report["duration_s"] = records.empty() ? 0.0 : records.back().t - records.front().t + dt;

    nlohmann::json modes = nlohmann::json::object();
    for (const auto& r : records) modes[r.mode] = modes.value(r.mode, 0) + 1;
    report["mode_ticks"] = modes;

    // manual driving: joystick command at k-1 against the motion seen at k
    std::vector<Vec2> desired, measured, desired_t, realized_t;
    std::vector<std::size_t> manual_ticks;
    for (std::size_t k = 1; k < records.size(); ++k) {
        const auto& a = records[k - 1];
        const auto& b = records[k];
        if (a.mode != "manual" || a.ds_d.norm() <= 0.0) continue;
        manual_ticks.push_back(k);
        desired.push_back(a.ds_d);
        measured.push_back(b.ds_valid ? b.ds_hat : Vec2::Zero());
        if (auto ds = truth_vec(b, "true_ds_x", "true_ds_y")) {
            desired_t.push_back(a.ds_d);
            realized_t.push_back(*ds);
        }
    }
    nlohmann::json manual;
    manual["ticks"] = desired.size();
    const DirectionErrorStats dir = direction_error_stats(desired, measured, dt, gate);
    manual["direction_error"] = dir.to_json();
    manual["direction_error_truth"] = direction_error_stats(desired_t, realized_t, dt, gate).to_json();

    // segments of constant joystick heading (a heading change above 45 deg starts a new one)
    nlohmann::json segments = nlohmann::json::array();
    std::vector<Vec2> pos{Vec2::Zero()}, ideal{Vec2::Zero()};
    std::vector<std::size_t> corners{0};
    std::size_t seg_start = 0;
    auto close_segment = [&](std::size_t end) {
        std::vector<double> errs;
        for (std::size_t i = seg_start; i < end; ++i)
            if (measured[i].norm() / dt >= gate) errs.push_back(direction_error(desired[i], measured[i]));
        const TransientStats tr = transient_stats(errs, 10);
        nlohmann::json seg = tr.to_json();
        seg["samples"] = end - seg_start;
        seg["length_px"] = (pos[end] - pos[seg_start]).norm();
        if (errs.empty()) seg["peak_deg"] = seg["settled_deg"] = nullptr;
        segments.push_back(seg);
        corners.push_back(end);
        seg_start = end;
    };
    for (std::size_t i = 0; i < desired.size(); ++i) {
        const bool contiguous = i == 0 || manual_ticks[i] == manual_ticks[i - 1] + 1;
        if (i > 0 && (!contiguous || direction_error(desired[i - 1], desired[i]) > deg2rad(45.0))) close_segment(i);
        pos.push_back(pos.back() + measured[i]);
        ideal.push_back(ideal.back() + desired[i]);
    }
    if (!desired.empty()) close_segment(desired.size());
    manual["segments"] = segments;
    if (segments.size() >= 2) {
        std::vector<double> peaks;
        for (const auto& s : segments)
            if (!s["peak_deg"].is_null()) peaks.push_back(s["peak_deg"].get<double>());
        manual["median_step_peak_deg"] = finite_or_null(median(peaks));
        manual["path"] = square_stats(pos, corners).to_json();
    }
    if (desired.size() >= 2) {
        manual["trajectory"] = trajectory_error_stats(std::vector<Vec2>(pos.begin() + 1, pos.end()), ideal).to_json();
    }
    report["manual"] = manual;

    // automated targets: from the start event to reached / mode change
    nlohmann::json targets = nlohmann::json::array();
    for (std::size_t k = 0; k < records.size(); ++k) {
        const bool sr = has_event(records[k], "short_range_start");
        const bool lr = has_event(records[k], "long_range_start");
        if (!sr && !lr) continue;
        const std::string mode = sr ? "short_range" : "long_range";
        nlohmann::json tgt;
        tgt["mode"] = mode;
        tgt["start_tick"] = records[k].tick;
        std::vector<double> ts, es;
        std::vector<double> legs;
        bool reached = false;
        int waypoints = 0;
        std::optional<double> first_distance;
        std::size_t j = k;
        for (; j < records.size(); ++j) {
            const auto& r = records[j];
            if (j > k && (has_event(r, "short_range_start") || has_event(r, "long_range_start"))) break;
            if (r.mode != mode && !has_event(r, "reached") && !(j == k)) break;
            if (r.has_error) {
                ts.push_back(r.t);
                es.push_back(r.e.norm());
            }
            if (r.leg_start_distance) legs.push_back(*r.leg_start_distance);
            if (r.target_distance && !first_distance) first_distance = *r.target_distance;
            waypoints = std::max(waypoints, r.waypoints);
            if (has_event(r, "reached")) {
                reached = true;
                ++j;
                break;
            }
        }
        const auto& last = records[j - 1];
        tgt["ticks"] = j - k;
        tgt["reached"] = reached;
        tgt["terminal_error_px"] = es.empty() ? nlohmann::json(nullptr) : nlohmann::json(es.back());
        if (auto te = truth_vec(last, "true_err_x", "true_err_y")) tgt["terminal_error_truth_px"] = te->norm();
        tgt["waypoints"] = waypoints;
        tgt["legs_px"] = legs;
        tgt["first_distance_px"] = first_distance ? nlohmann::json(*first_distance) : nlohmann::json(nullptr);
        if (!last.halt_cause.empty()) tgt["halt_cause"] = last.halt_cause;
        if (!es.empty()) {
            try {
                tgt["step_response"] = step_response_stats(ts, es).to_json();
            } catch (const Error&) {
                tgt["step_response"] = nullptr;
            }
        }
        targets.push_back(tgt);
    }
    report["targets"] = targets;

    nlohmann::json halts = nlohmann::json::array();
    for (const auto& r : records)
        if (has_event(r, "halted")) halts.push_back({{"tick", r.tick}, {"cause", r.halt_cause}});
    report["halts"] = halts;
    return report;
}

}  // namespace magnav
