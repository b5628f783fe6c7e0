#include "magnav/magnetics.hpp"
#include "magnav/errors.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace magnav {

namespace {

void refresh_angles(FieldState& f) {
    const Vec3 d = f.b / f.magnitude;
    f.alpha = std::atan2(d.y(), d.x());
    f.beta = -std::asin(std::clamp(d.z(), -1.0, 1.0));
}

Mat3 mat3_from_json(const nlohmann::json& rows) {
    if (!rows.is_array() || rows.size() != 3)
        throw Error(ErrorCode::ConfigError, "actuation matrix needs 3 rows");
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        if (!rows[r].is_array() || rows[r].size() != 3)
            throw Error(ErrorCode::ConfigError, "actuation matrix row needs 3 entries");
        for (int c = 0; c < 3; ++c) m(r, c) = rows[r][c].get<double>();
    }
    return m;
}

}  // namespace

FieldState field_from_angles(double magnitude, double alpha, double beta) {
    FieldState f;
    f.magnitude = magnitude;
    f.frame = rot_z(alpha) * rot_y(beta);
    f.b = magnitude * f.frame.col(0);
    refresh_angles(f);
    return f;
}

FieldState rotate_field(const FieldState& f, const FieldRotation& dq, RotationOrder order) {
    FieldState out = f;
    if (order == RotationOrder::YThenZ)
        out.frame = f.frame * rot_y(dq.beta) * rot_z(dq.alpha);
    else
        out.frame = f.frame * rot_z(dq.alpha) * rot_y(dq.beta);
    // re-orthonormalize so long runs do not accumulate drift
    Eigen::Quaterniond q(out.frame);
    out.frame = q.normalized().toRotationMatrix();
    out.b = f.magnitude * out.frame.col(0);
    refresh_angles(out);
    return out;
}

FieldState point_field(const FieldState& f, double alpha, double beta) {
    const Vec3 target = rot_z(alpha) * rot_y(beta) * Vec3::UnitX();
    FieldState out = f;
    out.frame = minimal_rotation(f.direction(), target) * f.frame;
    out.b = f.magnitude * out.frame.col(0);
    refresh_angles(out);
    return out;
}

Vec3 solve_currents(const ActuationModel& model, const Vec3& b_des, const SolveOptions& opts) {
    Eigen::JacobiSVD<Mat3> svd(model.A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (sv(2) <= 0.0 || sv(0) / sv(2) > opts.max_condition) {
        std::ostringstream os;
        os << "actuation matrix condition number " << (sv(2) > 0 ? sv(0) / sv(2) : INFINITY)
           << " exceeds " << opts.max_condition;
        throw Error(ErrorCode::SingularActuation, os.str());
    }
    Vec3 inv_sv;
    for (int i = 0; i < 3; ++i) inv_sv(i) = 1.0 / sv(i);
    const Vec3 currents = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose() * b_des;
    const double peak = currents.cwiseAbs().maxCoeff();
    if (peak > model.i_max) {
        std::ostringstream os;
        os << "coil current " << peak << " A exceeds limit " << model.i_max << " A";
        throw CurrentLimitError(model.i_max / peak, os.str());
    }
    return currents;
}

ActuationMap::ActuationMap(std::vector<Sample> samples, double i_max)
    : samples_(std::move(samples)), i_max_(i_max) {
    if (samples_.empty()) throw Error(ErrorCode::ConfigError, "actuation map has no samples");
}

ActuationMap ActuationMap::synthetic() {
    // Gains in mT/A at the coil face; decay ~ 1 / (1 + (d/d0)^3).
    const Mat3 face_gain = (Mat3() << 1.10, 0.08, -0.05,
                                      0.06, 0.95, 0.07,
                                     -0.04, 0.09, 1.00).finished();
    constexpr double d0 = 120.0;
    std::vector<Sample> samples;
    for (double x = 50.0; x <= 300.0; x += 25.0) {
        for (double y : {-100.0, 0.0, 100.0}) {
            for (double z : {-100.0, 0.0, 100.0}) {
                const Vec3 p(x, y, z);
                const double d = p.norm();
                const double g = 1.0 / (1.0 + std::pow(d / d0, 3.0));
                Mat3 A = face_gain * g;
                // mild lateral coupling that grows off-axis
                A(0, 1) += 0.002 * y / 100.0 * g;
                A(2, 0) += 0.002 * z / 100.0 * g;
                samples.push_back({p, A});
            }
        }
    }
    return ActuationMap(std::move(samples), 80.0);
}

ActuationMap ActuationMap::from_json(const nlohmann::json& j) {
    std::vector<Sample> samples;
    if (!j.contains("grid") || !j.at("grid").is_array())
        throw Error(ErrorCode::ConfigError, "actuation file needs a 'grid' array");
    for (const auto& e : j.at("grid")) {
        const auto& p = e.at("position");
        samples.push_back({Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()),
                           mat3_from_json(e.at("A"))});
    }
    return ActuationMap(std::move(samples), j.value("i_max", 60.0));
}

ActuationMap ActuationMap::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open actuation file " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("actuation file: ") + e.what());
    }
}

nlohmann::json ActuationMap::to_json() const {
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& s : samples_) {
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < 3; ++r) rows.push_back({s.A(r, 0), s.A(r, 1), s.A(r, 2)});
        grid.push_back({{"position", {s.position.x(), s.position.y(), s.position.z()}}, {"A", rows}});
    }
    return {{"i_max", i_max_}, {"grid", grid}};
}

ActuationModel ActuationMap::model_at(const Vec3& position) const {
    ActuationModel m;
    m.position = position;
    m.i_max = i_max_;
    // k nearest samples, inverse-distance weights; exact on a sample point.
    std::vector<std::pair<double, const Sample*>> dist;
    dist.reserve(samples_.size());
    for (const auto& s : samples_) dist.emplace_back((s.position - position).norm(), &s);
    const std::size_t k = std::min<std::size_t>(8, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
    if (dist.front().first < 1e-9) {
        m.A = dist.front().second->A;
        return m;
    }
    Mat3 acc = Mat3::Zero();
    double wsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double w = 1.0 / dist[i].first;
        acc += w * dist[i].second->A;
        wsum += w;
    }
    m.A = acc / wsum;
    return m;
}

double FieldCapMap::cap_at(double d) const {
    if (table.empty()) return 0.0;
    if (d <= table.front().first) return table.front().second;
    if (d >= table.back().first) return table.back().second;
    for (std::size_t i = 1; i < table.size(); ++i) {
        if (d <= table[i].first) {
            const auto [d0, c0] = table[i - 1];
            const auto [d1, c1] = table[i];
            return c0 + (c1 - c0) * (d - d0) / (d1 - d0);
        }
    }
    return table.back().second;
}

FieldCapMap FieldCapMap::from_json(const nlohmann::json& j) {
    FieldCapMap caps;
    if (j.contains("table")) {
        caps.table.clear();
        for (const auto& row : j.at("table"))
            caps.table.emplace_back(row.at(0).get<double>(), row.at(1).get<double>());
        std::sort(caps.table.begin(), caps.table.end());
    }
    if (j.contains("box_min")) {
        const auto& b = j.at("box_min");
        caps.box_min = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()};
    }
    if (j.contains("box_max")) {
        const auto& b = j.at("box_max");
        caps.box_max = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()};
    }
    return caps;
}

bool check_field_feasible(const Vec3& position, double magnitude, const FieldCapMap& caps) {
    if ((position.array() < caps.box_min.array()).any() ||
        (position.array() > caps.box_max.array()).any()) {
        std::ostringstream os;
        os << "position (" << position.transpose() << ") mm outside workspace box";
        throw Error(ErrorCode::OutOfWorkspace, os.str());
    }
    return magnitude > 0.0 && magnitude <= caps.cap_at(position.norm());
}

}  // namespace magnav
