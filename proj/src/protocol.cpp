#include "magnav/protocol.hpp"
#include "magnav/errors.hpp"

#include <array>
#include <cmath>
#include <set>

#include <opencv2/imgproc.hpp>

namespace magnav {

namespace {

const std::set<std::string> kClientTypes = {"hello", "mode", "joystick", "target_frame", "target_mosaic", "advance", "halt"};
const std::set<std::string> kServerTypes = {"hello", "frame", "mosaic", "telemetry", "status", "error"};

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

double number(const nlohmann::json& p, const char* key) {
    if (!p.contains(key) || !p[key].is_number()) throw Error(ErrorCode::ProtocolError, std::string("payload needs numeric '") + key + "'");
    const double v = p[key].get<double>();
    if (!std::isfinite(v)) throw Error(ErrorCode::ProtocolError, std::string("'") + key + "' must be finite");
    return v;
}

}  // namespace

std::string Message::encode() const {
    return nlohmann::json{{"type", type}, {"seq", seq}, {"payload", payload}}.dump() + '\n';
}

Message Message::decode(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ProtocolError, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
        throw Error(ErrorCode::ProtocolError, "message needs a string 'type'");
    if (!j.contains("seq") || !j["seq"].is_number_integer())
        throw Error(ErrorCode::ProtocolError, "message needs an integer 'seq'");
    Message m;
    m.type = j["type"].get<std::string>();
    m.seq = j["seq"].get<std::int64_t>();
    if (j.contains("payload")) {
        if (!j["payload"].is_object()) throw Error(ErrorCode::ProtocolError, "'payload' must be an object");
        m.payload = j["payload"];
    }
    return m;
}

bool is_client_message(const std::string& type) { return kClientTypes.count(type) > 0; }
bool is_server_message(const std::string& type) { return kServerTypes.count(type) > 0; }

std::string base64_encode(const std::string& in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const unsigned v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                           static_cast<unsigned char>(in[i + 2]);
        for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(v >> s) & 63];
    }
    if (i < in.size()) {
        unsigned v = static_cast<unsigned char>(in[i]) << 16;
        if (i + 1 < in.size()) v |= static_cast<unsigned char>(in[i + 1]) << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < in.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::string base64_decode(const std::string& in) {
    std::array<int, 256> lut;
    lut.fill(-1);
    for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = i;
    if (in.size() % 4 != 0) throw Error(ErrorCode::ProtocolError, "base64 length must be a multiple of 4");
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = in[i + k];
            if (c == '=' && i + 4 == in.size() && k >= 2) {
                v[k] = 0;
                ++pad;
                continue;
            }
            if (pad > 0 || lut[static_cast<unsigned char>(c)] < 0) throw Error(ErrorCode::ProtocolError, "invalid base64");
            v[k] = lut[static_cast<unsigned char>(c)];
        }
        const unsigned w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out += static_cast<char>((w >> 16) & 255);
        if (pad < 2) out += static_cast<char>((w >> 8) & 255);
        if (pad < 1) out += static_cast<char>(w & 255);
    }
    return out;
}

std::string rle_encode(const cv::Mat& gray) {
    CV_Assert(gray.type() == CV_8UC1);
    std::string out;
    const cv::Mat m = gray.isContinuous() ? gray : gray.clone();
    const uchar* p = m.ptr<uchar>(0);
    const std::size_t n = m.total();
    for (std::size_t i = 0; i < n;) {
        std::size_t run = 1;
        while (i + run < n && run < 255 && p[i + run] == p[i]) ++run;
        out += static_cast<char>(run);
        out += static_cast<char>(p[i]);
        i += run;
    }
    return out;
}

cv::Mat rle_decode(const std::string& runs, int width, int height) {
    if (width < 0 || height < 0 || runs.size() % 2 != 0) throw Error(ErrorCode::ProtocolError, "bad run-length stream");
    cv::Mat m(height, width, CV_8UC1);
    const std::size_t n = static_cast<std::size_t>(width) * height;
    std::size_t pos = 0;
    uchar* p = m.ptr<uchar>(0);
    for (std::size_t i = 0; i < runs.size(); i += 2) {
        const std::size_t run = static_cast<unsigned char>(runs[i]);
        if (run == 0 || pos + run > n) throw Error(ErrorCode::ProtocolError, "run-length stream overflows the image");
        std::fill(p + pos, p + pos + run, static_cast<uchar>(runs[i + 1]));
        pos += run;
    }
    if (pos != n) throw Error(ErrorCode::ProtocolError, "run-length stream does not fill the image");
    return m;
}

nlohmann::json encode_image(const cv::Mat& image, int factor) {
    if (factor < 1) throw Error(ErrorCode::ConfigError, "downsampling factor must be >= 1");
    cv::Mat gray = image;
    if (image.channels() == 3) cv::cvtColor(image, gray, cv::COLOR_BGR2GRAY);
    if (gray.depth() != CV_8U) gray.convertTo(gray, CV_8U);
    cv::Mat small;
    const int w = std::max(1, gray.cols / factor), h = std::max(1, gray.rows / factor);
    if (gray.empty()) small = cv::Mat(0, 0, CV_8UC1);
    else cv::resize(gray, small, cv::Size(w, h), 0, 0, cv::INTER_AREA);
    return {{"width", small.cols},
            {"height", small.rows},
            {"factor", factor},
            {"encoding", "rle8+base64"},
            {"data", base64_encode(small.empty() ? std::string() : rle_encode(small))}};
}

cv::Mat decode_image(const nlohmann::json& payload) {
    try {
        if (payload.at("encoding") != "rle8+base64") throw Error(ErrorCode::ProtocolError, "unknown image encoding");
        return rle_decode(base64_decode(payload.at("data").get<std::string>()), payload.at("width").get<int>(),
                          payload.at("height").get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ProtocolError, std::string("bad image payload: ") + e.what());
    }
}

Session::Session(const Scenario& scenario) : scenario_(scenario) {
    sim_ = std::make_unique<Simulation>(scenario_.sim_config());
}

Message Session::protocol_error(const std::string& what, std::optional<std::int64_t> ref_seq) {
    Message m;
    m.type = "error";
    m.payload = {{"ref_seq", ref_seq ? nlohmann::json(*ref_seq) : nlohmann::json(nullptr)},
                 {"code", std::string(to_string(ErrorCode::ProtocolError))},
                 {"message", what}};
    return m;
}

nlohmann::json Session::status_payload() const {
    const auto& ctl = sim_->controller();
    nlohmann::json p = {{"mode", to_string(ctl.mode())},
                        {"calibrated", ctl.calibrated()},
                        {"tick", sim_->ticks()},
                        {"t", sim_->time()},
                        {"alpha_deg", rad2deg(ctl.field().alpha)},
                        {"beta_deg", rad2deg(ctl.field().beta)},
                        {"depth_mm", sim_->tip().insertion_depth},
                        {"mosaic_frames", ctl.mosaic().size()}};
    if (!ctl.halt_cause().empty()) p["halt_cause"] = ctl.halt_cause();
    return p;
}

nlohmann::json Session::hello_payload() const {
    const auto& in = sim_->config().intrinsics;
    return {{"server", "magnav"},
            {"protocol", kProtocolVersion},
            {"scenario", scenario_.name},
            {"width", in.width},
            {"height", in.height},
            {"dt", sim_->controller().config().dt},
            {"slow_speed", sim_->controller().config().slow_speed},
            {"fast_speed", sim_->controller().config().fast_speed}};
}

void Session::apply(const Message& in) {
    auto& ctl = sim_->controller();
    const auto& p = in.payload;
    if (in.type == "hello") return;
    if (in.type == "halt") {
        ctl.halt(p.value("cause", "operator"));
    } else if (in.type == "mode") {
        if (!p.contains("mode") || !p["mode"].is_string()) throw Error(ErrorCode::ProtocolError, "mode payload needs 'mode'");
        const std::string mode = p["mode"];
        if (p.contains("broyden")) {
            if (!p["broyden"].is_boolean()) throw Error(ErrorCode::ProtocolError, "'broyden' must be a boolean");
            ctl.set_broyden_enabled(p["broyden"].get<bool>());
        }
        if (p.contains("build_mosaic")) {
            if (!p["build_mosaic"].is_boolean()) throw Error(ErrorCode::ProtocolError, "'build_mosaic' must be a boolean");
            ctl.set_build_mosaic(p["build_mosaic"].get<bool>());
        }
        if (mode == "idle") {
            ctl.idle();
        } else if (mode == "calibrate") {
            ctl.start_calibration();
        } else if (mode == "manual") {
            ctl.set_manual(Vec2::Zero(), ctl.config().slow_speed);
        } else if (mode == "halt") {
            ctl.halt("operator");
        } else if (mode == "explore") {
            ExploreParams e;
            const std::string pat = p.value("pattern", "spiral");
            if (pat != "spiral" && pat != "raster") throw Error(ErrorCode::ProtocolError, "unknown explore pattern");
            e.pattern = pat == "raster" ? ExplorePattern::Raster : ExplorePattern::Spiral;
            if (p.contains("speed")) e.speed = number(p, "speed");
            if (p.contains("pitch")) e.pitch = number(p, "pitch");
            if (p.contains("width")) e.width = number(p, "width");
            if (p.contains("height")) e.height = number(p, "height");
            if (p.contains("duration_s")) e.duration = number(p, "duration_s");
            if (!(e.speed > 0) || !(e.pitch > 0) || !(e.duration >= 0) || !(e.width >= 0) || !(e.height >= 0))
                throw Error(ErrorCode::ProtocolError, "explore parameters out of range");
            ctl.start_explore(e);
        } else {
            throw Error(ErrorCode::ProtocolError, "unknown mode '" + mode + "'");
        }
    } else if (in.type == "joystick") {
        const Vec2 v(number(p, "x"), number(p, "y"));
        double speed = ctl.config().slow_speed;
        if (p.contains("speed")) {
            if (p["speed"] == "fast") speed = ctl.config().fast_speed;
            else if (p["speed"] == "slow") speed = ctl.config().slow_speed;
            else throw Error(ErrorCode::ProtocolError, "speed must be 'slow' or 'fast'");
        }
        if (v.norm() > 1.0 + 1e-6) throw Error(ErrorCode::ProtocolError, "joystick vector longer than 1");
        if (v.norm() < 1e-12) {
            // release: stop moving without requiring a calibration
            if (ctl.mode() == NavMode::Manual) ctl.set_manual(Vec2::Zero(), speed);
            return;
        }
        ctl.set_manual(v.normalized(), speed);
    } else if (in.type == "target_frame") {
        const Vec2 px(number(p, "x"), number(p, "y"));
        const auto& intr = sim_->config().intrinsics;
        if (px.x() < 0 || px.y() < 0 || px.x() > intr.width - 1 || px.y() > intr.height - 1)
            throw Error(ErrorCode::ProtocolError, "target outside the image");
        sim_->command_short_range(px);
    } else if (in.type == "target_mosaic") {
        sim_->command_long_range(Vec2(number(p, "x"), number(p, "y")));
    } else if (in.type == "advance") {
        sim_->advance(number(p, "mm"));
    }
}

std::vector<Message> Session::handle(const Message& in) {
    std::vector<Message> out;
    auto fail = [&](ErrorCode code, const std::string& what) {
        Message m;
        m.type = "error";
        m.payload = {{"ref_seq", in.seq}, {"code", std::string(to_string(code))}, {"message", what}};
        out.push_back(m);
        return out;
    };
    if (!is_client_message(in.type)) return fail(ErrorCode::ProtocolError, "unexpected message type '" + in.type + "'");
    if (last_client_seq_ && in.seq <= *last_client_seq_)
        return fail(ErrorCode::ProtocolError, "seq must increase (last " + std::to_string(*last_client_seq_) + ")");
    last_client_seq_ = in.seq;
    try {
        apply(in);
    } catch (const Error& e) {
        return fail(e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(ErrorCode::ProtocolError, e.what());
    }
    if (in.type == "hello") {
        Message h;
        h.type = "hello";
        h.payload = hello_payload();
        h.payload["ref_seq"] = in.seq;
        out.push_back(h);
    }
    Message s;
    s.type = "status";
    s.payload = status_payload();
    s.payload["ref_seq"] = in.seq;
    s.payload["ok"] = true;
    out.push_back(s);
    return out;
}

TelemetryRecord Session::step() { return sim_->step(); }

}  // namespace magnav
