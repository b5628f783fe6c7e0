#pragma once

#include "magnav/scenario.hpp"
#include "magnav/simulation.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

namespace magnav {

constexpr int kProtocolVersion = 1;

/// One line of the wire protocol: `{"type": ..., "seq": ..., "payload": {...}}`.
struct Message {
    std::string type;
    std::int64_t seq = 0;
    nlohmann::json payload = nlohmann::json::object();

    /// Compact JSON followed by a newline.
    std::string encode() const;
    /// Throws ProtocolError on malformed JSON or a missing/invalid field.
    static Message decode(const std::string& line);
};

bool is_client_message(const std::string& type);
bool is_server_message(const std::string& type);

std::string base64_encode(const std::string& bytes);
/// Throws ProtocolError on invalid input.
std::string base64_decode(const std::string& text);

/// (count, value) byte pairs, runs of at most 255.
std::string rle_encode(const cv::Mat& gray);
/// Throws ProtocolError when the runs do not fill exactly width * height pixels.
cv::Mat rle_decode(const std::string& runs, int width, int height);

/// Grayscale, area-downsampled by `factor`, run-length encoded, base64.
nlohmann::json encode_image(const cv::Mat& image, int factor = 4);
cv::Mat decode_image(const nlohmann::json& payload);

/// Applies client commands to a simulation. Not thread safe: the owner (the
/// control loop) serializes calls to handle() and step().
class Session {
public:
    explicit Session(const Scenario& scenario);

    /// Reply to one client message: `status` on success, `error` otherwise.
    /// Both carry `ref_seq`. `hello` additionally yields a `hello` reply first.
    std::vector<Message> handle(const Message& in);
    /// Error reply for an undecodable line.
    static Message protocol_error(const std::string& what, std::optional<std::int64_t> ref_seq = std::nullopt);

    TelemetryRecord step();
    Simulation& sim() { return *sim_; }
    nlohmann::json status_payload() const;
    nlohmann::json hello_payload() const;

private:
    void apply(const Message& in);

    Scenario scenario_;
    std::unique_ptr<Simulation> sim_;
    std::optional<std::int64_t> last_client_seq_;
};

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 7878;           // 0 picks a free port
    double rate_hz = 25.0;     // 0: run ticks as fast as possible
    double frame_hz = 10.0;
    double mosaic_hz = 5.0;
    int image_factor = 4;
    bool pause_without_clients = true;
    std::size_t max_line = 1 << 20;
};

/// Line-delimited JSON over TCP. One control thread owns the session; each
/// client has a reader and a writer thread. Frames and mosaics are dropped
/// for slow clients; telemetry and replies never are.
class Server {
public:
    Server(Session& session, ServerOptions opts);
    ~Server();

    /// Binds and starts the threads. Throws BindError.
    void start();
    void stop();
    int port() const { return port_; }
    bool running() const { return running_; }
    long ticks() const { return ticks_; }

private:
    struct Client;

    void accept_loop();
    void control_loop();
    void reader_loop(std::shared_ptr<Client> c);
    void writer_loop(std::shared_ptr<Client> c);
    void broadcast(const std::string& type, const nlohmann::json& payload, bool droppable);
    void send_to(const std::shared_ptr<Client>& c, Message m, bool droppable);

    Session& session_;
    ServerOptions opts_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> running_{false};
    std::atomic<long> ticks_{0};
    std::thread accept_thread_;
    std::thread control_thread_;

    std::mutex clients_mu_;
    std::vector<std::shared_ptr<Client>> clients_;
    int next_client_id_ = 0;

    std::mutex queue_mu_;
    std::deque<std::pair<std::shared_ptr<Client>, std::string>> inbox_;
};

/// Blocking test/automation client.
class Client {
public:
    /// Throws ProtocolError when the connection fails.
    Client(const std::string& host, int port);
    ~Client();

    /// Returns the seq used.
    std::int64_t send(const std::string& type, const nlohmann::json& payload = nlohmann::json::object());
    void send_raw(const std::string& line);
    /// Next message of any type, or nullopt on timeout / disconnect.
    std::optional<Message> receive(std::chrono::milliseconds timeout);
    /// Waits for the status/error answering `seq`; other messages go to `on_other`.
    std::optional<Message> await_reply(std::int64_t seq, std::chrono::milliseconds timeout,
                                       const std::function<void(const Message&)>& on_other = {});
    /// Waits until `pred` accepts a message.
    std::optional<Message> await(const std::function<bool(const Message&)>& pred, std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
    std::int64_t seq_ = 0;
    std::string buffer_;
};

}  // namespace magnav
