#include "magnav/errors.hpp"
#include "magnav/protocol.hpp"

#include <cerrno>
#include <cstring>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace magnav {

namespace {

bool send_all(int fd, const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return false;
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

}  // namespace

struct Server::Client {
    int fd = -1;
    int id = 0;
    std::int64_t seq = 0;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::pair<std::string, std::string>> outbox;  // (type, encoded line)
    std::atomic<bool> alive{true};
    std::thread reader;
    std::thread writer;
};

Server::Server(Session& session, ServerOptions opts) : session_(session), opts_(std::move(opts)) {}

Server::~Server() { stop(); }

void Server::start() {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(opts_.port);
    if (::getaddrinfo(opts_.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
        throw Error(ErrorCode::BindError, "cannot resolve " + opts_.host);
    listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (listen_fd_ < 0 || ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(listen_fd_, 8) != 0) {
        const std::string why = std::strerror(errno);
        ::freeaddrinfo(res);
        if (listen_fd_ >= 0) ::close(listen_fd_);
        listen_fd_ = -1;
        throw Error(ErrorCode::BindError, "cannot bind " + opts_.host + ":" + port + ": " + why);
    }
    ::freeaddrinfo(res);
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    control_thread_ = std::thread([this] { control_loop(); });
}

void Server::stop() {
    if (!running_.exchange(false)) return;
    if (accept_thread_.joinable()) accept_thread_.join();
    if (control_thread_.joinable()) control_thread_.join();
    std::vector<std::shared_ptr<Client>> clients;
    {
        std::lock_guard lk(clients_mu_);
        clients.swap(clients_);
    }
    for (auto& c : clients) {
        c->alive = false;
        ::shutdown(c->fd, SHUT_RDWR);
        c->cv.notify_all();
        if (c->reader.joinable()) c->reader.join();
        if (c->writer.joinable()) c->writer.join();
        ::close(c->fd);
    }
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
}

void Server::accept_loop() {
    while (running_) {
        pollfd p{listen_fd_, POLLIN, 0};
        if (::poll(&p, 1, 50) <= 0) continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        auto c = std::make_shared<Client>();
        c->fd = fd;
        {
            std::lock_guard lk(clients_mu_);
            c->id = next_client_id_++;
            clients_.push_back(c);
        }
        c->reader = std::thread([this, c] { reader_loop(c); });
        c->writer = std::thread([this, c] { writer_loop(c); });
    }
}

void Server::reader_loop(std::shared_ptr<Client> c) {
    std::string buf;
    bool discarding = false;
    char chunk[4096];
    while (running_ && c->alive) {
        pollfd p{c->fd, POLLIN, 0};
        const int r = ::poll(&p, 1, 50);
        if (r == 0) continue;
        if (r < 0 && errno == EINTR) continue;
        const ssize_t n = r > 0 ? ::recv(c->fd, chunk, sizeof chunk, 0) : -1;
        if (n <= 0) {
            c->alive = false;
            c->cv.notify_all();
            break;
        }
        buf.append(chunk, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = buf.find('\n')) != std::string::npos) {
            std::string line = buf.substr(0, nl);
            buf.erase(0, nl + 1);
            if (discarding) {
                discarding = false;
                continue;
            }
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            std::lock_guard lk(queue_mu_);
            inbox_.emplace_back(c, std::move(line));
        }
        if (buf.size() > opts_.max_line) {
            buf.clear();
            discarding = true;
            send_to(c, Session::protocol_error("line exceeds " + std::to_string(opts_.max_line) + " bytes"), false);
        }
    }
}

void Server::writer_loop(std::shared_ptr<Client> c) {
    while (true) {
        std::pair<std::string, std::string> item;
        {
            std::unique_lock lk(c->mu);
            c->cv.wait_for(lk, std::chrono::milliseconds(100),
                           [&] { return !c->outbox.empty() || !c->alive || !running_; });
            if (c->outbox.empty()) {
                if (!c->alive || !running_) return;
                continue;
            }
            item = std::move(c->outbox.front());
            c->outbox.pop_front();
        }
        if (!send_all(c->fd, item.second)) {
            c->alive = false;
            return;
        }
    }
}

void Server::send_to(const std::shared_ptr<Client>& c, Message m, bool droppable) {
    if (!c->alive) return;
    std::lock_guard lk(c->mu);
    if (droppable) {
        // a lagging client only ever has the newest image of each kind queued
        for (auto it = c->outbox.begin(); it != c->outbox.end();)
            it = it->first == m.type ? c->outbox.erase(it) : std::next(it);
    }
    m.seq = ++c->seq;
    c->outbox.emplace_back(m.type, m.encode());
    c->cv.notify_one();
}

void Server::broadcast(const std::string& type, const nlohmann::json& payload, bool droppable) {
    std::vector<std::shared_ptr<Client>> clients;
    {
        std::lock_guard lk(clients_mu_);
        clients = clients_;
    }
    Message m;
    m.type = type;
    m.payload = payload;
    for (auto& c : clients) send_to(c, m, droppable);
}

void Server::control_loop() {
    using clock = std::chrono::steady_clock;
    auto next = clock::now();
    double last_frame = -1e9, last_mosaic = -1e9;
    std::size_t mosaic_frames = 0;
    while (running_) {
        bool any_client = false;
        {
            std::lock_guard lk(clients_mu_);
            for (auto it = clients_.begin(); it != clients_.end();) {
                if (!(*it)->alive) {
                    auto c = *it;
                    it = clients_.erase(it);
                    ::shutdown(c->fd, SHUT_RDWR);
                    c->cv.notify_all();
                    if (c->reader.joinable()) c->reader.join();
                    if (c->writer.joinable()) c->writer.join();
                    ::close(c->fd);
                } else {
                    ++it;
                }
            }
            any_client = !clients_.empty();
        }
        if (opts_.pause_without_clients && !any_client) {
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
            next = clock::now();
            continue;
        }

        std::deque<std::pair<std::shared_ptr<Client>, std::string>> inbox;
        {
            std::lock_guard lk(queue_mu_);
            inbox.swap(inbox_);
        }
        for (auto& [c, line] : inbox) {
            std::vector<Message> replies;
            try {
                replies = session_.handle(Message::decode(line));
            } catch (const Error& e) {
                replies.push_back(Session::protocol_error(e.what()));
            }
            for (auto& r : replies) send_to(c, r, false);
        }

        TelemetryRecord rec;
        try {
            rec = session_.step();
        } catch (const Error& e) {
            session_.sim().controller().halt(std::string(to_string(e.code())));
            broadcast("error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}, false);
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
            continue;
        }
        ++ticks_;
        broadcast("telemetry", rec.to_json(), false);

        Simulation& sim = session_.sim();
        if (opts_.frame_hz > 0 && rec.t - last_frame >= 1.0 / opts_.frame_hz - 1e-9) {
            last_frame = rec.t;
            nlohmann::json p = encode_image(sim.last_frame().pixels, opts_.image_factor);
            p["frame_id"] = sim.last_frame().frame_id;
            p["t"] = rec.t;
            broadcast("frame", p, true);
        }
        const Mosaic& mosaic = sim.controller().mosaic();
        if (opts_.mosaic_hz > 0 && mosaic.size() != mosaic_frames && rec.t - last_mosaic >= 1.0 / opts_.mosaic_hz - 1e-9) {
            last_mosaic = rec.t;
            mosaic_frames = mosaic.size();
            nlohmann::json p = encode_image(mosaic.canvas(), opts_.image_factor);
            p["origin"] = {mosaic.origin().x(), mosaic.origin().y()};
            p["frames"] = mosaic.size();
            if (auto H = sim.controller().view_to_mosaic()) {
                const auto& in = sim.config().intrinsics;
                nlohmann::json corners = nlohmann::json::array();
                for (const Vec2& q : {Vec2(0, 0), Vec2(in.width, 0), Vec2(in.width, in.height), Vec2(0, in.height)}) {
                    const Vec2 m = apply_homography(*H, q);
                    corners.push_back({m.x(), m.y()});
                }
                p["view_corners"] = corners;
            }
            broadcast("mosaic", p, true);
        }

        if (opts_.rate_hz > 0) {
            next += std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / opts_.rate_hz));
            std::this_thread::sleep_until(next);
        }
    }
}

Client::Client(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
        throw Error(ErrorCode::ProtocolError, "cannot resolve " + host);
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
        if (fd_ >= 0) ::close(fd_);
        throw Error(ErrorCode::ProtocolError, "cannot connect to " + host + ":" + std::to_string(port));
    }
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Client::~Client() {
    if (fd_ >= 0) ::close(fd_);
}

std::int64_t Client::send(const std::string& type, const nlohmann::json& payload) {
    Message m;
    m.type = type;
    m.seq = ++seq_;
    m.payload = payload;
    send_raw(m.encode());
    return m.seq;
}

void Client::send_raw(const std::string& line) {
    if (!send_all(fd_, line)) throw Error(ErrorCode::ProtocolError, "connection closed");
}

std::optional<Message> Client::receive(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            const std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return Message::decode(line);
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        pollfd p{fd_, POLLIN, 0};
        const int r = ::poll(&p, 1, static_cast<int>(left.count()));
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) return std::nullopt;
        char chunk[65536];
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n <= 0) return std::nullopt;
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

std::optional<Message> Client::await_reply(std::int64_t seq, std::chrono::milliseconds timeout,
                                           const std::function<void(const Message&)>& on_other) {
    return await(
        [&](const Message& m) {
            const bool reply = (m.type == "status" || m.type == "error") && m.payload.contains("ref_seq") &&
                               m.payload["ref_seq"] == seq;
            if (!reply && on_other) on_other(m);
            return reply;
        },
        timeout);
}

std::optional<Message> Client::await(const std::function<bool(const Message&)>& pred, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        auto m = receive(left);
        if (!m) return std::nullopt;
        if (pred(*m)) return m;
    }
}

}  // namespace magnav
