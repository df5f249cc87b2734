#pragma once

// POSIX TCP transport for the wire protocol: a thread-per-connection server
// over SessionService and a ServerLink client.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

#include "arinspect/link.hpp"
#include "arinspect/session_service.hpp"
#include "arinspect/wire.hpp"

namespace arinspect::tcp {

using service::Broadcast;
using service::Bytes;
using service::ModelDescriptor;

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    /// "host:port", ":port" or "port".
    static Endpoint parse(const std::string& text) {
        Endpoint e;
        const auto colon = text.rfind(':');
        std::string port = text;
        if (colon != std::string::npos) {
            if (colon > 0) e.host = text.substr(0, colon);
            port = text.substr(colon + 1);
        }
        try {
            std::size_t used = 0;
            const long p = std::stol(port, &used);
            if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range(port);
            e.port = static_cast<std::uint16_t>(p);
        } catch (const std::logic_error&) {
            throw ValidationError("bad address '" + text + "': expected host:port");
        }
        return e;
    }

    std::string to_string() const { return host + ":" + std::to_string(port); }
};

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    ~Socket() { close(); }

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }

    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    /// Unblocks readers on other threads without releasing the descriptor.
    void shutdown() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

private:
    int fd_ = -1;
};

inline sockaddr_in resolve(const Endpoint& e) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
        throw DisconnectedError("cannot resolve host '" + e.host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}

inline Socket listen_on(const Endpoint& e) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw Error(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const auto addr = resolve(e);
    if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        throw Error("cannot bind " + e.to_string() + ": " + std::strerror(errno));
    }
    if (::listen(s.fd(), 64) != 0) throw Error(std::string("listen: ") + std::strerror(errno));
    return s;
}

inline std::uint16_t local_port(const Socket& s) {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
}

inline Socket connect_to(const Endpoint& e) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw DisconnectedError(std::string("socket: ") + std::strerror(errno));
    const auto addr = resolve(e);
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        throw DisconnectedError("cannot connect to " + e.to_string() + ": " + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
}

inline void write_all(int fd, const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    while (n > 0) {
        const auto w = ::send(fd, p, n, MSG_NOSIGNAL);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw DisconnectedError(std::string("send: ") + std::strerror(errno));
        }
        p += w;
        n -= static_cast<std::size_t>(w);
    }
}

/// Buffered reader for newline-terminated messages and raw byte runs.
class Reader {
public:
    explicit Reader(int fd) : fd_(fd) {}

    /// nullopt on timeout; DisconnectedError on EOF or error. A negative
    /// timeout blocks indefinitely.
    std::optional<std::string> line(std::chrono::milliseconds timeout = std::chrono::milliseconds(-1)) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (auto nl = buf_.find('\n'); nl != std::string::npos) {
                std::string out = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return out;
            }
            int wait = -1;
            if (timeout.count() >= 0) {
                const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                    deadline - std::chrono::steady_clock::now());
                wait = static_cast<int>(std::max<std::int64_t>(0, left.count()));
            }
            if (!fill(wait)) return std::nullopt;
        }
    }

    Bytes bytes(std::size_t n) {
        Bytes out;
        out.reserve(n);
        while (out.size() < n) {
            if (buf_.empty()) fill(-1);
            const auto take = std::min(n - out.size(), buf_.size());
            const auto* p = reinterpret_cast<const std::byte*>(buf_.data());
            out.insert(out.end(), p, p + take);
            buf_.erase(0, take);
        }
        return out;
    }

private:
    bool fill(int wait_ms) {
        pollfd pfd{fd_, POLLIN, 0};
        const int r = ::poll(&pfd, 1, wait_ms);
        if (r < 0 && errno != EINTR) throw DisconnectedError(std::string("poll: ") + std::strerror(errno));
        if (r <= 0) return false;
        char chunk[65536];
        const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n == 0) throw DisconnectedError("connection closed by peer");
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) return true;
            throw DisconnectedError(std::string("recv: ") + std::strerror(errno));
        }
        buf_.append(chunk, static_cast<std::size_t>(n));
        return true;
    }

    int fd_;
    std::string buf_;
};

// ---------------------------------------------------------------------------
// Server

class Server {
public:
    Server(service::SessionService& svc, Endpoint listen) : svc_(svc), listen_(std::move(listen)) {}
    ~Server() { stop(); }

    /// Binds and listens; throws on failure (port taken, bad address).
    void bind() {
        sock_ = listen_on(listen_);
        listen_.port = local_port(sock_);
    }

    const Endpoint& endpoint() const noexcept { return listen_; }

    /// Accept loop; returns after stop().
    void run() {
        spdlog::info("listening on {}", listen_.to_string());
        while (!stopping_) {
            pollfd pfd{sock_.fd(), POLLIN, 0};
            if (::poll(&pfd, 1, 200) <= 0) continue;
            Socket client(::accept(sock_.fd(), nullptr, nullptr));
            if (!client.valid()) continue;
            int one = 1;
            ::setsockopt(client.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            std::lock_guard lk(conns_mu_);
            reap();
            auto conn = std::make_shared<Connection>();
            conn->sock = std::move(client);
            conn->thread = std::thread([this, conn] { serve(*conn); });
            conns_.push_back(conn);
        }
        spdlog::info("server stopped");
    }

    void stop() {
        stopping_ = true;
        std::lock_guard lk(conns_mu_);
        for (auto& c : conns_) c->sock.shutdown();
        for (auto& c : conns_) {
            if (c->thread.joinable()) c->thread.join();
        }
        conns_.clear();
    }

private:
    struct Connection {
        Socket sock;
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void reap() {
        for (auto it = conns_.begin(); it != conns_.end();) {
            if ((*it)->done) {
                (*it)->thread.join();
                it = conns_.erase(it);
            } else {
                ++it;
            }
        }
    }

    void serve(Connection& conn) {
        const int fd = conn.sock.fd();
        std::mutex write_mu;
        auto send = [&](const Json& j) {
            const std::string line = j.dump() + "\n";
            std::lock_guard lk(write_mu);
            write_all(fd, line.data(), line.size());
        };
        std::string client_id;
        std::string model_id;
        std::shared_ptr<service::EventChannel> channel;
        std::thread forwarder;
        auto stop_forwarder = [&] {
            if (channel) channel->close();
            if (forwarder.joinable()) forwarder.join();
        };

        Reader reader(fd);
        try {
            while (!stopping_) {
                auto text = reader.line(std::chrono::milliseconds(500));
                if (!text) continue;
                if (text->empty()) continue;
                try {
                    const Json msg = Json::parse(*text);
                    const std::string type = json_io::get_string(msg, "type", "message");
                    if (type == "HELLO") {
                        client_id = json_io::get_string(msg, "client_id", "HELLO");
                    } else if (type == "JOIN") {
                        if (client_id.empty()) throw SessionError("send HELLO before JOIN");
                        std::optional<std::uint64_t> last;
                        if (json_io::has(msg, "last_version")) {
                            last = static_cast<std::uint64_t>(json_io::get_integer(msg, "last_version", "JOIN"));
                        }
                        stop_forwarder();
                        if (channel) svc_.leave_session(client_id, model_id, channel);
                        auto r = svc_.join_session(client_id, json_io::get_string(msg, "qr_token", "JOIN"), last);
                        model_id = r.model.model_id;
                        channel = r.events;
                        send(wire::snapshot(r));
                        spdlog::debug("{} joined {} at version {}", client_id, model_id, r.version);
                        forwarder = std::thread([&send, ch = channel, this] {
                            try {
                                while (!stopping_) {
                                    auto b = ch->pop(std::chrono::milliseconds(200));
                                    if (b) {
                                        send(wire::event(*b));
                                    } else if (ch->closed()) {
                                        if (ch->overflowed()) send(wire::error(wire::code::lagged, "broadcast buffer overflow; rejoin with last_version"));
                                        return;
                                    }
                                }
                            } catch (const std::exception&) {
                            }
                        });
                    } else if (type == "EVENT") {
                        if (model_id.empty()) throw SessionError("client has not joined a session");
                        const auto ev = sync::event_from_json(json_io::field(msg, "event", "EVENT"), "EVENT.event");
                        send(wire::ack(svc_.submit_event(client_id, model_id, ev)));
                    } else if (type == "FETCH") {
                        const auto id = json_io::get_string(msg, "model_id", "FETCH");
                        const auto off = static_cast<std::uint64_t>(json_io::get_integer(msg, "offset", "FETCH"));
                        const auto len = static_cast<std::uint64_t>(json_io::get_integer(msg, "length", "FETCH"));
                        const auto data = svc_.fetch_model(id, off, len);
                        const std::string header = wire::blob_header(id, off, data.size()).dump() + "\n";
                        std::lock_guard lk(write_mu);
                        write_all(fd, header.data(), header.size());
                        write_all(fd, data.data(), data.size());
                    } else if (type == "REGISTER") {
                        auto d = service::descriptor_from_json(json_io::field(msg, "descriptor", "REGISTER"),
                                                               "REGISTER.descriptor");
                        const Json& b = json_io::field(msg, "blob", "REGISTER");
                        auto blob = std::make_shared<service::SyntheticBlob>(
                            static_cast<std::uint64_t>(json_io::get_integer(b, "synthetic_size", "REGISTER.blob")),
                            static_cast<std::uint64_t>(json_io::get_integer(b, "seed", "REGISTER.blob")));
                        send(wire::registered(svc_.register_model(std::move(d), std::move(blob))));
                    } else {
                        throw ParseError("type", "unknown message type '" + type + "'");
                    }
                } catch (const DisconnectedError&) {
                    throw;
                } catch (const std::exception& e) {
                    spdlog::debug("request from '{}' failed: {}", client_id, e.what());
                    send(wire::error(wire::code_for(e), e.what()));
                }
            }
        } catch (const DisconnectedError&) {
        } catch (const std::exception& e) {
            spdlog::warn("connection for '{}' ended: {}", client_id, e.what());
        }
        stop_forwarder();
        if (channel) svc_.leave_session(client_id, model_id, channel);
        conn.done = true;
    }

    service::SessionService& svc_;
    Endpoint listen_;
    Socket sock_;
    std::atomic<bool> stopping_{false};
    std::mutex conns_mu_;
    std::list<std::shared_ptr<Connection>> conns_;
};

// ---------------------------------------------------------------------------
// Client

class TcpLink final : public sim::ServerLink {
public:
    TcpLink(Endpoint server, std::string client_id) : server_(std::move(server)), client_id_(std::move(client_id)) {}

    void connect() override {
        disconnect();
        sock_ = connect_to(server_);
        reader_ = std::make_unique<Reader>(sock_.fd());
        send(sock_, wire::hello(client_id_));
    }

    void disconnect() override {
        reader_.reset();
        sock_.close();
        blob_reader_.reset();
        blob_sock_.close();
    }

    bool connected() const override { return sock_.valid(); }

    sim::JoinReply join(const std::string& qr_token, std::optional<std::uint64_t> last_version) override {
        require();
        token_ = qr_token;
        send(sock_, wire::join(qr_token, last_version));
        const Json r = await("SNAPSHOT");
        sim::JoinReply out;
        out.model = service::descriptor_from_json(json_io::field(r, "model", "SNAPSHOT"), "SNAPSHOT.model");
        out.version = static_cast<std::uint64_t>(json_io::get_integer(r, "version", "SNAPSHOT"));
        if (json_io::has(r, "snapshot")) out.snapshot = r.at("snapshot");
        if (json_io::has(r, "events")) {
            for (std::size_t i = 0; i < r.at("events").size(); ++i) {
                out.missed.push_back(wire::broadcast_from_json(r.at("events")[i],
                                                               "SNAPSHOT.events[" + std::to_string(i) + "]"));
            }
        }
        // Anything stashed before the snapshot belongs to an earlier subscription.
        pending_.clear();
        return out;
    }

    service::Ack submit(const std::string&, const sync::SessionEvent& event) override {
        require();
        send(sock_, wire::submit(event));
        return wire::ack_from_json(await("ACK"));
    }

    Bytes fetch(const std::string& model_id, std::uint64_t offset, std::uint64_t length) override {
        require();
        try {
            if (!blob_sock_.valid()) {
                blob_sock_ = connect_to(server_);
                blob_reader_ = std::make_unique<Reader>(blob_sock_.fd());
            }
            send(blob_sock_, wire::fetch(model_id, offset, length));
            const auto line = blob_reader_->line();
            const Json h = Json::parse(*line);
            if (h.value("type", "") == "ERROR") wire::raise(h);
            const auto n = static_cast<std::size_t>(json_io::get_integer(h, "length", "BLOB"));
            return blob_reader_->bytes(n);
        } catch (const DisconnectedError&) {
            blob_reader_.reset();
            blob_sock_.close();
            throw;
        }
    }

    void register_synthetic(const ModelDescriptor& d, std::uint64_t seed) override {
        require();
        send(sock_, wire::register_synthetic(d, seed));
        await("REGISTERED");
    }

    std::vector<Broadcast> receive(std::uint64_t until_version, std::chrono::milliseconds timeout) override {
        require();
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        auto have = [&] { return !pending_.empty() && pending_.back().version >= until_version; };
        try {
            // Take whatever is already buffered, then wait for the target version.
            while (auto line = reader_->line(std::chrono::milliseconds(0))) handle_async(*line);
            while (!have() && until_version > 0) {
                const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                    deadline - std::chrono::steady_clock::now());
                if (left.count() <= 0) break;
                auto line = reader_->line(left);
                if (!line) break;
                handle_async(*line);
            }
        } catch (const DisconnectedError&) {
            disconnect();
        }
        std::vector<Broadcast> out;
        out.swap(pending_);
        if (lagged_) {
            lagged_ = false;
            disconnect();
        }
        return out;
    }

private:
    void require() const {
        if (!sock_.valid()) throw DisconnectedError("not connected to " + server_.to_string());
    }

    void send(Socket& s, const Json& j) {
        const std::string line = j.dump() + "\n";
        try {
            write_all(s.fd(), line.data(), line.size());
        } catch (const DisconnectedError&) {
            disconnect();
            throw;
        }
    }

    void handle_async(const std::string& line) {
        if (line.empty()) return;
        const Json j = Json::parse(line);
        const std::string type = j.value("type", "");
        if (type == "EVENT") {
            pending_.push_back(wire::broadcast_from_json(j, "EVENT"));
        } else if (type == "ERROR" && j.value("code", "") == wire::code::lagged) {
            lagged_ = true;
        }
    }

    /// Reads until a reply of `type`, stashing broadcasts; ERROR is rethrown.
    Json await(const char* type) {
        try {
            for (;;) {
                const auto line = reader_->line();
                if (!line || line->empty()) continue;
                Json j = Json::parse(*line);
                const std::string t = j.value("type", "");
                if (t == type) return j;
                if (t == "ERROR" && j.value("code", "") != wire::code::lagged) wire::raise(j);
                handle_async(*line);
            }
        } catch (const DisconnectedError&) {
            disconnect();
            throw;
        }
    }

    Endpoint server_;
    std::string client_id_;
    std::string token_;
    Socket sock_;
    std::unique_ptr<Reader> reader_;
    Socket blob_sock_;
    std::unique_ptr<Reader> blob_reader_;
    std::vector<Broadcast> pending_;
    bool lagged_ = false;
};

}  // namespace arinspect::tcp
