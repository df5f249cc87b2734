#pragma once

// Client-side view of the session service. Implemented in-process (with fault
// injection for tests) and over TCP (tcp.hpp).

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "arinspect/error.hpp"
#include "arinspect/session_service.hpp"

namespace arinspect::sim {

using service::Ack;
using service::Broadcast;
using service::Bytes;
using service::ModelDescriptor;

struct JoinReply {
    ModelDescriptor model;
    std::uint64_t version = 0;
    std::optional<Json> snapshot;
    std::vector<Broadcast> missed;
};

/// Every call may throw DisconnectedError; the link is then down until
/// connect() succeeds again.
class ServerLink {
public:
    virtual ~ServerLink() = default;

    virtual void connect() = 0;
    virtual void disconnect() = 0;
    virtual bool connected() const = 0;

    virtual JoinReply join(const std::string& qr_token, std::optional<std::uint64_t> last_version) = 0;
    virtual Ack submit(const std::string& model_id, const sync::SessionEvent& event) = 0;
    virtual Bytes fetch(const std::string& model_id, std::uint64_t offset, std::uint64_t length) = 0;
    virtual void register_synthetic(const ModelDescriptor& d, std::uint64_t seed) = 0;

    /// Broadcasts received since the last call, waiting up to `timeout` for one
    /// with version >= `until_version`.
    virtual std::vector<Broadcast> receive(std::uint64_t until_version, std::chrono::milliseconds timeout) = 0;
};

/// Injected failures, indexed by the 0-based count of calls of each kind.
struct FaultPlan {
    std::set<std::size_t> drop_submit;  // lost before reaching the server
    std::set<std::size_t> lose_ack;     // applied by the server, reply lost
    std::set<std::size_t> fail_fetch;   // connection drops mid-download
};

class InProcessLink final : public ServerLink {
public:
    InProcessLink(service::SessionService& svc, std::string client_id, FaultPlan faults = {})
        : svc_(svc), client_id_(std::move(client_id)), faults_(std::move(faults)) {}

    ~InProcessLink() override { leave(); }

    void connect() override { connected_ = true; }

    void disconnect() override {
        leave();
        connected_ = false;
    }

    bool connected() const override { return connected_; }

    JoinReply join(const std::string& qr_token, std::optional<std::uint64_t> last_version) override {
        require_connected();
        leave();
        auto r = svc_.join_session(client_id_, qr_token, last_version);
        model_id_ = r.model.model_id;
        channel_ = r.events;
        return {r.model, r.version, std::move(r.snapshot), std::move(r.missed)};
    }

    Ack submit(const std::string& model_id, const sync::SessionEvent& event) override {
        require_connected();
        const auto n = submit_calls_++;
        if (faults_.drop_submit.contains(n)) fail();
        auto ack = svc_.submit_event(client_id_, model_id, event);
        if (faults_.lose_ack.contains(n)) fail();
        return ack;
    }

    Bytes fetch(const std::string& model_id, std::uint64_t offset, std::uint64_t length) override {
        require_connected();
        const auto n = fetch_calls_++;
        if (faults_.fail_fetch.contains(n)) fail();
        return svc_.fetch_model(model_id, offset, length);
    }

    void register_synthetic(const ModelDescriptor& d, std::uint64_t seed) override {
        require_connected();
        svc_.register_model(d, std::make_shared<service::SyntheticBlob>(d.blob_size_bytes, seed));
    }

    std::vector<Broadcast> receive(std::uint64_t until_version, std::chrono::milliseconds) override {
        std::vector<Broadcast> out;
        if (!channel_) return out;
        while (auto b = channel_->try_pop()) out.push_back(std::move(*b));
        // Delivery is synchronous with apply, so nothing more can be pending.
        (void)until_version;
        if (channel_->closed()) {
            // Overflowed or replaced: the client must rejoin from its last version.
            channel_.reset();
            connected_ = false;
        }
        return out;
    }

private:
    void require_connected() const {
        if (!connected_) throw DisconnectedError("link to server is down");
    }

    [[noreturn]] void fail() {
        disconnect();
        throw DisconnectedError("injected connection failure");
    }

    void leave() {
        if (channel_) {
            svc_.leave_session(client_id_, model_id_, channel_);
            channel_.reset();
        }
    }

    service::SessionService& svc_;
    std::string client_id_;
    FaultPlan faults_;
    bool connected_ = false;
    std::string model_id_;
    std::shared_ptr<service::EventChannel> channel_;
    std::size_t submit_calls_ = 0;
    std::size_t fetch_calls_ = 0;
};

}  // namespace arinspect::sim
