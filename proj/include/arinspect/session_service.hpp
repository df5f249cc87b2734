#pragma once

// Model registry (QR token -> model descriptor + blob), ranged blob reads, and
// per-model sessions: serialized event intake through the sync engine, an
// append-only event log written before acknowledging, periodic snapshots, and
// ordered broadcast to every joined client.
//
// On-disk layout under the data directory:
//   registry.json                     descriptors and blob references
//   blobs/<sha256>                    uploaded model bytes, content-addressed
//   sessions/<model_id>/events.ndjson {"version":N,"event":{...}} per line
//   sessions/<model_id>/snapshot.json latest engine snapshot

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unistd.h>
#include <unordered_map>
#include <utility>
#include <vector>

#include "arinspect/content_hash.hpp"
#include "arinspect/error.hpp"
#include "arinspect/json_io.hpp"
#include "arinspect/sync_engine.hpp"

namespace arinspect::service {

namespace fs = std::filesystem;
using Bytes = std::vector<std::byte>;

inline constexpr std::int64_t kMaxPolygons = 400'000;
inline constexpr std::int64_t kMaxBlobBytes = 800'000'000;

// ---------------------------------------------------------------------------
// Blobs

class Blob {
public:
    virtual ~Blob() = default;
    virtual std::uint64_t size() const = 0;
    /// Bytes [offset, offset + length) clipped to the end of the blob.
    virtual Bytes read(std::uint64_t offset, std::uint64_t length) const = 0;
    virtual std::string content_hash() const = 0;
    /// Registry entry; stored blobs are re-opened from blobs/<hash>.
    virtual Json describe() const = 0;
};

class MemoryBlob final : public Blob {
public:
    explicit MemoryBlob(Bytes data) : data_(std::move(data)) {
        hash_ = Sha256().update(std::span<const std::byte>(data_)).hex();
    }

    static std::shared_ptr<MemoryBlob> from_string(std::string_view s) {
        Bytes b(s.size());
        std::memcpy(b.data(), s.data(), s.size());
        return std::make_shared<MemoryBlob>(std::move(b));
    }

    std::uint64_t size() const override { return data_.size(); }
    Bytes read(std::uint64_t offset, std::uint64_t length) const override {
        if (offset >= data_.size()) return {};
        const auto end = offset + std::min<std::uint64_t>(length, data_.size() - offset);
        return Bytes(data_.begin() + static_cast<std::ptrdiff_t>(offset),
                     data_.begin() + static_cast<std::ptrdiff_t>(end));
    }
    std::string content_hash() const override { return hash_; }
    Json describe() const override { return Json{{"kind", "stored"}, {"sha256", hash_}}; }
    const Bytes& data() const noexcept { return data_; }

private:
    Bytes data_;
    std::string hash_;
};

/// Deterministic pseudo-random bytes of a given size, generated on read. Stands
/// in for multi-hundred-megabyte meshes in simulations.
class SyntheticBlob final : public Blob {
public:
    SyntheticBlob(std::uint64_t size, std::uint64_t seed) : size_(size), seed_(seed) {}

    std::uint64_t size() const override { return size_; }

    Bytes read(std::uint64_t offset, std::uint64_t length) const override {
        if (offset >= size_) return {};
        const auto n = std::min<std::uint64_t>(length, size_ - offset);
        Bytes out(n);
        std::uint64_t pos = offset;
        std::size_t i = 0;
        while (i < n) {
            const std::uint64_t word = mix(pos / 8);
            const auto skip = static_cast<std::size_t>(pos % 8);
            const auto take = std::min<std::size_t>(8 - skip, n - i);
            for (std::size_t k = 0; k < take; ++k) {
                out[i + k] = static_cast<std::byte>((word >> (8 * (skip + k))) & 0xffu);
            }
            i += take;
            pos += take;
        }
        return out;
    }

    std::string content_hash() const override {
        return sha256_hex("synthetic:" + std::to_string(size_) + ":" + std::to_string(seed_));
    }

    Json describe() const override {
        return Json{{"kind", "synthetic"}, {"size", size_}, {"seed", seed_}};
    }

private:
    std::uint64_t mix(std::uint64_t i) const {
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * (i + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t size_;
    std::uint64_t seed_;
};

class FileBlob final : public Blob {
public:
    FileBlob(fs::path path, std::string hash) : path_(std::move(path)), hash_(std::move(hash)) {
        size_ = fs::file_size(path_);
    }

    std::uint64_t size() const override { return size_; }
    Bytes read(std::uint64_t offset, std::uint64_t length) const override {
        if (offset >= size_) return {};
        const auto n = std::min<std::uint64_t>(length, size_ - offset);
        Bytes out(n);
        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::uint64_t>(in.gcount()) != n) throw Error("short read from " + path_.string());
        return out;
    }
    std::string content_hash() const override { return hash_; }
    Json describe() const override { return Json{{"kind", "stored"}, {"sha256", hash_}}; }

private:
    fs::path path_;
    std::string hash_;
    std::uint64_t size_ = 0;
};

// ---------------------------------------------------------------------------
// Descriptors

struct ModelDescriptor {
    std::string model_id;
    std::string qr_token;
    std::int64_t blob_size_bytes = 0;
    std::int64_t polygon_count = 0;
    std::string display_name;
    std::string dataset_ref;

    friend bool operator==(const ModelDescriptor&, const ModelDescriptor&) = default;
};

inline void validate_descriptor(const ModelDescriptor& d) {
    if (d.qr_token.empty()) throw ValidationError("model descriptor needs a qr_token");
    if (d.polygon_count < 0) throw ValidationError("polygon_count must be >= 0");
    if (d.blob_size_bytes < 0) throw ValidationError("blob_size_bytes must be >= 0");
    if (d.polygon_count > kMaxPolygons) {
        throw LimitExceededError("model has " + std::to_string(d.polygon_count) +
                                 " polygons; the limit is " + std::to_string(kMaxPolygons));
    }
    if (d.blob_size_bytes > kMaxBlobBytes) {
        throw LimitExceededError("model is " + std::to_string(d.blob_size_bytes) +
                                 " bytes; the limit is " + std::to_string(kMaxBlobBytes));
    }
}

inline Json descriptor_to_json(const ModelDescriptor& d) {
    Json j = Json::object();
    j["model_id"] = d.model_id;
    j["qr_token"] = d.qr_token;
    j["blob_size_bytes"] = d.blob_size_bytes;
    j["polygon_count"] = d.polygon_count;
    j["display_name"] = d.display_name;
    j["dataset_ref"] = d.dataset_ref;
    return j;
}

inline ModelDescriptor descriptor_from_json(const Json& j, const std::string& path) {
    ModelDescriptor d;
    d.model_id = json_io::has(j, "model_id") ? json_io::get_string(j, "model_id", path) : "";
    d.qr_token = json_io::get_string(j, "qr_token", path);
    d.blob_size_bytes = json_io::get_integer(j, "blob_size_bytes", path);
    d.polygon_count = json_io::get_integer(j, "polygon_count", path);
    d.display_name = json_io::has(j, "display_name") ? json_io::get_string(j, "display_name", path) : "";
    d.dataset_ref = json_io::has(j, "dataset_ref") ? json_io::get_string(j, "dataset_ref", path) : "";
    return d;
}

// ---------------------------------------------------------------------------
// Broadcast

struct Ack {
    std::string event_id;
    std::uint64_t version = 0;
    /// Marker id for AddMarker, record id for AppendRecord, else 0.
    std::int64_t assigned_id = 0;
};

struct Broadcast {
    std::uint64_t version = 0;
    sync::SessionEvent event;
};

inline std::int64_t assigned_id_of(const sync::SessionEvent& e) {
    if (const auto* a = std::get_if<sync::AddMarker>(&e.payload)) return a->marker_id;
    if (const auto* r = std::get_if<sync::AppendRecord>(&e.payload)) return r->record.id;
    return 0;
}

/// Bounded per-client queue. A push into a full queue closes it and flags
/// overflow; the client then rejoins with its last version.
class EventChannel {
public:
    explicit EventChannel(std::size_t capacity) : capacity_(capacity) {}

    bool push(Broadcast b) {
        {
            std::lock_guard lk(mu_);
            if (closed_) return false;
            if (items_.size() >= capacity_) {
                overflowed_ = true;
                closed_ = true;
                cv_.notify_all();
                return false;
            }
            items_.push_back(std::move(b));
        }
        cv_.notify_one();
        return true;
    }

    std::optional<Broadcast> try_pop() {
        std::lock_guard lk(mu_);
        if (items_.empty()) return std::nullopt;
        auto b = std::move(items_.front());
        items_.pop_front();
        return b;
    }

    /// Blocks until an item arrives, the channel closes, or the timeout passes.
    std::optional<Broadcast> pop(std::chrono::milliseconds timeout) {
        std::unique_lock lk(mu_);
        cv_.wait_for(lk, timeout, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        auto b = std::move(items_.front());
        items_.pop_front();
        return b;
    }

    void close() {
        std::lock_guard lk(mu_);
        closed_ = true;
        cv_.notify_all();
    }

    bool closed() const {
        std::lock_guard lk(mu_);
        return closed_;
    }

    bool overflowed() const {
        std::lock_guard lk(mu_);
        return overflowed_;
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Broadcast> items_;
    std::size_t capacity_;
    bool closed_ = false;
    bool overflowed_ = false;
};

struct JoinResult {
    ModelDescriptor model;
    /// Session version at the moment of joining.
    std::uint64_t version = 0;
    /// Full state, unless the client resumed from a version still in the log.
    std::optional<Json> snapshot;
    /// Events after the resume version, in order.
    std::vector<Broadcast> missed;
    std::shared_ptr<EventChannel> events;
};

struct ServiceOptions {
    /// Empty: purely in-memory.
    fs::path data_dir;
    std::size_t snapshot_interval = 100;
    std::size_t channel_capacity = 4096;
    /// fdatasync the event log before each acknowledgement.
    bool fsync = false;
    /// Recover state but never write (used by offline queries).
    bool read_only = false;
};

// ---------------------------------------------------------------------------
// Service

class SessionService {
public:
    explicit SessionService(ServiceOptions options = {}) : opts_(std::move(options)) {
        if (!opts_.data_dir.empty()) recover();
    }

    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    /// Idempotent for identical content; a token or model id reused with
    /// different content is a ConflictError.
    std::string register_model(ModelDescriptor d, std::shared_ptr<const Blob> blob) {
        validate_descriptor(d);
        if (!blob) throw ValidationError("model blob is missing");
        if (blob->size() != static_cast<std::uint64_t>(d.blob_size_bytes)) {
            throw ValidationError("blob is " + std::to_string(blob->size()) +
                                  " bytes but descriptor says " + std::to_string(d.blob_size_bytes));
        }
        const std::string hash = blob->content_hash();
        if (d.model_id.empty()) d.model_id = "model-" + hash.substr(0, 16);
        if (d.dataset_ref.empty()) d.dataset_ref = "dataset:" + hash.substr(0, 16);

        std::unique_lock lk(registry_mu_);
        if (auto it = by_token_.find(d.qr_token); it != by_token_.end()) {
            const auto& existing = models_.at(it->second);
            if (existing.descriptor == d && existing.blob->content_hash() == hash) return d.model_id;
            throw ConflictError("token '" + d.qr_token + "' is already registered with different content");
        }
        if (models_.contains(d.model_id)) {
            throw ConflictError("model id '" + d.model_id + "' is already registered");
        }
        std::shared_ptr<const Blob> stored = blob;
        if (!opts_.data_dir.empty() && !opts_.read_only) {
            if (const auto* mem = dynamic_cast<const MemoryBlob*>(blob.get())) {
                const auto path = opts_.data_dir / "blobs" / hash;
                if (!fs::exists(path)) {
                    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(mem->data().data()),
                                                             mem->data().size()));
                }
            }
        }
        models_.emplace(d.model_id, RegisteredModel{d, stored});
        by_token_.emplace(d.qr_token, d.model_id);
        if (!opts_.data_dir.empty() && !opts_.read_only) save_registry();
        return d.model_id;
    }

    ModelDescriptor resolve_qr(const std::string& token) const {
        std::shared_lock lk(registry_mu_);
        auto it = by_token_.find(token);
        if (token.empty() || it == by_token_.end()) throw UnknownTokenError(token);
        return models_.at(it->second).descriptor;
    }

    ModelDescriptor descriptor(const std::string& model_id) const {
        std::shared_lock lk(registry_mu_);
        auto it = models_.find(model_id);
        if (it == models_.end()) throw NotFoundError("unknown model '" + model_id + "'");
        return it->second.descriptor;
    }

    std::vector<std::string> model_ids() const {
        std::shared_lock lk(registry_mu_);
        std::vector<std::string> out;
        for (const auto& [id, m] : models_) out.push_back(id);
        return out;
    }

    /// Bytes [offset, offset + length) of the model blob, clipped at its end.
    Bytes fetch_model(const std::string& model_id, std::uint64_t offset, std::uint64_t length) const {
        std::shared_ptr<const Blob> blob;
        {
            std::shared_lock lk(registry_mu_);
            auto it = models_.find(model_id);
            if (it == models_.end()) throw NotFoundError("unknown model '" + model_id + "'");
            blob = it->second.blob;
        }
        if (offset > blob->size()) throw ValidationError("fetch offset beyond end of model");
        return blob->read(offset, length);
    }

    JoinResult join_session(const std::string& client_id, const std::string& qr_token,
                            std::optional<std::uint64_t> last_version = std::nullopt) {
        if (client_id.empty()) throw ValidationError("client_id must not be empty");
        const auto d = resolve_qr(qr_token);
        auto& s = session(d.model_id);
        std::lock_guard lk(s.mu);
        JoinResult out;
        out.model = d;
        out.version = s.engine.version();
        if (last_version && *last_version <= s.engine.version() && s.log.size() == s.engine.version()) {
            for (auto v = *last_version; v < s.log.size(); ++v) out.missed.push_back(s.log[v]);
        } else {
            out.snapshot = s.engine.snapshot();
        }
        if (auto it = s.subscribers.find(client_id); it != s.subscribers.end()) it->second->close();
        out.events = std::make_shared<EventChannel>(opts_.channel_capacity);
        s.subscribers[client_id] = out.events;
        return out;
    }

    /// Drops the client's subscription. With `channel` set, only if it is still
    /// the live one (a newer join under the same client id is left alone).
    void leave_session(const std::string& client_id, const std::string& model_id,
                       const std::shared_ptr<EventChannel>& channel = nullptr) {
        auto& s = session(model_id);
        std::lock_guard lk(s.mu);
        if (auto it = s.subscribers.find(client_id); it != s.subscribers.end()) {
            if (channel && it->second != channel) return;
            it->second->close();
            s.subscribers.erase(it);
        }
    }

    /// Applies, persists, then broadcasts to every joined client in apply order.
    Ack submit_event(const std::string& client_id, const std::string& model_id,
                     const sync::SessionEvent& event) {
        if (!has_model(model_id)) throw SessionError("unknown session '" + model_id + "'");
        auto& s = session(model_id);
        std::lock_guard lk(s.mu);
        if (s.failed) throw Error("session '" + model_id + "' is unavailable after a storage failure");
        if (!s.subscribers.contains(client_id)) {
            throw SessionError("client '" + client_id + "' has not joined session '" + model_id + "'");
        }
        if (event.client_id != client_id) {
            throw ValidationError("event client_id '" + event.client_id + "' does not match sender '" +
                                  client_id + "'");
        }
        if (auto it = s.by_event_id.find(event.event_id); it != s.by_event_id.end()) {
            const auto& b = s.log[it->second - 1];
            return {event.event_id, b.version, assigned_id_of(b.event)};
        }
        auto result = s.engine.apply_event(event);
        Broadcast b{result.version, std::move(result.applied)};
        try {
            persist(s, model_id, b);
        } catch (...) {
            s.failed = true;
            throw;
        }
        s.log.push_back(b);
        s.by_event_id.emplace(b.event.event_id, b.version);
        for (auto it = s.subscribers.begin(); it != s.subscribers.end();) {
            if (!it->second->push(b)) {
                it = s.subscribers.erase(it);
            } else {
                ++it;
            }
        }
        if (b.event.kind() == sync::EventKind::EndSession ||
            (opts_.snapshot_interval > 0 && b.version % opts_.snapshot_interval == 0)) {
            write_snapshot(s, model_id);
        }
        return {b.event.event_id, b.version, assigned_id_of(b.event)};
    }

    Json snapshot(const std::string& model_id) {
        auto& s = session(model_id);
        std::lock_guard lk(s.mu);
        return s.engine.snapshot();
    }

    sync::SyncEngine engine_copy(const std::string& model_id) {
        auto& s = session(model_id);
        std::lock_guard lk(s.mu);
        return s.engine;
    }

    std::vector<Broadcast> event_log(const std::string& model_id) {
        auto& s = session(model_id);
        std::lock_guard lk(s.mu);
        return s.log;
    }

    const ServiceOptions& options() const noexcept { return opts_; }

private:
    struct RegisteredModel {
        ModelDescriptor descriptor;
        std::shared_ptr<const Blob> blob;
    };

    struct ModelSession {
        explicit ModelSession(const std::string& model_id) : engine(model_id) {}
        std::mutex mu;
        sync::SyncEngine engine;
        std::vector<Broadcast> log;  // log[v - 1] holds version v
        std::unordered_map<std::string, std::uint64_t> by_event_id;
        std::map<std::string, std::shared_ptr<EventChannel>> subscribers;
        std::FILE* log_file = nullptr;
        bool failed = false;

        ~ModelSession() {
            if (log_file) std::fclose(log_file);
        }
    };

    bool has_model(const std::string& model_id) const {
        std::shared_lock lk(registry_mu_);
        return models_.contains(model_id);
    }

    ModelSession& session(const std::string& model_id) {
        std::lock_guard lk(sessions_mu_);
        auto it = sessions_.find(model_id);
        if (it == sessions_.end()) {
            if (!has_model(model_id)) throw NotFoundError("unknown model '" + model_id + "'");
            it = sessions_.emplace(model_id, std::make_unique<ModelSession>(model_id)).first;
        }
        return *it->second;
    }

    fs::path session_dir(const std::string& model_id) const {
        return opts_.data_dir / "sessions" / model_id;
    }

    void persist(ModelSession& s, const std::string& model_id, const Broadcast& b) {
        if (opts_.data_dir.empty() || opts_.read_only) return;
        if (!s.log_file) {
            fs::create_directories(session_dir(model_id));
            s.log_file = std::fopen((session_dir(model_id) / "events.ndjson").c_str(), "ab");
            if (!s.log_file) throw Error("cannot open event log for '" + model_id + "'");
        }
        Json line = Json::object();
        line["version"] = b.version;
        line["event"] = sync::event_to_json(b.event);
        const std::string text = line.dump() + "\n";
        if (std::fwrite(text.data(), 1, text.size(), s.log_file) != text.size() ||
            std::fflush(s.log_file) != 0) {
            throw Error("event log write failed for '" + model_id + "'");
        }
        if (opts_.fsync && ::fdatasync(::fileno(s.log_file)) != 0) {
            throw Error("event log sync failed for '" + model_id + "'");
        }
    }

    void write_snapshot(ModelSession& s, const std::string& model_id) {
        if (opts_.data_dir.empty() || opts_.read_only) return;
        fs::create_directories(session_dir(model_id));
        write_file_atomic(session_dir(model_id) / "snapshot.json", s.engine.snapshot().dump(2));
    }

    static void write_file_atomic(const fs::path& path, std::string_view content) {
        fs::create_directories(path.parent_path());
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out.write(content.data(), static_cast<std::streamsize>(content.size()));
            if (!out) throw Error("cannot write " + tmp.string());
        }
        fs::rename(tmp, path);
    }

    void save_registry() {
        Json models = Json::array();
        for (const auto& [id, m] : models_) {
            Json entry = Json::object();
            entry["descriptor"] = descriptor_to_json(m.descriptor);
            entry["blob"] = m.blob->describe();
            models.push_back(std::move(entry));
        }
        write_file_atomic(opts_.data_dir / "registry.json", Json{{"models", models}}.dump(2));
    }

    static Json read_json_file(const fs::path& p) {
        std::ifstream in(p);
        if (!in) throw Error("cannot read " + p.string());
        try {
            return Json::parse(in);
        } catch (const Json::parse_error& e) {
            throw ParseError(p.string(), e.what());
        }
    }

    void recover() {
        if (!opts_.read_only) fs::create_directories(opts_.data_dir / "blobs");
        const auto reg_path = opts_.data_dir / "registry.json";
        if (fs::exists(reg_path)) {
            const Json reg = read_json_file(reg_path);
            const Json& models = json_io::field(reg, "models", "registry");
            for (std::size_t i = 0; i < models.size(); ++i) {
                const std::string p = "registry.models[" + std::to_string(i) + "]";
                auto d = descriptor_from_json(json_io::field(models[i], "descriptor", p), p + ".descriptor");
                const Json& bj = json_io::field(models[i], "blob", p);
                const std::string kind = json_io::get_string(bj, "kind", p + ".blob");
                std::shared_ptr<const Blob> blob;
                if (kind == "synthetic") {
                    blob = std::make_shared<SyntheticBlob>(
                        static_cast<std::uint64_t>(json_io::get_integer(bj, "size", p + ".blob")),
                        static_cast<std::uint64_t>(json_io::get_integer(bj, "seed", p + ".blob")));
                } else {
                    const auto hash = json_io::get_string(bj, "sha256", p + ".blob");
                    blob = std::make_shared<FileBlob>(opts_.data_dir / "blobs" / hash, hash);
                }
                by_token_.emplace(d.qr_token, d.model_id);
                models_.emplace(d.model_id, RegisteredModel{d, blob});
            }
        }
        const auto sessions_root = opts_.data_dir / "sessions";
        if (!fs::exists(sessions_root)) return;
        for (const auto& entry : fs::directory_iterator(sessions_root)) {
            if (!entry.is_directory()) continue;
            const std::string model_id = entry.path().filename().string();
            if (!models_.contains(model_id)) continue;
            recover_session(model_id);
        }
    }

    void recover_session(const std::string& model_id) {
        auto s = std::make_unique<ModelSession>(model_id);
        const auto dir = session_dir(model_id);
        if (fs::exists(dir / "snapshot.json")) {
            s->engine = sync::SyncEngine::restore(read_json_file(dir / "snapshot.json"));
        }
        const std::uint64_t snap_version = s->engine.version();
        const auto log_path = dir / "events.ndjson";
        if (fs::exists(log_path)) {
            std::ifstream in(log_path, std::ios::binary);
            std::string line;
            std::size_t line_no = 0;
            std::uint64_t good_bytes = 0;
            bool torn = false;
            while (std::getline(in, line)) {
                ++line_no;
                // Acks follow a complete write including the newline, so a
                // final line without one was never acknowledged.
                if (in.eof()) {
                    torn = true;
                    break;
                }
                const std::string where = "events.ndjson line " + std::to_string(line_no);
                if (!line.empty()) {
                    Json j;
                    try {
                        j = Json::parse(line);
                    } catch (const Json::parse_error&) {
                        throw ParseError(where, "corrupt record");
                    }
                    Broadcast b{static_cast<std::uint64_t>(json_io::get_integer(j, "version", where)),
                                sync::event_from_json(json_io::field(j, "event", where), where + ".event")};
                    if (b.version != s->log.size() + 1) {
                        throw ParseError(where, "version gap in event log");
                    }
                    if (b.version > snap_version) {
                        const auto r = s->engine.apply_event(b.event);
                        if (r.version != b.version) throw ParseError(where, "replay diverged from log");
                    }
                    s->by_event_id.emplace(b.event.event_id, b.version);
                    s->log.push_back(std::move(b));
                }
                good_bytes += line.size() + 1;
            }
            in.close();
            if (torn && !opts_.read_only) fs::resize_file(log_path, good_bytes);
        }
        sessions_.emplace(model_id, std::move(s));
    }

    ServiceOptions opts_;
    mutable std::shared_mutex registry_mu_;
    std::map<std::string, RegisteredModel> models_;
    std::map<std::string, std::string> by_token_;
    std::mutex sessions_mu_;
    std::map<std::string, std::unique_ptr<ModelSession>> sessions_;
};

}  // namespace arinspect::service
