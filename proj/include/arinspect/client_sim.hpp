#pragma once

// Scripted headset clients. Each client runs its steps against a ServerLink,
// routes every outgoing item through a FIFO offline queue, keeps a replica of
// the session fed by broadcasts, and records simulated network timings.
//
// Several clients run under one cooperative scheduler: the client with the
// smallest logical clock steps next (ties go to the lower index), so
// interleavings depend only on the scripts. Logical clocks advance by WaitMs
// and by 1 ms per step; simulated network time is reported but never moves
// the clock, which keeps event timestamps identical whether a client was
// online or offline when it created them.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "arinspect/content_hash.hpp"
#include "arinspect/damage_model.hpp"
#include "arinspect/error.hpp"
#include "arinspect/geometry.hpp"
#include "arinspect/json_io.hpp"
#include "arinspect/link.hpp"
#include "arinspect/net_harness.hpp"
#include "arinspect/sync_engine.hpp"

namespace arinspect::sim {

using geometry::Pose;
using geometry::Transform;
using geometry::Vec3;

// ---------------------------------------------------------------------------
// Steps

/// A marker named by a script-local ref (bound by an earlier AddMarker) or by id.
struct MarkerRef {
    std::string ref;
    std::int64_t id = 0;
};

struct JoinStep {
    std::string qr_token;
};
struct WaitStep {
    std::int64_t ms = 0;
};
struct DetectStep {
    Pose structure_pose;
    bool detectable = true;
};
struct AddMarkerStep {
    Vec3 world_position = Vec3::Zero();
    std::string label;
    std::string details;
    std::string ref;
};
struct EditMarkerStep {
    MarkerRef marker;
    std::optional<sync::MarkerMetadata> metadata;
    std::optional<Vec3> local_position;
};
struct MoveModelStep {
    Transform transform;
};
struct MeasureStep {
    MarkerRef location;
    std::string label;
    damage::SegmentationOutline outline;
    std::optional<damage::Date> date;
};
struct GoOfflineStep {};
struct GoOnlineStep {};
struct CaptureImageStep {
    std::uint64_t bytes = 0;
};
struct EndSessionStep {};

using Step = std::variant<JoinStep, WaitStep, DetectStep, AddMarkerStep, EditMarkerStep, MoveModelStep,
                          MeasureStep, GoOfflineStep, GoOnlineStep, CaptureImageStep, EndSessionStep>;

inline const char* step_name(const Step& s) {
    static constexpr const char* names[] = {"Join",       "WaitMs",    "SimulateDetection", "AddMarker",
                                            "EditMarker", "MoveModel", "Measure",           "GoOffline",
                                            "GoOnline",   "CaptureImage", "EndSession"};
    return names[s.index()];
}

inline bool is_session_step(const Step& s) {
    return std::holds_alternative<DetectStep>(s) || std::holds_alternative<AddMarkerStep>(s) ||
           std::holds_alternative<EditMarkerStep>(s) || std::holds_alternative<MoveModelStep>(s) ||
           std::holds_alternative<MeasureStep>(s) || std::holds_alternative<EndSessionStep>(s);
}

namespace detail {

inline Json marker_ref_to_json(const MarkerRef& m) { return m.ref.empty() ? Json(m.id) : Json(m.ref); }

inline MarkerRef marker_ref_from_json(const Json& j, const std::string& path) {
    if (j.is_string()) return {j.get<std::string>(), 0};
    if (j.is_number_integer()) return {{}, j.get<std::int64_t>()};
    throw ParseError(path, "expected a marker ref name or a marker id");
}

inline Json outline_to_json(const damage::SegmentationOutline& o) {
    Json pts = Json::array();
    for (const auto& p : o.points) pts.push_back(json_io::vec3_to_json(p));
    return Json{{"points", pts}, {"closed", o.closed}};
}

inline damage::SegmentationOutline outline_from_json(const Json& j, const std::string& path) {
    damage::SegmentationOutline o;
    const Json& pts = json_io::field(j, "points", path);
    if (!pts.is_array()) throw ParseError(path + ".points", "expected an array");
    for (std::size_t i = 0; i < pts.size(); ++i) {
        o.points.push_back(json_io::vec3_from_json(pts[i], path + ".points[" + std::to_string(i) + "]"));
    }
    o.closed = json_io::has(j, "closed") && json_io::get_bool(j, "closed", path);
    return o;
}

}  // namespace detail

inline Json step_to_json(const Step& step) {
    Json j = Json::object();
    j["op"] = step_name(step);
    std::visit(
        [&j](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, JoinStep>) {
                j["qr_token"] = s.qr_token;
            } else if constexpr (std::is_same_v<S, WaitStep>) {
                j["ms"] = s.ms;
            } else if constexpr (std::is_same_v<S, DetectStep>) {
                j["structure_pose"] = json_io::pose_to_json(s.structure_pose);
                j["detectable"] = s.detectable;
            } else if constexpr (std::is_same_v<S, AddMarkerStep>) {
                j["world_position"] = json_io::vec3_to_json(s.world_position);
                j["label"] = s.label;
                j["details"] = s.details;
                if (!s.ref.empty()) j["ref"] = s.ref;
            } else if constexpr (std::is_same_v<S, EditMarkerStep>) {
                j["marker"] = detail::marker_ref_to_json(s.marker);
                if (s.metadata) {
                    j["label"] = s.metadata->label;
                    j["details"] = s.metadata->details;
                }
                if (s.local_position) j["local_position"] = json_io::vec3_to_json(*s.local_position);
            } else if constexpr (std::is_same_v<S, MoveModelStep>) {
                j["transform"] = json_io::transform_to_json(s.transform);
            } else if constexpr (std::is_same_v<S, MeasureStep>) {
                j["location"] = detail::marker_ref_to_json(s.location);
                j["label"] = s.label;
                j["outline"] = detail::outline_to_json(s.outline);
                if (s.date) j["date"] = s.date->format();
            } else if constexpr (std::is_same_v<S, CaptureImageStep>) {
                j["bytes"] = s.bytes;
            }
        },
        step);
    return j;
}

inline Step step_from_json(const Json& j, const std::string& path) {
    const std::string op = json_io::get_string(j, "op", path);
    auto str = [&](const char* key) { return json_io::has(j, key) ? json_io::get_string(j, key, path) : std::string(); };
    if (op == "Join") return JoinStep{json_io::get_string(j, "qr_token", path)};
    if (op == "WaitMs") {
        const auto ms = json_io::get_integer(j, "ms", path);
        if (ms < 0) throw ParseError(path + ".ms", "must be >= 0");
        return WaitStep{ms};
    }
    if (op == "SimulateDetection") {
        return DetectStep{json_io::pose_from_json(json_io::field(j, "structure_pose", path), path + ".structure_pose"),
                          !json_io::has(j, "detectable") || json_io::get_bool(j, "detectable", path)};
    }
    if (op == "AddMarker") {
        return AddMarkerStep{json_io::vec3_from_json(json_io::field(j, "world_position", path), path + ".world_position"),
                             str("label"), str("details"), str("ref")};
    }
    if (op == "EditMarker") {
        EditMarkerStep s;
        s.marker = detail::marker_ref_from_json(json_io::field(j, "marker", path), path + ".marker");
        const bool meta = json_io::has(j, "label") || json_io::has(j, "details");
        const bool pos = json_io::has(j, "local_position");
        if (meta == pos) throw ParseError(path, "EditMarker needs either label/details or local_position");
        if (meta) s.metadata = sync::MarkerMetadata{str("label"), str("details")};
        if (pos) s.local_position = json_io::vec3_from_json(j.at("local_position"), path + ".local_position");
        return s;
    }
    if (op == "MoveModel") {
        return MoveModelStep{json_io::transform_from_json(json_io::field(j, "transform", path), path + ".transform")};
    }
    if (op == "Measure") {
        MeasureStep s;
        s.location = detail::marker_ref_from_json(json_io::field(j, "location", path), path + ".location");
        s.label = json_io::get_string(j, "label", path);
        s.outline = detail::outline_from_json(json_io::field(j, "outline", path), path + ".outline");
        if (json_io::has(j, "date")) {
            try {
                s.date = damage::Date::parse(json_io::get_string(j, "date", path));
            } catch (const ValidationError& e) {
                throw ParseError(path + ".date", e.what());
            }
        }
        return s;
    }
    if (op == "GoOffline") return GoOfflineStep{};
    if (op == "GoOnline") return GoOnlineStep{};
    if (op == "CaptureImage") {
        const auto n = json_io::get_integer(j, "bytes", path);
        if (n < 0) throw ParseError(path + ".bytes", "must be >= 0");
        return CaptureImageStep{static_cast<std::uint64_t>(n)};
    }
    if (op == "EndSession") return EndSessionStep{};
    throw ParseError(path + ".op", "unknown step '" + op + "'");
}

// ---------------------------------------------------------------------------
// Scenario

struct ModelSpec {
    ModelDescriptor descriptor;
    std::uint64_t seed = 0;  // synthetic blob content
};

struct DetectionNoise {
    double translation_sigma_m = 0.0;
    double rotation_sigma_deg = 0.0;
};

struct ClientScript {
    std::string client_id;
    std::vector<Step> steps;
};

struct Scenario {
    std::string name = "scenario";
    std::int64_t epoch_ms = 1'700'000'000'000;
    /// How long a peer's event takes to become visible to other clients.
    std::int64_t propagation_ms = 0;
    /// Download every model byte on join; otherwise only a header range is read
    /// and load time is still computed from the full size.
    bool fetch_full_model = true;
    std::uint64_t fetch_chunk_bytes = 16u << 20;
    std::vector<ModelSpec> models;
    DetectionNoise noise;
    std::vector<ClientScript> clients;

    void validate() const {
        if (clients.empty()) throw ValidationError("scenario has no clients");
        if (propagation_ms < 0) throw ValidationError("propagation_ms must be >= 0");
        if (fetch_chunk_bytes == 0) throw ValidationError("fetch_chunk_bytes must be > 0");
        if (noise.translation_sigma_m < 0 || noise.rotation_sigma_deg < 0) {
            throw ValidationError("detection noise must be >= 0");
        }
        std::set<std::string> ids;
        for (const auto& c : clients) {
            if (c.client_id.empty()) throw ValidationError("client_id must not be empty");
            if (!ids.insert(c.client_id).second) throw ValidationError("duplicate client_id '" + c.client_id + "'");
            bool joined = false;
            std::set<std::string> refs;
            for (std::size_t i = 0; i < c.steps.size(); ++i) {
                const auto& s = c.steps[i];
                auto fail = [&](const std::string& why) {
                    return ValidationError("client '" + c.client_id + "' step " + std::to_string(i) + " (" +
                                           step_name(s) + "): " + why);
                };
                if (std::holds_alternative<JoinStep>(s)) {
                    if (joined) throw fail("a client joins one session per script");
                    joined = true;
                }
                if (is_session_step(s) && !joined) throw fail("Join must come first");
                auto check_ref = [&](const MarkerRef& m) {
                    if (m.ref.empty() && m.id <= 0) throw fail("marker id must be positive");
                    if (!m.ref.empty() && !refs.contains(m.ref)) throw fail("unknown marker ref '" + m.ref + "'");
                };
                if (const auto* a = std::get_if<AddMarkerStep>(&s); a && !a->ref.empty()) {
                    if (!refs.insert(a->ref).second) throw fail("marker ref '" + a->ref + "' reused");
                }
                if (const auto* e = std::get_if<EditMarkerStep>(&s)) check_ref(e->marker);
                if (const auto* m = std::get_if<MeasureStep>(&s)) check_ref(m->location);
            }
        }
    }
};

inline Json scenario_to_json(const Scenario& s) {
    Json j = Json::object();
    j["name"] = s.name;
    j["epoch_ms"] = s.epoch_ms;
    j["propagation_ms"] = s.propagation_ms;
    j["fetch_full_model"] = s.fetch_full_model;
    j["fetch_chunk_bytes"] = s.fetch_chunk_bytes;
    Json models = Json::array();
    for (const auto& m : s.models) {
        models.push_back(Json{{"descriptor", service::descriptor_to_json(m.descriptor)},
                              {"blob", Json{{"synthetic_size", m.descriptor.blob_size_bytes}, {"seed", m.seed}}}});
    }
    j["models"] = std::move(models);
    j["detection_noise"] = Json{{"translation_sigma_m", s.noise.translation_sigma_m},
                                {"rotation_sigma_deg", s.noise.rotation_sigma_deg}};
    Json clients = Json::array();
    for (const auto& c : s.clients) {
        Json steps = Json::array();
        for (const auto& st : c.steps) steps.push_back(step_to_json(st));
        clients.push_back(Json{{"client_id", c.client_id}, {"steps", std::move(steps)}});
    }
    j["clients"] = std::move(clients);
    return j;
}

/// A single-client scenario may give `client_id` and `steps` at top level.
inline Scenario scenario_from_json(const Json& j) {
    const std::string root = "scenario";
    if (!j.is_object()) throw ParseError(root, "expected an object");
    Scenario s;
    if (json_io::has(j, "name")) s.name = json_io::get_string(j, "name", root);
    if (json_io::has(j, "epoch_ms")) s.epoch_ms = json_io::get_integer(j, "epoch_ms", root);
    if (json_io::has(j, "propagation_ms")) s.propagation_ms = json_io::get_integer(j, "propagation_ms", root);
    if (json_io::has(j, "fetch_full_model")) s.fetch_full_model = json_io::get_bool(j, "fetch_full_model", root);
    if (json_io::has(j, "fetch_chunk_bytes")) {
        s.fetch_chunk_bytes = static_cast<std::uint64_t>(json_io::get_integer(j, "fetch_chunk_bytes", root));
    }
    if (json_io::has(j, "models")) {
        const Json& models = j.at("models");
        for (std::size_t i = 0; i < models.size(); ++i) {
            const std::string p = root + ".models[" + std::to_string(i) + "]";
            ModelSpec m;
            m.descriptor = service::descriptor_from_json(json_io::field(models[i], "descriptor", p), p + ".descriptor");
            if (json_io::has(models[i], "blob")) {
                const Json& b = models[i].at("blob");
                if (json_io::has(b, "synthetic_size") &&
                    json_io::get_integer(b, "synthetic_size", p + ".blob") != m.descriptor.blob_size_bytes) {
                    throw ParseError(p + ".blob.synthetic_size", "must equal descriptor.blob_size_bytes");
                }
                if (json_io::has(b, "seed")) m.seed = static_cast<std::uint64_t>(json_io::get_integer(b, "seed", p + ".blob"));
            }
            s.models.push_back(std::move(m));
        }
    }
    if (json_io::has(j, "detection_noise")) {
        const Json& n = j.at("detection_noise");
        const std::string p = root + ".detection_noise";
        if (json_io::has(n, "translation_sigma_m")) s.noise.translation_sigma_m = json_io::get_number(n, "translation_sigma_m", p);
        if (json_io::has(n, "rotation_sigma_deg")) s.noise.rotation_sigma_deg = json_io::get_number(n, "rotation_sigma_deg", p);
    }
    auto parse_client = [](const Json& c, const std::string& p) {
        ClientScript cs;
        cs.client_id = json_io::get_string(c, "client_id", p);
        const Json& steps = json_io::field(c, "steps", p);
        if (!steps.is_array()) throw ParseError(p + ".steps", "expected an array");
        for (std::size_t i = 0; i < steps.size(); ++i) {
            cs.steps.push_back(step_from_json(steps[i], p + ".steps[" + std::to_string(i) + "]"));
        }
        return cs;
    };
    if (json_io::has(j, "clients")) {
        const Json& clients = j.at("clients");
        for (std::size_t i = 0; i < clients.size(); ++i) {
            s.clients.push_back(parse_client(clients[i], root + ".clients[" + std::to_string(i) + "]"));
        }
    } else {
        s.clients.push_back(parse_client(j, root));
    }
    try {
        s.validate();
    } catch (const ValidationError& e) {
        throw ParseError(root, e.what());
    }
    return s;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scenario file '" + path + "'");
    try {
        return scenario_from_json(Json::parse(in));
    } catch (const Json::parse_error& e) {
        throw ParseError(path, e.what());
    }
}

// ---------------------------------------------------------------------------
// Detection

/// Structure pose perturbed by isotropic Gaussian translation noise and a
/// rotation whose axis-angle vector has Gaussian components. nullopt when the
/// target is not detectable.
inline std::optional<Pose> simulate_detection(const Pose& structure_pose, bool detectable,
                                              const DetectionNoise& noise, std::mt19937_64& rng) {
    if (!detectable) return std::nullopt;
    std::normal_distribution<double> unit(0.0, 1.0);
    Vec3 dt;
    for (int i = 0; i < 3; ++i) dt[i] = noise.translation_sigma_m * unit(rng);
    Vec3 dr;
    for (int i = 0; i < 3; ++i) dr[i] = geometry::deg_to_rad(noise.rotation_sigma_deg) * unit(rng);
    const double angle = dr.norm();
    const geometry::Quat q = angle > 0.0 ? structure_pose.orientation() * geometry::axis_angle(dr, angle)
                                         : structure_pose.orientation();
    return Pose(structure_pose.position() + dt, q.normalized());
}

// ---------------------------------------------------------------------------
// Offline queue

struct QueuedEvent {
    sync::SessionEvent event;
    /// Marker ref whose server-assigned id is patched in just before sending.
    std::string marker_ref;
    std::size_t step = 0;
};

struct OpaquePayload {
    std::uint64_t bytes = 0;
    std::size_t step = 0;
};

using QueueItem = std::variant<QueuedEvent, OpaquePayload>;

class OfflineQueue {
public:
    void push(QueueItem item) { items_.push_back(std::move(item)); }
    bool empty() const noexcept { return items_.empty(); }
    std::size_t size() const noexcept { return items_.size(); }
    const QueueItem& front() const { return items_.front(); }
    void pop() { items_.pop_front(); }
    const std::deque<QueueItem>& items() const noexcept { return items_; }

private:
    std::deque<QueueItem> items_;
};

/// Uploads in FIFO order; an item leaves the queue only once `send` returns.
/// Stops at the first DisconnectedError with the rest still queued.
template <typename Send>
std::size_t flush_offline(OfflineQueue& queue, Send&& send) {
    std::size_t n = 0;
    while (!queue.empty()) {
        try {
            send(queue.front());
        } catch (const DisconnectedError&) {
            break;
        }
        queue.pop();
        ++n;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Reports

struct DetectionRecord {
    std::size_t step = 0;
    bool detected = false;
    double translation_error_cm = 0.0;
    double rotation_error_deg = 0.0;
};

struct TraceEntry {
    std::string client_id;
    std::size_t step = 0;
    std::string op;
    std::string event_id;
    std::string status;
};

struct StepError {
    std::string client_id;
    std::size_t step = 0;
    std::string message;
};

struct ClientReport {
    std::string client_id;
    std::size_t events_created = 0;
    std::size_t events_acked = 0;
    std::size_t queued_remaining = 0;
    std::size_t payloads_uploaded = 0;
    std::uint64_t payload_bytes_uploaded = 0;
    std::size_t fetch_resumes = 0;
    std::vector<DetectionRecord> detections;
    std::vector<net::TimingSample> timings;
    /// event_id -> server version, for every acknowledged event.
    std::map<std::string, std::uint64_t> acks;
};

struct ModelState {
    std::string model_id;
    std::uint64_t version = 0;
    std::size_t markers = 0;
    std::size_t ledger_entries = 0;
    std::size_t conflicts = 0;
    bool sealed = false;
    std::string state_hash;
    Json snapshot;
};

struct ScenarioReport {
    std::string scenario;
    std::string profile;
    std::uint64_t seed = 0;
    std::vector<ClientReport> clients;
    std::vector<TraceEntry> trace;
    std::vector<StepError> errors;
    std::vector<ModelState> final_states;
    std::string final_state_hash;

    std::size_t queued_remaining() const {
        std::size_t n = 0;
        for (const auto& c : clients) n += c.queued_remaining;
        return n;
    }

    bool ok() const { return errors.empty() && queued_remaining() == 0; }

    std::vector<net::TimingSample> timings() const {
        std::vector<net::TimingSample> out;
        for (const auto& c : clients) out.insert(out.end(), c.timings.begin(), c.timings.end());
        return out;
    }
};

inline std::string state_hash(const Json& snapshot) { return sha256_hex(snapshot.dump()); }

inline Json report_to_json(const ScenarioReport& r) {
    Json j = Json::object();
    j["scenario"] = r.scenario;
    j["profile"] = r.profile;
    j["seed"] = r.seed;
    Json clients = Json::array();
    for (const auto& c : r.clients) {
        Json cj = Json::object();
        cj["client_id"] = c.client_id;
        cj["events_created"] = c.events_created;
        cj["events_acked"] = c.events_acked;
        cj["queued_remaining"] = c.queued_remaining;
        cj["payloads_uploaded"] = c.payloads_uploaded;
        cj["payload_bytes_uploaded"] = c.payload_bytes_uploaded;
        cj["fetch_resumes"] = c.fetch_resumes;
        Json det = Json::array();
        for (const auto& d : c.detections) {
            det.push_back(Json{{"step", d.step},
                               {"detected", d.detected},
                               {"translation_error_cm", d.translation_error_cm},
                               {"rotation_error_deg", d.rotation_error_deg}});
        }
        cj["detections"] = std::move(det);
        Json timings = Json::object();
        for (auto op : net::kOperations) {
            Json samples = Json::array();
            for (const auto& t : c.timings) {
                if (t.operation == op) samples.push_back(Json{{"duration_ms", t.duration_ms}, {"payload_bytes", t.payload_bytes}});
            }
            timings[net::operation_name(op)] = std::move(samples);
        }
        cj["timings"] = std::move(timings);
        Json acks = Json::object();
        for (const auto& [id, v] : c.acks) acks[id] = v;
        cj["acks"] = std::move(acks);
        clients.push_back(std::move(cj));
    }
    j["clients"] = std::move(clients);
    Json trace = Json::array();
    for (const auto& t : r.trace) {
        Json tj = Json{{"client_id", t.client_id}, {"step", t.step}, {"op", t.op}, {"status", t.status}};
        if (!t.event_id.empty()) tj["event_id"] = t.event_id;
        trace.push_back(std::move(tj));
    }
    j["trace"] = std::move(trace);
    Json errors = Json::array();
    for (const auto& e : r.errors) {
        errors.push_back(Json{{"client_id", e.client_id}, {"step", e.step}, {"message", e.message}});
    }
    j["errors"] = std::move(errors);
    j["queued_remaining"] = r.queued_remaining();
    Json states = Json::array();
    for (const auto& m : r.final_states) {
        states.push_back(Json{{"model_id", m.model_id},
                              {"version", m.version},
                              {"markers", m.markers},
                              {"ledger_entries", m.ledger_entries},
                              {"conflicts", m.conflicts},
                              {"sealed", m.sealed},
                              {"state_hash", m.state_hash}});
    }
    j["final_states"] = std::move(states);
    j["final_state_hash"] = r.final_state_hash;
    return j;
}

// ---------------------------------------------------------------------------
// Client

struct RunOptions {
    /// Treat GoOffline/GoOnline as no-ops (the fully-online twin of a script).
    bool force_online = false;
    std::chrono::milliseconds receive_timeout{5000};
};

/// Per-model high-water mark of acknowledged versions, shared by all clients of
/// one run so each client sees every event acked before its turn.
using AckedVersions = std::map<std::string, std::uint64_t>;

class SimClient {
public:
    SimClient(const Scenario& scenario, const ClientScript& script, std::unique_ptr<ServerLink> link,
              net::TransferModel timing, std::uint64_t noise_seed, RunOptions options, ScenarioReport& report,
              AckedVersions& acked, std::string run_tag)
        : scenario_(scenario),
          script_(script),
          link_(std::move(link)),
          timing_(std::move(timing)),
          rng_(noise_seed),
          opts_(options),
          report_(report),
          acked_(acked),
          run_tag_(std::move(run_tag)) {
        me_.client_id = script_.client_id;
        try {
            link_->connect();
        } catch (const DisconnectedError&) {
        }
    }

    bool done() const noexcept { return next_ >= script_.steps.size(); }
    std::int64_t clock() const noexcept { return clock_; }
    const ClientReport& report() const noexcept { return me_; }
    const OfflineQueue& queue() const noexcept { return queue_; }
    const sync::SyncEngine& replica() const noexcept { return replica_; }

    void step() {
        const std::size_t index = next_++;
        const Step& s = script_.steps[index];
        absorb_broadcasts();
        TraceEntry t{me_.client_id, index, step_name(s), {}, "ok"};
        std::visit([&](const auto& st) { run(st, index, t); }, s);
        report_.trace.push_back(std::move(t));
        if (!std::holds_alternative<WaitStep>(s)) clock_ += 1;
        if (want_online_) sync_up();
    }

    /// End of script: reconnect if the script left us online and drain the queue.
    void finish(int attempts = 3) {
        for (int i = 0; i < attempts && want_online_ && (!queue_.empty() || !link_joined_); ++i) sync_up();
        absorb_broadcasts();
        me_.queued_remaining = queue_.size();
    }

private:
    // -- steps ---------------------------------------------------------------

    void run(const JoinStep& s, std::size_t index, TraceEntry& t) {
        join_token_ = s.qr_token;
        join_step_ = index;
        if (!want_online_ || !ensure_joined()) t.status = "held";
    }

    void run(const WaitStep& s, std::size_t, TraceEntry&) { clock_ += s.ms; }

    void run(const DetectStep& s, std::size_t index, TraceEntry& t) {
        const auto pose = simulate_detection(s.structure_pose, s.detectable, scenario_.noise, rng_);
        DetectionRecord d{index, pose.has_value(), 0.0, 0.0};
        if (!pose) {
            t.status = "no_detection";
            me_.detections.push_back(d);
            return;
        }
        d.translation_error_cm = geometry::translation_offset(pose->position(), s.structure_pose.position()) * 100.0;
        d.rotation_error_deg = geometry::rotation_angle_between(pose->orientation(), s.structure_pose.orientation());
        me_.detections.push_back(d);
        emit_move(Transform(*pose), index, t);
    }

    void run(const AddMarkerStep& s, std::size_t index, TraceEntry& t) {
        sync::AddMarker a;
        a.world_position = s.world_position;
        a.reference_transform = view_transform();
        a.metadata = {s.label, s.details};
        auto ev = make_event(std::move(a));
        if (!s.ref.empty()) {
            pending_add_ref_[ev.event_id] = s.ref;
            note_own(ref_key(s.ref, "metadata"), ev.stamp());
            note_own(ref_key(s.ref, "position"), ev.stamp());
        }
        enqueue(std::move(ev), {}, index, t);
    }

    void run(const EditMarkerStep& s, std::size_t index, TraceEntry& t) {
        const char* field = s.metadata ? "metadata" : "position";
        const auto kind = s.metadata ? sync::FieldKey::Kind::marker_metadata : sync::FieldKey::Kind::marker_position;
        sync::EditMarker e;
        e.metadata = s.metadata;
        e.local_position = s.local_position;
        std::string key;
        std::string pending_ref;
        if (auto id = resolve(s.marker)) {
            e.marker_id = *id;
            key = sync::FieldKey{kind, *id}.to_string();
            e.base = base_for(key, sync::FieldKey{kind, *id});
        } else {
            pending_ref = s.marker.ref;
            key = ref_key(pending_ref, field);
            e.base = base_for(key, std::nullopt);
        }
        auto ev = make_event(std::move(e));
        note_own(key, ev.stamp());
        enqueue(std::move(ev), pending_ref, index, t);
    }

    void run(const MoveModelStep& s, std::size_t index, TraceEntry& t) { emit_move(s.transform, index, t); }

    void run(const MeasureStep& s, std::size_t index, TraceEntry& t) {
        const std::int64_t ts = now();
        damage::DamageRecord rec;
        try {
            rec = damage::make_record(0, s.label, s.outline, s.date.value_or(damage::Date::from_timestamp_ms(ts)));
        } catch (const ValidationError& e) {
            fail(index, t, e.what());
            return;
        }
        sync::AppendRecord a;
        a.record = rec;
        std::string pending_ref;
        if (auto id = resolve(s.location)) {
            a.location_id = *id;
        } else {
            pending_ref = s.location.ref;
        }
        enqueue(make_event(std::move(a)), pending_ref, index, t);
    }

    void run(const GoOfflineStep&, std::size_t, TraceEntry& t) {
        if (opts_.force_online) {
            t.status = "ignored";
            return;
        }
        want_online_ = false;
        link_->disconnect();
        link_joined_ = false;
    }

    void run(const GoOnlineStep&, std::size_t, TraceEntry& t) {
        if (opts_.force_online) t.status = "ignored";
        want_online_ = true;
    }

    void run(const CaptureImageStep& s, std::size_t index, TraceEntry& t) {
        queue_.push(OpaquePayload{s.bytes, index});
        t.status = "queued";
    }

    void run(const EndSessionStep&, std::size_t index, TraceEntry& t) {
        enqueue(make_event(sync::EndSession{}), {}, index, t);
    }

    // -- helpers -------------------------------------------------------------

    std::int64_t now() const { return scenario_.epoch_ms + clock_; }

    sync::SessionEvent make_event(sync::EventPayload payload) {
        sync::SessionEvent e;
        e.event_id = me_.client_id + "-" + run_tag_ + "-" + std::to_string(++seq_);
        e.client_id = me_.client_id;
        e.timestamp_ms = now();
        e.payload = std::move(payload);
        ++me_.events_created;
        return e;
    }

    void emit_move(const Transform& tr, std::size_t index, TraceEntry& t) {
        const sync::FieldKey key{sync::FieldKey::Kind::model, 0};
        auto ev = make_event(sync::MoveModel{tr, base_for(key.to_string(), key)});
        note_own(key.to_string(), ev.stamp());
        own_model_ = {ev.stamp(), tr};
        enqueue(std::move(ev), {}, index, t);
    }

    void enqueue(sync::SessionEvent ev, std::string marker_ref, std::size_t index, TraceEntry& t) {
        t.event_id = ev.event_id;
        t.status = "queued";
        queue_.push(QueuedEvent{std::move(ev), std::move(marker_ref), index});
    }

    void fail(std::size_t index, TraceEntry& t, const std::string& why) {
        t.status = "error";
        report_.errors.push_back({me_.client_id, index, why});
    }

    static std::string ref_key(const std::string& ref, const char* field) { return "ref:" + ref + "/" + field; }

    std::optional<std::int64_t> resolve(const MarkerRef& m) const {
        if (m.ref.empty()) return m.id;
        if (auto it = refs_.find(m.ref); it != refs_.end()) return it->second;
        return std::nullopt;
    }

    void note_own(const std::string& key, const sync::WriteStamp& stamp) {
        auto& slot = own_last_[key];
        if (!slot || *slot < stamp) slot = stamp;
    }

    /// The newest write this client has seen for a field: its own or the replica's.
    std::string base_for(const std::string& key, std::optional<sync::FieldKey> field) const {
        std::optional<sync::WriteStamp> best;
        if (auto it = own_last_.find(key); it != own_last_.end()) best = it->second;
        if (field) {
            if (auto h = replica_.head_stamp(*field); h && (!best || *best < *h)) best = h;
        }
        return best ? best->event_id : std::string();
    }

    /// Model placement as this client currently sees it.
    Transform view_transform() const {
        const auto h = replica_.head_stamp({sync::FieldKey::Kind::model, 0});
        if (own_model_ && (!h || *h < own_model_->first)) return own_model_->second;
        return replica_.model_transform();
    }

    // -- connectivity --------------------------------------------------------

    void sync_up() {
        if (!ensure_joined()) return;
        flush_offline(queue_, [this](const QueueItem& item) { upload(item); });
    }

    bool ensure_joined() {
        if (join_token_.empty()) return link_connect();
        if (link_joined_ && link_->connected()) return true;
        link_joined_ = false;
        if (!link_connect()) return false;
        try {
            const bool resume = replica_model_ == join_token_ && joined_once_;
            auto reply = link_->join(join_token_, resume ? std::optional(last_version_) : std::nullopt);
            model_ = reply.model;
            std::uint64_t bytes = 0;
            if (reply.snapshot) {
                replica_ = sync::SyncEngine::restore(*reply.snapshot);
                last_version_ = reply.version;
                buffered_.clear();
                bytes = reply.snapshot->dump().size();
            } else {
                for (auto& b : reply.missed) {
                    bytes += sync::event_to_json(b.event).dump().size();
                    take(std::move(b));
                }
            }
            sample(net::Operation::data_load, bytes);
            replica_model_ = join_token_;
            joined_once_ = true;
            link_joined_ = true;
        } catch (const DisconnectedError&) {
            return false;
        } catch (const Error& e) {
            report_.errors.push_back({me_.client_id, join_step_, e.what()});
            join_token_.clear();
            return false;
        }
        absorb_broadcasts();
        if (!model_loaded_) load_model();
        return link_->connected();
    }

    bool link_connect() {
        if (link_->connected()) return true;
        try {
            link_->connect();
            return true;
        } catch (const DisconnectedError&) {
            return false;
        }
    }

    /// Ranged download that resumes from the last received offset.
    void load_model() {
        const auto total = static_cast<std::uint64_t>(model_.blob_size_bytes);
        const auto target = scenario_.fetch_full_model ? total : std::min<std::uint64_t>(total, 64u << 10);
        while (fetch_offset_ < target) {
            try {
                const auto want = std::min(scenario_.fetch_chunk_bytes, target - fetch_offset_);
                const auto got = link_->fetch(model_.model_id, fetch_offset_, want).size();
                if (got == 0) throw Error("model download returned no data");
                fetch_offset_ += got;
            } catch (const DisconnectedError&) {
                ++me_.fetch_resumes;
                link_joined_ = false;
                return;  // resumed on the next reconnect
            }
        }
        model_loaded_ = true;
        // One load time for the whole model; every resume costs another round trip.
        double ms = timing_.transfer_ms(total);
        ms += static_cast<double>(me_.fetch_resumes) * timing_.profile().latency_ms;
        me_.timings.push_back({net::Operation::model_load, ms, timing_.profile().name, total});
    }

    void upload(const QueueItem& item) {
        if (!link_->connected() || !link_joined_) throw DisconnectedError("offline");
        if (const auto* p = std::get_if<OpaquePayload>(&item)) {
            ++me_.payloads_uploaded;
            me_.payload_bytes_uploaded += p->bytes;
            return;
        }
        const auto& q = std::get<QueuedEvent>(item);
        sync::SessionEvent ev = q.event;
        if (!q.marker_ref.empty()) {
            auto it = refs_.find(q.marker_ref);
            if (it == refs_.end()) {
                report_.errors.push_back({me_.client_id, q.step, "marker ref '" + q.marker_ref + "' was never created"});
                return;
            }
            if (auto* e = std::get_if<sync::EditMarker>(&ev.payload)) e->marker_id = it->second;
            if (auto* a = std::get_if<sync::AppendRecord>(&ev.payload)) a->location_id = it->second;
        }
        service::Ack ack;
        try {
            ack = link_->submit(model_.model_id, ev);
        } catch (const DisconnectedError&) {
            link_joined_ = false;
            throw;
        } catch (const Error& e) {
            report_.errors.push_back({me_.client_id, q.step, e.what()});
            return;
        }
        sample(net::Operation::data_save, sync::event_to_json(ev).dump().size());
        ++me_.events_acked;
        me_.acks[ev.event_id] = ack.version;
        auto& hw = acked_[model_.model_id];
        hw = std::max(hw, ack.version);
        if (auto it = pending_add_ref_.find(ev.event_id); it != pending_add_ref_.end()) {
            refs_[it->second] = ack.assigned_id;
            for (const char* field : {"metadata", "position"}) {
                auto own = own_last_.find(ref_key(it->second, field));
                if (own == own_last_.end()) continue;
                const auto kind = std::string(field) == "metadata" ? sync::FieldKey::Kind::marker_metadata
                                                                   : sync::FieldKey::Kind::marker_position;
                note_own(sync::FieldKey{kind, ack.assigned_id}.to_string(), *own->second);
            }
            pending_add_ref_.erase(it);
        }
    }

    void sample(net::Operation op, std::uint64_t bytes) {
        me_.timings.push_back({op, timing_.transfer_ms(bytes), timing_.profile().name, bytes});
    }

    void take(Broadcast b) {
        if (b.version <= last_version_) return;
        last_version_ = b.version;
        buffered_.push_back(std::move(b));
    }

    /// Pull broadcasts up to the shared ack high-water mark, then merge those
    /// visible at the current clock: own events at once, peers' after
    /// propagation delay.
    void absorb_broadcasts() {
        if (link_joined_ && link_->connected()) {
            const auto target = acked_.contains(model_.model_id) ? acked_.at(model_.model_id) : 0;
            const auto wait = target > last_version_ ? opts_.receive_timeout : std::chrono::milliseconds(0);
            for (auto& b : link_->receive(target, wait)) take(std::move(b));
            if (!link_->connected()) link_joined_ = false;
        }
        std::vector<Broadcast> later;
        for (auto& b : buffered_) {
            const bool visible = b.event.client_id == me_.client_id ||
                                 b.event.timestamp_ms + scenario_.propagation_ms <= now();
            if (visible) {
                replica_.merge(b.event);
            } else {
                later.push_back(std::move(b));
            }
        }
        buffered_ = std::move(later);
    }

    const Scenario& scenario_;
    const ClientScript& script_;
    std::unique_ptr<ServerLink> link_;
    net::TransferModel timing_;
    std::mt19937_64 rng_;
    RunOptions opts_;
    ScenarioReport& report_;
    AckedVersions& acked_;
    std::string run_tag_;
    ClientReport me_;

    std::size_t next_ = 0;
    std::int64_t clock_ = 0;
    std::uint64_t seq_ = 0;
    bool want_online_ = true;

    std::string join_token_;
    std::size_t join_step_ = 0;
    bool link_joined_ = false;
    bool joined_once_ = false;
    std::string replica_model_;
    ModelDescriptor model_;
    bool model_loaded_ = false;
    std::uint64_t fetch_offset_ = 0;

    OfflineQueue queue_;
    sync::SyncEngine replica_;
    std::uint64_t last_version_ = 0;
    std::vector<Broadcast> buffered_;
    std::map<std::string, std::optional<sync::WriteStamp>> own_last_;
    std::optional<std::pair<sync::WriteStamp, Transform>> own_model_;
    std::map<std::string, std::int64_t> refs_;
    std::map<std::string, std::string> pending_add_ref_;  // AddMarker event id -> ref
};

// ---------------------------------------------------------------------------
// Runner

/// Creates the link for a client id (also used for setup and the final observer).
using LinkFactory = std::function<std::unique_ptr<ServerLink>(const std::string& client_id)>;

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Runs every client to completion and reads back the server state of each
/// model the scenario touched. Deterministic for fixed (scenario, profile, seed).
inline ScenarioReport run_scenario(const Scenario& scenario, const net::NetworkProfile& profile, std::uint64_t seed,
                                   const LinkFactory& make_link, RunOptions options = {}) {
    scenario.validate();
    profile.validate();
    ScenarioReport report;
    report.scenario = scenario.name;
    report.profile = profile.name;
    report.seed = seed;

    if (!scenario.models.empty()) {
        auto setup = make_link(scenario.name + "-setup");
        try {
            setup->connect();
            for (const auto& m : scenario.models) setup->register_synthetic(m.descriptor, m.seed);
        } catch (const DisconnectedError& e) {
            report.errors.push_back({scenario.name + "-setup", 0, std::string("server unreachable: ") + e.what()});
        } catch (const Error& e) {
            report.errors.push_back({scenario.name + "-setup", 0, std::string("model registration failed: ") + e.what()});
        }
    }

    // Event ids carry a tag of (scenario, seed): a re-run against the same
    // server is recognized as a retry, a different seed is not.
    const std::string run_tag = sha256_hex(scenario.name + ":" + std::to_string(seed)).substr(0, 8);
    AckedVersions acked;
    std::vector<std::unique_ptr<SimClient>> clients;
    for (std::size_t i = 0; i < scenario.clients.size(); ++i) {
        const auto& script = scenario.clients[i];
        clients.push_back(std::make_unique<SimClient>(
            scenario, script, make_link(script.client_id),
            net::TransferModel(profile, mix_seed(mix_seed(profile.seed, seed), i)), mix_seed(seed, 1000 + i), options,
            report, acked, run_tag));
    }
    for (;;) {
        SimClient* next = nullptr;
        for (auto& c : clients) {
            if (!c->done() && (!next || c->clock() < next->clock())) next = c.get();
        }
        if (!next) break;
        next->step();
    }
    for (auto& c : clients) c->finish();
    for (auto& c : clients) report.clients.push_back(c->report());

    // Read back each touched model's authoritative state.
    std::set<std::string> tokens;
    for (const auto& c : scenario.clients) {
        for (const auto& s : c.steps) {
            if (const auto* j = std::get_if<JoinStep>(&s)) tokens.insert(j->qr_token);
        }
    }
    std::string combined;
    auto observer = make_link(scenario.name + "-observer");
    for (const auto& token : tokens) {
        try {
            observer->connect();
            const auto reply = observer->join(token, std::nullopt);
            if (!reply.snapshot) continue;
            const auto engine = sync::SyncEngine::restore(*reply.snapshot);
            ModelState m;
            m.model_id = reply.model.model_id;
            m.version = engine.version();
            m.markers = engine.markers().size();
            m.ledger_entries = engine.ledger().size();
            m.conflicts = engine.conflicts().size();
            m.sealed = engine.sealed();
            m.state_hash = state_hash(*reply.snapshot);
            m.snapshot = *reply.snapshot;
            combined += m.model_id + ":" + m.state_hash + "\n";
            report.final_states.push_back(std::move(m));
        } catch (const UnknownTokenError&) {
            // Already reported by the client that tried to join.
        } catch (const Error& e) {
            report.errors.push_back({scenario.name + "-observer", 0, "cannot read final state: " + std::string(e.what())});
        }
    }
    observer->disconnect();
    report.final_state_hash = sha256_hex(combined);
    return report;
}

/// In-process links to `svc`, with optional per-client fault plans.
inline LinkFactory in_process_links(service::SessionService& svc, std::map<std::string, FaultPlan> faults = {}) {
    return [&svc, faults = std::move(faults)](const std::string& client_id) -> std::unique_ptr<ServerLink> {
        auto it = faults.find(client_id);
        return std::make_unique<InProcessLink>(svc, client_id, it == faults.end() ? FaultPlan{} : it->second);
    };
}

}  // namespace arinspect::sim
