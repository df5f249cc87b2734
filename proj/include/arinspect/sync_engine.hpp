#pragma once

// Session state machine for one model: marker annotation in model-local
// coordinates, model moves that leave markers parented to the model, damage
// record appends, session sealing, and last-write-wins merging with a
// conflict log of superseded concurrent writes.
//
// LWW field units: a marker's metadata (label + details), a marker's local
// position, the model transform, and each damage record.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <variant>
#include <vector>

#include "arinspect/damage_model.hpp"
#include "arinspect/error.hpp"
#include "arinspect/geometry.hpp"
#include "arinspect/json_io.hpp"
#include "arinspect/lww_register.hpp"

namespace arinspect::sync {

using geometry::Transform;
using geometry::Vec3;

// ---------------------------------------------------------------------------
// Events

struct MarkerMetadata {
    std::string label;
    std::string details;

    friend bool operator==(const MarkerMetadata&, const MarkerMetadata&) = default;
};

/// `marker_id` 0 asks the authority to allocate one. `local_position` is filled
/// in by the authority; clients supply the world-frame cursor position and,
/// optionally, the model transform they saw when placing it.
struct AddMarker {
    std::int64_t marker_id = 0;
    Vec3 world_position = Vec3::Zero();
    std::optional<Transform> reference_transform;
    std::optional<Vec3> local_position;
    MarkerMetadata metadata;
};

/// Exactly one of `metadata` / `local_position`.
struct EditMarker {
    std::int64_t marker_id = 0;
    std::optional<MarkerMetadata> metadata;
    std::optional<Vec3> local_position;
    std::string base;
};

struct MoveModel {
    Transform transform;
    std::string base;
};

struct AppendRecord {
    std::int64_t location_id = 0;
    damage::DamageRecord record;
};

struct EndSession {};

enum class EventKind { AddMarker, EditMarker, MoveModel, AppendRecord, EndSession };

using EventPayload = std::variant<AddMarker, EditMarker, MoveModel, AppendRecord, EndSession>;

struct SessionEvent {
    std::string event_id;
    std::string client_id;
    std::int64_t timestamp_ms = 0;
    EventPayload payload;

    EventKind kind() const { return static_cast<EventKind>(payload.index()); }
    WriteStamp stamp() const { return {timestamp_ms, client_id, event_id}; }
};

inline const char* kind_name(EventKind k) {
    switch (k) {
        case EventKind::AddMarker: return "AddMarker";
        case EventKind::EditMarker: return "EditMarker";
        case EventKind::MoveModel: return "MoveModel";
        case EventKind::AppendRecord: return "AppendRecord";
        case EventKind::EndSession: return "EndSession";
    }
    return "?";
}

inline Json metadata_to_json(const MarkerMetadata& m) {
    Json j = Json::object();
    j["label"] = m.label;
    j["details"] = m.details;
    return j;
}

inline MarkerMetadata metadata_from_json(const Json& j, const std::string& path) {
    return {json_io::get_string(j, "label", path), json_io::get_string(j, "details", path)};
}

inline Json event_to_json(const SessionEvent& e) {
    Json j = Json::object();
    j["event_id"] = e.event_id;
    j["client_id"] = e.client_id;
    j["timestamp_ms"] = e.timestamp_ms;
    j["kind"] = kind_name(e.kind());
    Json p = Json::object();
    std::visit(
        [&p](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, AddMarker>) {
                p["marker_id"] = v.marker_id;
                p["world_position"] = json_io::vec3_to_json(v.world_position);
                if (v.reference_transform) {
                    p["reference_transform"] = json_io::transform_to_json(*v.reference_transform);
                }
                if (v.local_position) p["local_position"] = json_io::vec3_to_json(*v.local_position);
                p["label"] = v.metadata.label;
                p["details"] = v.metadata.details;
            } else if constexpr (std::is_same_v<V, EditMarker>) {
                p["marker_id"] = v.marker_id;
                if (v.metadata) {
                    p["label"] = v.metadata->label;
                    p["details"] = v.metadata->details;
                }
                if (v.local_position) p["local_position"] = json_io::vec3_to_json(*v.local_position);
                p["base"] = v.base;
            } else if constexpr (std::is_same_v<V, MoveModel>) {
                p["transform"] = json_io::transform_to_json(v.transform);
                p["base"] = v.base;
            } else if constexpr (std::is_same_v<V, AppendRecord>) {
                p["location_id"] = v.location_id;
                p["record"] = damage::record_to_json(v.record);
            }
        },
        e.payload);
    j["payload"] = std::move(p);
    return j;
}

inline SessionEvent event_from_json(const Json& j, const std::string& path = "event") {
    SessionEvent e;
    e.event_id = json_io::get_string(j, "event_id", path);
    e.client_id = json_io::get_string(j, "client_id", path);
    e.timestamp_ms = json_io::get_integer(j, "timestamp_ms", path);
    const std::string kind = json_io::get_string(j, "kind", path);
    const std::string pp = json_io::join_path(path, "payload");
    const Json empty = Json::object();
    const Json& p = json_io::has(j, "payload") ? json_io::field(j, "payload", path) : empty;
    auto opt_string = [&](const char* key) {
        return json_io::has(p, key) ? json_io::get_string(p, key, pp) : std::string();
    };
    if (kind == "AddMarker") {
        AddMarker a;
        a.marker_id = json_io::has(p, "marker_id") ? json_io::get_integer(p, "marker_id", pp) : 0;
        a.world_position = json_io::vec3_from_json(json_io::field(p, "world_position", pp),
                                                   json_io::join_path(pp, "world_position"));
        if (json_io::has(p, "reference_transform")) {
            a.reference_transform = json_io::transform_from_json(
                p.at("reference_transform"), json_io::join_path(pp, "reference_transform"));
        }
        if (json_io::has(p, "local_position")) {
            a.local_position = json_io::vec3_from_json(p.at("local_position"),
                                                       json_io::join_path(pp, "local_position"));
        }
        a.metadata = {opt_string("label"), opt_string("details")};
        e.payload = std::move(a);
    } else if (kind == "EditMarker") {
        EditMarker m;
        m.marker_id = json_io::get_integer(p, "marker_id", pp);
        if (json_io::has(p, "label") || json_io::has(p, "details")) {
            m.metadata = MarkerMetadata{opt_string("label"), opt_string("details")};
        }
        if (json_io::has(p, "local_position")) {
            m.local_position = json_io::vec3_from_json(p.at("local_position"),
                                                       json_io::join_path(pp, "local_position"));
        }
        m.base = opt_string("base");
        e.payload = std::move(m);
    } else if (kind == "MoveModel") {
        MoveModel m{json_io::transform_from_json(json_io::field(p, "transform", pp),
                                                 json_io::join_path(pp, "transform")),
                    opt_string("base")};
        e.payload = std::move(m);
    } else if (kind == "AppendRecord") {
        AppendRecord a;
        a.location_id = json_io::get_integer(p, "location_id", pp);
        a.record = damage::record_from_json(json_io::field(p, "record", pp),
                                            json_io::join_path(pp, "record"));
        e.payload = std::move(a);
    } else if (kind == "EndSession") {
        e.payload = EndSession{};
    } else {
        throw ParseError(json_io::join_path(path, "kind"), "unknown event kind '" + kind + "'");
    }
    return e;
}

// ---------------------------------------------------------------------------
// State types

struct LocationMarker {
    std::int64_t marker_id = 0;
    Vec3 local_position = Vec3::Zero();
    std::string label;
    std::string details;
    std::int64_t created_ms = 0;
    std::int64_t modified_ms = 0;
    std::string author;

    friend bool operator==(const LocationMarker&, const LocationMarker&) = default;
};

/// A field unit that LWW resolves independently.
struct FieldKey {
    enum class Kind { model, marker_metadata, marker_position, record };
    Kind kind = Kind::model;
    std::int64_t id = 0;

    auto operator<=>(const FieldKey&) const = default;

    std::string to_string() const {
        switch (kind) {
            case Kind::model: return "model/transform";
            case Kind::marker_metadata: return "marker:" + std::to_string(id) + "/metadata";
            case Kind::marker_position: return "marker:" + std::to_string(id) + "/position";
            case Kind::record: return "record:" + std::to_string(id);
        }
        return "?";
    }

    static FieldKey parse(const std::string& s, const std::string& path) {
        auto fail = [&] { return ParseError(path, "bad conflict target '" + s + "'"); };
        if (s == "model/transform") return {Kind::model, 0};
        try {
            if (s.rfind("record:", 0) == 0) return {Kind::record, std::stoll(s.substr(7))};
            if (s.rfind("marker:", 0) == 0) {
                const auto slash = s.find('/');
                if (slash == std::string::npos) throw fail();
                const auto id = std::stoll(s.substr(7, slash - 7));
                const auto field = s.substr(slash + 1);
                if (field == "metadata") return {Kind::marker_metadata, id};
                if (field == "position") return {Kind::marker_position, id};
            }
        } catch (const std::logic_error&) {
        }
        throw fail();
    }
};

/// A write that lost a last-write-wins race against a write made without it in view.
struct ConflictEntry {
    FieldKey target;
    SessionEvent losing_event;
    Json superseded_value;
    std::int64_t winning_timestamp_ms = 0;
    std::string winning_client_id;
    std::string winning_event_id;
};

inline Json conflict_to_json(const ConflictEntry& c) {
    Json j = Json::object();
    j["target"] = c.target.to_string();
    j["losing_event"] = event_to_json(c.losing_event);
    j["superseded_value"] = c.superseded_value;
    j["winning_timestamp_ms"] = c.winning_timestamp_ms;
    j["winning_client_id"] = c.winning_client_id;
    j["winning_event_id"] = c.winning_event_id;
    return j;
}

inline ConflictEntry conflict_from_json(const Json& j, const std::string& path) {
    ConflictEntry c;
    c.target = FieldKey::parse(json_io::get_string(j, "target", path), path + ".target");
    c.losing_event = event_from_json(json_io::field(j, "losing_event", path), path + ".losing_event");
    c.superseded_value = json_io::field(j, "superseded_value", path);
    c.winning_timestamp_ms = json_io::get_integer(j, "winning_timestamp_ms", path);
    c.winning_client_id = json_io::get_string(j, "winning_client_id", path);
    c.winning_event_id = json_io::get_string(j, "winning_event_id", path);
    return c;
}

struct ApplyResult {
    std::uint64_t version = 0;
    /// The event as applied, with allocated ids and model-local coordinates filled in.
    SessionEvent applied;
    /// Conflict entries created or re-targeted by this event.
    std::vector<ConflictEntry> conflicts;
    /// The event id had already been applied; nothing changed.
    bool duplicate = false;
};

// ---------------------------------------------------------------------------
// Engine

class SyncEngine {
public:
    explicit SyncEngine(std::string model_id = {}) : model_id_(std::move(model_id)) {}

    /// Authoritative apply: validates, allocates ids, converts the cursor
    /// position to model coordinates. Strong exception guarantee.
    ApplyResult apply_event(const SessionEvent& event) { return ingest(event, true); }

    /// Replica merge of an already-applied event. Order-insensitive and idempotent.
    ApplyResult merge(const SessionEvent& event) { return ingest(event, false); }

    const std::string& model_id() const noexcept { return model_id_; }
    std::uint64_t version() const noexcept { return version_; }
    bool sealed() const noexcept { return sealed_; }
    bool has_applied(const std::string& event_id) const { return applied_.contains(event_id); }

    Transform model_transform() const {
        const auto* w = model_.winner();
        return w ? w->value : Transform::identity();
    }

    std::optional<LocationMarker> marker(std::int64_t id) const {
        auto it = markers_.find(id);
        if (it == markers_.end()) return std::nullopt;
        return it->second.view(id);
    }

    /// Markers whose creation has been applied, by id.
    std::map<std::int64_t, LocationMarker> markers() const {
        std::map<std::int64_t, LocationMarker> out;
        for (const auto& [id, slot] : markers_) {
            if (auto m = slot.view(id)) out.emplace(id, *m);
        }
        return out;
    }

    Vec3 world_position_of(std::int64_t marker_id) const {
        auto m = marker(marker_id);
        if (!m) throw NotFoundError("unknown marker " + std::to_string(marker_id));
        return geometry::to_world_coordinates(m->local_position, model_transform());
    }

    /// Winning record per id, ordered by (timestamp, location, record id).
    const damage::DamageLedger& ledger() const {
        if (ledger_dirty_) {
            std::vector<damage::LedgerEntry> entries;
            for (const auto& [id, reg] : records_) {
                const auto* w = reg.winner();
                entries.push_back({w->value.location_id, w->value.record, w->stamp.timestamp_ms});
            }
            std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
                return std::tie(a.timestamp_ms, a.location_id, a.record.id) <
                       std::tie(b.timestamp_ms, b.location_id, b.record.id);
            });
            damage::DamageLedger fresh;
            for (const auto& e : entries) fresh.append(e.location_id, e.record, e.timestamp_ms);
            ledger_cache_ = std::move(fresh);
            ledger_dirty_ = false;
        }
        return ledger_cache_;
    }

    /// All conflict entries ordered by (target, losing stamp).
    std::vector<ConflictEntry> conflicts() const {
        std::vector<ConflictEntry> out;
        out.reserve(conflicts_.size());
        for (const auto& [key, c] : conflicts_) out.push_back(c);
        return out;
    }

    /// Stamp of the current winning write of a field.
    std::optional<WriteStamp> head_stamp(const FieldKey& key) const {
        const WriteStamp* s = nullptr;
        switch (key.kind) {
            case FieldKey::Kind::model:
                if (auto* w = model_.winner()) s = &w->stamp;
                break;
            case FieldKey::Kind::marker_metadata:
            case FieldKey::Kind::marker_position: {
                auto it = markers_.find(key.id);
                if (it == markers_.end()) break;
                if (key.kind == FieldKey::Kind::marker_metadata) {
                    if (auto* w = it->second.metadata.winner()) s = &w->stamp;
                } else if (auto* w = it->second.position.winner()) {
                    s = &w->stamp;
                }
                break;
            }
            case FieldKey::Kind::record: {
                auto it = records_.find(key.id);
                if (it != records_.end()) s = &it->second.winner()->stamp;
                break;
            }
        }
        if (!s) return std::nullopt;
        return *s;
    }

    /// Event id of the current winning write of a field; empty if none.
    std::string head(const FieldKey& key) const {
        auto s = head_stamp(key);
        return s ? s->event_id : std::string();
    }

    // -- persistence ------------------------------------------------------

    Json snapshot() const {
        Json j = Json::object();
        j["model_id"] = model_id_;
        j["version"] = version_;
        j["sealed"] = sealed_;
        j["next_marker_id"] = next_marker_id_;
        j["next_record_id"] = next_record_id_;
        j["model_transform"] = json_io::transform_to_json(model_transform());
        j["model_write"] = model_.winner() ? stamp_to_json(model_.winner()->stamp) : Json();
        Json markers = Json::array();
        for (const auto& [id, slot] : markers_) {
            auto m = slot.view(id);
            if (!m) continue;
            Json mj = Json::object();
            mj["marker_id"] = id;
            mj["local_position"] = json_io::vec3_to_json(m->local_position);
            mj["label"] = m->label;
            mj["details"] = m->details;
            mj["created_ms"] = m->created_ms;
            mj["modified_ms"] = m->modified_ms;
            mj["author"] = m->author;
            mj["created_write"] = stamp_to_json(slot.metadata.root()->stamp);
            mj["metadata_write"] = stamp_to_json(slot.metadata.winner()->stamp);
            mj["position_write"] = stamp_to_json(slot.position.winner()->stamp);
            markers.push_back(std::move(mj));
        }
        j["markers"] = std::move(markers);
        Json ledger = Json::array();
        for (const auto& e : this->ledger().entries()) {
            Json ej = damage::entry_to_json(e);
            ej["write"] = stamp_to_json(records_.at(e.record.id).winner()->stamp);
            ledger.push_back(std::move(ej));
        }
        j["ledger"] = std::move(ledger);
        Json conflicts = Json::array();
        for (const auto& c : this->conflicts()) conflicts.push_back(conflict_to_json(c));
        j["conflicts"] = std::move(conflicts);
        return j;
    }

    static SyncEngine restore(const Json& j) {
        const std::string root = "snapshot";
        SyncEngine s(json_io::get_string(j, "model_id", root));
        s.version_ = static_cast<std::uint64_t>(json_io::get_integer(j, "version", root));
        s.sealed_ = json_io::get_bool(j, "sealed", root);
        s.next_marker_id_ = json_io::get_integer(j, "next_marker_id", root);
        s.next_record_id_ = json_io::get_integer(j, "next_record_id", root);
        if (json_io::has(j, "model_write")) {
            auto stamp = stamp_from_json(j.at("model_write"), root + ".model_write");
            auto t = json_io::transform_from_json(json_io::field(j, "model_transform", root),
                                                  root + ".model_transform");
            s.model_.insert({stamp, {}, false, t, synthetic_event(stamp)});
        }
        const Json& markers = json_io::field(j, "markers", root);
        if (!markers.is_array()) throw ParseError(root + ".markers", "expected an array");
        for (std::size_t i = 0; i < markers.size(); ++i) {
            const std::string p = root + ".markers[" + std::to_string(i) + "]";
            const Json& mj = markers[i];
            const auto id = json_io::get_integer(mj, "marker_id", p);
            auto& slot = s.markers_[id];
            const auto created = stamp_from_json(json_io::field(mj, "created_write", p), p + ".created_write");
            const auto meta_w = stamp_from_json(json_io::field(mj, "metadata_write", p), p + ".metadata_write");
            const auto pos_w = stamp_from_json(json_io::field(mj, "position_write", p), p + ".position_write");
            const MarkerMetadata meta{json_io::get_string(mj, "label", p),
                                      json_io::get_string(mj, "details", p)};
            const Vec3 local = json_io::vec3_from_json(json_io::field(mj, "local_position", p),
                                                       p + ".local_position");
            // The creation write is the root; later winners are edits on top of it.
            slot.metadata.insert({created, {}, true, meta, synthetic_event(created)});
            slot.position.insert({created, {}, true, local, synthetic_event(created)});
            if (meta_w != created) {
                slot.metadata.insert({meta_w, created.event_id, false, meta, synthetic_event(meta_w)});
            }
            if (pos_w != created) {
                slot.position.insert({pos_w, created.event_id, false, local, synthetic_event(pos_w)});
            }
            s.next_marker_id_ = std::max(s.next_marker_id_, id + 1);
        }
        const Json& ledger = json_io::field(j, "ledger", root);
        if (!ledger.is_array()) throw ParseError(root + ".ledger", "expected an array");
        for (std::size_t i = 0; i < ledger.size(); ++i) {
            const std::string p = root + ".ledger[" + std::to_string(i) + "]";
            const auto e = damage::entry_from_json(ledger[i], p);
            const auto stamp = stamp_from_json(json_io::field(ledger[i], "write", p), p + ".write");
            s.records_[e.record.id].insert(
                {stamp, {}, true, RecordValue{e.location_id, e.record}, synthetic_event(stamp)});
            s.next_record_id_ = std::max(s.next_record_id_, e.record.id + 1);
        }
        s.ledger_dirty_ = true;
        const Json& conflicts = json_io::field(j, "conflicts", root);
        if (!conflicts.is_array()) throw ParseError(root + ".conflicts", "expected an array");
        for (std::size_t i = 0; i < conflicts.size(); ++i) {
            auto c = conflict_from_json(conflicts[i], root + ".conflicts[" + std::to_string(i) + "]");
            s.conflicts_.emplace(ConflictKey{c.target, c.losing_event.stamp()}, std::move(c));
        }
        return s;
    }

private:
    using EventPtr = std::shared_ptr<const SessionEvent>;

    struct RecordValue {
        std::int64_t location_id = 0;
        damage::DamageRecord record;
    };

    struct MarkerSlot {
        LwwRegister<MarkerMetadata, SessionEvent> metadata;
        LwwRegister<Vec3, SessionEvent> position;

        std::optional<LocationMarker> view(std::int64_t id) const {
            const auto* root = metadata.root();
            if (!root) return std::nullopt;
            const auto* meta = metadata.winner();
            const auto* pos = position.winner();
            LocationMarker m;
            m.marker_id = id;
            m.local_position = pos->value;
            m.label = meta->value.label;
            m.details = meta->value.details;
            m.created_ms = root->stamp.timestamp_ms;
            m.modified_ms = std::max(meta->stamp.timestamp_ms, pos->stamp.timestamp_ms);
            m.author = root->stamp.client_id;
            return m;
        }
    };

    using ConflictKey = std::pair<FieldKey, WriteStamp>;

    static Json stamp_to_json(const WriteStamp& s) {
        Json j = Json::object();
        j["timestamp_ms"] = s.timestamp_ms;
        j["client_id"] = s.client_id;
        j["event_id"] = s.event_id;
        return j;
    }

    static WriteStamp stamp_from_json(const Json& j, const std::string& path) {
        return {json_io::get_integer(j, "timestamp_ms", path), json_io::get_string(j, "client_id", path),
                json_io::get_string(j, "event_id", path)};
    }

    /// Restored winners keep only their stamp; the full event is in the server log.
    static EventPtr synthetic_event(const WriteStamp& s) {
        auto e = std::make_shared<SessionEvent>();
        e->event_id = s.event_id;
        e->client_id = s.client_id;
        e->timestamp_ms = s.timestamp_ms;
        e->payload = EndSession{};
        return e;
    }

    static void validate_envelope(const SessionEvent& e) {
        if (e.event_id.empty()) throw ValidationError("event_id must not be empty");
        if (e.client_id.empty()) throw ValidationError("client_id must not be empty");
        if (e.timestamp_ms <= 0) throw ValidationError("timestamp_ms must be positive");
        if (const auto* edit = std::get_if<EditMarker>(&e.payload)) {
            if (edit->metadata.has_value() == edit->local_position.has_value()) {
                throw ValidationError("EditMarker must carry exactly one of metadata or local_position");
            }
            if (edit->local_position && !edit->local_position->allFinite()) {
                throw ValidationError("EditMarker local_position is not finite");
            }
        }
        if (const auto* add = std::get_if<AddMarker>(&e.payload)) {
            if (!add->world_position.allFinite()) throw ValidationError("AddMarker position is not finite");
        }
        if (const auto* rec = std::get_if<AppendRecord>(&e.payload)) rec->record.validate();
    }

    ApplyResult ingest(const SessionEvent& in, bool authoritative) {
        validate_envelope(in);
        if (auto it = applied_.find(in.event_id); it != applied_.end()) {
            return {it->second, in, {}, true};
        }
        if (authoritative && sealed_) {
            throw SealedError("session is sealed; event " + in.event_id + " rejected");
        }

        // Resolve everything that can fail before touching state.
        SessionEvent ev = in;
        std::int64_t next_marker = next_marker_id_;
        std::int64_t next_record = next_record_id_;
        if (auto* add = std::get_if<AddMarker>(&ev.payload)) {
            if (add->marker_id == 0) add->marker_id = next_marker;
            if (authoritative && marker(add->marker_id)) {
                throw ValidationError("duplicate marker id " + std::to_string(add->marker_id));
            }
            if (!add->local_position) {
                const Transform ref = add->reference_transform.value_or(model_transform());
                add->local_position = geometry::to_model_coordinates(add->world_position, ref);
            }
            next_marker = std::max(next_marker, add->marker_id + 1);
        } else if (auto* edit = std::get_if<EditMarker>(&ev.payload)) {
            if (authoritative && !marker(edit->marker_id)) {
                throw NotFoundError("unknown marker " + std::to_string(edit->marker_id));
            }
        } else if (auto* rec = std::get_if<AppendRecord>(&ev.payload)) {
            if (rec->record.id == 0) rec->record.id = next_record;
            if (authoritative && records_.contains(rec->record.id)) {
                throw ValidationError("duplicate damage record id " + std::to_string(rec->record.id));
            }
            next_record = std::max(next_record, rec->record.id + 1);
        }

        // Mutation; nothing below throws for a validated event.
        const auto shared = std::make_shared<const SessionEvent>(ev);
        const WriteStamp stamp = ev.stamp();
        std::vector<FieldKey> touched;
        std::visit(
            [&](const auto& p) {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, AddMarker>) {
                    auto& slot = markers_[p.marker_id];
                    slot.metadata.insert({stamp, {}, true, p.metadata, shared});
                    slot.position.insert({stamp, {}, true, *p.local_position, shared});
                    touched.push_back({FieldKey::Kind::marker_metadata, p.marker_id});
                    touched.push_back({FieldKey::Kind::marker_position, p.marker_id});
                } else if constexpr (std::is_same_v<P, EditMarker>) {
                    auto& slot = markers_[p.marker_id];
                    if (p.metadata) {
                        slot.metadata.insert({stamp, p.base, false, *p.metadata, shared});
                        touched.push_back({FieldKey::Kind::marker_metadata, p.marker_id});
                    } else {
                        slot.position.insert({stamp, p.base, false, *p.local_position, shared});
                        touched.push_back({FieldKey::Kind::marker_position, p.marker_id});
                    }
                } else if constexpr (std::is_same_v<P, MoveModel>) {
                    model_.insert({stamp, p.base, false, p.transform, shared});
                    touched.push_back({FieldKey::Kind::model, 0});
                } else if constexpr (std::is_same_v<P, AppendRecord>) {
                    records_[p.record.id].insert({stamp, {}, true, RecordValue{p.location_id, p.record}, shared});
                    touched.push_back({FieldKey::Kind::record, p.record.id});
                    ledger_dirty_ = true;
                } else {
                    sealed_ = true;
                }
            },
            ev.payload);
        next_marker_id_ = next_marker;
        next_record_id_ = next_record;

        ApplyResult result;
        for (const auto& key : touched) refresh_conflicts(key, result.conflicts);
        result.version = ++version_;
        applied_.emplace(ev.event_id, result.version);
        result.applied = std::move(ev);
        return result;
    }

    template <typename Reg, typename ToJson>
    void collect_losses(const FieldKey& key, const Reg& reg, ToJson to_json,
                        std::vector<ConflictEntry>& changed) {
        const auto losses = reg.concurrent_losses();
        // A write that fills a gap in a base chain can turn an apparent loss
        // back into an observed one; drop entries that no longer hold.
        for (auto it = conflicts_.lower_bound({key, WriteStamp{}}); it != conflicts_.end() && it->first.first == key;) {
            const bool still = std::any_of(losses.begin(), losses.end(),
                                           [&](const auto& l) { return l.loser->stamp == it->first.second; });
            it = still ? std::next(it) : conflicts_.erase(it);
        }
        for (const auto& loss : losses) {
            ConflictEntry c;
            c.target = key;
            c.losing_event = *loss.loser->source;
            c.superseded_value = to_json(loss.loser->value);
            c.winning_timestamp_ms = loss.winner->stamp.timestamp_ms;
            c.winning_client_id = loss.winner->stamp.client_id;
            c.winning_event_id = loss.winner->stamp.event_id;
            ConflictKey ck{key, loss.loser->stamp};
            auto it = conflicts_.find(ck);
            if (it == conflicts_.end()) {
                changed.push_back(c);
                conflicts_.emplace(std::move(ck), std::move(c));
            } else if (it->second.winning_event_id != c.winning_event_id) {
                changed.push_back(c);
                it->second = std::move(c);
            }
        }
    }

    void refresh_conflicts(const FieldKey& key, std::vector<ConflictEntry>& changed) {
        switch (key.kind) {
            case FieldKey::Kind::model:
                collect_losses(key, model_, json_io::transform_to_json, changed);
                break;
            case FieldKey::Kind::marker_metadata:
                collect_losses(key, markers_.at(key.id).metadata, metadata_to_json, changed);
                break;
            case FieldKey::Kind::marker_position:
                collect_losses(key, markers_.at(key.id).position, json_io::vec3_to_json, changed);
                break;
            case FieldKey::Kind::record:
                collect_losses(
                    key, records_.at(key.id),
                    [](const RecordValue& v) {
                        Json j = damage::record_to_json(v.record);
                        j["location_id"] = v.location_id;
                        return j;
                    },
                    changed);
                break;
        }
    }

    std::string model_id_;
    std::uint64_t version_ = 0;
    bool sealed_ = false;
    std::int64_t next_marker_id_ = 1;
    std::int64_t next_record_id_ = 1;
    LwwRegister<Transform, SessionEvent> model_;
    std::map<std::int64_t, MarkerSlot> markers_;
    std::map<std::int64_t, LwwRegister<RecordValue, SessionEvent>> records_;
    std::map<ConflictKey, ConflictEntry> conflicts_;
    std::unordered_map<std::string, std::uint64_t> applied_;
    mutable damage::DamageLedger ledger_cache_;
    mutable bool ledger_dirty_ = false;
};

}  // namespace arinspect::sync
