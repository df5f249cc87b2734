#pragma once

// Newline-delimited JSON messages, one object per line with a "type" field.
//
// client -> server
//   HELLO    {client_id}
//   JOIN     {qr_token, last_version?}
//   EVENT    {event}
//   FETCH    {model_id, offset, length}       answered by BLOB + raw bytes
//   REGISTER {descriptor, blob: {synthetic_size, seed}}
// server -> client
//   SNAPSHOT {model, version, snapshot | null, events: [{version, event}]}
//   EVENT    {version, event}
//   ACK      {event_id, version, assigned_id}
//   BLOB     {model_id, offset, length}       followed by exactly `length` bytes
//   REGISTERED {model_id}
//   ERROR    {code, message}

#include <cstdint>
#include <exception>
#include <optional>
#include <string>

#include "arinspect/error.hpp"
#include "arinspect/json_io.hpp"
#include "arinspect/session_service.hpp"
#include "arinspect/sync_engine.hpp"

namespace arinspect::wire {

namespace code {
inline constexpr const char* unknown_token = "unknown_token";
inline constexpr const char* not_joined = "not_joined";
inline constexpr const char* sealed = "sealed";
inline constexpr const char* malformed = "malformed";
inline constexpr const char* validation = "validation";
inline constexpr const char* not_found = "not_found";
inline constexpr const char* limit_exceeded = "limit_exceeded";
inline constexpr const char* conflict = "conflict";
inline constexpr const char* lagged = "lagged";
inline constexpr const char* internal = "internal";
}  // namespace code

inline Json message(const char* type) {
    Json j = Json::object();
    j["type"] = type;
    return j;
}

inline Json hello(const std::string& client_id) {
    Json j = message("HELLO");
    j["client_id"] = client_id;
    return j;
}

inline Json join(const std::string& qr_token, std::optional<std::uint64_t> last_version) {
    Json j = message("JOIN");
    j["qr_token"] = qr_token;
    if (last_version) j["last_version"] = *last_version;
    return j;
}

inline Json broadcast_to_json(const service::Broadcast& b) {
    Json j = Json::object();
    j["version"] = b.version;
    j["event"] = sync::event_to_json(b.event);
    return j;
}

inline service::Broadcast broadcast_from_json(const Json& j, const std::string& path) {
    return {static_cast<std::uint64_t>(json_io::get_integer(j, "version", path)),
            sync::event_from_json(json_io::field(j, "event", path), json_io::join_path(path, "event"))};
}

inline Json snapshot(const service::JoinResult& r) {
    Json j = message("SNAPSHOT");
    j["model"] = service::descriptor_to_json(r.model);
    j["version"] = r.version;
    j["snapshot"] = r.snapshot ? *r.snapshot : Json();
    Json events = Json::array();
    for (const auto& b : r.missed) events.push_back(broadcast_to_json(b));
    j["events"] = std::move(events);
    return j;
}

inline Json submit(const sync::SessionEvent& e) {
    Json j = message("EVENT");
    j["event"] = sync::event_to_json(e);
    return j;
}

inline Json event(const service::Broadcast& b) {
    Json j = message("EVENT");
    j["version"] = b.version;
    j["event"] = sync::event_to_json(b.event);
    return j;
}

inline Json ack(const service::Ack& a) {
    Json j = message("ACK");
    j["event_id"] = a.event_id;
    j["version"] = a.version;
    j["assigned_id"] = a.assigned_id;
    return j;
}

inline service::Ack ack_from_json(const Json& j) {
    return {json_io::get_string(j, "event_id", "ACK"),
            static_cast<std::uint64_t>(json_io::get_integer(j, "version", "ACK")),
            json_io::has(j, "assigned_id") ? json_io::get_integer(j, "assigned_id", "ACK") : 0};
}

inline Json fetch(const std::string& model_id, std::uint64_t offset, std::uint64_t length) {
    Json j = message("FETCH");
    j["model_id"] = model_id;
    j["offset"] = offset;
    j["length"] = length;
    return j;
}

inline Json blob_header(const std::string& model_id, std::uint64_t offset, std::uint64_t length) {
    Json j = message("BLOB");
    j["model_id"] = model_id;
    j["offset"] = offset;
    j["length"] = length;
    return j;
}

inline Json register_synthetic(const service::ModelDescriptor& d, std::uint64_t seed) {
    Json j = message("REGISTER");
    j["descriptor"] = service::descriptor_to_json(d);
    Json blob = Json::object();
    blob["synthetic_size"] = d.blob_size_bytes;
    blob["seed"] = seed;
    j["blob"] = std::move(blob);
    return j;
}

inline Json registered(const std::string& model_id) {
    Json j = message("REGISTERED");
    j["model_id"] = model_id;
    return j;
}

inline Json error(const std::string& code, const std::string& text) {
    Json j = message("ERROR");
    j["code"] = code;
    j["message"] = text;
    return j;
}

/// Error code for an exception thrown while serving a request.
inline const char* code_for(const std::exception& e) {
    if (dynamic_cast<const UnknownTokenError*>(&e)) return code::unknown_token;
    if (dynamic_cast<const SealedError*>(&e)) return code::sealed;
    if (dynamic_cast<const SessionError*>(&e)) return code::not_joined;
    if (dynamic_cast<const ParseError*>(&e)) return code::malformed;
    if (dynamic_cast<const ValidationError*>(&e)) return code::validation;
    if (dynamic_cast<const NotFoundError*>(&e)) return code::not_found;
    if (dynamic_cast<const LimitExceededError*>(&e)) return code::limit_exceeded;
    if (dynamic_cast<const ConflictError*>(&e)) return code::conflict;
    if (dynamic_cast<const Json::exception*>(&e)) return code::malformed;
    return code::internal;
}

/// Rethrows a received ERROR message as the matching exception type.
[[noreturn]] inline void raise(const Json& err) {
    const std::string c = err.value("code", std::string(code::internal));
    const std::string m = err.value("message", std::string());
    if (c == code::unknown_token) {
        // The server message already carries the rescan prompt; recover the token.
        const auto a = m.find('\'');
        const auto b = a == std::string::npos ? a : m.find('\'', a + 1);
        throw UnknownTokenError(b == std::string::npos ? std::string() : m.substr(a + 1, b - a - 1));
    }
    if (c == code::sealed) throw SealedError(m);
    if (c == code::not_joined) throw SessionError(m);
    if (c == code::malformed) throw ParseError("message", m);
    if (c == code::validation) throw ValidationError(m);
    if (c == code::not_found) throw NotFoundError(m);
    if (c == code::limit_exceeded) throw LimitExceededError(m);
    if (c == code::conflict) throw ConflictError(m);
    throw Error(m);
}

}  // namespace arinspect::wire
