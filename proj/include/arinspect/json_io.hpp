#pragma once

// Shared structured-text helpers. Every decoder reports the dotted field path
// of the first offending value through ParseError.

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "arinspect/error.hpp"
#include "arinspect/geometry.hpp"

namespace arinspect {

/// Insertion-ordered so emitted documents have a stable field order.
using Json = nlohmann::ordered_json;

namespace json_io {

inline std::string join_path(std::string_view base, std::string_view key) {
    if (base.empty()) return std::string(key);
    return std::string(base) + "." + std::string(key);
}

inline const Json& field(const Json& obj, std::string_view key, std::string_view path) {
    if (!obj.is_object()) {
        throw ParseError(std::string(path), "expected an object");
    }
    auto it = obj.find(std::string(key));
    if (it == obj.end()) {
        throw ParseError(join_path(path, key), "missing field");
    }
    return *it;
}

inline bool has(const Json& obj, std::string_view key) {
    return obj.is_object() && obj.contains(std::string(key)) && !obj.at(std::string(key)).is_null();
}

inline double get_number(const Json& obj, std::string_view key, std::string_view path) {
    const Json& v = field(obj, key, path);
    if (!v.is_number()) throw ParseError(join_path(path, key), "expected a number");
    return v.get<double>();
}

inline std::int64_t get_integer(const Json& obj, std::string_view key, std::string_view path) {
    const Json& v = field(obj, key, path);
    if (!v.is_number_integer()) throw ParseError(join_path(path, key), "expected an integer");
    return v.get<std::int64_t>();
}

inline std::string get_string(const Json& obj, std::string_view key, std::string_view path) {
    const Json& v = field(obj, key, path);
    if (!v.is_string()) throw ParseError(join_path(path, key), "expected a string");
    return v.get<std::string>();
}

inline bool get_bool(const Json& obj, std::string_view key, std::string_view path) {
    const Json& v = field(obj, key, path);
    if (!v.is_boolean()) throw ParseError(join_path(path, key), "expected a boolean");
    return v.get<bool>();
}

template <std::size_t N>
std::array<double, N> number_array(const Json& v, std::string_view path) {
    if (!v.is_array() || v.size() != N) {
        throw ParseError(std::string(path), "expected an array of " + std::to_string(N) + " numbers");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        if (!v[i].is_number()) {
            throw ParseError(std::string(path) + "[" + std::to_string(i) + "]", "expected a number");
        }
        out[i] = v[i].get<double>();
    }
    return out;
}

inline Json vec3_to_json(const geometry::Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline geometry::Vec3 vec3_from_json(const Json& v, std::string_view path) {
    auto a = number_array<3>(v, path);
    return {a[0], a[1], a[2]};
}

inline Json quat_to_json(const geometry::Quat& q) { return Json::array({q.w(), q.x(), q.y(), q.z()}); }

/// Raw (w, x, y, z) quaternion; callers decide whether to validate or normalize.
inline geometry::Quat quat_from_json(const Json& v, std::string_view path) {
    auto a = number_array<4>(v, path);
    return {a[0], a[1], a[2], a[3]};
}

inline Json pose_to_json(const geometry::Pose& p) {
    Json j = Json::object();
    j["pos"] = vec3_to_json(p.position());
    j["quat"] = quat_to_json(p.orientation());
    return j;
}

/// Rejects quaternions farther than kUnitQuatTolerance from unit length.
inline geometry::Pose pose_from_json(const Json& j, std::string_view path) {
    const auto pos = vec3_from_json(field(j, "pos", path), join_path(path, "pos"));
    const auto q = quat_from_json(field(j, "quat", path), join_path(path, "quat"));
    if (!geometry::is_unit(q)) {
        throw ParseError(join_path(path, "quat"),
                         "quaternion norm " + std::to_string(q.norm()) + " is not unit");
    }
    try {
        return geometry::Pose(pos, q);
    } catch (const ValidationError& e) {
        throw ParseError(std::string(path), e.what());
    }
}

inline Json transform_to_json(const geometry::Transform& t) {
    Json j = pose_to_json(t.pose());
    j["scale"] = t.scale();
    return j;
}

inline geometry::Transform transform_from_json(const Json& j, std::string_view path) {
    const auto pose = pose_from_json(j, path);
    const double scale = has(j, "scale") ? get_number(j, "scale", path) : 1.0;
    try {
        return geometry::Transform(pose, scale);
    } catch (const ValidationError& e) {
        throw ParseError(join_path(path, "scale"), e.what());
    }
}

}  // namespace json_io
}  // namespace arinspect
