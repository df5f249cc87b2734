#pragma once

// Damage measurements from segmentation outlines, the damage-record schema
// (ID, label, length, perimeter, area, dd/mm/yy date) and the append-only
// per-location ledger.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <string>
#include <unordered_set>
#include <vector>

#include "arinspect/error.hpp"
#include "arinspect/geometry.hpp"
#include "arinspect/json_io.hpp"

namespace arinspect::damage {

using geometry::Vec3;

/// Maximum distance of an outline point from its best-fit plane, meters.
inline constexpr double kPlanarityTolerance = 0.02;

// ---------------------------------------------------------------------------
// Date

struct Date {
    int year = 2000;
    unsigned month = 1;
    unsigned day = 1;

    bool valid() const {
        return std::chrono::year_month_day{std::chrono::year{year}, std::chrono::month{month},
                                           std::chrono::day{day}}
            .ok();
    }

    /// UTC calendar date of a millisecond epoch timestamp.
    static Date from_timestamp_ms(std::int64_t ms) {
        using namespace std::chrono;
        const year_month_day ymd{floor<days>(sys_time<milliseconds>(milliseconds(ms)))};
        return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day())};
    }

    /// dd/mm/yy; two-digit years are 2000-2099.
    std::string format() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%02u/%02u/%02d", day, month, ((year % 100) + 100) % 100);
        return buf;
    }

    static Date parse(const std::string& text) {
        bool shape_ok = text.size() == 8 && text[2] == '/' && text[5] == '/';
        for (std::size_t i = 0; shape_ok && i < text.size(); ++i) {
            if (i != 2 && i != 5 && !std::isdigit(static_cast<unsigned char>(text[i]))) shape_ok = false;
        }
        if (!shape_ok) throw ValidationError("date '" + text + "' is not in dd/mm/yy form");
        auto two = [&](std::size_t at) {
            return static_cast<unsigned>((text[at] - '0') * 10 + (text[at + 1] - '0'));
        };
        const unsigned d = two(0), m = two(3), y = two(6);
        Date out{2000 + static_cast<int>(y), m, d};
        if (!out.valid()) throw ValidationError("date '" + text + "' is not a calendar date");
        return out;
    }

    friend bool operator==(const Date&, const Date&) = default;
};

// ---------------------------------------------------------------------------
// Outline measurements

struct SegmentationOutline {
    std::vector<Vec3> points;
    bool closed = false;
};

namespace detail {

struct PlaneFit {
    Vec3 centroid;
    Vec3 normal;
    Vec3 principal;
    double max_plane_deviation = 0.0;
    double max_line_deviation = 0.0;
    double extent = 0.0;
};

inline PlaneFit fit_plane(const std::vector<Vec3>& pts) {
    PlaneFit fit;
    fit.centroid = Vec3::Zero();
    for (const auto& p : pts) fit.centroid += p;
    fit.centroid /= static_cast<double>(pts.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Vec3 d = p - fit.centroid;
        cov += d * d.transpose();
        fit.extent = std::max(fit.extent, d.norm());
    }
    // Eigenvalues ascending: column 0 is the plane normal, column 2 the main axis.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    fit.normal = es.eigenvectors().col(0);
    fit.principal = es.eigenvectors().col(2);
    for (const auto& p : pts) {
        const Vec3 d = p - fit.centroid;
        fit.max_plane_deviation = std::max(fit.max_plane_deviation, std::abs(d.dot(fit.normal)));
        fit.max_line_deviation =
            std::max(fit.max_line_deviation, (d - d.dot(fit.principal) * fit.principal).norm());
    }
    return fit;
}

inline void require_polygon(const SegmentationOutline& o) {
    if (!o.closed) throw ValidationError("outline is open; a closed polygon is required");
    if (o.points.size() < 3) throw ValidationError("closed outline needs at least 3 points");
    const auto fit = fit_plane(o.points);
    if (fit.max_line_deviation <= 1e-9 * std::max(fit.extent, 1e-300)) {
        throw ValidationError("closed outline is degenerate: all points are collinear");
    }
}

inline double edge_sum(const std::vector<Vec3>& pts, bool wrap) {
    double total = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) total += (pts[i] - pts[i - 1]).norm();
    if (wrap && pts.size() > 1) total += (pts.front() - pts.back()).norm();
    return total;
}

}  // namespace detail

/// Sum of consecutive segment lengths of an open outline.
inline double polyline_length(const SegmentationOutline& o) {
    if (o.points.size() < 2) throw ValidationError("polyline needs at least 2 points");
    return detail::edge_sum(o.points, false);
}

/// Closed-polygon perimeter including the closing edge.
inline double polygon_perimeter(const SegmentationOutline& o) {
    detail::require_polygon(o);
    return detail::edge_sum(o.points, true);
}

/// Planar polygon area as half the norm of the Newell normal. Outlines whose
/// points stray more than kPlanarityTolerance from the best-fit plane are rejected.
inline double polygon_area(const SegmentationOutline& o) {
    detail::require_polygon(o);
    const auto fit = detail::fit_plane(o.points);
    if (fit.max_plane_deviation > kPlanarityTolerance) {
        throw ValidationError("outline is not planar: max deviation " +
                              std::to_string(fit.max_plane_deviation) + " m exceeds " +
                              std::to_string(kPlanarityTolerance) + " m");
    }
    Vec3 newell = Vec3::Zero();
    const std::size_t n = o.points.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 a = o.points[i] - fit.centroid;
        const Vec3 b = o.points[(i + 1) % n] - fit.centroid;
        newell += a.cross(b);
    }
    return 0.5 * newell.norm();
}

inline double max_pairwise_distance(const std::vector<Vec3>& pts) {
    double best = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, (pts[i] - pts[j]).norm());
    return best;
}

// ---------------------------------------------------------------------------
// Records

struct DamageRecord {
    std::int64_t id = 0;
    std::string damage_label;
    double length = 0.0;     // m
    double perimeter = 0.0;  // m
    double area = 0.0;       // m^2
    Date date;

    void validate() const {
        auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
        if (!ok(length)) throw ValidationError("record length must be finite and >= 0");
        if (!ok(perimeter)) throw ValidationError("record perimeter must be finite and >= 0");
        if (!ok(area)) throw ValidationError("record area must be finite and >= 0");
        if (!date.valid()) throw ValidationError("record date is not a calendar date");
    }

    friend bool operator==(const DamageRecord&, const DamageRecord&) = default;
};

enum class DamageClass { crack, spalling, other };

/// "crack"/"cracking" and "spall"/"spalling" prefixes, case-insensitive.
inline DamageClass classify_label(const std::string& label) {
    std::string lower(label);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower.rfind("crack", 0) == 0) return DamageClass::crack;
    if (lower.rfind("spall", 0) == 0) return DamageClass::spalling;
    return DamageClass::other;
}

/// Cracks measure length along the open polyline. Spalling (and other closed
/// outlines) measure area and perimeter; their length is the widest point pair.
inline DamageRecord make_record(std::int64_t id, const std::string& label,
                                const SegmentationOutline& outline, const Date& date) {
    const auto cls = classify_label(label);
    if (cls == DamageClass::crack && outline.closed) {
        throw ValidationError("label '" + label + "' expects an open outline");
    }
    if (cls == DamageClass::spalling && !outline.closed) {
        throw ValidationError("label '" + label + "' expects a closed outline");
    }
    DamageRecord r;
    r.id = id;
    r.damage_label = label;
    r.date = date;
    if (outline.closed) {
        r.area = polygon_area(outline);
        r.perimeter = polygon_perimeter(outline);
        r.length = max_pairwise_distance(outline.points);
    } else {
        r.length = polyline_length(outline);
    }
    r.validate();
    return r;
}

inline DamageRecord make_record(std::int64_t id, const std::string& label,
                                const SegmentationOutline& outline) {
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    return make_record(id, label, outline, Date::from_timestamp_ms(now));
}

inline Json record_to_json(const DamageRecord& r) {
    Json j = Json::object();
    j["id"] = r.id;
    j["damage_label"] = r.damage_label;
    j["length"] = r.length;
    j["perimeter"] = r.perimeter;
    j["area"] = r.area;
    j["date"] = r.date.format();
    return j;
}

inline DamageRecord record_from_json(const Json& j, const std::string& path = "") {
    DamageRecord r;
    r.id = json_io::get_integer(j, "id", path);
    r.damage_label = json_io::get_string(j, "damage_label", path);
    auto non_negative = [&](const char* key) {
        const double v = json_io::get_number(j, key, path);
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ParseError(json_io::join_path(path, key), "must be finite and >= 0");
        }
        return v;
    };
    r.length = non_negative("length");
    r.perimeter = non_negative("perimeter");
    r.area = non_negative("area");
    try {
        r.date = Date::parse(json_io::get_string(j, "date", path));
    } catch (const ValidationError& e) {
        throw ParseError(json_io::join_path(path, "date"), e.what());
    }
    return r;
}

inline std::string serialize_record(const DamageRecord& r) { return record_to_json(r).dump(); }

inline DamageRecord parse_record(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ParseError("", std::string("invalid JSON: ") + e.what());
    }
    return record_from_json(j);
}

// ---------------------------------------------------------------------------
// Ledger

struct LedgerEntry {
    std::int64_t location_id = 0;
    DamageRecord record;
    std::int64_t timestamp_ms = 0;

    friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

/// Append-only. Storage order is arrival order; history() orders by timestamp.
class DamageLedger {
public:
    void append(std::int64_t location_id, const DamageRecord& record, std::int64_t timestamp_ms) {
        record.validate();
        if (ids_.contains(record.id)) {
            throw ValidationError("duplicate damage record id " + std::to_string(record.id));
        }
        entries_.push_back({location_id, record, timestamp_ms});
        ids_.insert(record.id);
    }

    bool contains(std::int64_t record_id) const { return ids_.contains(record_id); }

    /// Entries for (location, label) in ascending timestamp order; ties keep arrival order.
    std::vector<LedgerEntry> history(std::int64_t location_id, const std::string& label) const {
        std::vector<LedgerEntry> out;
        for (const auto& e : entries_) {
            if (e.location_id == location_id && e.record.damage_label == label) out.push_back(e);
        }
        std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            return a.timestamp_ms < b.timestamp_ms;
        });
        return out;
    }

    const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    friend bool operator==(const DamageLedger& a, const DamageLedger& b) {
        return a.entries_ == b.entries_;
    }

private:
    std::vector<LedgerEntry> entries_;
    std::unordered_set<std::int64_t> ids_;
};

inline DamageLedger append_record(DamageLedger ledger, std::int64_t location_id,
                                  const DamageRecord& record, std::int64_t timestamp_ms) {
    ledger.append(location_id, record, timestamp_ms);
    return ledger;
}

/// Record fields plus the location_id / timestamp_ms envelope.
inline Json entry_to_json(const LedgerEntry& e) {
    Json j = Json::object();
    j["location_id"] = e.location_id;
    j["timestamp_ms"] = e.timestamp_ms;
    const Json rec = record_to_json(e.record);
    for (const auto& [k, v] : rec.items()) j[k] = v;
    return j;
}

inline LedgerEntry entry_from_json(const Json& j, const std::string& path = "") {
    LedgerEntry e;
    e.location_id = json_io::get_integer(j, "location_id", path);
    e.timestamp_ms = json_io::get_integer(j, "timestamp_ms", path);
    e.record = record_from_json(j, path);
    return e;
}

}  // namespace arinspect::damage
