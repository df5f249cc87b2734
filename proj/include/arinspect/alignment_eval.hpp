#pragma once

// Alignment-trial statistics: per-trial translation/rotation error, RMSE,
// percentiles, CDF, tolerance compliance and the per-distance report.
//
// Percentiles use linear interpolation between closest ranks on the sorted
// sample: rank = p/100 * (n - 1), zero-based.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "arinspect/error.hpp"
#include "arinspect/geometry.hpp"
#include "arinspect/json_io.hpp"

namespace arinspect::alignment {

struct AlignmentTrial {
    double distance_m = 0.0;
    std::int64_t run_id = 0;
    geometry::Pose model_pose;
    geometry::Pose structure_pose;
};

struct TrialErrors {
    double translation_cm = 0.0;
    double rotation_deg = 0.0;
};

struct AlignmentStats {
    double rmse = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
    std::size_t n = 0;
};

struct DistanceSummary {
    AlignmentStats translation_cm;
    AlignmentStats rotation_deg;
};

struct CdfPoint {
    double value = 0.0;
    double fraction = 0.0;
};

namespace detail {
inline void require_non_empty(std::span<const double> values, const char* what) {
    if (values.empty()) throw ValidationError(std::string(what) + ": empty input");
}
}  // namespace detail

inline TrialErrors compute_trial_errors(const AlignmentTrial& trial) {
    if (!(trial.distance_m > 0.0)) throw ValidationError("trial distance must be positive");
    return {geometry::translation_offset(trial.model_pose.position(),
                                         trial.structure_pose.position()) * 100.0,
            geometry::rotation_angle_between(trial.model_pose.orientation(),
                                             trial.structure_pose.orientation())};
}

/// Percentile of an already sorted sample.
inline double percentile_sorted(std::span<const double> sorted, double p) {
    detail::require_non_empty(sorted, "percentile");
    if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile p must lie in [0, 100]");
    const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    if (frac == 0.0) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double percentile(std::span<const double> values, double p) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return percentile_sorted(sorted, p);
}

inline double rmse(std::span<const double> values) {
    detail::require_non_empty(values, "rmse");
    double sum_sq = 0.0;
    for (double v : values) sum_sq += v * v;
    return std::sqrt(sum_sq / static_cast<double>(values.size()));
}

inline AlignmentStats summarize(std::span<const double> values) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return {rmse(values), percentile_sorted(sorted, 50.0), percentile_sorted(sorted, 95.0),
            values.size()};
}

/// Keyed by the exact recorded distance; no binning.
inline std::map<double, DistanceSummary> summarize_by_distance(
    std::span<const AlignmentTrial> trials) {
    if (trials.empty()) throw ValidationError("summarize_by_distance: no trials");
    std::map<double, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& t : trials) {
        const auto e = compute_trial_errors(t);
        auto& g = groups[t.distance_m];
        g.first.push_back(e.translation_cm);
        g.second.push_back(e.rotation_deg);
    }
    std::map<double, DistanceSummary> out;
    for (const auto& [d, g] : groups) {
        out.emplace(d, DistanceSummary{summarize(g.first), summarize(g.second)});
    }
    return out;
}

inline std::vector<CdfPoint> cdf(std::span<const double> values) {
    detail::require_non_empty(values, "cdf");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    std::vector<CdfPoint> out;
    out.reserve(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        out.push_back({sorted[i], static_cast<double>(i + 1) / n});
    }
    return out;
}

/// Fraction of values <= tolerance.
inline double tolerance_compliance(std::span<const double> values, double tolerance) {
    detail::require_non_empty(values, "tolerance_compliance");
    if (!(tolerance >= 0.0)) throw ValidationError("tolerance must be non-negative");
    const auto hits = std::count_if(values.begin(), values.end(),
                                    [tolerance](double v) { return v <= tolerance; });
    return static_cast<double>(hits) / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------
// Trial log: one JSON object per line.

struct LoadResult {
    std::vector<AlignmentTrial> trials;
    std::vector<std::string> warnings;
};

inline AlignmentTrial trial_from_json(const Json& j, const std::string& where) {
    AlignmentTrial t;
    t.distance_m = json_io::get_number(j, "distance_m", where);
    if (!(t.distance_m > 0.0)) throw ParseError(where + ".distance_m", "must be positive");
    t.run_id = json_io::get_integer(j, "run_id", where);
    t.model_pose = json_io::pose_from_json(json_io::field(j, "model_pose", where),
                                           where + ".model_pose");
    t.structure_pose = json_io::pose_from_json(json_io::field(j, "structure_pose", where),
                                               where + ".structure_pose");
    return t;
}

inline Json trial_to_json(const AlignmentTrial& t) {
    Json j = Json::object();
    j["distance_m"] = t.distance_m;
    j["run_id"] = t.run_id;
    j["model_pose"] = json_io::pose_to_json(t.model_pose);
    j["structure_pose"] = json_io::pose_to_json(t.structure_pose);
    return j;
}

/// Blank lines are skipped. Any malformed record throws ParseError naming "line N".
inline LoadResult load_trials(std::istream& in) {
    LoadResult out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(line_no);
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw ParseError(where, std::string("invalid JSON: ") + e.what());
        }
        out.trials.push_back(trial_from_json(j, where));
    }
    if (out.trials.empty()) out.warnings.emplace_back("trial log contains no records");
    return out;
}

// ---------------------------------------------------------------------------
// Reporting

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols = {"Distance",     "Trans_RMSE", "Trans_Median",
                                                  "Trans_P95",    "Rot_RMSE",   "Rot_Median",
                                                  "Rot_P95"};
    return cols;
}

inline std::vector<std::vector<double>> report_rows(const std::map<double, DistanceSummary>& s) {
    std::vector<std::vector<double>> rows;
    for (const auto& [d, v] : s) {
        rows.push_back({d, v.translation_cm.rmse, v.translation_cm.p50, v.translation_cm.p95,
                        v.rotation_deg.rmse, v.rotation_deg.p50, v.rotation_deg.p95});
    }
    return rows;
}

inline void write_report_csv(std::ostream& os, const std::map<double, DistanceSummary>& s) {
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& row : report_rows(s)) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << (i ? "," : "") << std::fixed << std::setprecision(i == 0 ? 0 : 2) << row[i];
        }
        os << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

inline void write_report_text(std::ostream& os, const std::map<double, DistanceSummary>& s) {
    const auto& cols = report_columns();
    for (const auto& c : cols) os << std::setw(13) << c;
    os << '\n';
    for (const auto& row : report_rows(s)) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << std::setw(13) << std::fixed << std::setprecision(i == 0 ? 0 : 2) << row[i];
        }
        os << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

inline Json stats_to_json(const AlignmentStats& s) {
    Json j = Json::object();
    j["rmse"] = s.rmse;
    j["p50"] = s.p50;
    j["p95"] = s.p95;
    j["n"] = s.n;
    return j;
}

inline Json report_to_json(const std::map<double, DistanceSummary>& s) {
    Json rows = Json::array();
    for (const auto& row : report_rows(s)) {
        Json r = Json::object();
        for (std::size_t i = 0; i < row.size(); ++i) r[report_columns()[i]] = row[i];
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace arinspect::alignment
