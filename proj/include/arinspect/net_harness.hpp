#pragma once

// Deterministic network emulation: a transfer costs latency plus payload over
// throughput plus seeded uniform jitter. Also profile calibration from observed
// timings and box-plot statistics for timing samples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "arinspect/alignment_eval.hpp"
#include "arinspect/error.hpp"
#include "arinspect/json_io.hpp"

namespace arinspect::net {

struct NetworkProfile {
    std::string name;
    double latency_ms = 0.0;
    double throughput_bytes_per_s = 1.0;
    double jitter_ms = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(latency_ms >= 0.0) || !std::isfinite(latency_ms)) {
            throw ValidationError("profile '" + name + "': latency_ms must be >= 0");
        }
        if (!(throughput_bytes_per_s > 0.0) || !std::isfinite(throughput_bytes_per_s)) {
            throw ValidationError("profile '" + name + "': throughput_bytes_per_s must be > 0");
        }
        if (!(jitter_ms >= 0.0) || !std::isfinite(jitter_ms)) {
            throw ValidationError("profile '" + name + "': jitter_ms must be >= 0");
        }
    }

    friend bool operator==(const NetworkProfile&, const NetworkProfile&) = default;
};

/// True when `a` is at least as fast as `b` on every axis.
inline bool dominates(const NetworkProfile& a, const NetworkProfile& b) {
    return a.latency_ms <= b.latency_ms && a.throughput_bytes_per_s >= b.throughput_bytes_per_s;
}

inline Json profile_to_json(const NetworkProfile& p) {
    Json j = Json::object();
    j["name"] = p.name;
    j["latency_ms"] = p.latency_ms;
    j["throughput_bytes_per_s"] = p.throughput_bytes_per_s;
    j["jitter_ms"] = p.jitter_ms;
    j["seed"] = p.seed;
    return j;
}

inline NetworkProfile profile_from_json(const Json& j, const std::string& path) {
    NetworkProfile p;
    p.name = json_io::get_string(j, "name", path);
    p.latency_ms = json_io::get_number(j, "latency_ms", path);
    p.throughput_bytes_per_s = json_io::get_number(j, "throughput_bytes_per_s", path);
    p.jitter_ms = json_io::has(j, "jitter_ms") ? json_io::get_number(j, "jitter_ms", path) : 0.0;
    p.seed = json_io::has(j, "seed") ? static_cast<std::uint64_t>(json_io::get_integer(j, "seed", path)) : 0;
    try {
        p.validate();
    } catch (const ValidationError& e) {
        throw ParseError(path, e.what());
    }
    return p;
}

/// Accepts a single profile object, an array of them, or {"profiles": [...]}.
inline std::vector<NetworkProfile> profiles_from_json(const Json& j) {
    const Json* list = &j;
    if (j.is_object() && j.contains("profiles")) list = &j.at("profiles");
    if (list->is_object()) return {profile_from_json(*list, "profile")};
    if (!list->is_array()) throw ParseError("profiles", "expected an object or an array");
    std::vector<NetworkProfile> out;
    for (std::size_t i = 0; i < list->size(); ++i) {
        out.push_back(profile_from_json((*list)[i], "profiles[" + std::to_string(i) + "]"));
    }
    if (out.empty()) throw ParseError("profiles", "no profiles given");
    return out;
}

inline std::vector<NetworkProfile> load_profiles(std::istream& in) {
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError("profiles", e.what());
    }
    return profiles_from_json(j);
}

/// Seeded transfer-time source for one profile.
class TransferModel {
public:
    TransferModel(NetworkProfile profile, std::uint64_t seed) : profile_(std::move(profile)), rng_(seed) {
        profile_.validate();
    }
    explicit TransferModel(const NetworkProfile& profile) : TransferModel(profile, profile.seed) {}

    double transfer_ms(std::uint64_t payload_bytes) {
        double d = profile_.latency_ms + static_cast<double>(payload_bytes) / profile_.throughput_bytes_per_s * 1000.0;
        if (profile_.jitter_ms > 0.0) d += std::uniform_real_distribution<double>(0.0, profile_.jitter_ms)(rng_);
        return d;
    }

    const NetworkProfile& profile() const noexcept { return profile_; }

private:
    NetworkProfile profile_;
    std::mt19937_64 rng_;
};

/// One transfer drawn from the profile's own seed.
inline double simulate_transfer(const NetworkProfile& profile, std::uint64_t payload_bytes) {
    return TransferModel(profile).transfer_ms(payload_bytes);
}

/// Throughput that makes a jitter-free transfer of `payload_bytes` take exactly
/// `observed_ms` at the given latency.
inline double calibrate_profile(double observed_ms, std::uint64_t payload_bytes, double latency_ms) {
    if (!(observed_ms > latency_ms)) {
        throw ValidationError("observed duration " + std::to_string(observed_ms) +
                              " ms must exceed latency " + std::to_string(latency_ms) + " ms");
    }
    if (payload_bytes == 0) throw ValidationError("calibration needs a non-empty payload");
    return static_cast<double>(payload_bytes) / ((observed_ms - latency_ms) / 1000.0);
}

inline NetworkProfile calibrated(std::string name, double latency_ms, double observed_ms,
                                 std::uint64_t payload_bytes, double jitter_ms = 0.0, std::uint64_t seed = 0) {
    NetworkProfile p{std::move(name), latency_ms, calibrate_profile(observed_ms, payload_bytes, latency_ms),
                     jitter_ms, seed};
    p.validate();
    return p;
}

inline constexpr std::uint64_t kBeamModelBytes = 154'000'000;
inline constexpr std::uint64_t kBridgeModelBytes = 430'000'000;

/// Per-scenario 4G/5G profiles fitted to the reported model load times.
inline std::vector<NetworkProfile> calibrated_profiles(bool with_jitter = false) {
    const double j4 = with_jitter ? 5.0 : 0.0;
    const double j5 = with_jitter ? 2.0 : 0.0;
    return {
        calibrated("4G-beam", 25.0, 3000.0, kBeamModelBytes, j4, 41),
        calibrated("5G-beam", 20.0, 1200.0, kBeamModelBytes, j5, 51),
        calibrated("4G-bridge", 25.0, 4000.0, kBridgeModelBytes, j4, 42),
        calibrated("5G-bridge", 20.0, 1500.0, kBridgeModelBytes, j5, 52),
    };
}

// ---------------------------------------------------------------------------
// Timing samples and box plots

enum class Operation { model_load, data_load, data_save };

inline const char* operation_name(Operation op) {
    switch (op) {
        case Operation::model_load: return "model_load";
        case Operation::data_load: return "data_load";
        case Operation::data_save: return "data_save";
    }
    return "?";
}

inline constexpr Operation kOperations[] = {Operation::model_load, Operation::data_load, Operation::data_save};

struct TimingSample {
    Operation operation = Operation::model_load;
    double duration_ms = 0.0;
    std::string profile;
    std::uint64_t payload_bytes = 0;
};

struct BoxStats {
    std::size_t n = 0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    double whisker_low = 0.0;
    double whisker_high = 0.0;
    std::vector<double> outliers;
};

/// Quartiles by linear-interpolated percentiles; Tukey 1.5 IQR fences.
inline BoxStats boxplot_stats(std::span<const double> samples) {
    if (samples.empty()) throw ValidationError("boxplot_stats needs at least one sample");
    std::vector<double> v(samples.begin(), samples.end());
    std::sort(v.begin(), v.end());
    BoxStats b;
    b.n = v.size();
    b.median = alignment::percentile_sorted(v, 50.0);
    b.q1 = alignment::percentile_sorted(v, 25.0);
    b.q3 = alignment::percentile_sorted(v, 75.0);
    b.iqr = b.q3 - b.q1;
    const double lo = b.q1 - 1.5 * b.iqr;
    const double hi = b.q3 + 1.5 * b.iqr;
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
    bool have_low = false;
    for (double x : v) {
        if (x < lo || x > hi) {
            b.outliers.push_back(x);
            continue;
        }
        if (!have_low) {
            b.whisker_low = x;
            have_low = true;
        }
        b.whisker_high = x;
    }
    return b;
}

inline Json boxstats_to_json(const BoxStats& b) {
    Json j = Json::object();
    j["n"] = b.n;
    j["median"] = b.median;
    j["q1"] = b.q1;
    j["q3"] = b.q3;
    j["iqr"] = b.iqr;
    j["whisker_low"] = b.whisker_low;
    j["whisker_high"] = b.whisker_high;
    j["outliers"] = b.outliers;
    return j;
}

}  // namespace arinspect::net
