#pragma once

// Timing experiments: run a scenario repeatedly per network profile against a
// fresh in-process server and summarize model_load / data_load / data_save.

#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "arinspect/client_sim.hpp"
#include "arinspect/net_harness.hpp"
#include "arinspect/session_service.hpp"

namespace arinspect::net {

struct ProfileTimings {
    NetworkProfile profile;
    std::vector<TimingSample> samples;
    std::map<Operation, BoxStats> stats;

    std::vector<double> durations(Operation op) const {
        std::vector<double> out;
        for (const auto& s : samples) {
            if (s.operation == op) out.push_back(s.duration_ms);
        }
        return out;
    }
};

/// Median of `fast` over median of `slow`, e.g. 5G against 4G.
struct MedianRatio {
    std::string fast;
    std::string slow;
    Operation operation = Operation::model_load;
    double ratio = 0.0;
};

struct ExperimentReport {
    std::string scenario;
    std::size_t trials = 0;
    std::vector<ProfileTimings> profiles;
    std::vector<MedianRatio> ratios;

    const ProfileTimings& at(const std::string& name) const {
        for (const auto& p : profiles) {
            if (p.profile.name == name) return p;
        }
        throw NotFoundError("no timings for profile '" + name + "'");
    }
};

/// Trial t of a profile runs with seed profile.seed + t. Throws if any trial
/// leaves errors or undelivered events.
inline ExperimentReport run_timing_experiment(const sim::Scenario& scenario, const std::vector<NetworkProfile>& profiles,
                                              std::size_t trials) {
    if (trials < 1) throw ValidationError("trials must be >= 1");
    if (profiles.empty()) throw ValidationError("no network profiles given");
    ExperimentReport out;
    out.scenario = scenario.name;
    out.trials = trials;
    for (const auto& profile : profiles) {
        ProfileTimings pt;
        pt.profile = profile;
        for (std::size_t t = 0; t < trials; ++t) {
            service::SessionService svc;
            const auto r = sim::run_scenario(scenario, profile, profile.seed + t, sim::in_process_links(svc));
            if (!r.ok()) {
                std::string why = r.errors.empty() ? std::to_string(r.queued_remaining()) + " events undelivered"
                                                   : r.errors.front().client_id + " step " +
                                                         std::to_string(r.errors.front().step) + ": " +
                                                         r.errors.front().message;
                throw Error("scenario '" + scenario.name + "' failed on profile '" + profile.name + "' trial " +
                            std::to_string(t) + ": " + why);
            }
            const auto samples = r.timings();
            pt.samples.insert(pt.samples.end(), samples.begin(), samples.end());
        }
        for (auto op : kOperations) {
            const auto d = pt.durations(op);
            if (!d.empty()) pt.stats.emplace(op, boxplot_stats(d));
        }
        out.profiles.push_back(std::move(pt));
    }
    for (const auto& fast : out.profiles) {
        const auto& name = fast.profile.name;
        const auto pos = name.find("5G");
        if (pos == std::string::npos) continue;
        std::string slow_name = name;
        slow_name.replace(pos, 2, "4G");
        for (const auto& slow : out.profiles) {
            if (slow.profile.name != slow_name) continue;
            for (auto op : kOperations) {
                if (!fast.stats.contains(op) || !slow.stats.contains(op)) continue;
                const double denom = slow.stats.at(op).median;
                if (denom > 0.0) out.ratios.push_back({name, slow_name, op, fast.stats.at(op).median / denom});
            }
        }
    }
    return out;
}

inline Json experiment_to_json(const ExperimentReport& r) {
    Json j = Json::object();
    j["scenario"] = r.scenario;
    j["trials"] = r.trials;
    Json profiles = Json::array();
    for (const auto& p : r.profiles) {
        Json pj = Json::object();
        pj["profile"] = profile_to_json(p.profile);
        Json stats = Json::object();
        for (const auto& [op, b] : p.stats) {
            Json sj = boxstats_to_json(b);
            sj["samples"] = p.durations(op);
            stats[operation_name(op)] = std::move(sj);
        }
        pj["operations"] = std::move(stats);
        profiles.push_back(std::move(pj));
    }
    j["profiles"] = std::move(profiles);
    Json ratios = Json::array();
    for (const auto& x : r.ratios) {
        ratios.push_back(Json{{"fast", x.fast}, {"slow", x.slow}, {"operation", operation_name(x.operation)}, {"median_ratio", x.ratio}});
    }
    j["ratios"] = std::move(ratios);
    return j;
}

inline void write_experiment_text(std::ostream& os, const ExperimentReport& r) {
    os << "scenario " << r.scenario << ", " << r.trials << " trial(s)\n";
    os << std::left << std::setw(14) << "profile" << std::setw(12) << "operation" << std::right << std::setw(6) << "n"
       << std::setw(12) << "median_ms" << std::setw(12) << "q1_ms" << std::setw(12) << "q3_ms" << std::setw(10)
       << "iqr_ms" << std::setw(10) << "outliers" << "\n";
    os << std::fixed << std::setprecision(2);
    for (const auto& p : r.profiles) {
        for (const auto& [op, b] : p.stats) {
            os << std::left << std::setw(14) << p.profile.name << std::setw(12) << operation_name(op) << std::right
               << std::setw(6) << b.n << std::setw(12) << b.median << std::setw(12) << b.q1 << std::setw(12) << b.q3
               << std::setw(10) << b.iqr << std::setw(10) << b.outliers.size() << "\n";
        }
    }
    if (!r.ratios.empty()) {
        os << "\nmedian ratios\n";
        os << std::setprecision(3);
        for (const auto& x : r.ratios) {
            os << "  " << x.fast << " / " << x.slow << " " << operation_name(x.operation) << ": " << x.ratio << "\n";
        }
    }
    os.unsetf(std::ios::floatfield);
}

}  // namespace arinspect::net
