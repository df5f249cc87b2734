// arinspect: serve sessions, run scripted clients, evaluate alignment logs,
// query damage ledgers, and run network timing benchmarks.
//
// Exit codes: 0 success, 1 user error (bad flags, unreadable or invalid
// input, bind failure), 2 internal or scenario failure.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "arinspect/arinspect.hpp"

namespace {

using namespace arinspect;

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kInternalError = 2;

struct UserError : Error {
    using Error::Error;
};

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("arinspect");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e %^%l%$ %v");
    const char* level = std::getenv("ARINSPECT_LOG");
    spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

std::string resolve_data_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("ARINSPECT_DATA_DIR"); env && *env) return env;
    throw UserError("no data directory: pass --data-dir or set ARINSPECT_DATA_DIR");
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot open '" + path + "'");
    return in;
}

void print_json(const Json& j) { std::cout << j.dump(2) << "\n"; }

// ---------------------------------------------------------------------------

struct ServeArgs {
    std::string listen = "127.0.0.1:7070";
    std::string data_dir;
    std::size_t snapshot_interval = 100;
    bool fsync = false;
};

int cmd_serve(const ServeArgs& a) {
    service::ServiceOptions opts;
    opts.data_dir = resolve_data_dir(a.data_dir);
    opts.snapshot_interval = a.snapshot_interval;
    opts.fsync = a.fsync;

    // Signals are taken synchronously by a dedicated thread.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    service::SessionService svc(opts);
    tcp::Server server(svc, tcp::Endpoint::parse(a.listen));
    try {
        server.bind();
    } catch (const Error& e) {
        throw UserError(e.what());
    }
    std::cout << "listening on " << server.endpoint().to_string() << std::endl;
    spdlog::info("data directory {}, {} model(s) recovered", opts.data_dir.string(), svc.model_ids().size());

    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        spdlog::info("received signal {}, shutting down", sig);
        server.stop();
    });
    server.run();
    waiter.join();
    spdlog::default_logger()->flush();
    return kOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string scenario;
    std::string profile;
    std::string profile_name;
    std::string server = "embedded";
    std::uint64_t seed = 0;
    std::string format = "json";
};

void write_simulation_text(std::ostream& os, const sim::ScenarioReport& r) {
    os << "scenario " << r.scenario << ", profile " << r.profile << ", seed " << r.seed << "\n";
    os << std::fixed << std::setprecision(2);
    for (const auto& c : r.clients) {
        os << "client " << c.client_id << ": " << c.events_created << " created, " << c.events_acked << " acked, "
           << c.queued_remaining << " queued";
        for (auto op : net::kOperations) {
            std::vector<double> d;
            for (const auto& t : c.timings) {
                if (t.operation == op) d.push_back(t.duration_ms);
            }
            if (!d.empty()) os << ", " << net::operation_name(op) << " median " << alignment::percentile(d, 50) << " ms";
        }
        os << "\n";
    }
    for (const auto& m : r.final_states) {
        os << "model " << m.model_id << ": version " << m.version << ", " << m.markers << " markers, "
           << m.ledger_entries << " records, " << m.conflicts << " conflicts" << (m.sealed ? ", sealed" : "")
           << "\n  state " << m.state_hash << "\n";
    }
    for (const auto& e : r.errors) os << "error: " << e.client_id << " step " << e.step << ": " << e.message << "\n";
    if (r.queued_remaining() > 0) os << "error: " << r.queued_remaining() << " item(s) never delivered\n";
    os.unsetf(std::ios::floatfield);
}

int cmd_simulate(const SimulateArgs& a) {
    sim::Scenario scenario;
    net::NetworkProfile profile{"loopback", 0.0, 1e9, 0.0, 0};
    try {
        scenario = sim::load_scenario(a.scenario);
        if (!a.profile.empty()) {
            auto in = open_input(a.profile);
            const auto profiles = net::load_profiles(in);
            profile = profiles.front();
            if (!a.profile_name.empty()) {
                auto it = std::find_if(profiles.begin(), profiles.end(),
                                       [&](const auto& p) { return p.name == a.profile_name; });
                if (it == profiles.end()) throw UserError("profile '" + a.profile_name + "' not in " + a.profile);
                profile = *it;
            }
        }
    } catch (const ParseError& e) {
        throw UserError(e.what());
    } catch (const ValidationError& e) {
        throw UserError(e.what());
    }

    sim::ScenarioReport report;
    if (a.server == "embedded") {
        service::SessionService svc;
        report = sim::run_scenario(scenario, profile, a.seed, sim::in_process_links(svc));
    } else {
        tcp::Endpoint ep;
        try {
            ep = tcp::Endpoint::parse(a.server);
        } catch (const ValidationError& e) {
            throw UserError(e.what());
        }
        report = sim::run_scenario(scenario, profile, a.seed, [ep](const std::string& id) {
            return std::make_unique<tcp::TcpLink>(ep, id);
        });
    }
    if (a.format == "json") {
        print_json(sim::report_to_json(report));
    } else {
        write_simulation_text(std::cout, report);
    }
    return report.ok() ? kOk : kInternalError;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string log;
    std::vector<double> tolerances{5.0, 10.0, 20.0};
    std::string format = "text";
};

int cmd_eval_alignment(const EvalArgs& a) {
    auto in = open_input(a.log);
    alignment::LoadResult loaded;
    try {
        loaded = alignment::load_trials(in);
    } catch (const ParseError& e) {
        throw UserError(a.log + ": " + e.what());
    }
    if (loaded.trials.empty()) throw UserError(a.log + ": trial log contains no records");
    for (double t : a.tolerances) {
        if (!(t >= 0.0)) throw UserError("tolerances must be >= 0");
    }
    const auto summary = alignment::summarize_by_distance(loaded.trials);
    std::vector<double> trans;
    for (const auto& t : loaded.trials) trans.push_back(alignment::compute_trial_errors(t).translation_cm);
    const auto curve = alignment::cdf(trans);

    if (a.format == "json") {
        Json j = Json::object();
        j["trials"] = loaded.trials.size();
        j["per_distance"] = alignment::report_to_json(summary);
        Json c = Json::array();
        for (const auto& p : curve) c.push_back(Json{{"translation_cm", p.value}, {"fraction", p.fraction}});
        j["translation_cdf"] = std::move(c);
        Json comp = Json::array();
        for (double t : a.tolerances) {
            comp.push_back(Json{{"tolerance_cm", t}, {"fraction", alignment::tolerance_compliance(trans, t)}});
        }
        j["compliance"] = std::move(comp);
        print_json(j);
        return kOk;
    }
    if (a.format == "csv") {
        alignment::write_report_csv(std::cout, summary);
        return kOk;
    }
    std::cout << loaded.trials.size() << " trials\n\n";
    alignment::write_report_text(std::cout, summary);
    std::cout << "\ntranslation error CDF (cm)\n" << std::fixed << std::setprecision(2);
    for (const auto& p : curve) std::cout << std::setw(10) << p.value << std::setw(8) << p.fraction << "\n";
    std::cout << "\ncompliance\n";
    for (double t : a.tolerances) {
        std::cout << "  <= " << t << " cm: " << alignment::tolerance_compliance(trans, t) * 100.0 << "%\n";
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct LedgerArgs {
    std::string data_dir;
    std::int64_t location = 0;
    std::string label;
    std::string model;
    std::string format = "text";
};

int cmd_ledger(const LedgerArgs& a) {
    service::ServiceOptions opts;
    opts.data_dir = resolve_data_dir(a.data_dir);
    opts.read_only = true;
    if (!std::filesystem::is_directory(opts.data_dir)) {
        throw UserError("data directory '" + opts.data_dir.string() + "' does not exist");
    }
    service::SessionService svc(opts);
    std::vector<std::string> models = a.model.empty() ? svc.model_ids() : std::vector<std::string>{a.model};

    struct Row {
        std::string model_id;
        damage::LedgerEntry entry;
    };
    std::vector<Row> rows;
    for (const auto& id : models) {
        sync::SyncEngine engine;
        try {
            engine = svc.engine_copy(id);
        } catch (const NotFoundError&) {
            throw UserError("unknown model '" + id + "'");
        }
        for (auto& e : engine.ledger().history(a.location, a.label)) rows.push_back({id, std::move(e)});
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& x, const Row& y) { return x.entry.timestamp_ms < y.entry.timestamp_ms; });

    if (a.format == "json") {
        Json out = Json::array();
        for (const auto& r : rows) {
            Json j = damage::entry_to_json(r.entry);
            j["model_id"] = r.model_id;
            out.push_back(std::move(j));
        }
        print_json(out);
        return kOk;
    }
    std::cout << std::left << std::setw(10) << "date" << std::right << std::setw(8) << "record" << std::setw(12)
              << "length_m" << std::setw(12) << "area_m2" << std::setw(14) << "perimeter_m" << "  model\n";
    std::cout << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        const auto& rec = r.entry.record;
        std::cout << std::left << std::setw(10) << rec.date.format() << std::right << std::setw(8) << rec.id
                  << std::setw(12) << rec.length << std::setw(12) << rec.area << std::setw(14) << rec.perimeter
                  << "  " << r.model_id << "\n";
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string scenario;
    std::string profiles;
    std::size_t trials = 5;
    std::string format = "text";
};

int cmd_net_bench(const BenchArgs& a) {
    sim::Scenario scenario;
    std::vector<net::NetworkProfile> profiles;
    try {
        scenario = sim::load_scenario(a.scenario);
        auto in = open_input(a.profiles);
        profiles = net::load_profiles(in);
    } catch (const ParseError& e) {
        throw UserError(e.what());
    }
    if (a.trials < 1) throw UserError("--trials must be >= 1");
    const auto report = net::run_timing_experiment(scenario, profiles, a.trials);
    if (a.format == "json") {
        print_json(net::experiment_to_json(report));
    } else {
        net::write_experiment_text(std::cout, report);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Collaborative AR inspection toolkit: session server, client simulator, evaluation tools"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "arinspect 0.1.0");

    ServeArgs serve;
    auto* s = app.add_subcommand("serve", "Run the session server");
    s->add_option("--listen", serve.listen, "Address to listen on (host:port)")->capture_default_str();
    s->add_option("--data-dir", serve.data_dir, "Data directory; defaults to $ARINSPECT_DATA_DIR");
    s->add_option("--snapshot-interval", serve.snapshot_interval, "Events between session snapshots")
        ->capture_default_str();
    s->add_flag("--fsync", serve.fsync, "Sync the event log to disk before each acknowledgement");

    SimulateArgs simulate;
    auto* m = app.add_subcommand("simulate", "Run a client scenario and print its report");
    m->add_option("--scenario", simulate.scenario, "Scenario file (JSON)")->required()->check(CLI::ExistingFile);
    m->add_option("--profile", simulate.profile, "Network profile file (JSON); default is an ideal link")
        ->check(CLI::ExistingFile);
    m->add_option("--profile-name", simulate.profile_name, "Pick a profile by name from a multi-profile file");
    m->add_option("--server", simulate.server, "host:port of a running server, or 'embedded'")->capture_default_str();
    m->add_option("--seed", simulate.seed, "Seed for detection noise and jitter")->capture_default_str();
    m->add_option("--format", simulate.format, "Output format")
        ->check(CLI::IsMember({"json", "text"}))
        ->capture_default_str();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval-alignment", "Per-distance alignment error report from a trial log");
    e->add_option("--log", eval.log, "Trial log (one JSON object per line)")->required()->check(CLI::ExistingFile);
    e->add_option("--tolerance", eval.tolerances, "Translation tolerance(s) in cm for compliance")
        ->delimiter(',')
        ->capture_default_str();
    e->add_option("--format", eval.format, "Output format")
        ->check(CLI::IsMember({"json", "text", "csv"}))
        ->capture_default_str();

    LedgerArgs ledger;
    auto* l = app.add_subcommand("ledger", "Damage measurement history for one location and label");
    l->add_option("--data-dir", ledger.data_dir, "Server data directory; defaults to $ARINSPECT_DATA_DIR");
    l->add_option("--location", ledger.location, "Location marker id")->required();
    l->add_option("--label", ledger.label, "Damage label, e.g. crack or spalling")->required();
    l->add_option("--model", ledger.model, "Restrict to one model id");
    l->add_option("--format", ledger.format, "Output format")
        ->check(CLI::IsMember({"json", "text"}))
        ->capture_default_str();

    BenchArgs bench;
    auto* b = app.add_subcommand("net-bench", "Timing experiment over network profiles");
    b->add_option("--scenario", bench.scenario, "Scenario file (JSON)")->required()->check(CLI::ExistingFile);
    b->add_option("--profiles", bench.profiles, "Profiles file (JSON)")->required()->check(CLI::ExistingFile);
    b->add_option("--trials", bench.trials, "Runs per profile")->capture_default_str();
    b->add_option("--format", bench.format, "Output format")
        ->check(CLI::IsMember({"json", "text"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUserError;
    }

    try {
        if (*s) return cmd_serve(serve);
        if (*m) return cmd_simulate(simulate);
        if (*e) return cmd_eval_alignment(eval);
        if (*l) return cmd_ledger(ledger);
        if (*b) return cmd_net_bench(bench);
    } catch (const UserError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUserError;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << "\n";
        return kInternalError;
    }
    return kUserError;
}
