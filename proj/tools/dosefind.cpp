// dosefind: batch studies, posterior inspection and the trial-conduct server.
//
//   dosefind study <config.json> [--seed S] [--reps R] [--workers W] [--out DIR]
//   dosefind posterior <history.json> [--out density.csv]
//   dosefind serve [--bind host:port] [--data-dir DIR]

#include <csignal>
#include <pthread.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "dosefind/config.hpp"
#include "dosefind/http.hpp"
#include "dosefind/report.hpp"
#include "dosefind/service.hpp"
#include "dosefind/simulator.hpp"

using namespace dosefind;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error(path, "cannot read file");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct StudyArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> reps;
    std::optional<std::size_t> workers;
    std::optional<std::string> out;
};

int cmd_study(const StudyArgs& a, const std::vector<std::string>& argv) {
    StudyConfig cfg = parse_study_config(parse_json_text(read_file(a.config), a.config));
    for (auto& s : cfg.spec.scenarios) {
        if (a.seed) s.seed = *a.seed;
        if (a.reps) s.replications = *a.reps;
        s.validate();
    }
    if (a.workers) cfg.spec.workers = *a.workers;
    if (a.out) cfg.output_dir = *a.out;

    RunInfo info;
    info.argv = argv;
    info.started_at = utc_timestamp();
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = run_study(cfg.spec);
    info.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    info.finished_at = utc_timestamp();

    std::filesystem::create_directories(cfg.output_dir);
    const std::filesystem::path dir(cfg.output_dir);
    std::ostringstream table;
    write_table(table, reports, cfg.spec);
    std::ofstream(dir / "table.txt") << table.str();
    {
        std::ofstream rows(dir / "rows.jsonl");
        write_rows(rows, reports);
    }
    std::ofstream(dir / "manifest.json") << manifest(cfg, reports, info).dump(2) << '\n';
    std::cout << table.str() << "wrote " << (dir / "table.txt").string() << ", rows.jsonl, manifest.json ("
              << info.seconds << " s)\n";
    return 0;
}

int cmd_posterior(const std::string& path, const std::optional<std::string>& out) {
    const json j = parse_json_text(read_file(path), path);
    detail::ObjectReader r(j, "");
    TrialModel model;
    if (r.has("model")) model = parse_model(r.at("model"), "model");
    GridResolution res{128, 128};
    if (r.has("grid")) res = parse_grid(r.at("grid"), "grid", res);
    const double omega = r.number("omega", 0.25);
    if (!(omega > 0.0 && omega < 1.0)) throw validation_error("omega", "must lie in (0, 1)");
    History h;
    const json& hist = r.at("history");
    if (!hist.is_array()) throw validation_error("history", "expected an array");
    for (std::size_t i = 0; i < hist.size(); ++i) {
        detail::ObjectReader o(hist[i], "history[" + std::to_string(i) + "]");
        const double dose = o.number("dose");
        const std::uint64_t y = o.unsigned_int("outcome");
        o.finish();
        h.push_back({dose, static_cast<int>(y)});
    }
    std::optional<DesignPolicy> pol;
    std::string pol_name;
    if (r.has("policy")) pol = parse_policy(r.at("policy"), "policy", &pol_name);
    r.finish();

    const GridPosterior post = build_grid_posterior(model, h, res);
    json summary = posterior_summary(post, omega);
    summary["observations"] = h.size();
    summary["dlt_count"] = std::count_if(h.begin(), h.end(), [](const Observation& o) { return o.outcome == 1; });
    if (pol) {
        const DoseDecision d = decide(*pol, post, DesignState::from_history(h));
        std::optional<Observation> last;
        if (!h.empty()) last = h.back();
        summary["recommendation"] = decision_to_json(d, h.size() + 1, last, pol->enforce_coherence);
        summary["recommendation"]["policy"] = pol_name;
    }
    if (out) {
        std::ofstream f(*out);
        if (!f) throw validation_error("--out", "cannot write " + *out);
        f << "dose,density\n";
        const auto& xs = summary["density"]["x"];
        const auto& ys = summary["density"]["y"];
        for (std::size_t i = 0; i < xs.size(); ++i) f << xs[i].get<double>() << ',' << ys[i].get<double>() << '\n';
        summary.erase("density");
        summary["density_file"] = *out;
    }
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_serve(ServerOptions opt) {
    // signals go to a dedicated thread so the handler can stop the server safely
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    TrialService service(opt.data_dir);
    httplib::Server svr;
    install_routes(svr, service, opt.token);
    if (!svr.bind_to_port(opt.host, opt.port)) {
        std::cerr << "error: cannot bind " << opt.host << ':' << opt.port << " (address in use or not permitted)\n";
        return 1;
    }
    std::atomic<bool> signalled{false};
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        if (signalled.exchange(true)) return;
        std::cerr << "received signal " << sig << ", shutting down\n";
        svr.stop();
    });
    std::cerr << "dosefind serving on " << opt.host << ':' << opt.port << " (data: " << opt.data_dir << ", "
              << service.trial_count() << " trials loaded" << (opt.token ? ", token required" : "") << ")\n";
    svr.listen_after_bind();
    // events are fsynced on append, so nothing is pending here
    if (!signalled.exchange(true)) pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian dose-finding engine"};
    app.require_subcommand(1);

    StudyArgs study;
    auto* s = app.add_subcommand("study", "run a simulation study from a config file");
    s->add_option("config", study.config, "study config (JSON)")->required();
    s->add_option("--seed", study.seed, "override every scenario seed");
    s->add_option("--reps", study.reps, "override every scenario's replications");
    s->add_option("--workers", study.workers, "worker threads (0: all cores)");
    s->add_option("--out", study.out, "output directory");

    std::string history_path;
    std::optional<std::string> density_out;
    auto* p = app.add_subcommand("posterior", "summarize the posterior of a history file");
    p->add_option("history", history_path, "history file (JSON)")->required();
    p->add_option("--out", density_out, "write the density curve as CSV");

    std::optional<std::string> bind, data_dir;
    auto* v = app.add_subcommand("serve", "run the trial-conduct HTTP service");
    v->add_option("--bind", bind, "host:port (default from DOSEFIND_BIND or 127.0.0.1:8080)");
    v->add_option("--data-dir", data_dir, "event log directory (default from DOSEFIND_DATA_DIR or ./data)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*s) return cmd_study(study, std::vector<std::string>(argv, argv + argc));
        if (*p) return cmd_posterior(history_path, density_out);
        if (*v) {
            if (bind) setenv("DOSEFIND_BIND", bind->c_str(), 1);
            ServerOptions opt = ServerOptions::from_env();
            if (data_dir) opt.data_dir = *data_dir;
            return cmd_serve(opt);
        }
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
