// Acceptance run: one PASS/FAIL line per criterion, with the supporting
// numbers indented above it. Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "dosefind/config.hpp"
#include "dosefind/service.hpp"
#include "dosefind/simulator.hpp"

using namespace dosefind;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& what) {
    std::printf("[%s] %d %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

template <class... A>
void note(const char* fmt, A... a) {
    std::printf("  ");
    std::printf(fmt, a...);
    std::printf("\n");
    std::fflush(stdout);
}

StudyConfig load(const std::string& name) {
    std::ifstream in(std::string(DOSEFIND_SOURCE_DIR) + "/configs/" + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_study_config(parse_json_text(ss.str(), name));
}

const DesignPolicy& policy_named(const StudyConfig& cfg, const std::string& name) {
    for (const auto& p : cfg.spec.policies)
        if (p.name == name) return p.policy;
    throw std::runtime_error("no policy " + name);
}

const ScenarioSpec& scenario_named(const StudyConfig& cfg, const std::string& name) {
    for (const auto& s : cfg.spec.scenarios)
        if (s.name == name) return s;
    throw std::runtime_error("no scenario " + name);
}

struct Run {
    PolicyRun run;
    MetricsReport m;
    double seconds = 0.0;
};

Run simulate(const DesignPolicy& pol, const std::shared_ptr<const GridGeometry>& geom, const ScenarioSpec& sc,
             const char* label) {
    const auto t0 = std::chrono::steady_clock::now();
    Run r;
    r.run = simulate_policy(pol, geom, sc, 0);
    r.m = compute_metrics(r.run.results, geom->model.p);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    note("simulated %s: %zu replications in %.1f s", label, sc.replications, r.seconds);
    return r;
}

double se_of(const Estimate& e) { return e.se.value_or(0.0); }

std::size_t count_violations(const PolicyRun& run, std::size_t* transitions) {
    std::size_t v = 0;
    for (const auto& r : run.results) {
        for (bool f : r.coherence_flags) v += f;
        *transitions += r.coherence_flags.size();
    }
    return v;
}

}  // namespace

int main() {
    const auto t_start = std::chrono::steady_clock::now();
    const StudyConfig bayes_cfg = load("bayes.json");
    const StudyConfig freq_cfg = load("frequentist.json");
    const TrialModel& model = bayes_cfg.spec.model;
    const auto geom = GridGeometry::make(model, bayes_cfg.spec.resolution);
    const ScenarioSpec& bayes = bayes_cfg.spec.scenarios.at(0);

    const DesignPolicy& ewoc_star = policy_named(bayes_cfg, "EWOC*");
    const DesignPolicy& ivoc = policy_named(bayes_cfg, "IVOC");
    const DesignPolicy& crm = policy_named(bayes_cfg, "CRM");
    const DesignPolicy& plus = policy_named(bayes_cfg, "EWOC+ l=.4");

    std::printf("acceptance: grid %zux%zu, %zu replications per scenario\n", bayes_cfg.spec.resolution.n_rho,
                bayes_cfg.spec.resolution.n_eta, bayes.replications);

    // ---------------------------------------------------------------- 1
    std::map<std::string, Run> b;
    b["EWOC*"] = simulate(ewoc_star, geom, bayes, "bayesian EWOC*");
    b["CRM"] = simulate(crm, geom, bayes, "bayesian CRM");
    b["IVOC"] = simulate(ivoc, geom, bayes, "bayesian IVOC");
    b["EWOC+"] = simulate(plus, geom, bayes, "bayesian EWOC+ (lambda=.4)");
    {
        struct Target {
            const char* policy;
            const char* metric;
            std::size_t k;
            double mean, se;
        };
        // metric indices: risk1 0, risk2 1, dlt 4, od 5; rates as proportions
        const Target targets[] = {
            {"EWOC*", "Risk1", 0, 485.5, 3.6},  {"EWOC*", "DLT", 4, 0.335, 0.001},  {"EWOC*", "OD", 5, 0.374, 0.001},
            {"CRM", "Risk1", 0, 986.1, 45.9},   {"CRM", "DLT", 4, 0.391, 0.001},    {"CRM", "OD", 5, 0.556, 0.001},
            {"IVOC", "Risk1", 0, 723.2, 3.6},   {"IVOC", "DLT", 4, 0.266, 0.0009},  {"EWOC+", "Risk1", 0, 454.8, 2.8},
            {"EWOC+", "Risk2", 1, 0.73, 0.007}, {"EWOC+", "DLT", 4, 0.291, 0.0009}, {"EWOC+", "OD", 5, 0.270, 0.0009},
        };
        int ok = 0, total = 0;
        for (const auto& t : targets) {
            const Estimate& e = metric(b[t.policy].m, t.k);
            const double comb = std::hypot(se_of(e), t.se);
            const double z = (e.mean - t.mean) / comb;
            const bool pass = std::abs(z) <= 3.0;
            ok += pass;
            ++total;
            note("%-6s %-6s ours %9.4f (%.4f)  target %9.4f (%.4f)  z=%+6.2f %s", t.policy, t.metric, e.mean, se_of(e),
                 t.mean, t.se, z, pass ? "ok" : "OUT");
        }
        verdict(1, ok == total,
                "Bayesian setting matches the reference values within 3 combined SEs (" + std::to_string(ok) + "/" +
                    std::to_string(total) + ")");
    }

    // ---------------------------------------------------------------- 2
    {
        const ScenarioSpec& f1 = scenario_named(freq_cfg, "freq1");
        const Run s = simulate(ewoc_star, geom, f1, "freq1 EWOC*");
        const Run v = simulate(ivoc, geom, f1, "freq1 IVOC");
        const Run p = simulate(plus, geom, f1, "freq1 EWOC+ (lambda=.4)");
        const bool od = s.m.od.mean == 0.0 && v.m.od.mean == 0.0;
        const double gap = s.m.rmse.mean - p.m.rmse.mean;
        const double comb = std::hypot(se_of(s.m.rmse), se_of(p.m.rmse));
        note("OD: EWOC* %.6f, IVOC %.6f (both must be exactly 0)", s.m.od.mean, v.m.od.mean);
        note("RMSE: EWOC* %.2f (%.2f), EWOC+ %.2f (%.2f); gap %.2f = %.2f combined SEs (need >= 2)", s.m.rmse.mean,
             se_of(s.m.rmse), p.m.rmse.mean, se_of(p.m.rmse), gap, gap / comb);
        verdict(2, od && gap >= 2.0 * comb, "Freq1: zero overdosing for EWOC* and IVOC; EWOC+ RMSE below EWOC*");
    }

    // ---------------------------------------------------------------- 3
    {
        const char* order[] = {"EWOC+", "EWOC*", "IVOC", "CRM"};
        bool ok = true;
        for (int i = 0; i + 1 < 4; ++i) {
            const Estimate &lo = b[order[i]].m.risk1, &hi = b[order[i + 1]].m.risk1;
            const double comb = std::hypot(se_of(lo), se_of(hi));
            const double g = (hi.mean - lo.mean) / comb;
            note("Risk1 %s %.1f < %s %.1f: gap %.2f combined SEs", order[i], lo.mean, order[i + 1], hi.mean, g);
            ok &= g >= 2.0;
        }
        verdict(3, ok, "Risk1 ordering EWOC+ < EWOC* < IVOC < CRM, each gap >= 2 combined SEs");
    }

    // ---------------------------------------------------------------- 4
    {
        bool ok = true;
        std::size_t t_crm = 0;
        const std::size_t v_crm = count_violations(b["CRM"].run, &t_crm);
        DesignPolicy ewoc;
        ewoc.rule = policy::Ewoc{0.25};
        ScenarioSpec sc = bayes;
        sc.replications = 500;
        // the quantile needs a grid fine enough to resolve posteriors collapsed against x_min
        const auto fine = GridGeometry::make(model, {256, 256});
        const Run e = simulate(ewoc, fine, sc, "bayesian EWOC(.25), 256 grid");
        std::size_t t_ewoc = 0;
        const std::size_t v_ewoc = count_violations(e.run, &t_ewoc);
        note("CRM: %zu violations in %zu transitions; EWOC (256 grid): %zu in %zu", v_crm, t_crm, v_ewoc, t_ewoc);
        {
            const Run coarse = simulate(ewoc, geom, sc, "bayesian EWOC(.25), study grid");
            std::size_t t = 0;
            const std::size_t v = count_violations(coarse.run, &t);
            double worst = 0.0;
            for (const auto& r : coarse.run.results)
                for (std::size_t i = 0; i < r.coherence_flags.size(); ++i)
                    if (r.coherence_flags[i]) worst = std::max(worst, std::abs(r.doses[i + 1] - r.doses[i]));
            note("EWOC on the %zux%zu study grid: %zu violations in %zu transitions, largest %.2e mg (not scored)",
                 bayes_cfg.spec.resolution.n_rho, bayes_cfg.spec.resolution.n_eta, v, t, worst);
        }
        ok &= v_crm == 0 && v_ewoc == 0 && t_crm >= 10000 && t_ewoc >= 10000;

        const ScenarioSpec& f2 = scenario_named(freq_cfg, "freq2");
        ScenarioSpec small = f2;
        small.replications = 100;
        std::vector<std::pair<std::string, DesignPolicy>> enforced{
            {"EWOC*", ewoc_star}, {"IVOC", ivoc}, {"CRM", crm}, {"EWOC+", plus}};
        DesignPolicy cod;
        cod.rule = policy::ConstrainedOptimal{{}, model.p, 0.25, 2};
        cod.search.stride = 10;
        enforced.push_back({"constrained D-optimal", cod});
        for (auto& [name, pol] : enforced) {
            pol.enforce_coherence = true;
            for (const ScenarioSpec* s : {&small, &sc}) {
                ScenarioSpec run_sc = *s;
                run_sc.replications = 100;
                const Run r = simulate(pol, geom, run_sc, ("enforced " + name + " / " + run_sc.name).c_str());
                std::size_t t = 0;
                const std::size_t v = count_violations(r.run, &t);
                note("enforced %s (%s): %zu violations in %zu transitions", name.c_str(), run_sc.name.c_str(), v, t);
                ok &= v == 0;
            }
        }

        const Run s = simulate(ewoc_star, geom, f2, "freq2 EWOC*");
        const double lower = s.m.chv.mean - 1.645 * se_of(s.m.chv);
        note("Freq2 EWOC* ChV %.5f (%.5f); one-sided 95%% lower bound %.5f (need > 0)", s.m.chv.mean, se_of(s.m.chv),
             lower);
        ok &= lower > 0.0;
        verdict(4, ok, "coherence: CRM/EWOC never violate, enforcement removes violations, EWOC* violates in Freq2");
    }

    // ---------------------------------------------------------------- 5
    {
        RngStream rng(20240605);
        const double doses[] = {160.0, 220.0, 280.0, 340.0, 400.0};
        const auto g256 = GridGeometry::make(model, {256, 256});
        const auto g128 = GridGeometry::make(model, {128, 128});
        int inside = 0, total = 0;
        double worst_z = 0.0, worst_conv = 0.0;
        for (int k = 0; k < 50; ++k) {
            RngStream hr = rng.substream(static_cast<std::uint64_t>(k));
            const std::size_t len = static_cast<std::size_t>(hr.uniform() * 9.0);
            const History h = oracle::random_history(model, len, hr);
            const GridPosterior grid = GridPosterior::build(g256, h);
            RngStream pr = rng.substream(1000 + static_cast<std::uint64_t>(k));
            const WeightedSample ws = draw_importance_sample(model, h, 100000, pr);
            const auto w = ws.weights();
            const auto& P = ws.particles();

            auto check = [&](double is_value, double grid_value, double se) {
                const double z = (is_value - grid_value) / se;
                worst_z = std::max(worst_z, std::abs(z));
                inside += std::abs(z) <= 3.0;
                ++total;
            };
            const double mu = ws.eta_marginal().mean();
            double v = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * w[i] * (P.eta[i] - mu) * (P.eta[i] - mu);
            check(mu, grid.eta_marginal().mean(), std::sqrt(v));

            const double q = ws.eta_marginal().quantile(0.25);
            const double gq = grid.eta_marginal().quantile(0.25);
            double vq = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double d = (P.eta[i] <= gq ? 1.0 : 0.0) - 0.25;
                vq += w[i] * w[i] * d * d;
            }
            check(q, gq, std::sqrt(vq) / grid.eta_marginal().density(gq));

            for (double x : doses) {
                const double f = predictive_dlt_prob(ws, x);
                double vf = 0.0;
                const ParamCloud c = ws.cloud();
                for (std::size_t i = 0; i < w.size(); ++i) vf += w[i] * w[i] * (c.prob(i, x) - f) * (c.prob(i, x) - f);
                check(f, predictive_dlt_prob(grid, x), std::sqrt(vf));
            }

            const double m128 = GridPosterior::build(g128, h).eta_marginal().mean();
            worst_conv = std::max(worst_conv, std::abs(m128 - grid.eta_marginal().mean()) / grid.eta_marginal().mean());
        }
        note("grid vs importance sampling: %d/%d comparisons within 3 MC SEs (largest |z| %.2f)", inside, total,
             worst_z);
        note("self-convergence 128 -> 256: largest relative change in E[eta] %.2e (need < 1e-3)", worst_conv);
        verdict(5, inside == total && worst_conv < 1e-3,
                "grid and importance-sampling posteriors agree; grid self-converges");
    }

    // ---------------------------------------------------------------- 6
    {
        bool ok = true;
        RngStream rng(6);
        double worst = 0.0;
        for (int k = 0; k < 10000; ++k) {
            const double rho = rng.uniform(model.rho_lo(), model.rho_hi());
            const double eta = rng.uniform(model.eta_lo(), model.eta_hi());
            const NaturalParams np{rho, eta, model.p};
            worst = std::max(worst, std::abs(toxicity_prob(model.space.x_min, np, model.space) - rho));
            worst = std::max(worst, std::abs(toxicity_prob(eta, np, model.space) - model.p));
        }
        note("anchor identities: largest error %.2e over 10^4 draws", worst);
        ok &= worst <= 1e-10;

        const GridPosterior empty = GridPosterior::build(GridGeometry::make(model, {128, 128}), {});
        const double e0 = ewoc_dose(empty, 0.25), c0 = crm_dose(empty);
        note("empty history: EWOC(.25) %.6f, CRM %.6f", e0, c0);
        ok &= std::abs(e0 - 211.25) < 1e-3 && std::abs(c0 - 282.5) < 1e-3;

        // lambda = 0 lookahead against EWOC on common random numbers, both engines
        DesignPolicy la0, ew;
        la0.rule = policy::Lookahead{loss::Ewoc{0.25}, 0.0};
        ew.rule = policy::Ewoc{0.25};
        ScenarioSpec sc = bayes;
        sc.replications = 200;
        const auto a = simulate_policy(la0, geom, sc, 0), c = simulate_policy(ew, geom, sc, 0);
        std::size_t same = 0;
        for (std::size_t i = 0; i < a.results.size(); ++i) same += a.results[i].doses == c.results[i].doses;
        note("lambda=0 lookahead vs EWOC (grid): %zu/%zu trials identical bit-for-bit", same, a.results.size());
        ok &= same == a.results.size();

        RngStream pr(61);
        const auto particles = ParticleSet::draw(model, 20000, pr);
        RngStream hr(62);
        std::size_t same_is = 0;
        for (int k = 0; k < 100; ++k) {
            const History h = oracle::trial_like_history(model, static_cast<std::size_t>(k % 12), hr);
            const WeightedSample ws = WeightedSample::build(particles, h);
            same_is += next_dose(la0, ws, DesignState::from_history(h)) == ewoc_dose(ws, 0.25);
        }
        note("lambda=0 lookahead vs EWOC (importance sampling): %zu/100 identical", same_is);
        ok &= same_is == 100;
        verdict(6, ok, "analytic identities and lambda=0 equivalence");
    }

    // ---------------------------------------------------------------- 7
    {
        DesignPolicy ew;
        ew.rule = policy::Ewoc{0.25};
        ScenarioSpec sc = bayes;
        sc.replications = 1000;
        sc.seed = 7;
        const PolicyRun run = simulate_policy(ew, geom, sc, 0);
        std::size_t checked = 0, bad = 0;
        double worst = 1.0;
        for (const auto& r : run.results) {
            GridPosterior post = GridPosterior::build(geom, {});
            for (std::size_t i = 0; i < r.doses.size(); ++i) {
                const double tail = 1.0 - post.eta_marginal().cdf(r.doses[i]);
                worst = std::min(worst, tail);
                bad += tail < 1.0 - 0.25 - 1e-6;
                ++checked;
                post = post.with_observation({r.doses[i], r.outcomes[i]});
            }
        }
        note("%zu doses checked, %zu infeasible; smallest P(eta >= x) = %.8f", checked, bad, worst);
        verdict(7, bad == 0 && run.results.size() == 1000, "every EWOC(.25) dose over 1000 trials is Bayesian-feasible");
    }

    // ---------------------------------------------------------------- 8
    {
        const auto dir = std::filesystem::temp_directory_path() / ("dosefind_acceptance_" + std::to_string(::getpid()));
        std::filesystem::remove_all(dir);
        const json policies[] = {
            {{"rule", "ewoc"}, {"omega", 0.25}},
            {{"rule", "crm"}},
            {{"rule", "ewoc_star"}},
            {{"rule", "ivoc"}, {"gamma", 0.25}, {"search", {{"stride", 10}}}},
            {{"rule", "lookahead"}, {"lambda", 0.4}, {"enforce_coherence", true}},
            {{"rule", "lookahead"}, {"lambda", 0.4}, {"engine", "importance"}, {"particles", 5000}},
        };
        std::size_t parity = 0, decisions = 0, replayed = 0;
        std::vector<std::string> ids;
        {
            TrialService svc(dir.string());
            RngStream rng(8);
            for (int k = 0; k < 100; ++k) {
                json cfg = {{"policy", policies[k % 6]}, {"n", 24}, {"grid", {{"n_rho", 64}, {"n_eta", 64}}}};
                const json state = svc.create_trial(cfg);
                const std::string id = state["id"];
                ids.push_back(id);
                const TrialConfig tc = svc.snapshot(id)->config;
                const Recommender lib(tc);
                History h;
                const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 8.0);
                double rec = state["recommendation"]["dose"].get<double>();
                for (std::size_t i = 1; i <= len; ++i) {
                    ++decisions;
                    parity += rec == lib.decide(h).dose;
                    // mostly follow the recommendation, sometimes override it
                    const double dose = rng.bernoulli(0.8) ? rec : rng.uniform(140.0, 425.0);
                    const int y = rng.bernoulli(0.3) ? 1 : 0;
                    const json resp = svc.record_outcome(id, {{"patient_index", i}, {"dose_given", dose}, {"outcome", y}});
                    h.push_back({dose, y});
                    rec = resp["recommendation"]["dose"].get<double>();
                }
                ++decisions;
                parity += rec == lib.decide(h).dose;
            }
            for (const auto& id : ids) {
                const auto events = TrialService::read_log(svc.log_path(id));
                try {
                    replayed += TrialService::replay(events, true) == svc.get_state(id);
                } catch (const std::exception& e) {
                    note("replay of %s failed: %s", id.c_str(), e.what());
                }
            }
        }
        note("library/service parity: %zu/%zu recommendations identical", parity, decisions);
        note("event-log replay: %zu/%zu trials reproduced bit-for-bit", replayed, ids.size());
        std::filesystem::remove_all(dir);
        verdict(8, parity == decisions && replayed == ids.size(), "service replay and library parity");
    }

    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::printf("acceptance: %d criteria failed (%.0f s)\n", failures, total);
    return failures;
}
