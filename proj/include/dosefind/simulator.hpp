#pragma once

// Monte Carlo trial simulation and the operating-characteristic metrics.
//
// Replication r of a study draws everything from RngStream(seed).substream(r):
//   substream(0)  the true (rho, eta) in the Bayesian setting
//   substream(1)  one uniform per patient; y_i = 1{u_i < F_true(x_i)}
//   substream(2)  particles for importance-sampling lookahead
// so every policy in a study faces the same truths and the same outcome
// uniforms, and results do not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "designs.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "posterior.hpp"
#include "random.hpp"

namespace dosefind {

struct FixedTruth {
    double rho = 0.0;
    double eta = 0.0;
};

struct ScenarioSpec {
    std::string name = "bayesian";
    std::optional<FixedTruth> fixed;  // empty: draw (rho, eta) from the prior per replication
    std::size_t n = 24;
    std::size_t replications = 2000;
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1) throw validation_error("scenario.n", "must be at least 1");
        if (replications < 1) throw validation_error("scenario.replications", "must be at least 1");
    }
};

/// Loss parameters of the two cumulative risks.
struct RiskLosses {
    double omega = 0.25;
    double gamma = 0.25;
};

struct TrialResult {
    std::vector<double> doses;
    std::vector<int> outcomes;
    NaturalParams truth;
    double eta_hat = 0.0;
    std::vector<double> prob_at_dose;  // F_true(x_i)
    std::vector<double> loss_ewoc;
    std::vector<double> loss_inverted;
    std::vector<bool> coherence_flags;  // transition i -> i+1 violates coherence
    std::size_t coherence_adjusted = 0;
    std::size_t infeasible = 0;
    std::size_t degenerate = 0;
};

inline double risk1(const TrialResult& r) {
    double s = 0.0;
    for (double v : r.loss_ewoc) s += v;
    return s;
}

inline double risk2(const TrialResult& r) {
    double s = 0.0;
    for (double v : r.loss_inverted) s += v;
    return s;
}

inline RngStream replication_stream(std::uint64_t seed, std::size_t replication) {
    return RngStream(seed).substream(replication);
}

inline NaturalParams draw_truth(const TrialModel& model, const ScenarioSpec& sc, RngStream rng) {
    if (sc.fixed) return {sc.fixed->rho, sc.fixed->eta, model.p};
    if (model.prior.kind() != Prior::Kind::uniform)
        throw validation_error("scenario.truth", "prior draws are implemented for the uniform prior only");
    const double rho = rng.uniform(model.rho_lo(), model.rho_hi());
    const double eta = rng.uniform(model.eta_lo(), model.eta_hi());
    return {rho, eta, model.p};
}

namespace detail {

inline bool uses_importance(const DesignPolicy& pol) {
    const auto* la = std::get_if<policy::Lookahead>(&pol.rule);
    return la && la->engine == policy::Engine::importance;
}

inline std::size_t particle_count(const DesignPolicy& pol) {
    return std::get<policy::Lookahead>(pol.rule).particles;
}

template <PosteriorLike P>
void run_patients(const DesignPolicy& pol, P post, const NaturalParams& truth, std::size_t n, RngStream outcomes,
                  TrialResult& out) {
    const DoseSpace& space = post.space();
    const CanonicalParams cp = to_canonical(truth, space);
    DesignState state;
    for (std::size_t i = 0; i < n; ++i) {
        state.patient_index = i + 1;
        const DoseDecision d = decide(pol, post, state);
        const double x = space.clamp(d.dose);
        const double f = toxicity_prob(x, cp);
        const int y = outcomes.uniform() < f ? 1 : 0;
        out.doses.push_back(x);
        out.outcomes.push_back(y);
        out.prob_at_dose.push_back(f);
        out.coherence_adjusted += d.coherence_adjusted;
        out.infeasible += d.infeasible;
        out.degenerate += d.degenerate_sample;
        state.last_dose = x;
        state.last_outcome = y;
        state.xi.add(x);
        if (i + 1 < n) post = post.with_observation({x, y});
    }
}

}  // namespace detail

/// One trial of n patients under `pol` with the given truth. The terminal
/// estimate eta_hat is the grid posterior mean of eta given the full history.
inline TrialResult simulate_trial(const DesignPolicy& pol, const std::shared_ptr<const GridGeometry>& geom,
                                  const NaturalParams& truth, std::size_t n, RngStream rng, RiskLosses losses = {}) {
    const TrialModel& model = geom->model;
    TrialResult r;
    r.truth = truth;
    r.doses.reserve(n);
    if (detail::uses_importance(pol)) {
        RngStream prng = rng.substream(2);
        auto particles = ParticleSet::draw(model, detail::particle_count(pol), prng);
        detail::run_patients(pol, WeightedSample::build(particles, {}), truth, n, rng.substream(1), r);
    } else {
        detail::run_patients(pol, GridPosterior::build(geom, {}), truth, n, rng.substream(1), r);
    }
    History h;
    for (std::size_t i = 0; i < n; ++i) h.push_back({r.doses[i], r.outcomes[i]});
    r.eta_hat = GridPosterior::build(geom, h).eta_marginal().mean();
    for (std::size_t i = 0; i < n; ++i) {
        r.loss_ewoc.push_back(ewoc_loss(truth.eta, r.doses[i], losses.omega));
        r.loss_inverted.push_back(inverted_loss(r.prob_at_dose[i], model.p, losses.gamma));
    }
    for (std::size_t i = 0; i + 1 < n; ++i)
        r.coherence_flags.push_back(coherence_violation(r.doses[i], r.outcomes[i], r.doses[i + 1]));
    return r;
}

// ---------------------------------------------------------------------------
// Metrics

struct Estimate {
    double mean = 0.0;
    std::optional<double> se;  // empty with a single replication
};

struct MetricsReport {
    Estimate risk1, risk2, bias, rmse, dlt, od, od_star, chv;
    std::size_t replications = 0;
    std::size_t failures = 0;
};

inline constexpr const char* kMetricNames[] = {"risk1", "risk2", "bias", "rmse", "dlt", "od", "od_star", "chv"};

inline const Estimate& metric(const MetricsReport& m, std::size_t k) {
    const Estimate* all[] = {&m.risk1, &m.risk2, &m.bias, &m.rmse, &m.dlt, &m.od, &m.od_star, &m.chv};
    return *all[k];
}

/// Mean and standard error of the mean.
inline Estimate mean_estimate(const std::vector<double>& v) {
    Estimate e;
    if (v.empty()) return e;
    double s = 0.0;
    for (double x : v) s += x;
    e.mean = s / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - e.mean) * (x - e.mean);
        e.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    }
    return e;
}

/// Per-trial mean of the violation indicators over transitions; trials with n = 1 contribute nothing.
inline Estimate coherence_violation_rate(const std::vector<TrialResult>& results) {
    std::vector<double> v;
    for (const auto& r : results) {
        if (r.coherence_flags.empty()) continue;
        double s = 0.0;
        for (bool f : r.coherence_flags) s += f ? 1.0 : 0.0;
        v.push_back(s / static_cast<double>(r.coherence_flags.size()));
    }
    return mean_estimate(v);
}

inline MetricsReport compute_metrics(const std::vector<TrialResult>& results, double p) {
    MetricsReport m;
    m.replications = results.size();
    std::vector<double> r1, r2, err, sq, dlt, od, ods;
    for (const auto& r : results) {
        const double n = static_cast<double>(r.doses.size());
        r1.push_back(risk1(r));
        r2.push_back(risk2(r));
        const double e = r.eta_hat - r.truth.eta;
        err.push_back(e);
        sq.push_back(e * e);
        double y = 0.0, o = 0.0, os = 0.0;
        for (std::size_t i = 0; i < r.doses.size(); ++i) {
            y += r.outcomes[i];
            o += r.doses[i] > r.truth.eta ? 1.0 : 0.0;
            os += std::max(0.0, r.prob_at_dose[i] - p);
        }
        dlt.push_back(y / n);
        od.push_back(o / n);
        ods.push_back(os / n);
    }
    m.risk1 = mean_estimate(r1);
    m.risk2 = mean_estimate(r2);
    m.bias = mean_estimate(err);
    const Estimate mse = mean_estimate(sq);
    m.rmse.mean = std::sqrt(mse.mean);
    // delta method: se(sqrt(m)) = se(m) / (2 sqrt(m))
    if (mse.se) m.rmse.se = m.rmse.mean > 0.0 ? *mse.se / (2.0 * m.rmse.mean) : 0.0;
    m.dlt = mean_estimate(dlt);
    m.od = mean_estimate(od);
    m.od_star = mean_estimate(ods);
    m.chv = coherence_violation_rate(results);
    return m;
}

// ---------------------------------------------------------------------------
// Studies

/// Runs fn(i) for i in [0, count) on `workers` threads (0: hardware concurrency).
template <class Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(count, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) fn(i);
        });
    for (auto& t : pool) t.join();
}

struct NamedPolicy {
    std::string name;
    DesignPolicy policy;
};

struct StudySpec {
    TrialModel model;
    std::vector<NamedPolicy> policies;
    std::vector<ScenarioSpec> scenarios;
    GridResolution resolution{64, 64};
    RiskLosses losses;
    std::size_t workers = 0;
};

struct ReplicationFailure {
    std::size_t replication = 0;
    std::string message;
};

struct PolicyRun {
    std::vector<TrialResult> results;  // successful replications, in replication order
    std::vector<ReplicationFailure> failures;
};

/// Replications of one policy in one scenario. Throws once failures exceed 0.1% of replications.
inline PolicyRun simulate_policy(const DesignPolicy& pol, const std::shared_ptr<const GridGeometry>& geom,
                                 const ScenarioSpec& sc, std::size_t workers = 0, RiskLosses losses = {}) {
    validate_policy(pol);
    sc.validate();
    std::vector<std::optional<TrialResult>> slots(sc.replications);
    std::vector<std::string> errors(sc.replications);
    parallel_for(sc.replications, workers, [&](std::size_t r) {
        try {
            const RngStream rng = replication_stream(sc.seed, r);
            const NaturalParams truth = draw_truth(geom->model, sc, rng.substream(0));
            slots[r] = simulate_trial(pol, geom, truth, sc.n, rng, losses);
        } catch (const std::exception& e) {
            errors[r] = e.what();
            if (errors[r].empty()) errors[r] = "unknown failure";
        }
    });
    PolicyRun run;
    for (std::size_t r = 0; r < sc.replications; ++r) {
        if (slots[r])
            run.results.push_back(std::move(*slots[r]));
        else
            run.failures.push_back({r, errors[r]});
    }
    if (run.failures.size() * 1000 > sc.replications)
        throw error("study aborted: " + std::to_string(run.failures.size()) + " of " +
                    std::to_string(sc.replications) + " replications failed (first: replication " +
                    std::to_string(run.failures.front().replication) + ": " + run.failures.front().message + ")");
    return run;
}

struct PolicyReport {
    std::string policy;
    MetricsReport metrics;
    double seconds = 0.0;
};

struct ScenarioReport {
    std::string scenario;
    std::vector<PolicyReport> policies;
};

inline std::vector<ScenarioReport> run_study(const StudySpec& spec) {
    spec.model.validate();
    if (spec.policies.empty()) throw validation_error("policies", "at least one policy is required");
    for (const auto& p : spec.policies) validate_policy(p.policy);
    const auto geom = GridGeometry::make(spec.model, spec.resolution);
    std::vector<ScenarioReport> out;
    for (const auto& sc : spec.scenarios) {
        ScenarioReport rep{sc.name, {}};
        for (const auto& np : spec.policies) {
            const auto t0 = std::chrono::steady_clock::now();
            const PolicyRun run = simulate_policy(np.policy, geom, sc, spec.workers, spec.losses);
            MetricsReport m = compute_metrics(run.results, spec.model.p);
            m.failures = run.failures.size();
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
            rep.policies.push_back({np.name, m, dt.count()});
        }
        out.push_back(std::move(rep));
    }
    return out;
}

}  // namespace dosefind
