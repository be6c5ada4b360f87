#pragma once

// Dose-selection rules. Every rule is a functional of the current posterior
// (plus, for some rules, the design state): x_n = f(Pi_{n-1}, state).
//
//   Crm                 posterior mean of eta
//   Ewoc(omega)         posterior omega-quantile of eta
//   EwocStar            Ewoc with omega escalated linearly across the trial
//   Ivoc(gamma)         argmin of the expected inverted loss
//   ConstrainedOptimal  argmin of E[Psi(M(theta, xi + {x}))] s.t. P(eta_q < x) <= omega
//   Lookahead           argmin of E[h(eta, x)] + lambda * E_y[ E_{Pi+(x,y)}[h(eta', x')] ]
//
// With enforce_coherence the argmin is restricted to x <= x_prev after a DLT
// and x >= x_prev after a non-DLT.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "losses.hpp"
#include "marginal.hpp"
#include "model.hpp"
#include "posterior.hpp"

namespace dosefind {

namespace policy {

struct Crm {};

struct Ewoc {
    double omega = 0.25;
};

struct EwocStar {
    double omega_start = 0.25;
    double omega_end = 0.5;
    std::size_t n = 24;
};

struct Ivoc {
    double gamma = 0.25;
};

struct ConstrainedOptimal {
    loss::Criterion psi;
    double q = 1.0 / 3.0;
    double omega = 0.25;
    std::size_t initial_k = 2;
};

enum class Engine { grid, importance };

struct Lookahead {
    LossSpec h = loss::Ewoc{0.25};
    double lambda = 0.4;
    std::size_t particles = 20000;  // used by the importance engine
    Engine engine = Engine::grid;
};

}  // namespace policy

using PolicyRule = std::variant<policy::Crm, policy::Ewoc, policy::EwocStar, policy::Ivoc, policy::ConstrainedOptimal,
                                policy::Lookahead>;

/// Argmin search settings. Candidates are `grid_points` equally spaced doses;
/// `stride` > 1 scans every stride-th candidate and then the full-resolution
/// neighbourhood of the best one. Lookahead refines its best coarse point by
/// golden-section search.
struct SearchOptions {
    std::size_t grid_points = 571;
    std::size_t stride = 1;
    std::size_t lookahead_stride = 10;
    int golden_iterations = 30;
};

struct DesignPolicy {
    PolicyRule rule = policy::Crm{};
    bool enforce_coherence = false;
    SearchOptions search{};
};

inline std::string policy_kind(const DesignPolicy& p) {
    static constexpr const char* names[] = {"crm", "ewoc", "ewoc_star", "ivoc", "constrained_optimal", "lookahead"};
    return names[p.rule.index()];
}

inline void validate_policy(const DesignPolicy& p) {
    auto open_half = [](double v, const char* field) {
        if (!(v > 0.0 && v < 0.5)) throw validation_error(field, "must satisfy 0 < value < 1/2");
    };
    std::visit(
        [&](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, policy::Ewoc>) {
                open_half(r.omega, "omega");
            } else if constexpr (std::is_same_v<T, policy::EwocStar>) {
                open_half(r.omega_start, "omega_start");
                if (!(r.omega_end >= r.omega_start && r.omega_end <= 0.5))
                    throw validation_error("omega_end", "must satisfy omega_start <= omega_end <= 1/2");
                if (r.n < 1) throw validation_error("n", "must be at least 1");
            } else if constexpr (std::is_same_v<T, policy::Ivoc>) {
                open_half(r.gamma, "gamma");
            } else if constexpr (std::is_same_v<T, policy::ConstrainedOptimal>) {
                if (!(r.omega > 0.0 && r.omega <= 1.0)) throw validation_error("omega", "must lie in (0, 1]");
                if (!(r.q > 0.0 && r.q < 1.0)) throw validation_error("q", "must lie in (0, 1)");
            } else if constexpr (std::is_same_v<T, policy::Lookahead>) {
                if (std::holds_alternative<loss::DesignCriterion>(r.h))
                    throw validation_error("h", "lookahead needs a myopically minimizable loss (ewoc, inverted, squared_error)");
                validate_loss(r.h);
                if (!(r.lambda >= 0.0) || !std::isfinite(r.lambda)) throw validation_error("lambda", "must be >= 0");
                if (r.engine == policy::Engine::importance && r.particles < 1000)
                    throw validation_error("particles", "must be at least 1000");
            }
        },
        p.rule);
    if (p.search.grid_points < 2) throw validation_error("search.grid_points", "must be at least 2");
    if (p.search.stride < 1 || p.search.lookahead_stride < 1) throw validation_error("search.stride", "must be >= 1");
}

struct DesignState {
    std::size_t patient_index = 1;  // 1-based index of the patient about to be dosed
    std::optional<double> last_dose;
    std::optional<int> last_outcome;
    DesignMeasure xi;

    static DesignState from_history(const History& h) {
        DesignState s;
        s.patient_index = h.size() + 1;
        for (const auto& o : h) s.xi.add(o.dose);
        if (!h.empty()) {
            s.last_dose = h.back().dose;
            s.last_outcome = h.back().outcome;
        }
        return s;
    }
};

struct DoseDecision {
    double dose = 0.0;
    double unrestricted_dose = 0.0;
    bool coherence_adjusted = false;
    bool infeasible = false;
    bool degenerate_sample = false;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double clamp(double x) const noexcept { return std::clamp(x, lo, hi); }
    bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

/// Feasible dose interval after the coherence restriction.
inline Interval coherence_bounds(const DoseSpace& space, const DesignState& state, bool enforce) {
    Interval iv{space.x_min, space.x_max};
    if (enforce && state.last_dose && state.last_outcome) {
        if (*state.last_outcome == 1)
            iv.hi = std::min(iv.hi, *state.last_dose);
        else
            iv.lo = std::max(iv.lo, *state.last_dose);
    }
    return iv;
}

/// Restricted argmin for rules with a convex objective in x: the projection of
/// the unrestricted minimizer onto the coherent half-line.
inline double enforce_coherent(double unrestricted, std::optional<double> last_dose, std::optional<int> last_outcome) {
    if (!last_dose || !last_outcome) return unrestricted;
    return *last_outcome == 1 ? std::min(unrestricted, *last_dose) : std::max(unrestricted, *last_dose);
}

/// Equally spaced candidate doses on the dose space.
inline std::vector<double> dose_grid(const DoseSpace& space, std::size_t points) {
    std::vector<double> g(points);
    const double step = space.width() / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) g[i] = space.x_min + step * static_cast<double>(i);
    g.back() = space.x_max;
    return g;
}

/// Sorted candidates inside iv: the grid points it contains plus its endpoints.
inline std::vector<double> candidate_doses(const DoseSpace& space, const Interval& iv, std::size_t points) {
    std::vector<double> c;
    c.push_back(iv.lo);
    for (double x : dose_grid(space, points))
        if (x > iv.lo && x < iv.hi) c.push_back(x);
    if (iv.hi > iv.lo) c.push_back(iv.hi);
    return c;
}

/// Index of the minimum of f over sorted candidates; ties go to the lower dose.
/// Non-finite objective values count as +infinity.
template <class Fn>
std::size_t grid_argmin(Fn&& f, std::span<const double> candidates, std::size_t stride) {
    const std::size_t n = candidates.size();
    std::vector<double> val(n, std::numeric_limits<double>::quiet_NaN());
    auto eval = [&](std::size_t i) {
        if (std::isnan(val[i])) {
            const double v = f(candidates[i]);
            val[i] = std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
        }
    };
    auto best_of_evaluated = [&]() {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::isnan(val[i])) continue;
            if (best == n || val[i] < val[best]) best = i;
        }
        return best;
    };
    if (stride <= 1 || n <= 2 * stride) {
        for (std::size_t i = 0; i < n; ++i) eval(i);
        return best_of_evaluated();
    }
    for (std::size_t i = 0; i < n; i += stride) eval(i);
    eval(n - 1);
    const std::size_t coarse = best_of_evaluated();
    const std::size_t from = coarse >= stride ? coarse - stride : 0;
    const std::size_t to = std::min(n - 1, coarse + stride);
    for (std::size_t i = from; i <= to; ++i) eval(i);
    return best_of_evaluated();
}

// ---------------------------------------------------------------------------
// Myopic rules

template <PosteriorLike P>
double crm_dose(const P& post) {
    return post.eta_marginal().mean();
}

template <PosteriorLike P>
double ewoc_dose(const P& post, double omega) {
    return post.eta_marginal().quantile(omega);
}

/// omega_i = omega_start + (i - 1)/(n - 1) (omega_end - omega_start), i = 1..n.
inline double ewoc_star_bound(std::size_t i, const policy::EwocStar& p) {
    if (p.n <= 1 || i <= 1) return p.omega_start;
    const double frac = std::min(1.0, static_cast<double>(i - 1) / static_cast<double>(p.n - 1));
    return p.omega_start + frac * (p.omega_end - p.omega_start);
}

/// E[inverted loss at x] over the cloud, with optional per-point weight multipliers.
inline double cloud_inverted_loss(const ParamCloud& c, std::span<const double> factors, double x, double p, double gamma) {
    double s = 0.0, w = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double wi = factors.empty() ? c.weight[i] : c.weight[i] * factors[i];
        s += wi * inverted_loss(c.prob(i, x), p, gamma);
        w += wi;
    }
    return s / w;
}

struct ArgminResult {
    double dose = 0.0;
    double value = 0.0;
};

inline ArgminResult ivoc_argmin(const ParamCloud& c, std::span<const double> factors, double p, double gamma,
                                const DoseSpace& space, const Interval& iv, const SearchOptions& opt) {
    const auto cand = candidate_doses(space, iv, opt.grid_points);
    auto f = [&](double x) { return cloud_inverted_loss(c, factors, x, p, gamma); };
    const std::size_t k = grid_argmin(f, cand, opt.stride);
    return {cand[k], f(cand[k])};
}

template <PosteriorLike P>
double ivoc_dose(const P& post, double gamma, const Interval& iv, const SearchOptions& opt = {}) {
    return ivoc_argmin(post.cloud(), {}, post.target(), gamma, post.space(), iv, opt).dose;
}

template <PosteriorLike P>
double ivoc_dose(const P& post, double gamma) {
    return ivoc_dose(post, gamma, Interval{post.space().x_min, post.space().x_max});
}

// ---------------------------------------------------------------------------
// Constrained Bayesian optimal design

/// d eta / d(alpha, beta) at the posterior mean of (alpha, beta).
template <PosteriorLike P>
std::array<double, 2> default_c_vector(const P& post) {
    const ParamCloud c = post.cloud();
    double ea = 0.0, eb = 0.0, w = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto cp = c.canonical(i);
        ea += c.weight[i] * cp.alpha;
        eb += c.weight[i] * cp.beta;
        w += c.weight[i];
    }
    ea /= w;
    eb /= w;
    return {-1.0 / eb, -(c.logit_p - ea) / (eb * eb)};
}

/// omega-quantile of eta_q = F^{-1}(q). For q == p this is the eta quantile.
template <PosteriorLike P>
double feasibility_bound(const P& post, double q, double omega) {
    if (q == post.target()) return post.eta_marginal().quantile(omega);
    const ParamCloud c = post.cloud();
    const double shift = logit(q) - c.logit_p;
    std::vector<std::pair<double, double>> pts(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) pts[i] = {c.eta[i] + shift / c.beta[i], c.weight[i]};
    std::sort(pts.begin(), pts.end());
    std::vector<double> v(pts.size()), w(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) v[i] = pts[i].first, w[i] = pts[i].second;
    return EmpiricalMarginal(std::move(v), w).quantile(omega);
}

struct ConstrainedResult {
    double dose = 0.0;
    bool infeasible = false;
};

template <PosteriorLike P>
ConstrainedResult constrained_optimal_dose(const P& post, const DesignMeasure& xi, loss::Criterion psi, double q,
                                           double omega, const Interval& bounds, const SearchOptions& opt = {}) {
    const DoseSpace& space = post.space();
    if (q < post.target()) throw validation_error("q", "q must be >= p");
    if (xi.count() == 0) throw singular_information_error("constrained optimal design needs an initial sample");
    if (psi.kind == loss::CriterionKind::c && !psi.c) psi.c = default_c_vector(post);
    const double x_omega = omega >= 1.0 ? space.x_max : feasibility_bound(post, q, omega);
    if (x_omega < space.x_min) return {space.x_min, true};
    const Interval iv{bounds.lo, std::min(bounds.hi, x_omega)};
    if (iv.hi < iv.lo) return {bounds.lo, true};

    // per-point information of xi (summed), reused for every candidate
    const ParamCloud c = post.cloud();
    std::vector<SymMatrix2> base(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) base[i] = info_sum(xi, c.canonical(i));
    const double scale = 1.0 / static_cast<double>(xi.count() + 1);
    const std::size_t distinct = xi.distinct_count();
    const auto& doses = xi.doses();

    auto objective = [&](double x) {
        const bool in_support = std::find(doses.begin(), doses.end(), x) != doses.end();
        if (distinct + (in_support ? 0 : 1) < 2) return std::numeric_limits<double>::infinity();
        double s = 0.0, w = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            const SymMatrix2 m = scale * (base[i] + fisher_info(c.canonical(i), x));
            s += c.weight[i] * criterion_floored(psi, m);
            w += c.weight[i];
        }
        return s / w;
    };
    const auto cand = candidate_doses(space, iv, opt.grid_points);
    const std::size_t k = grid_argmin(objective, cand, opt.stride);
    if (!std::isfinite(objective(cand[k])))
        throw singular_information_error("every candidate leaves the design with fewer than two distinct doses");
    return {cand[k], false};
}

// ---------------------------------------------------------------------------
// One-step lookahead

namespace detail {

/// Myopic dose x' and its expected loss H under the posterior reweighted by factors.
template <PosteriorLike P>
ArgminResult myopic_after_update(const P& post, const LossSpec& h, std::span<const double> factors,
                                 const SearchOptions& opt) {
    const DoseSpace& space = post.space();
    switch (h.index()) {
        case 0: {
            const auto m = post.reweighted_marginal(factors);
            return {m.mean(), m.variance()};
        }
        case 1: {
            const double omega = std::get<loss::Ewoc>(h).omega;
            const auto m = post.reweighted_marginal(factors);
            const double x = m.quantile(omega);
            return {x, m.expected_ewoc_loss(x, omega)};
        }
        case 2: {
            const double gamma = std::get<loss::Inverted>(h).gamma;
            return ivoc_argmin(post.cloud(), factors, post.target(), gamma, space, Interval{space.x_min, space.x_max},
                               opt);
        }
        default: throw validation_error("h", "unsupported lookahead loss");
    }
}

template <PosteriorLike P>
double myopic_dose(const P& post, const LossSpec& h, const SearchOptions& opt) {
    switch (h.index()) {
        case 0: return crm_dose(post);
        case 1: return ewoc_dose(post, std::get<loss::Ewoc>(h).omega);
        case 2:
            return ivoc_dose(post, std::get<loss::Inverted>(h).gamma, Interval{post.space().x_min, post.space().x_max},
                             opt);
        default: throw validation_error("h", "unsupported lookahead loss");
    }
}

}  // namespace detail

/// Components of the lookahead objective at one candidate dose.
struct LookaheadTerms {
    double myopic = 0.0;   // E_Pi[h(eta, x)]
    double q = 0.0;        // P_Pi(y = 1 | x)
    double h0 = 0.0;       // H_Pi(x, 0)
    double h1 = 0.0;       // H_Pi(x, 1)
    double x_next0 = 0.0;  // myopic dose after (x, 0)
    double x_next1 = 0.0;  // myopic dose after (x, 1)

    double objective(double lambda) const noexcept { return myopic + lambda * (h0 * (1.0 - q) + h1 * q); }
};

template <PosteriorLike P>
LookaheadTerms lookahead_terms(const P& post, const LossSpec& h, double x, const SearchOptions& opt = {}) {
    const ParamCloud c = post.cloud();
    std::vector<double> f1(c.size()), f0(c.size());
    double q = 0.0, w = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double g = c.predictor(i, x);
        f1[i] = logistic(g);
        f0[i] = logistic(-g);
        q += c.weight[i] * f1[i];
        w += c.weight[i];
    }
    LookaheadTerms t;
    t.q = q / w;
    t.myopic = expected_loss(post, h, x);
    const auto r0 = detail::myopic_after_update(post, h, f0, opt);
    const auto r1 = detail::myopic_after_update(post, h, f1, opt);
    t.h0 = r0.value;
    t.x_next0 = r0.dose;
    t.h1 = r1.value;
    t.x_next1 = r1.dose;
    return t;
}

template <PosteriorLike P>
double lookahead_objective(const P& post, const LossSpec& h, double lambda, double x, const SearchOptions& opt = {}) {
    return lookahead_terms(post, h, x, opt).objective(lambda);
}

/// Minimizes the lookahead objective over iv: coarse scan of the dose grid
/// (plus the myopic dose), then golden-section refinement around the best
/// coarse point. lambda == 0 returns the myopic dose itself.
template <PosteriorLike P>
double lookahead_dose(const P& post, const LossSpec& h, double lambda, const Interval& iv, const SearchOptions& opt = {}) {
    const double myopic = iv.clamp(detail::myopic_dose(post, h, opt));
    if (lambda == 0.0 || iv.hi <= iv.lo) return myopic;
    auto f = [&](double x) { return lookahead_objective(post, h, lambda, x, opt); };

    const auto cand = candidate_doses(post.space(), iv, opt.grid_points);
    std::vector<double> coarse;
    for (std::size_t i = 0; i < cand.size(); i += opt.lookahead_stride) coarse.push_back(cand[i]);
    if (coarse.back() != cand.back()) coarse.push_back(cand.back());
    std::vector<double> val(coarse.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        val[i] = f(coarse[i]);
        if (val[i] < val[best]) best = i;
    }
    double best_x = coarse[best], best_v = val[best];

    const double fm = f(myopic);
    if (fm < best_v || (fm == best_v && myopic < best_x)) best_x = myopic, best_v = fm;

    // golden-section on the bracket around the best coarse point
    double a = coarse[best > 0 ? best - 1 : 0];
    double b = coarse[std::min(best + 1, coarse.size() - 1)];
    if (b > a) {
        constexpr double kInvPhi = 0.6180339887498949;
        double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
        double f1 = f(x1), f2 = f(x2);
        for (int it = 0; it < opt.golden_iterations; ++it) {
            if (f1 <= f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - kInvPhi * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + kInvPhi * (b - a);
                f2 = f(x2);
            }
        }
        const double xg = f1 <= f2 ? x1 : x2;
        const double fg = std::min(f1, f2);
        if (fg < best_v) best_x = xg, best_v = fg;
    }
    return best_x;
}

template <PosteriorLike P>
double lookahead_dose(const P& post, const LossSpec& h, double lambda) {
    return lookahead_dose(post, h, lambda, Interval{post.space().x_min, post.space().x_max});
}

// ---------------------------------------------------------------------------
// Dispatch

template <PosteriorLike P>
DoseDecision decide(const DesignPolicy& pol, const P& post, const DesignState& state) {
    const DoseSpace& space = post.space();
    const Interval full{space.x_min, space.x_max};
    const Interval iv = coherence_bounds(space, state, pol.enforce_coherence);
    DoseDecision d;
    auto quantile_rule = [&](double unrestricted) {
        d.unrestricted_dose = unrestricted;
        d.dose = pol.enforce_coherence ? iv.clamp(unrestricted) : unrestricted;
    };
    // grid-search rules only search the restricted set when the unrestricted argmin is incoherent
    auto restricted = [&](double unrestricted, auto&& search) -> double {
        if (!pol.enforce_coherence || iv.contains(unrestricted)) return unrestricted;
        return search();
    };
    std::visit(
        [&](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, policy::Crm>) {
                quantile_rule(crm_dose(post));
            } else if constexpr (std::is_same_v<T, policy::Ewoc>) {
                quantile_rule(ewoc_dose(post, r.omega));
            } else if constexpr (std::is_same_v<T, policy::EwocStar>) {
                quantile_rule(ewoc_dose(post, ewoc_star_bound(state.patient_index, r)));
            } else if constexpr (std::is_same_v<T, policy::Ivoc>) {
                d.unrestricted_dose = ivoc_dose(post, r.gamma, full, pol.search);
                d.dose = restricted(d.unrestricted_dose, [&] { return ivoc_dose(post, r.gamma, iv, pol.search); });
            } else if constexpr (std::is_same_v<T, policy::ConstrainedOptimal>) {
                if (state.patient_index <= r.initial_k) {
                    // initial sample: Bayesian-feasible start at the same omega
                    quantile_rule(ewoc_dose(post, std::min(r.omega, 0.5)));
                    return;
                }
                const auto u = constrained_optimal_dose(post, state.xi, r.psi, r.q, r.omega, full, pol.search);
                d.unrestricted_dose = u.dose;
                d.infeasible = u.infeasible;
                d.dose = restricted(u.dose, [&] {
                    const auto c = constrained_optimal_dose(post, state.xi, r.psi, r.q, r.omega, iv, pol.search);
                    d.infeasible = c.infeasible;
                    return c.dose;
                });
            } else if constexpr (std::is_same_v<T, policy::Lookahead>) {
                if constexpr (std::is_same_v<P, WeightedSample>) d.degenerate_sample = post.degenerate();
                d.unrestricted_dose = lookahead_dose(post, r.h, r.lambda, full, pol.search);
                d.dose = restricted(d.unrestricted_dose,
                                    [&] { return lookahead_dose(post, r.h, r.lambda, iv, pol.search); });
            }
        },
        pol.rule);
    d.coherence_adjusted = d.dose != d.unrestricted_dose;
    return d;
}

template <PosteriorLike P>
double next_dose(const DesignPolicy& pol, const P& post, const DesignState& state) {
    return decide(pol, post, state).dose;
}

/// Whether moving from (prev_dose, prev_outcome) to next violates coherence.
inline bool coherence_violation(double prev_dose, int prev_outcome, double next) noexcept {
    return prev_outcome == 1 ? next > prev_dose : next < prev_dose;
}

}  // namespace dosefind
