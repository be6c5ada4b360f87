#pragma once

// Posterior inference for (rho, eta) given a dose/outcome history.
//
// Two representations share one query surface:
//   GridPosterior   tensor Gauss-Legendre quadrature on the clipped support,
//                   exact up to quadrature error; the production path.
//   WeightedSample  self-normalized importance sample with the uniform
//                   proposal on the clipped support.
// Both expose a "cloud" of weighted parameter points plus an eta-marginal, and
// can be reweighted by a per-point factor, which is all the dose-selection
// rules need.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "marginal.hpp"
#include "model.hpp"
#include "quadrature.hpp"
#include "random.hpp"

namespace dosefind {

struct Observation {
    double dose = 0.0;
    int outcome = 0;  // 1 = DLT

    friend bool operator==(const Observation&, const Observation&) = default;
};

using History = std::vector<Observation>;

class Prior {
   public:
    enum class Kind { uniform, custom };
    using Density = std::function<double(double rho, double eta)>;

    static Prior uniform() { return Prior{}; }

    /// density need not be normalized; the posterior normalizes numerically.
    static Prior custom(Density density) {
        Prior p;
        p.kind_ = Kind::custom;
        p.density_ = std::move(density);
        return p;
    }

    Kind kind() const noexcept { return kind_; }

    /// Log density up to the support normalization (uniform returns 0).
    double log_density(double rho, double eta) const {
        if (kind_ == Kind::uniform) return 0.0;
        const double d = density_(rho, eta);
        return d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity();
    }

   private:
    Kind kind_ = Kind::uniform;
    Density density_;
};

/// Everything a posterior needs besides the data: dose space, target, prior, support clip.
struct TrialModel {
    DoseSpace space{140.0, 425.0};
    double p = 1.0 / 3.0;
    Prior prior = Prior::uniform();
    SupportClip clip{};

    double rho_lo() const noexcept { return clip.rho_lo(); }
    double rho_hi() const noexcept { return clip.rho_hi(p); }
    double eta_lo() const noexcept { return clip.eta_lo(space); }
    double eta_hi() const noexcept { return clip.eta_hi(space); }
    double support_area() const noexcept { return (rho_hi() - rho_lo()) * (eta_hi() - eta_lo()); }

    void validate() const {
        space.validate();
        validate_target(p);
        if (!(rho_lo() < rho_hi())) throw validation_error("p", "target too small for the rho clip");
    }
};

inline void validate_history(const History& h, const DoseSpace& space) {
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!space.contains(h[i].dose))
            throw validation_error("history[" + std::to_string(i) + "].dose", "dose outside the dose space");
        if (h[i].outcome != 0 && h[i].outcome != 1)
            throw validation_error("history[" + std::to_string(i) + "].outcome", "outcome must be 0 or 1");
    }
}

/// log of one Bernoulli likelihood factor at linear predictor g.
inline double log_bernoulli(double g, int y) noexcept { return y ? log_logistic(g) : log1m_logistic(g); }

inline double log_likelihood(const History& h, const NaturalParams& np, const DoseSpace& space) {
    const double beta = natural_slope(np, space);
    const double lp = logit(np.target_p);
    double s = 0.0;
    for (const auto& o : h) s += log_bernoulli(lp + beta * (o.dose - np.eta), o.outcome);
    return s;
}

/// Weighted parameter points. For each point: slope beta, MTD eta, rho and
/// normalized weight; alpha = logit(p) - beta * eta. `group` maps a point to
/// its eta-marginal bucket (grid column, or particle rank).
struct ParamCloud {
    std::span<const double> beta;
    std::span<const double> eta;
    std::span<const double> rho;
    std::span<const double> weight;
    std::span<const std::uint32_t> group;
    double logit_p = 0.0;

    std::size_t size() const noexcept { return weight.size(); }
    double predictor(std::size_t i, double x) const noexcept { return logit_p + beta[i] * (x - eta[i]); }
    double prob(std::size_t i, double x) const noexcept { return logistic(predictor(i, x)); }
    CanonicalParams canonical(std::size_t i) const noexcept { return {logit_p - beta[i] * eta[i], beta[i]}; }
};

// ---------------------------------------------------------------------------
// Grid posterior

struct GridResolution {
    std::size_t n_rho = 128;
    std::size_t n_eta = 128;
};

/// Nodes and node-level constants of a tensor grid; shared by every posterior built on it.
struct GridGeometry {
    TrialModel model;
    GridResolution resolution;
    std::shared_ptr<const LegendreBasis> eta_basis;
    std::vector<double> rho_nodes, eta_nodes;
    // node k = j * n_rho + r  (eta index j, rho index r)
    std::vector<double> node_rho, node_eta, node_beta;
    std::vector<double> log_prior;   // log prior density (normalized on the clipped support)
    std::vector<double> quad_weight; // tensor quadrature weight
    std::vector<std::uint32_t> node_col;
    double logit_p = 0.0;

    std::size_t size() const noexcept { return node_beta.size(); }

    static std::shared_ptr<const GridGeometry> make(const TrialModel& model, GridResolution res) {
        model.validate();
        if (res.n_rho < 2 || res.n_eta < 2) throw validation_error("resolution", "need at least 2x2 nodes");
        auto g = std::make_shared<GridGeometry>();
        g->model = model;
        g->resolution = res;
        g->logit_p = logit(model.p);
        g->eta_basis = LegendreBasis::get(res.n_eta);
        const auto rho_rule = gauss_legendre(res.n_rho);
        const double r_mid = 0.5 * (model.rho_lo() + model.rho_hi()), r_half = 0.5 * (model.rho_hi() - model.rho_lo());
        const double e_mid = 0.5 * (model.eta_lo() + model.eta_hi()), e_half = 0.5 * (model.eta_hi() - model.eta_lo());
        g->rho_nodes.resize(res.n_rho);
        g->eta_nodes.resize(res.n_eta);
        for (std::size_t r = 0; r < res.n_rho; ++r) g->rho_nodes[r] = r_mid + r_half * rho_rule.nodes[r];
        for (std::size_t j = 0; j < res.n_eta; ++j) g->eta_nodes[j] = e_mid + e_half * g->eta_basis->rule.nodes[j];

        const std::size_t n = res.n_rho * res.n_eta;
        g->node_rho.resize(n);
        g->node_eta.resize(n);
        g->node_beta.resize(n);
        g->log_prior.resize(n);
        g->quad_weight.resize(n);
        g->node_col.resize(n);
        const double l_p = std::log(1.0 / model.p - 1.0);
        std::vector<double> l_rho(res.n_rho);
        for (std::size_t r = 0; r < res.n_rho; ++r) l_rho[r] = std::log(1.0 / g->rho_nodes[r] - 1.0);

        double prior_mass = 0.0;
        for (std::size_t j = 0; j < res.n_eta; ++j) {
            const double eta = g->eta_nodes[j];
            for (std::size_t r = 0; r < res.n_rho; ++r) {
                const std::size_t k = j * res.n_rho + r;
                g->node_rho[k] = g->rho_nodes[r];
                g->node_eta[k] = eta;
                g->node_beta[k] = (l_rho[r] - l_p) / (eta - model.space.x_min);
                g->quad_weight[k] = r_half * rho_rule.weights[r] * e_half * g->eta_basis->rule.weights[j];
                g->log_prior[k] = model.prior.log_density(g->rho_nodes[r], eta);
                g->node_col[k] = static_cast<std::uint32_t>(j);
                if (std::isfinite(g->log_prior[k])) prior_mass += g->quad_weight[k] * std::exp(g->log_prior[k]);
            }
        }
        if (!(prior_mass > 0.0) || !std::isfinite(prior_mass))
            throw validation_error("prior", "prior density has no mass on the support");
        const double log_mass = std::log(prior_mass);
        for (double& lp : g->log_prior) lp -= log_mass;
        return g;
    }
};

class GridPosterior {
   public:
    /// Node weights below this (normalized) value are left out of cloud().
    static constexpr double kPruneWeight = 1e-16;

    GridPosterior() = default;

    static GridPosterior build(std::shared_ptr<const GridGeometry> geom, const History& h) {
        validate_history(h, geom->model.space);
        GridPosterior gp;
        gp.geom_ = std::move(geom);
        gp.loglik_.assign(gp.geom_->size(), 0.0);
        for (const auto& o : h) gp.accumulate(o);
        gp.history_ = h;
        gp.finalize();
        return gp;
    }

    GridPosterior with_observation(const Observation& o) const {
        validate_history(History{o}, geom_->model.space);
        GridPosterior gp;
        gp.geom_ = geom_;
        gp.loglik_ = loglik_;
        gp.accumulate(o);
        gp.history_ = history_;
        gp.history_.push_back(o);
        gp.finalize();
        return gp;
    }

    const GridGeometry& geometry() const noexcept { return *geom_; }
    std::shared_ptr<const GridGeometry> geometry_ptr() const noexcept { return geom_; }
    const TrialModel& model() const noexcept { return geom_->model; }
    const DoseSpace& space() const noexcept { return geom_->model.space; }
    double target() const noexcept { return geom_->model.p; }
    const History& history() const noexcept { return history_; }

    std::span<const double> rho_nodes() const noexcept { return geom_->rho_nodes; }
    std::span<const double> eta_nodes() const noexcept { return geom_->eta_nodes; }
    /// Unnormalized log posterior density at node k (log prior + log likelihood).
    double log_weight(std::size_t k) const noexcept { return geom_->log_prior[k] + loglik_[k]; }
    std::span<const double> quadrature_weights() const noexcept { return geom_->quad_weight; }
    /// log of the evidence int prior * likelihood; the posterior constant is C = exp(-log_norm_const()).
    double log_norm_const() const noexcept { return log_norm_; }
    /// Normalized node probabilities (quadrature weight included), all nodes.
    std::span<const double> node_weights() const noexcept { return weights_; }

    const LegendreMarginal& eta_marginal() const noexcept { return marginal_; }

    ParamCloud cloud() const noexcept {
        return {active_beta_, active_eta_, active_rho_, active_w_, active_col_, geom_->logit_p};
    }

    /// eta-marginal of the cloud reweighted pointwise by factors (aligned with cloud()).
    LegendreMarginal reweighted_marginal(std::span<const double> factors) const {
        std::vector<double> masses(geom_->resolution.n_eta, 0.0);
        for (std::size_t i = 0; i < active_w_.size(); ++i) masses[active_col_[i]] += active_w_[i] * factors[i];
        return LegendreMarginal(geom_->eta_basis, geom_->model.eta_lo(), geom_->model.eta_hi(), std::move(masses));
    }

   private:
    void accumulate(const Observation& o) {
        const auto& g = *geom_;
        const std::size_t n = g.size();
        const double* beta = g.node_beta.data();
        const double* eta = g.node_eta.data();
        double* ll = loglik_.data();
        const double lp = g.logit_p;
        const double x = o.dose;
        if (o.outcome)
            for (std::size_t k = 0; k < n; ++k) ll[k] += log_logistic(lp + beta[k] * (x - eta[k]));
        else
            for (std::size_t k = 0; k < n; ++k) ll[k] += log1m_logistic(lp + beta[k] * (x - eta[k]));
    }

    void finalize() {
        const auto& g = *geom_;
        const std::size_t n = g.size();
        weights_.resize(n);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k) {
            weights_[k] = g.log_prior[k] + loglik_[k] + std::log(g.quad_weight[k]);
            if (weights_[k] > mx) mx = weights_[k];
        }
        if (!std::isfinite(mx)) throw degenerate_posterior_error("posterior normalizing constant underflowed");
        double total = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            weights_[k] = std::exp(weights_[k] - mx);
            total += weights_[k];
        }
        if (!(total > 0.0) || !std::isfinite(total)) throw degenerate_posterior_error("posterior weights are not finite");
        log_norm_ = mx + std::log(total);
        const double inv = 1.0 / total;
        std::vector<double> masses(g.resolution.n_eta, 0.0);
        active_beta_.clear();
        active_eta_.clear();
        active_rho_.clear();
        active_w_.clear();
        active_col_.clear();
        for (std::size_t k = 0; k < n; ++k) {
            const double w = weights_[k] * inv;
            weights_[k] = w;
            masses[g.node_col[k]] += w;
            if (w >= kPruneWeight) {
                active_beta_.push_back(g.node_beta[k]);
                active_eta_.push_back(g.node_eta[k]);
                active_rho_.push_back(g.node_rho[k]);
                active_w_.push_back(w);
                active_col_.push_back(g.node_col[k]);
            }
        }
        marginal_ = LegendreMarginal(g.eta_basis, g.model.eta_lo(), g.model.eta_hi(), std::move(masses));
    }

    std::shared_ptr<const GridGeometry> geom_;
    History history_;
    std::vector<double> loglik_;
    std::vector<double> weights_;
    double log_norm_ = 0.0;
    std::vector<double> active_beta_, active_eta_, active_rho_, active_w_;
    std::vector<std::uint32_t> active_col_;
    LegendreMarginal marginal_;
};

inline GridPosterior build_grid_posterior(const TrialModel& model, const History& h, GridResolution res = {}) {
    if (res.n_rho < 32 || res.n_eta < 32) throw validation_error("resolution", "grid resolution must be at least 32x32");
    return GridPosterior::build(GridGeometry::make(model, res), h);
}

// ---------------------------------------------------------------------------
// Importance sample

/// Particles drawn once from the uniform proposal; sorted by eta. Shared by
/// every posterior that reweights them, which gives common random numbers.
struct ParticleSet {
    TrialModel model;
    std::vector<double> rho, eta, beta;
    std::vector<double> log_prior_ratio;  // log prior - log proposal
    std::vector<std::uint32_t> rank;      // 0..B-1 (eta order)
    double logit_p = 0.0;

    std::size_t size() const noexcept { return eta.size(); }

    static std::shared_ptr<const ParticleSet> draw(const TrialModel& model, std::size_t count, RngStream& rng) {
        model.validate();
        struct P {
            double rho, eta;
        };
        std::vector<P> raw(count);
        for (auto& p : raw) {
            p.rho = rng.uniform(model.rho_lo(), model.rho_hi());
            p.eta = rng.uniform(model.eta_lo(), model.eta_hi());
        }
        std::stable_sort(raw.begin(), raw.end(), [](const P& a, const P& b) { return a.eta < b.eta; });
        auto s = std::make_shared<ParticleSet>();
        s->model = model;
        s->logit_p = logit(model.p);
        const double l_p = std::log(1.0 / model.p - 1.0);
        const double log_proposal = -std::log(model.support_area());
        s->rho.resize(count);
        s->eta.resize(count);
        s->beta.resize(count);
        s->log_prior_ratio.resize(count);
        s->rank.resize(count);
        for (std::size_t b = 0; b < count; ++b) {
            s->rho[b] = raw[b].rho;
            s->eta[b] = raw[b].eta;
            s->beta[b] = (std::log(1.0 / raw[b].rho - 1.0) - l_p) / (raw[b].eta - model.space.x_min);
            s->log_prior_ratio[b] = model.prior.kind() == Prior::Kind::uniform
                                        ? 0.0
                                        : model.prior.log_density(raw[b].rho, raw[b].eta) - log_proposal;
            s->rank[b] = static_cast<std::uint32_t>(b);
        }
        return s;
    }
};

class WeightedSample {
   public:
    static constexpr double kDegenerateFraction = 0.01;

    WeightedSample() = default;

    static WeightedSample build(std::shared_ptr<const ParticleSet> particles, const History& h) {
        validate_history(h, particles->model.space);
        WeightedSample ws;
        ws.particles_ = std::move(particles);
        ws.loglik_.assign(ws.particles_->size(), 0.0);
        for (const auto& o : h) ws.accumulate(o);
        ws.history_ = h;
        ws.finalize();
        return ws;
    }

    WeightedSample with_observation(const Observation& o) const {
        validate_history(History{o}, particles_->model.space);
        WeightedSample ws;
        ws.particles_ = particles_;
        ws.loglik_ = loglik_;
        ws.accumulate(o);
        ws.history_ = history_;
        ws.history_.push_back(o);
        ws.finalize();
        return ws;
    }

    const TrialModel& model() const noexcept { return particles_->model; }
    const DoseSpace& space() const noexcept { return particles_->model.space; }
    double target() const noexcept { return particles_->model.p; }
    const History& history() const noexcept { return history_; }
    const ParticleSet& particles() const noexcept { return *particles_; }
    std::shared_ptr<const ParticleSet> particles_ptr() const noexcept { return particles_; }

    std::span<const double> weights() const noexcept { return weights_; }
    double ess() const noexcept { return ess_; }
    bool degenerate() const noexcept { return ess_ < kDegenerateFraction * static_cast<double>(weights_.size()); }

    const EmpiricalMarginal& eta_marginal() const noexcept { return marginal_; }

    ParamCloud cloud() const noexcept {
        const auto& p = *particles_;
        return {p.beta, p.eta, p.rho, weights_, p.rank, p.logit_p};
    }

    EmpiricalMarginal reweighted_marginal(std::span<const double> factors) const {
        std::vector<double> w(weights_.size());
        for (std::size_t b = 0; b < w.size(); ++b) w[b] = weights_[b] * factors[b];
        return EmpiricalMarginal(particles_->eta, w);
    }

   private:
    void accumulate(const Observation& o) {
        const auto& p = *particles_;
        for (std::size_t b = 0; b < p.size(); ++b)
            loglik_[b] += log_bernoulli(p.logit_p + p.beta[b] * (o.dose - p.eta[b]), o.outcome);
    }

    void finalize() {
        const auto& p = *particles_;
        const std::size_t n = p.size();
        weights_.resize(n);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < n; ++b) {
            weights_[b] = loglik_[b] + p.log_prior_ratio[b];
            mx = std::max(mx, weights_[b]);
        }
        if (!std::isfinite(mx)) throw degenerate_posterior_error("all importance weights vanished");
        double total = 0.0;
        for (double& w : weights_) {
            w = std::exp(w - mx);
            total += w;
        }
        double sq = 0.0;
        for (double& w : weights_) {
            w /= total;
            sq += w * w;
        }
        ess_ = 1.0 / sq;
        marginal_ = EmpiricalMarginal(p.eta, weights_);
    }

    std::shared_ptr<const ParticleSet> particles_;
    History history_;
    std::vector<double> loglik_;
    std::vector<double> weights_;
    double ess_ = 0.0;
    EmpiricalMarginal marginal_;
};

inline WeightedSample draw_importance_sample(const TrialModel& model, const History& h, std::size_t count, RngStream& rng) {
    if (count < 1000) throw validation_error("B", "importance sample size must be at least 1000");
    return WeightedSample::build(ParticleSet::draw(model, count, rng), h);
}

// ---------------------------------------------------------------------------
// Queries shared by both representations

template <class P>
concept PosteriorLike = requires(const P& post, std::span<const double> factors) {
    { post.space() } -> std::convertible_to<DoseSpace>;
    { post.target() } -> std::convertible_to<double>;
    { post.history() } -> std::convertible_to<History>;
    { post.cloud() } -> std::same_as<ParamCloud>;
    post.eta_marginal().quantile(0.5);
    post.reweighted_marginal(factors).quantile(0.5);
    { post.with_observation(Observation{}) } -> std::same_as<P>;
};

template <PosteriorLike P>
double posterior_mean_eta(const P& post) {
    return post.eta_marginal().mean();
}

template <PosteriorLike P>
double posterior_quantile_eta(const P& post, double omega) {
    return post.eta_marginal().quantile(omega);
}

/// P(y = 1 | x) = E[F_theta(x)]
template <PosteriorLike P>
double predictive_dlt_prob(const P& post, double x) {
    const ParamCloud c = post.cloud();
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += c.weight[i] * c.prob(i, x);
    return s;
}

/// E[fn(point index)] over the cloud.
template <PosteriorLike P, class Fn>
double cloud_expectation(const P& post, Fn&& fn) {
    const ParamCloud c = post.cloud();
    double s = 0.0, w = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        s += c.weight[i] * fn(c, i);
        w += c.weight[i];
    }
    return s / w;
}

}  // namespace dosefind
