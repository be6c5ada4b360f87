#pragma once

// Loss functions l(theta, x) that drive dose selection, and the design
// criterion losses l(theta, x; xi) = Psi(M(theta, xi + {x})).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "posterior.hpp"

namespace dosefind {

namespace loss {

struct SquaredError {};

/// omega (eta - x) below the MTD, (1 - omega)(x - eta) above.
struct Ewoc {
    double omega = 0.25;
};

/// gamma (p - F(x)) below the MTD, (1 - gamma)(F(x) - p) above.
struct Inverted {
    double gamma = 0.25;
};

enum class CriterionKind { D, c };

struct Criterion {
    CriterionKind kind = CriterionKind::D;
    /// c-optimality weight vector; when empty, designs use d eta / d(alpha, beta) at the posterior mean.
    std::optional<std::array<double, 2>> c;
};

struct DesignCriterion {
    Criterion psi;
};

}  // namespace loss

using LossSpec = std::variant<loss::SquaredError, loss::Ewoc, loss::Inverted, loss::DesignCriterion>;

inline void validate_loss(const LossSpec& spec) {
    if (const auto* e = std::get_if<loss::Ewoc>(&spec)) {
        if (!(e->omega > 0.0 && e->omega <= 0.5)) throw validation_error("omega", "must satisfy 0 < omega <= 1/2");
    } else if (const auto* v = std::get_if<loss::Inverted>(&spec)) {
        if (!(v->gamma > 0.0 && v->gamma <= 0.5)) throw validation_error("gamma", "must satisfy 0 < gamma <= 1/2");
    }
}

inline std::string loss_name(const LossSpec& spec) {
    return std::visit(
        [](const auto& l) -> std::string {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, loss::SquaredError>) return "squared_error";
            else if constexpr (std::is_same_v<T, loss::Ewoc>) return "ewoc";
            else if constexpr (std::is_same_v<T, loss::Inverted>) return "inverted";
            else return "design_criterion";
        },
        spec);
}

inline double ewoc_loss(double eta, double x, double omega) noexcept {
    return x <= eta ? omega * (eta - x) : (1.0 - omega) * (x - eta);
}

/// Written in terms of F(x) alone: F(x) <= p exactly when x <= eta.
inline double inverted_loss(double prob_at_x, double p, double gamma) noexcept {
    return prob_at_x <= p ? gamma * (p - prob_at_x) : (1.0 - gamma) * (prob_at_x - p);
}

/// Point loss given the MTD and the toxicity probability at x.
inline double loss_value(const LossSpec& spec, double eta, double x, double prob_at_x, double p) {
    switch (spec.index()) {
        case 0: return (eta - x) * (eta - x);
        case 1: return ewoc_loss(eta, x, std::get<loss::Ewoc>(spec).omega);
        case 2: return inverted_loss(prob_at_x, p, std::get<loss::Inverted>(spec).gamma);
        default: throw validation_error("loss", "design-criterion losses need a design measure; use design_loss");
    }
}

inline double eval_loss(const LossSpec& spec, const NaturalParams& np, const DoseSpace& space, double x) {
    if (std::holds_alternative<loss::DesignCriterion>(spec))
        throw validation_error("loss", "design-criterion losses need a design measure; use design_loss");
    const double f = std::holds_alternative<loss::Inverted>(spec) ? toxicity_prob(x, np, space) : 0.0;
    return loss_value(spec, np.eta, x, f, np.target_p);
}

// ---------------------------------------------------------------------------
// Design measures and information

/// Empirical design measure: doses with multiplicity. count() == 0 is the zero measure.
class DesignMeasure {
   public:
    DesignMeasure() = default;
    explicit DesignMeasure(std::vector<double> doses) : doses_(std::move(doses)) {}

    std::size_t count() const noexcept { return doses_.size(); }
    const std::vector<double>& doses() const noexcept { return doses_; }

    std::size_t distinct_count() const { return std::set<double>(doses_.begin(), doses_.end()).size(); }

    /// xi_{+{x}} = (|xi| xi + delta_x) / (|xi| + 1)
    DesignMeasure augmented(double x) const {
        auto d = doses_;
        d.push_back(x);
        return DesignMeasure(std::move(d));
    }

    void add(double x) { doses_.push_back(x); }

   private:
    std::vector<double> doses_;
};

/// Sum (not average) of the Fisher information over the support, with multiplicity.
inline SymMatrix2 info_sum(const DesignMeasure& xi, const CanonicalParams& cp) {
    SymMatrix2 m;
    for (double x : xi.doses()) m += fisher_info(cp, x);
    return m;
}

inline SymMatrix2 info_matrix(const DesignMeasure& xi, const CanonicalParams& cp) {
    if (xi.count() == 0) throw validation_error("xi", "information matrix of the zero measure is undefined");
    return (1.0 / static_cast<double>(xi.count())) * info_sum(xi, cp);
}

inline constexpr double kDetThreshold = 1e-12;

inline double criterion(const loss::Criterion& psi, const SymMatrix2& m) {
    const double det = m.det();
    if (!(det > kDetThreshold)) throw singular_information_error("information matrix is singular (det <= 1e-12)");
    if (psi.kind == loss::CriterionKind::D) return -std::log(det);
    if (!psi.c) throw validation_error("c", "c-optimality needs a c vector");
    const auto& c = *psi.c;
    // c' M^{-1} c with M^{-1} = [[m.c, -m.b], [-m.b, m.a]] / det
    return (c[0] * c[0] * m.c - 2.0 * c[0] * c[1] * m.b + c[1] * c[1] * m.a) / det;
}

/// Psi evaluated with det(M) floored at the singularity threshold. Used inside
/// posterior expectations, where curves with vanishing logistic weight make M
/// numerically singular for designs that are structurally fine.
inline double criterion_floored(const loss::Criterion& psi, const SymMatrix2& m) {
    const double det = std::max(m.det(), kDetThreshold);
    if (psi.kind == loss::CriterionKind::D) return -std::log(det);
    const auto& c = *psi.c;
    return (c[0] * c[0] * m.c - 2.0 * c[0] * c[1] * m.b + c[1] * c[1] * m.a) / det;
}

inline double design_loss(const loss::DesignCriterion& spec, const NaturalParams& np, const DoseSpace& space, double x,
                          const DesignMeasure& xi) {
    const CanonicalParams cp = to_canonical(np, space);
    return criterion(spec.psi, info_matrix(xi.augmented(x), cp));
}

// ---------------------------------------------------------------------------
// Posterior expectations

/// E_post[l(theta, x)] for the non-design losses.
template <PosteriorLike P>
double expected_loss(const P& post, const LossSpec& spec, double x) {
    switch (spec.index()) {
        case 0: return post.eta_marginal().expected_squared_error(x);
        case 1: return post.eta_marginal().expected_ewoc_loss(x, std::get<loss::Ewoc>(spec).omega);
        case 2: {
            const double gamma = std::get<loss::Inverted>(spec).gamma;
            const double p = post.target();
            const ParamCloud c = post.cloud();
            double s = 0.0, w = 0.0;
            for (std::size_t i = 0; i < c.size(); ++i) {
                s += c.weight[i] * inverted_loss(c.prob(i, x), p, gamma);
                w += c.weight[i];
            }
            return s / w;
        }
        default: throw validation_error("loss", "design-criterion losses need a design measure; use expected_design_loss");
    }
}

/// E_post[Psi(M(theta, xi + {x}))]. Throws when xi + {x} has fewer than two distinct doses.
template <PosteriorLike P>
double expected_design_loss(const P& post, const loss::Criterion& psi, double x, const DesignMeasure& xi) {
    const DesignMeasure aug = xi.augmented(x);
    if (aug.distinct_count() < 2)
        throw singular_information_error("design with fewer than two distinct doses has singular information");
    const ParamCloud c = post.cloud();
    const double scale = 1.0 / static_cast<double>(aug.count());
    double s = 0.0, w = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const SymMatrix2 m = scale * info_sum(aug, c.canonical(i));
        s += c.weight[i] * criterion_floored(psi, m);
        w += c.weight[i];
    }
    return s / w;
}

}  // namespace dosefind
