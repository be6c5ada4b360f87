#pragma once

// Two-parameter logistic dose-toxicity model
//
//     F(x) = 1 / (1 + exp(-(alpha + beta * x))),   beta > 0,
//
// and its natural parameterization (rho, eta): rho = F(x_min) is the toxicity
// probability at the lowest dose and eta = F^{-1}(p) is the MTD for target p.

#include <cmath>
#include <limits>
#include <sstream>

#include "errors.hpp"

namespace dosefind {

struct DoseSpace {
    double x_min = 0.0;
    double x_max = 1.0;

    double width() const noexcept { return x_max - x_min; }
    bool contains(double x) const noexcept { return x >= x_min && x <= x_max; }
    double clamp(double x) const noexcept { return x < x_min ? x_min : (x > x_max ? x_max : x); }

    void validate() const {
        if (!std::isfinite(x_min) || !std::isfinite(x_max))
            throw validation_error("dose_space", "bounds must be finite");
        if (!(x_min < x_max)) throw validation_error("dose_space", "x_min must be < x_max");
    }
};

struct CanonicalParams {
    double alpha = 0.0;
    double beta = 1.0;
};

struct NaturalParams {
    double rho = 0.0;
    double eta = 0.0;
    double target_p = 0.5;
};

// ---------------------------------------------------------------------------
// numerically stable logistic pieces

inline double logistic(double g) noexcept {
    if (g >= 0.0) return 1.0 / (1.0 + std::exp(-g));
    const double e = std::exp(g);
    return e / (1.0 + e);
}

/// log(1 + exp(g)) without overflow.
inline double softplus(double g) noexcept {
    if (g > 0.0) return g + std::log1p(std::exp(-g));
    return std::log1p(std::exp(g));
}

/// log F = -softplus(-g)
inline double log_logistic(double g) noexcept { return -softplus(-g); }

/// log(1 - F) = -softplus(g)
inline double log1m_logistic(double g) noexcept { return -softplus(g); }

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

// ---------------------------------------------------------------------------

/// Boundary clipping of the (rho, eta) support. The transform is singular at
/// rho = 0 and eta = x_min, so every prior/proposal lives on
/// [eps_rho, p - eps_rho] x [x_min + eps_eta_rel * width, x_max].
struct SupportClip {
    double eps_rho = 1e-6;
    double eps_eta_rel = 1e-6;

    double rho_lo() const noexcept { return eps_rho; }
    double rho_hi(double p) const noexcept { return p - eps_rho; }
    double eta_lo(const DoseSpace& s) const noexcept { return s.x_min + eps_eta_rel * s.width(); }
    double eta_hi(const DoseSpace& s) const noexcept { return s.x_max; }
};

inline void validate_target(double p) {
    if (!(p > 0.0 && p < 1.0)) throw validation_error("p", "target probability must lie in (0,1)");
}

/// Slope of the natural-parameter curve. Throws when the transform is singular.
inline double natural_slope(const NaturalParams& np, const DoseSpace& space) {
    if (!(np.eta > space.x_min)) {
        std::ostringstream os;
        os << "eta (" << np.eta << ") must exceed x_min (" << space.x_min << ")";
        throw singular_transform_error(os.str());
    }
    if (!(np.rho > 0.0 && np.rho < 1.0))
        throw singular_transform_error("rho must lie strictly inside (0,1)");
    if (!(np.target_p > 0.0 && np.target_p < 1.0))
        throw singular_transform_error("target p must lie strictly inside (0,1)");
    const double l_rho = std::log(1.0 / np.rho - 1.0);
    const double l_p = std::log(1.0 / np.target_p - 1.0);
    const double beta = (l_rho - l_p) / (np.eta - space.x_min);
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw singular_transform_error("rho must be below the target p (beta would be <= 0)");
    return beta;
}

inline CanonicalParams to_canonical(const NaturalParams& np, const DoseSpace& space) {
    const double beta = natural_slope(np, space);
    const double l_rho = std::log(1.0 / np.rho - 1.0);
    const double l_p = std::log(1.0 / np.target_p - 1.0);
    const double alpha = (space.x_min * l_p - np.eta * l_rho) / (np.eta - space.x_min);
    return {alpha, beta};
}

/// G(x, rho, eta) = alpha + beta x, evaluated in the form anchored at eta so that
/// G(eta) = logit(p) and G(x_min) = -log(1/rho - 1) hold to rounding.
inline double linear_predictor(double x, const NaturalParams& np, const DoseSpace& space) {
    const double beta = natural_slope(np, space);
    return logit(np.target_p) + beta * (x - np.eta);
}

inline double linear_predictor(double x, const CanonicalParams& cp) noexcept {
    return cp.alpha + cp.beta * x;
}

inline double toxicity_prob(double x, const CanonicalParams& cp) noexcept {
    return logistic(cp.alpha + cp.beta * x);
}

inline double toxicity_prob(double x, const NaturalParams& np, const DoseSpace& space) {
    return logistic(linear_predictor(x, np, space));
}

inline double mtd(const CanonicalParams& cp, double p) { return (logit(p) - cp.alpha) / cp.beta; }

/// Natural coordinates of a canonical curve.
inline NaturalParams to_natural(const CanonicalParams& cp, double p, const DoseSpace& space) {
    return {toxicity_prob(space.x_min, cp), mtd(cp, p), p};
}

// ---------------------------------------------------------------------------
// 2x2 symmetric matrices for Fisher information

struct SymMatrix2 {
    double a = 0.0;  // (0,0)
    double b = 0.0;  // (0,1) == (1,0)
    double c = 0.0;  // (1,1)

    double det() const noexcept { return a * c - b * b; }
    double trace() const noexcept { return a + c; }

    SymMatrix2& operator+=(const SymMatrix2& o) noexcept {
        a += o.a;
        b += o.b;
        c += o.c;
        return *this;
    }
    friend SymMatrix2 operator+(SymMatrix2 l, const SymMatrix2& r) noexcept { return l += r; }
    friend SymMatrix2 operator*(double s, SymMatrix2 m) noexcept { return {s * m.a, s * m.b, s * m.c}; }

    static SymMatrix2 identity() noexcept { return {1.0, 0.0, 1.0}; }
};

/// Logistic information weight e^G / (1 + e^G)^2 = F(1-F).
inline double fisher_weight(double g) noexcept {
    const double a = std::abs(g);
    const double e = std::exp(-a);
    return e / ((1.0 + e) * (1.0 + e));
}

/// I(theta, x) = w(x) [[1, x], [x, x^2]]
inline SymMatrix2 fisher_info(const CanonicalParams& cp, double x) noexcept {
    const double w = fisher_weight(cp.alpha + cp.beta * x);
    return {w, w * x, w * x * x};
}

}  // namespace dosefind
