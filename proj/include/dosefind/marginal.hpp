#pragma once

// One-dimensional posterior distributions of the MTD.
//
// LegendreMarginal carries the eta-marginal of a tensor Gauss-Legendre grid:
// node masses m_j define the degree n-1 Legendre interpolant of the density,
// whose integral gives a continuous CDF. EmpiricalMarginal is the weighted
// particle analogue used with importance samples.
//
// Both expose the same queries: mean, second moment, cdf, quantile (the
// smallest q with CDF(q) >= omega) and the partial moment E[(x - eta)^+].

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "quadrature.hpp"

namespace dosefind {

class LegendreMarginal {
   public:
    LegendreMarginal() = default;

    /// masses[j] is the probability attached to node j of the basis mapped onto [lo, hi].
    /// They are renormalized to sum to one.
    LegendreMarginal(std::shared_ptr<const LegendreBasis> basis, double lo, double hi, std::vector<double> masses)
        : basis_(std::move(basis)), lo_(lo), hi_(hi), masses_(std::move(masses)) {
        const std::size_t n = basis_->n;
        double total = 0.0;
        for (double m : masses_) total += m;
        for (double& m : masses_) m /= total;
        coef_.assign(n, 0.0);
        const double* P = basis_->p_at_nodes.data();
        for (std::size_t m = 0; m < n; ++m) {
            double s = 0.0;
            const double* row = P + m * n;
            for (std::size_t j = 0; j < n; ++j) s += masses_[j] * row[j];
            coef_[m] = 0.5 * (2.0 * m + 1.0) * s;
        }
        mean_ = 0.0;
        second_ = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double x = node(j);
            mean_ += masses_[j] * x;
            second_ += masses_[j] * x * x;
        }
    }

    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    std::size_t size() const noexcept { return masses_.size(); }
    double node(std::size_t j) const noexcept { return to_dose(basis_->rule.nodes[j]); }
    std::span<const double> masses() const noexcept { return masses_; }

    double mean() const noexcept { return mean_; }
    double second_moment() const noexcept { return second_; }
    double variance() const noexcept { return std::max(0.0, second_ - mean_ * mean_); }

    /// Density of the interpolant at x, clipped at zero.
    double density(double x) const {
        if (x < lo_ || x > hi_) return 0.0;
        const std::size_t n = basis_->n;
        std::vector<double> p(n);
        LegendreBasis::legendre_values(to_ref(x), n, p.data());
        double s = 0.0;
        for (std::size_t m = 0; m < n; ++m) s += coef_[m] * p[m];
        return std::max(0.0, s / half());
    }

    double cdf(double x) const {
        if (x <= lo_) return 0.0;
        if (x >= hi_) return 1.0;
        return std::clamp(cdf_ref(to_ref(x)), 0.0, 1.0);
    }

    double quantile(double omega) const {
        if (omega <= 0.0) return lo_;
        if (omega >= 1.0) return hi_;
        const std::size_t n = basis_->n;
        const double* I = basis_->i_at_breaks.data();
        // first breakpoint whose CDF reaches omega
        std::size_t k = 1;
        for (; k <= n; ++k) {
            double c = 0.0;
            const double* row = I + k * n;
            for (std::size_t m = 0; m < n; ++m) c += coef_[m] * row[m];
            if (c >= omega) break;
        }
        if (k > n) return hi_;
        double a = basis_->breakpoints[k - 1];
        double b = basis_->breakpoints[k];
        for (int it = 0; it < 200 && b - a > 1e-15; ++it) {
            const double mid = 0.5 * (a + b);
            if (cdf_ref(mid) >= omega)
                b = mid;
            else
                a = mid;
        }
        return to_dose(b);
    }

    /// E[(x - eta)^+]
    double lower_partial(double x) const {
        if (x <= lo_) return 0.0;
        if (x >= hi_) return x - mean_;
        const double t = to_ref(x);
        double c = 0.0, m1 = 0.0;
        cdf_and_moment_ref(t, c, m1);
        return std::max(0.0, half() * (t * c - m1));
    }

    /// E[(eta - x)^+]
    double upper_partial(double x) const { return mean_ - x + lower_partial(x); }

    double expected_ewoc_loss(double x, double omega) const {
        return omega * upper_partial(x) + (1.0 - omega) * lower_partial(x);
    }

    double expected_squared_error(double x) const { return second_ - 2.0 * x * mean_ + x * x; }

   private:
    double half() const noexcept { return 0.5 * (hi_ - lo_); }
    double mid() const noexcept { return 0.5 * (hi_ + lo_); }
    double to_dose(double t) const noexcept { return mid() + half() * t; }
    double to_ref(double x) const noexcept { return (x - mid()) / half(); }

    double cdf_ref(double t) const {
        const std::size_t n = basis_->n;
        // P_{m-1}, P_m, P_{m+1} carried along the recurrence
        double pm1 = 1.0, pm = t;
        double c = coef_[0] * (t + 1.0);
        for (std::size_t m = 1; m < n; ++m) {
            const double pp = ((2.0 * m + 1.0) * t * pm - static_cast<double>(m) * pm1) / (m + 1.0);
            c += coef_[m] * (pp - pm1) / (2.0 * m + 1.0);
            pm1 = pm;
            pm = pp;
        }
        return c;
    }

    // c = int_{-1}^t f, m1 = int_{-1}^t s f(s) ds in reference coordinates
    void cdf_and_moment_ref(double t, double& c, double& m1) const {
        const std::size_t n = basis_->n;
        std::vector<double> p(n + 2), I(n + 1);
        LegendreBasis::legendre_values(t, n + 2, p.data());
        I[0] = t + 1.0;
        for (std::size_t m = 1; m <= n; ++m) I[m] = (p[m + 1] - p[m - 1]) / (2.0 * m + 1.0);
        c = 0.0;
        m1 = 0.0;
        for (std::size_t m = 0; m < n; ++m) {
            c += coef_[m] * I[m];
            const double km = (m == 0) ? I[1] : ((m + 1.0) * I[m + 1] + static_cast<double>(m) * I[m - 1]) / (2.0 * m + 1.0);
            m1 += coef_[m] * km;
        }
    }

    std::shared_ptr<const LegendreBasis> basis_;
    double lo_ = 0.0, hi_ = 1.0;
    std::vector<double> masses_;
    std::vector<double> coef_;
    double mean_ = 0.0, second_ = 0.0;
};

/// Weighted point masses on the dose axis, sorted ascending.
class EmpiricalMarginal {
   public:
    EmpiricalMarginal() = default;

    /// values must be sorted ascending; weights are renormalized.
    EmpiricalMarginal(std::vector<double> values, std::span<const double> weights) : values_(std::move(values)) {
        const std::size_t n = values_.size();
        cum_w_.resize(n);
        cum_wx_.resize(n);
        double total = 0.0;
        for (double w : weights) total += w;
        double sw = 0.0, swx = 0.0;
        second_ = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = weights[i] / total;
            sw += w;
            swx += w * values_[i];
            second_ += w * values_[i] * values_[i];
            cum_w_[i] = sw;
            cum_wx_[i] = swx;
        }
        mean_ = swx;
    }

    std::size_t size() const noexcept { return values_.size(); }
    double mean() const noexcept { return mean_; }
    double second_moment() const noexcept { return second_; }
    double variance() const noexcept { return std::max(0.0, second_ - mean_ * mean_); }

    double cdf(double x) const {
        const auto it = std::upper_bound(values_.begin(), values_.end(), x);
        if (it == values_.begin()) return 0.0;
        return std::min(1.0, cum_w_[static_cast<std::size_t>(it - values_.begin()) - 1]);
    }

    /// Generalized inverse with linear interpolation between consecutive particles.
    double quantile(double omega) const {
        if (values_.empty()) return 0.0;
        if (omega <= 0.0) return values_.front();
        const auto it = std::lower_bound(cum_w_.begin(), cum_w_.end(), omega);
        if (it == cum_w_.end()) return values_.back();
        const std::size_t k = static_cast<std::size_t>(it - cum_w_.begin());
        if (k == 0) return values_[0];
        const double c0 = cum_w_[k - 1], c1 = cum_w_[k];
        const double f = c1 > c0 ? (omega - c0) / (c1 - c0) : 1.0;
        return values_[k - 1] + f * (values_[k] - values_[k - 1]);
    }

    /// E[(x - eta)^+]
    double lower_partial(double x) const {
        const auto it = std::upper_bound(values_.begin(), values_.end(), x);
        if (it == values_.begin()) return 0.0;
        const std::size_t k = static_cast<std::size_t>(it - values_.begin()) - 1;
        return std::max(0.0, x * cum_w_[k] - cum_wx_[k]);
    }

    double upper_partial(double x) const { return mean_ - x + lower_partial(x); }

    double expected_ewoc_loss(double x, double omega) const {
        return omega * upper_partial(x) + (1.0 - omega) * lower_partial(x);
    }

    double expected_squared_error(double x) const { return second_ - 2.0 * x * mean_ + x * x; }

   private:
    std::vector<double> values_;
    std::vector<double> cum_w_, cum_wx_;
    double mean_ = 0.0, second_ = 0.0;
};

}  // namespace dosefind
