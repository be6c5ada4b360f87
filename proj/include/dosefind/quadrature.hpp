#pragma once

// Gauss-Legendre rules and the Legendre-series tables used to turn node values
// of a density into a continuous CDF.

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dosefind {

struct GaussLegendreRule {
    std::vector<double> nodes;    // ascending, in (-1, 1)
    std::vector<double> weights;  // sum to 2
};

/// Nodes by Newton iteration on P_n from the usual cosine initial guess.
inline GaussLegendreRule gauss_legendre(std::size_t n) {
    if (n == 0) throw std::invalid_argument("gauss_legendre: n must be positive");
    // returns {P_n(z), P_{n-1}(z)}
    auto legendre_pair = [n](double z) {
        double p0 = 1.0, p1 = z;
        for (std::size_t k = 2; k <= n; ++k) {
            const double pk = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / static_cast<double>(k);
            p0 = p1;
            p1 = pk;
        }
        return std::pair{p1, p0};
    };
    GaussLegendreRule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    const double nd = static_cast<double>(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            const auto [pn, pm] = legendre_pair(z);
            dp = nd * (z * pn - pm) / (z * z - 1.0);
            const double dz = pn / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        const auto [pn, pm] = legendre_pair(z);
        dp = nd * (z * pn - pm) / (z * z - 1.0);
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        r.nodes[i] = -z;
        r.nodes[n - 1 - i] = z;
        r.weights[i] = w;
        r.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.nodes[n / 2] = 0.0;
    return r;
}

/// Legendre tables for an n-point rule: P_m at the nodes, and the integrated
/// basis I_m(t) = int_{-1}^t P_m at n+1 breakpoints (-1, node midpoints, +1).
struct LegendreBasis {
    std::size_t n = 0;
    GaussLegendreRule rule;
    std::vector<double> p_at_nodes;    // [m * n + j], m < n
    std::vector<double> breakpoints;   // n + 1 values
    std::vector<double> i_at_breaks;   // [k * n + m], m < n

    /// Evaluates P_0..P_{count-1} at t into out.
    static void legendre_values(double t, std::size_t count, double* out) noexcept {
        if (count == 0) return;
        out[0] = 1.0;
        if (count == 1) return;
        out[1] = t;
        for (std::size_t m = 1; m + 1 < count; ++m)
            out[m + 1] = ((2.0 * m + 1.0) * t * out[m] - static_cast<double>(m) * out[m - 1]) / (m + 1.0);
    }

    /// I_m(t) for m < count (needs P up to count).
    static void integrated_values(double t, std::size_t count, double* scratch, double* out) noexcept {
        legendre_values(t, count + 1, scratch);
        out[0] = t + 1.0;
        for (std::size_t m = 1; m < count; ++m) out[m] = (scratch[m + 1] - scratch[m - 1]) / (2.0 * m + 1.0);
    }

    explicit LegendreBasis(std::size_t n_) : n(n_), rule(gauss_legendre(n_)) {
        p_at_nodes.assign(n * n, 0.0);
        std::vector<double> tmp(n + 2);
        for (std::size_t j = 0; j < n; ++j) {
            legendre_values(rule.nodes[j], n, tmp.data());
            for (std::size_t m = 0; m < n; ++m) p_at_nodes[m * n + j] = tmp[m];
        }
        breakpoints.resize(n + 1);
        breakpoints[0] = -1.0;
        breakpoints[n] = 1.0;
        for (std::size_t j = 1; j < n; ++j) breakpoints[j] = 0.5 * (rule.nodes[j - 1] + rule.nodes[j]);
        i_at_breaks.assign((n + 1) * n, 0.0);
        std::vector<double> out(n);
        for (std::size_t k = 0; k <= n; ++k) {
            integrated_values(breakpoints[k], n, tmp.data(), out.data());
            for (std::size_t m = 0; m < n; ++m) i_at_breaks[k * n + m] = out[m];
        }
    }

    /// Shared, lazily built basis for an n-point rule.
    static std::shared_ptr<const LegendreBasis> get(std::size_t n) {
        static std::mutex mu;
        static std::map<std::size_t, std::shared_ptr<const LegendreBasis>> cache;
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(n);
        if (it != cache.end()) return it->second;
        auto b = std::make_shared<const LegendreBasis>(n);
        cache.emplace(n, b);
        return b;
    }
};

}  // namespace dosefind
