#include <gtest/gtest.h>

#include <cmath>

#include "dosefind/model.hpp"
#include "dosefind/random.hpp"
#include "oracles.hpp"

using namespace dosefind;

namespace {

const DoseSpace kSpace{140.0, 425.0};
constexpr double kP = 1.0 / 3.0;

double bisect_mtd(const CanonicalParams& cp, double p, double lo, double hi) {
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (toxicity_prob(mid, cp) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST(Model, CanonicalCurvePassesThroughAnchors) {
    for (const auto& [rho, eta] : {std::pair{0.19, 269.1}, {0.07, 403.9}, {0.1, 179.1}, {0.3, 141.0}}) {
        const NaturalParams np{rho, eta, kP};
        const CanonicalParams cp = to_canonical(np, kSpace);
        EXPECT_NEAR(toxicity_prob(kSpace.x_min, cp), rho, 1e-10);
        EXPECT_NEAR(toxicity_prob(eta, cp), kP, 1e-10);
        EXPECT_GT(cp.beta, 0.0);
    }
}

TEST(Model, AnchoredPredictorIsExactAtAnchors) {
    const NaturalParams np{0.19, 269.1, kP};
    EXPECT_NEAR(linear_predictor(269.1, np, kSpace), logit(kP), 1e-14);
    EXPECT_NEAR(linear_predictor(140.0, np, kSpace), -std::log(1.0 / 0.19 - 1.0), 1e-13);
}

TEST(Model, PredictorMatchesWrittenOutFormula) {
    RngStream rng(11);
    for (int k = 0; k < 1000; ++k) {
        const double rho = rng.uniform(1e-4, kP - 1e-4), eta = rng.uniform(140.5, 425.0);
        const double x = rng.uniform(140.0, 425.0);
        EXPECT_NEAR(toxicity_prob(x, NaturalParams{rho, eta, kP}, kSpace), oracle::prob(x, rho, eta, kP, 140.0), 1e-12);
    }
}

TEST(Model, LogisticEdgeValues) {
    EXPECT_EQ(logistic(0.0), 0.5);
    EXPECT_NEAR(toxicity_prob(0.0, CanonicalParams{0.0, 3.0}), 0.5, 0.0);
    EXPECT_EQ(logistic(-1000.0), 0.0);
    EXPECT_EQ(logistic(1000.0), 1.0);
    EXPECT_NEAR(log_logistic(-800.0), -800.0, 1e-12);
    EXPECT_NEAR(log1m_logistic(800.0), -800.0, 1e-12);
    EXPECT_NEAR(logit(0.25), -std::log(3.0), 1e-15);
}

TEST(Model, SingularTransformsAreRejected) {
    EXPECT_THROW(to_canonical({kP, 300.0, kP}, kSpace), singular_transform_error);
    EXPECT_THROW(to_canonical({0.5, 300.0, kP}, kSpace), singular_transform_error);
    EXPECT_THROW(to_canonical({0.1, 140.0, kP}, kSpace), singular_transform_error);
    EXPECT_THROW(to_canonical({0.0, 300.0, kP}, kSpace), singular_transform_error);
    EXPECT_THROW(to_canonical({0.1, 100.0, kP}, kSpace), singular_transform_error);
}

TEST(Model, MtdMatchesBisection) {
    RngStream rng(3);
    for (int k = 0; k < 10000; ++k) {
        const CanonicalParams cp{rng.uniform(-12.0, 2.0), rng.uniform(0.001, 0.2)};
        const double p = rng.uniform(0.05, 0.6);
        const double m = mtd(cp, p);
        const double lo = m - 1000.0, hi = m + 1000.0;
        EXPECT_NEAR(m, bisect_mtd(cp, p, lo, hi), 1e-8 * (1.0 + std::abs(m)));
    }
}

TEST(Model, NaturalCanonicalRoundTrip) {
    RngStream rng(5);
    for (int k = 0; k < 10000; ++k) {
        const double rho = rng.uniform(1e-6, kP - 1e-6), eta = rng.uniform(140.001, 425.0);
        const NaturalParams back = to_natural(to_canonical({rho, eta, kP}, kSpace), kP, kSpace);
        EXPECT_NEAR(back.rho, rho, 1e-8 * rho);
        EXPECT_NEAR(back.eta, eta, 1e-8 * eta);
    }
}

TEST(Model, CurveIncreasesInDoseAndDecreasesInEta) {
    // compared on the logit scale, where the curve does not saturate
    RngStream rng(7);
    for (int k = 0; k < 2000; ++k) {
        const double rho = rng.uniform(0.01, 0.3), eta = rng.uniform(150.0, 420.0);
        const double x = rng.uniform(140.0, 420.0);
        const CanonicalParams cp = to_canonical({rho, eta, kP}, kSpace);
        const CanonicalParams up = to_canonical({rho, eta + 5.0, kP}, kSpace);
        EXPECT_LT(linear_predictor(x, cp), linear_predictor(x + 5.0, cp));
        if (x > 140.0) EXPECT_GT(linear_predictor(x, cp), linear_predictor(x, up));
        EXPECT_LE(toxicity_prob(x, {rho, eta, kP}, kSpace), toxicity_prob(x + 5.0, {rho, eta, kP}, kSpace));
    }
}

TEST(Model, FisherInformationAtMidpoint) {
    // alpha + beta x = 0 gives weight 1/4
    const CanonicalParams cp{-3.0, 0.02};
    const SymMatrix2 m = fisher_info(cp, 150.0);
    EXPECT_NEAR(m.a, 0.25, 1e-15);
    EXPECT_NEAR(m.b, 0.25 * 150.0, 1e-12);
    EXPECT_NEAR(m.c, 0.25 * 150.0 * 150.0, 1e-9);
    EXPECT_NEAR(m.det(), 0.0, 1e-9 * m.c);
}

TEST(Model, FisherWeightIsFTimesOneMinusF) {
    RngStream rng(9);
    for (int k = 0; k < 1000; ++k) {
        const double g = rng.uniform(-40.0, 40.0);
        const double f = 1.0 / (1.0 + std::exp(-g));
        EXPECT_NEAR(fisher_weight(g), f * (1.0 - f), 1e-15);
    }
    EXPECT_EQ(fisher_weight(0.0), 0.25);
}

TEST(Model, FisherInformationIsPositiveSemidefinite) {
    RngStream rng(13);
    for (int k = 0; k < 10000; ++k) {
        const CanonicalParams cp{rng.uniform(-10.0, 1.0), rng.uniform(0.001, 0.1)};
        const double x1 = rng.uniform(140.0, 425.0), x2 = rng.uniform(140.0, 425.0);
        const SymMatrix2 m = fisher_info(cp, x1) + fisher_info(cp, x2);
        EXPECT_GE(m.a, 0.0);
        EXPECT_GE(m.c, 0.0);
        // two-point determinant is w1 w2 (x1 - x2)^2
        const double w1 = fisher_weight(cp.alpha + cp.beta * x1), w2 = fisher_weight(cp.alpha + cp.beta * x2);
        EXPECT_NEAR(m.det(), w1 * w2 * (x1 - x2) * (x1 - x2), 1e-9 * (m.a * m.c) + 1e-300);
    }
}
