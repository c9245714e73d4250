#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccdist/cc_core.hpp"
#include "ccdist/errors.hpp"

using namespace ccdist;

namespace {

// Reference values below come from 30-digit adaptive quadrature of the
// defining integral (mpmath), independent of the closed form.
constexpr double kLogC_08_02 = 0.837459883744271665610;      // -log(0.6 / log 4)
constexpr double kLogC_05_03_02 = 1.84434029697942357832;    // K=3, lambda=(0.5,0.3,0.2)
constexpr double kLogC_025_025_05 = 1.83465558181256549646;  // K=3 with a tie
constexpr double kMean_05_03_02[3] = {0.374253133261629076764, 0.328112664318163043272,
                                      0.297634202420207879964};
constexpr double kMean1_08_02 = 0.611985812888851629653;

std::vector<double> random_lambda(std::size_t K, Rng& rng) {
    const auto p = sample_uniform_simplex(K, rng);
    std::vector<double> v(p.values().begin(), p.values().end());
    for (auto& x : v) {
        x = std::max(x, 1e-12);
    }
    return v;
}

CCParams params_from_eta(std::vector<double> eta) {
    return CCParams(PositiveComposition::from_logs(std::move(eta)));
}

double nll_at_eta(const std::vector<double>& eta, const SimplexPoint& y) {
    return cc_nll(params_from_eta(eta), y);
}

} // namespace

TEST(InvNormConstTerms, HandEvaluatedK2) {
    const auto terms = inv_norm_const_terms(CCParams({0.8, 0.2}));
    ASSERT_EQ(terms.size(), 2u);
    EXPECT_NEAR(terms[0].value(), -0.577078016355585362944, 1e-15);
    EXPECT_NEAR(terms[1].value(), 0.144269504088896340736, 1e-15);
}

TEST(InvNormConstTerms, SwapAndScale) {
    const auto base = inv_norm_const_terms(CCParams({0.8, 0.2}));
    const auto swapped = inv_norm_const_terms(CCParams({0.2, 0.8}));
    // (0.2, 0.8): 0.2/log 4 and 0.8/log(1/4); same magnitudes, positions swapped.
    EXPECT_NEAR(swapped[0].value(), base[1].value(), 1e-15);
    EXPECT_NEAR(swapped[1].value(), base[0].value(), 1e-15);

    const auto scaled = inv_norm_const_terms(CCParams({3 * 0.8, 3 * 0.2}));
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_NEAR(scaled[k].value() / base[k].value(), 3.0, 1e-14);
    }
}

TEST(InvNormConstTerms, FullTieThrows) {
    EXPECT_THROW(inv_norm_const_terms(CCParams({0.25, 0.25, 0.25, 0.25})), InvalidArgument);
}

TEST(LogNormConst, K2Value) {
    const auto r = log_norm_const(CCParams({0.8, 0.2}));
    EXPECT_NEAR(r.log_c, kLogC_08_02, 1e-14);
    EXPECT_NEAR(r.diag.condition_number, 5.0 / 3.0, 1e-13);
    EXPECT_FALSE(r.diag.near_centroid);
    EXPECT_FALSE(r.diag.tie_adjusted);
    EXPECT_NEAR(r.diag.min_log_ratio, std::log(4.0), 1e-15);
}

TEST(LogNormConst, K3Value) {
    EXPECT_NEAR(log_norm_const(CCParams({0.5, 0.3, 0.2})).log_c, kLogC_05_03_02, 1e-13);
}

TEST(LogNormConst, UniformLimit) {
    for (std::size_t K = 2; K <= 8; ++K) {
        const auto r = log_norm_const(CCParams(std::vector<double>(K, 1.0 / static_cast<double>(K))));
        EXPECT_NEAR(r.log_c, std::lgamma(static_cast<double>(K) + 1.0), 1e-13);
        EXPECT_TRUE(r.diag.tie_adjusted);
        EXPECT_TRUE(r.diag.near_centroid);
    }
    EXPECT_NEAR(log_norm_const(CCParams({1.0 / 3, 1.0 / 3, 1.0 / 3})).log_c, std::log(6.0), 1e-14);
    // Unnormalized uniform: log C(c * 1) = log (K-1)! - log c
    EXPECT_NEAR(log_norm_const(CCParams({2.0, 2.0, 2.0})).log_c, std::log(2.0) - std::log(2.0), 1e-14);
}

TEST(LogNormConst, PartialTieIsJittered) {
    const auto r = log_norm_const(CCParams({0.25, 0.25, 0.5}));
    EXPECT_TRUE(r.diag.tie_adjusted);
    EXPECT_NEAR(r.log_c, kLogC_025_025_05, 1e-5);
}

TEST(LogNormConst, ScaleIdentity) {
    const CCParams base({0.8, 0.2});
    const CCParams doubled({1.6, 0.4});
    EXPECT_NEAR(log_norm_const(doubled).log_c, log_norm_const(base).log_c - std::log(2.0), 1e-10);
}

TEST(LogNormConst, PropertiesRandom) {
    Rng rng(2024);
    for (std::size_t K = 2; K <= 6; ++K) {
        for (int trial = 0; trial < 100; ++trial) {
            const auto lambda = random_lambda(K, rng);
            const double log_c = log_norm_const(CCParams(lambda)).log_c;
            for (double c : {0.5, 2.0, 10.0}) {
                auto scaled = lambda;
                for (auto& x : scaled) {
                    x *= c;
                }
                EXPECT_NEAR(log_norm_const(CCParams(scaled)).log_c, log_c - std::log(c), 1e-10);
            }
            auto perm = lambda;
            std::shuffle(perm.begin(), perm.end(), rng);
            EXPECT_NEAR(log_norm_const(CCParams(perm)).log_c, log_c, 1e-10);
            if (K == 2) {
                const double closed = (lambda[0] - lambda[1]) / std::log(lambda[0] / lambda[1]);
                EXPECT_NEAR(-log_c, std::log(closed), 1e-10);
            }
        }
    }
}

TEST(LogNormConst, CancellationRaisesInsteadOfNaN) {
    // Deviations of 1e-7 at K=5 push summands ~1e28 above the result.
    Rng rng(9);
    int failures = 0;
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<double> lambda(5, 0.2);
        for (auto& x : lambda) {
            x += 1e-7 * (uniform01(rng) - 0.5);
        }
        try {
            const auto r = log_norm_const(CCParams(lambda));
            EXPECT_TRUE(std::isfinite(r.log_c));
            EXPECT_GT(r.diag.condition_number, 1e12);
        } catch (const NumericalFailure&) {
            ++failures;
        }
    }
    EXPECT_GT(failures, 0);
}

TEST(LogNormConst, NoSilentGarbageNearTies) {
    // Jittered three-way ties leave gaps near 1e-9: either the value is right
    // or the evaluation refuses; it never returns a wrong number.
    const double expect = std::log(24.0) - std::log(4.0);
    for (double bump : {1e-10, 1e-9, 1e-8, 1e-6}) {
        try {
            const auto r = log_norm_const(CCParams({1.0, 1.0, 1.0, 1.0 + bump}));
            EXPECT_NEAR(r.log_c, expect, 1e-3) << bump;
        } catch (const NumericalFailure&) {
        }
    }
    EXPECT_THROW(log_norm_const(CCParams({1.0, 1.0, 1.0, 1.0 + 1e-10})), NumericalFailure);
    // The gradient stays inside the zeroing policy instead of failing.
    const auto g = grad_cc_nll(CCParams({1.0, 1.0, 1.0, 1.0 + 1e-10}), SimplexPoint({0.1, 0.2, 0.3, 0.4}));
    EXPECT_TRUE(g.zeroed);
    EXPECT_DOUBLE_EQ(g.gradient[3], -0.4);
}

TEST(LogNormConst, ConditionNumberGrowsTowardCentroid) {
    // Median over 20 directions of the condition number along
    // (1-t) * centroid + t * lambda*, which must not increase with t.
    Rng rng(77);
    const std::vector<double> ts = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    std::vector<std::vector<double>> conds(ts.size());
    for (int trial = 0; trial < 20; ++trial) {
        const auto target = random_lambda(3, rng);
        for (std::size_t i = 0; i < ts.size(); ++i) {
            std::vector<double> lambda(3);
            for (std::size_t k = 0; k < 3; ++k) {
                lambda[k] = (1 - ts[i]) / 3.0 + ts[i] * target[k];
            }
            double cond;
            try {
                cond = log_norm_const(CCParams(lambda)).diag.condition_number;
            } catch (const NumericalFailure&) {
                cond = INFINITY;
            }
            conds[i].push_back(cond);
        }
    }
    double previous = INFINITY;
    for (auto& c : conds) {
        std::sort(c.begin(), c.end());
        const double median = 0.5 * (c[9] + c[10]);
        EXPECT_LE(median, previous);
        previous = median;
    }
}

TEST(CCNll, Examples) {
    const CCParams p({0.8, 0.2});
    // -log C - (log 0.8 + log 0.2) / 2
    EXPECT_NEAR(cc_nll(p, SimplexPoint({0.5, 0.5})), 0.0788308481298833995732, 1e-13);
    EXPECT_NEAR(cc_nll(CCParams({1.6, 0.4}), SimplexPoint({0.5, 0.5})), cc_nll(p, SimplexPoint({0.5, 0.5})),
                1e-10);
    const double at_first = cc_nll(p, SimplexPoint({1.0, 0.0}));
    const double at_second = cc_nll(p, SimplexPoint({0.0, 1.0}));
    EXPECT_NEAR(at_second - at_first, std::log(4.0), 1e-13);
    EXPECT_THROW(cc_nll(p, SimplexPoint({0.2, 0.3, 0.5})), DimensionMismatch);
}

TEST(CCMean, MatchesQuadrature) {
    const auto m = cc_mean(CCParams({0.5, 0.3, 0.2}));
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(m.mean[k], kMean_05_03_02[k], 1e-12);
    }
    EXPECT_NEAR(cc_mean(CCParams({0.8, 0.2})).mean[0], kMean1_08_02, 1e-13);
}

TEST(GradCCNll, FiniteDifferenceExample) {
    const std::vector<double> eta = {std::log(0.8), std::log(0.2)};
    const SimplexPoint y({0.5, 0.5});
    const auto g = grad_cc_nll(params_from_eta(eta), y);
    EXPECT_FALSE(g.zeroed);
    const double h = 1e-5;
    for (std::size_t k = 0; k < 2; ++k) {
        auto up = eta, down = eta;
        up[k] += h;
        down[k] -= h;
        const double fd = (nll_at_eta(up, y) - nll_at_eta(down, y)) / (2 * h);
        EXPECT_LT(std::abs(g.gradient[k] - fd) / std::abs(fd), 1e-5);
    }
}

TEST(GradCCNll, FiniteDifferencesRandom) {
    Rng rng(31337);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t K = 2 + trial % 5;
        const auto lambda = random_lambda(K, rng);
        std::vector<double> eta(K);
        std::transform(lambda.begin(), lambda.end(), eta.begin(), [](double x) { return std::log(x); });
        const auto y = sample_uniform_simplex(K, rng);
        const auto g = grad_cc_nll(params_from_eta(eta), y);
        if (g.zeroed) {
            continue;
        }
        ++checked;
        const double h = 1e-5;
        double max_err = 0.0, max_fd = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            auto up = eta, down = eta;
            up[k] += h;
            down[k] -= h;
            const double fd = (nll_at_eta(up, y) - nll_at_eta(down, y)) / (2 * h);
            max_err = std::max(max_err, std::abs(g.gradient[k] - fd));
            max_fd = std::max(max_fd, std::abs(fd));
        }
        EXPECT_LT(max_err / max_fd, 1e-5) << "K=" << K << " trial=" << trial;
    }
    EXPECT_GT(checked, 90);
}

TEST(GradCCNll, ZeroedAtCentroid) {
    const SimplexPoint y({0.7, 0.2, 0.1});
    const auto g = grad_cc_nll(CCParams({1.0 / 3, 1.0 / 3, 1.0 / 3}), y);
    EXPECT_TRUE(g.zeroed);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(g.gradient[k], -y[k]);
    }
    // Near (not at) the centroid the policy still fires.
    const auto near = grad_cc_nll(CCParams({1.0 / 3 + 1e-5, 1.0 / 3, 1.0 / 3 - 1e-5}), y);
    EXPECT_TRUE(near.zeroed);
    EXPECT_TRUE(near.diag.near_centroid);
}

TEST(GradCCNll, ScaleInvariance) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t K = 2 + trial % 5;
        const auto lambda = random_lambda(K, rng);
        auto scaled = lambda;
        const double c = 0.5 + 9.5 * uniform01(rng);
        for (auto& x : scaled) {
            x *= c;
        }
        const auto y = sample_uniform_simplex(K, rng);
        const auto a = grad_cc_nll(CCParams(lambda), y);
        const auto b = grad_cc_nll(CCParams(scaled), y);
        ASSERT_EQ(a.zeroed, b.zeroed);
        const double ma = std::accumulate(a.gradient.begin(), a.gradient.end(), 0.0) / K;
        const double mb = std::accumulate(b.gradient.begin(), b.gradient.end(), 0.0) / K;
        for (std::size_t k = 0; k < K; ++k) {
            EXPECT_NEAR(a.gradient[k] - ma, b.gradient[k] - mb, 1e-8);
        }
    }
    const SimplexPoint y({0.5, 0.5});
    const auto a = grad_cc_nll(CCParams({0.8, 0.2}), y);
    const auto b = grad_cc_nll(CCParams({1.6, 0.4}), y);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_NEAR(a.gradient[k], b.gradient[k], 1e-9);
    }
}

TEST(SampleCC, UniformParameterGivesUniformSamples) {
    Rng rng(4);
    const CCParams p({1.0, 1.0, 1.0});
    const std::size_t n = 100000;
    std::vector<double> sum(3, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = sample_cc(p, rng);
        for (std::size_t k = 0; k < 3; ++k) {
            sum[k] += y[k];
        }
    }
    const double se = std::sqrt(2.0 / 36.0 / n);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(sum[k] / n, 1.0 / 3.0, 3 * se);
    }
}

TEST(SampleCC, K2MeanMatchesQuadrature) {
    Rng rng(5);
    const CCParams p({0.8, 0.2});
    const std::size_t n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = sample_cc(p, rng)[0];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / (n - 1));
    EXPECT_NEAR(mean, kMean1_08_02, 3 * se);
}

TEST(SampleCC, Deterministic) {
    Rng a(99), b(99);
    const CCParams p({0.6, 0.3, 0.1});
    for (int i = 0; i < 50; ++i) {
        EXPECT_EQ(sample_cc(p, a), sample_cc(p, b));
    }
}

TEST(SampleCC, RejectsTooConcentrated) {
    Rng rng(1);
    const CCParams p({1.0, 1e-30, 2e-30, 3e-30, 4e-30, 5e-30});
    EXPECT_THROW(sample_cc(p, rng), NumericalFailure);
}

TEST(SampleCC, MeanEqualsMinusGradLogC) {
    // Exponential-family mean identity, 10 random lambda at K=3.
    Rng rng(12345);
    for (int trial = 0; trial < 10; ++trial) {
        const CCParams p(random_lambda(3, rng));
        const auto expected = cc_mean(p).mean;
        const std::size_t n = 50000;
        std::vector<double> sum(3, 0.0), sum2(3, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto y = sample_cc(p, rng);
            for (std::size_t k = 0; k < 3; ++k) {
                sum[k] += y[k];
                sum2[k] += y[k] * y[k];
            }
        }
        for (std::size_t k = 0; k < 3; ++k) {
            const double m = sum[k] / n;
            const double se = std::sqrt((sum2[k] / n - m * m) / (n - 1));
            EXPECT_NEAR(m, expected[k], 3 * se) << "trial " << trial << " k " << k;
        }
    }
}
