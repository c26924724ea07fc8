#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ddgae/diffusion.hpp"
#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"
#include "trajectory_oracle.hpp"

namespace ddgae::diffusion {
namespace {

using testing::TrajectoryOracle;

std::vector<double> betas_of(const NoiseSchedule& s) { return {s.betas().begin(), s.betas().end()}; }

NoisyAdjacency clean_graph(int n, const std::vector<std::pair<int, int>>& edges, int real_nodes = -1) {
    if (real_nodes < 0) real_nodes = n;
    NoisyAdjacency a{Eigen::MatrixXd::Zero(n, n), 0, Eigen::MatrixXd::Zero(n, n)};
    for (int i = 0; i < real_nodes; ++i)
        for (int j = 0; j < real_nodes; ++j)
            if (i != j) a.edge_mask(i, j) = 1.0;
    for (auto [i, j] : edges) {
        a.bits(i, j) = 1.0;
        a.bits(j, i) = 1.0;
    }
    return a;
}

TEST(NoiseSchedule, EndpointsForT32) {
    const auto s = NoiseSchedule::build(32);
    EXPECT_DOUBLE_EQ(s.beta(1), 1.0 / 32.0);
    EXPECT_EQ(s.beta(32), 1.0);
    EXPECT_EQ(s.alpha_bar(32), 0.0);
}

TEST(NoiseSchedule, TelescopingProductT4) {
    const auto s = NoiseSchedule::build(4);
    // Direct multiplication of (1 - beta_s).
    double running = 1.0;
    const std::vector<double> expected{1.0, 0.75, 0.5, 0.25, 0.0};
    for (int t = 0; t <= 4; ++t) {
        if (t > 0) running *= 1.0 - s.beta(t);
        EXPECT_NEAR(s.alpha_bar(t), running, 1e-15);
        EXPECT_EQ(s.alpha_bar(t), expected[t]);
    }
}

TEST(NoiseSchedule, SingleStepAbsorbs) {
    const auto s = NoiseSchedule::build(1);
    EXPECT_EQ(s.beta(1), 1.0);
    EXPECT_EQ(s.alpha_bar(1), 0.0);
}

TEST(NoiseSchedule, RejectsZeroSteps) { EXPECT_THROW(NoiseSchedule::build(0), InvalidArgument); }

TEST(NoiseSchedule, InvariantsHoldAcrossLengths) {
    for (int steps : {1, 2, 3, 5, 16, 32, 100, 1000}) {
        const auto s = NoiseSchedule::build(steps);
        EXPECT_EQ(s.alpha_bar(0), 1.0);
        EXPECT_EQ(s.alpha_bar(steps), 0.0);
        for (int t = 1; t <= steps; ++t) {
            EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
            EXPECT_NEAR(s.alpha_bar(t), s.alpha_bar(t - 1) * (1.0 - s.beta(t)), 1e-12);
            EXPECT_GT(s.beta(t), 0.0);
            EXPECT_LE(s.beta(t), 1.0);
        }
    }
}

TEST(NoiseSchedule, FromBetasRoundTrip) {
    const auto s = NoiseSchedule::build(7);
    EXPECT_EQ(NoiseSchedule::from_betas(betas_of(s)), s);
    EXPECT_THROW(NoiseSchedule::from_betas({0.5, 0.5}), InvalidArgument);
    EXPECT_THROW(NoiseSchedule::from_betas({}), InvalidArgument);
}

TEST(ForwardMarginal, Examples) {
    const auto s = NoiseSchedule::build(4);
    for (int t = 0; t <= 4; ++t) EXPECT_EQ(forward_marginal(false, t, s), 0.0);
    EXPECT_EQ(forward_marginal(true, 4, s), 0.0);
    EXPECT_NEAR(forward_marginal(true, 2, s), TrajectoryOracle(betas_of(s)).marginal(true, 2), 1e-15);
    EXPECT_EQ(forward_marginal(true, 2, s), 0.5);
    EXPECT_THROW(forward_marginal(true, 5, s), InvalidArgument);
    EXPECT_THROW(forward_marginal(true, -1, s), InvalidArgument);
}

TEST(TruePosterior, Examples) {
    const auto s = NoiseSchedule::build(4);
    for (int t = 1; t <= 4; ++t) {
        EXPECT_EQ(true_posterior(true, true, t, s).p_prev_one, 1.0);
        EXPECT_EQ(true_posterior(false, false, t, s).p_prev_one, 0.0);
    }
    EXPECT_DOUBLE_EQ(true_posterior(false, true, 2, s).p_prev_one, 0.5);
    EXPECT_THROW(true_posterior(true, false, 2, s), InconsistentState);
    EXPECT_THROW(true_posterior(false, true, 0, s), InvalidArgument);
}

TEST(ModelReverse, Examples) {
    const auto s = NoiseSchedule::build(4);
    for (int t = 1; t <= 4; ++t) {
        for (bool at : {false, true}) {
            EXPECT_EQ(model_reverse(1.0, at, t, s).p_prev_one, true_posterior(at, true, t, s).p_prev_one);
        }
        EXPECT_EQ(model_reverse(0.0, false, t, s).p_prev_one, 0.0);
        EXPECT_EQ(model_reverse(0.3, true, t, s).p_prev_one, 1.0);
    }
    EXPECT_DOUBLE_EQ(model_reverse(0.5, false, 2, s).p_prev_one, 0.25);
}

TEST(Enumeration, ClosedFormsMatchAllTrajectories) {
    for (int steps = 1; steps <= 4; ++steps) {
        const auto s = NoiseSchedule::build(steps);
        const TrajectoryOracle oracle(betas_of(s));
        for (int t = 0; t <= steps; ++t) {
            for (bool a0 : {false, true}) EXPECT_NEAR(forward_marginal(a0, t, s), oracle.marginal(a0, t), 1e-12);
        }
        for (int t = 1; t <= steps; ++t) {
            for (bool a0 : {false, true}) {
                for (bool at : {false, true}) {
                    if (at && !a0) continue;
                    const double expected = oracle.posterior(at, a0, t);
                    if (std::isnan(expected)) continue;  // x_t = 1 has zero mass once alpha_bar_t = 0
                    EXPECT_NEAR(true_posterior(at, a0, t, s).p_prev_one, expected, 1e-12)
                        << "T=" << steps << " t=" << t << " a0=" << a0 << " at=" << at;
                }
            }
            for (double w : {0.0, 0.1, 0.5, 0.9, 1.0}) {
                for (bool at : {false, true}) {
                    if (at && s.alpha_bar(t) == 0.0) continue;
                    EXPECT_NEAR(model_reverse(w, at, t, s).p_prev_one, oracle.model_reverse(w, at, t), 1e-12);
                }
            }
        }
    }
}

TEST(BernoulliKl, NonNegativeAndZeroOnlyAtMatch) {
    for (double p = 0.0; p <= 1.0; p += 0.05) {
        for (double q = 0.0; q <= 1.0; q += 0.05) {
            const double kl = bernoulli_kl(p, q);
            EXPECT_GE(kl, 0.0);
            if (std::abs(p - q) > 1e-9) EXPECT_GT(kl, 0.0);
        }
        EXPECT_EQ(bernoulli_kl(p, p), 0.0);
    }
    EXPECT_TRUE(std::isfinite(bernoulli_kl(0.5, 0.0)));
    EXPECT_TRUE(std::isfinite(bernoulli_kl(0.5, 1.0)));
}

TEST(KlEdge, Examples) {
    const auto s = NoiseSchedule::build(4);
    for (int t = 2; t <= 4; ++t) {
        EXPECT_EQ(kl_edge(true, 1.0, false, t, s), 0.0);
        EXPECT_EQ(kl_edge(false, 0.0, false, t, s), 0.0);
        for (double p : {0.0, 0.2, 0.7, 1.0}) EXPECT_EQ(kl_edge(true, p, true, t, s), 0.0);
    }
    const double expected = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
    EXPECT_NEAR(kl_edge(true, 0.5, false, 2, s), expected, 1e-15);
    EXPECT_NEAR(kl_edge(true, 0.5, false, 2, s), 0.14384, 1e-5);
    EXPECT_THROW(kl_edge(true, 0.5, false, 1, s), InvalidArgument);
}

TEST(KlEdge, GradientMatchesFiniteDifference) {
    const auto s = NoiseSchedule::build(8);
    const double h = 1e-6;
    for (int t = 2; t <= 8; ++t) {
        for (bool a0 : {false, true}) {
            for (double p : {0.05, 0.3, 0.5, 0.8, 0.97}) {
                const double fd = (kl_edge(a0, p + h, false, t, s) - kl_edge(a0, p - h, false, t, s)) / (2 * h);
                EXPECT_NEAR(kl_edge_grad(a0, p, false, t, s), fd, 1e-6 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST(ReconEdge, Examples) {
    EXPECT_EQ(recon_edge(true, 1.0), 0.0);
    EXPECT_NEAR(recon_edge(false, 0.5), std::log(2.0), 1e-15);
    EXPECT_NEAR(recon_edge(true, std::exp(-1.0)), 1.0, 1e-15);
    EXPECT_TRUE(std::isfinite(recon_edge(true, 0.0)));
    EXPECT_NEAR(recon_edge(true, 0.0), -std::log(kProbClamp), 1e-9);
}

TEST(Corrupt, AbsorbingStateIsFixedPoint) {
    const auto s = NoiseSchedule::build(6);
    const auto empty = clean_graph(5, {});
    for (int t = 1; t <= 6; ++t) EXPECT_EQ(corrupt(empty, t, s, 17 + t).bits.sum(), 0.0);
}

TEST(Corrupt, FinalStepDeletesEverything) {
    const auto s = NoiseSchedule::build(6);
    const auto g = clean_graph(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}, {1, 3}});
    for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(corrupt(g, 6, s, seed).bits.sum(), 0.0);
}

TEST(Corrupt, KeepRateMatchesAlphaBar) {
    const auto s = NoiseSchedule::build(4);
    const auto g = clean_graph(2, {{0, 1}});
    int kept = 0;
    const int trials = 100000;
    for (int seed = 0; seed < trials; ++seed) kept += corrupt(g, 1, s, derive_seed(99, {std::uint64_t(seed)})).bits(0, 1) > 0;
    EXPECT_NEAR(static_cast<double>(kept) / trials, 0.75, 0.01);
}

TEST(Corrupt, DeterministicSymmetricMonotoneMasked) {
    const auto s = NoiseSchedule::build(10);
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 8;
        const int real = 2 + static_cast<int>(rng.below(7));
        std::vector<std::pair<int, int>> edges;
        for (int i = 0; i < real; ++i)
            for (int j = i + 1; j < real; ++j)
                if (rng.uniform() < 0.4) edges.emplace_back(i, j);
        const auto g = clean_graph(n, edges, real);
        const int t = 1 + static_cast<int>(rng.below(10));
        const auto a = corrupt(g, t, s, trial);
        const auto b = corrupt(g, t, s, trial);
        EXPECT_EQ(a.bits, b.bits);
        EXPECT_EQ(a.t, t);
        EXPECT_EQ(a.bits, a.bits.transpose());
        EXPECT_EQ(a.bits.diagonal().sum(), 0.0);
        EXPECT_TRUE((a.bits.array() <= g.bits.array()).all());
        EXPECT_TRUE((a.bits.array() <= g.edge_mask.array()).all());
    }
}

TEST(Corrupt, PreconditionsEnforced) {
    const auto s = NoiseSchedule::build(4);
    auto g = clean_graph(3, {{0, 1}});
    EXPECT_THROW(corrupt(g, 0, s, 1), InvalidArgument);
    EXPECT_THROW(corrupt(g, 5, s, 1), InvalidArgument);
    g.t = 2;
    EXPECT_THROW(corrupt(g, 3, s, 1), InvalidArgument);
}

TEST(Corrupt, ChapmanKolmogorovAgainstClosedForm) {
    const auto s = NoiseSchedule::build(8);
    const auto g = clean_graph(2, {{0, 1}});
    const int trials = 40000;
    for (int t : {1, 3, 5, 7}) {
        int survived = 0;
        for (int k = 0; k < trials; ++k) {
            auto cur = g;
            for (int step = 1; step <= t; ++step)
                cur = corrupt_step(cur, s, derive_seed(5, {std::uint64_t(k), std::uint64_t(step)}));
            survived += cur.bits(0, 1) > 0;
        }
        const double p = s.alpha_bar(t);
        const double sigma = std::sqrt(p * (1 - p) / trials);
        EXPECT_NEAR(static_cast<double>(survived) / trials, p, 3 * sigma + 1e-12) << "t=" << t;
    }
}

TEST(HybridLoss, OracleDenoiserCollapses) {
    const auto s = NoiseSchedule::build(8);
    const auto g = clean_graph(6, {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {4, 5}}, 6);
    for (int t = 2; t <= 8; ++t) {
        const auto noisy = corrupt(g, t, s, 11 * t);
        for (double lambda : {0.0, 0.001, 1.0}) {
            Eigen::MatrixXd grad;
            const auto loss = hybrid_loss(g.bits, noisy, g.bits, lambda, s, &grad);
            EXPECT_EQ(loss.l_vb_term, 0.0);
            EXPECT_EQ(loss.aux_ce, 0.0);
            EXPECT_EQ(loss.total, 0.0);
            EXPECT_EQ(grad.norm(), 0.0);
        }
    }
}

TEST(HybridLoss, LambdaZeroIsVbTerm) {
    const auto s = NoiseSchedule::build(4);
    const auto g = clean_graph(4, {{0, 1}, {2, 3}});
    const auto noisy = corrupt(g, 2, s, 3);
    const Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(4, 4, 0.3);
    const auto loss = hybrid_loss(g.bits, noisy, probs, 0.0, s);
    EXPECT_EQ(loss.total, loss.l_vb_term);
    EXPECT_GT(loss.aux_ce, 0.0);
}

TEST(HybridLoss, TwoNodeWorkedExample) {
    const auto s = NoiseSchedule::build(4);
    const auto g = clean_graph(2, {{0, 1}});
    NoisyAdjacency noisy{Eigen::MatrixXd::Zero(2, 2), 2, g.edge_mask};
    const Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(2, 2, 0.5);
    const auto loss = hybrid_loss(g.bits, noisy, probs, 1.0, s);
    const double kl = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
    EXPECT_NEAR(loss.l_vb_term, kl, 1e-15);
    EXPECT_NEAR(loss.aux_ce, std::log(2.0), 1e-15);
    EXPECT_NEAR(loss.total, 0.83700, 2e-5);  // 0.143841 + 0.693147, quoted rounded
    EXPECT_NEAR(loss.total, loss.l_vb_term + loss.lambda * loss.aux_ce, 1e-9);
    EXPECT_EQ(loss.t_sampled, 2);
}

TEST(HybridLoss, TimestepOneUsesReconstruction) {
    const auto s = NoiseSchedule::build(4);
    const auto g = clean_graph(3, {{0, 1}});
    const auto noisy = corrupt(g, 1, s, 0);
    const Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(3, 3, 0.25);
    const auto loss = hybrid_loss(g.bits, noisy, probs, 0.5, s);
    const double expected = (recon_edge(true, 0.25) + 2 * recon_edge(false, 0.25)) / 3.0;
    EXPECT_NEAR(loss.l_vb_term, expected, 1e-15);
    EXPECT_NEAR(loss.aux_ce, expected, 1e-15);
}

TEST(HybridLoss, MaskedSlotsAreNeutral) {
    const auto s = NoiseSchedule::build(6);
    const auto g = clean_graph(6, {{0, 1}, {1, 2}, {0, 2}}, 3);
    const auto noisy = corrupt(g, 3, s, 8);
    Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(6, 6, 0.4);
    Eigen::MatrixXd g1;
    Eigen::MatrixXd g2;
    const auto l1 = hybrid_loss(g.bits, noisy, probs, 0.1, s, &g1);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (g.edge_mask(i, j) == 0.0) probs(i, j) = 0.9;
    const auto l2 = hybrid_loss(g.bits, noisy, probs, 0.1, s, &g2);
    EXPECT_EQ(l1.total, l2.total);
    EXPECT_EQ(g1, g2);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (g.edge_mask(i, j) == 0.0) EXPECT_EQ(g1(i, j), 0.0);
}

TEST(HybridLoss, GradientMatchesFiniteDifference) {
    const auto s = NoiseSchedule::build(5);
    const auto g = clean_graph(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 2}});
    Rng rng(4);
    for (int t = 1; t <= 5; ++t) {
        const auto noisy = corrupt(g, t, s, 100 + t);
        Eigen::MatrixXd probs(5, 5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) probs(i, j) = rng.uniform(0.05, 0.95);
        Eigen::MatrixXd grad;
        hybrid_loss(g.bits, noisy, probs, 0.3, s, &grad);
        const double h = 1e-6;
        for (int i = 0; i < 5; ++i) {
            for (int j = i + 1; j < 5; ++j) {
                auto up = probs;
                auto down = probs;
                up(i, j) += h;
                down(i, j) -= h;
                const double fd =
                    (hybrid_loss(g.bits, noisy, up, 0.3, s).total - hybrid_loss(g.bits, noisy, down, 0.3, s).total) /
                    (2 * h);
                EXPECT_NEAR(grad(i, j), fd, 1e-6);
            }
        }
    }
}

TEST(HybridLoss, ShapeMismatchRejected) {
    const auto s = NoiseSchedule::build(4);
    const auto g = clean_graph(3, {{0, 1}});
    const auto noisy = corrupt(g, 2, s, 0);
    EXPECT_THROW(hybrid_loss(g.bits, noisy, Eigen::MatrixXd::Zero(4, 4), 0.1, s), InvalidArgument);
    EXPECT_THROW(hybrid_loss(Eigen::MatrixXd::Zero(2, 2), noisy, Eigen::MatrixXd::Zero(3, 3), 0.1, s), InvalidArgument);
}

TEST(HybridLoss, InconsistentNoisyStateRejected) {
    const auto s = NoiseSchedule::build(4);
    const auto g = clean_graph(3, {});
    auto noisy = corrupt(g, 2, s, 0);
    noisy.bits(0, 1) = noisy.bits(1, 0) = 1.0;
    EXPECT_THROW(hybrid_loss(g.bits, noisy, Eigen::MatrixXd::Constant(3, 3, 0.5), 0.1, s), InconsistentState);
}

}  // namespace
}  // namespace ddgae::diffusion
