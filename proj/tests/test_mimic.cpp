#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ccdist/cc_core.hpp"
#include "ccdist/errors.hpp"
#include "ccdist/mimic.hpp"

using namespace ccdist;

namespace {

// Blank game with every row self-looping; callers fill in what they need.
TabularGame blank_game(std::size_t S, std::size_t A, double discount) {
    TabularGame g;
    g.n_states = S;
    g.n_actions = A;
    g.transitions.assign(S * A * S, 0.0);
    g.rewards.assign(S * A, 0.0);
    g.terminal.assign(S, false);
    g.discount = discount;
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            g.transitions[(s * A + a) * S + s] = 1.0;
        }
    }
    return g;
}

void set_row(TabularGame& g, std::size_t s, std::size_t a, std::vector<std::pair<std::size_t, double>> to) {
    for (std::size_t s2 = 0; s2 < g.n_states; ++s2) {
        g.transitions[(s * g.n_actions + a) * g.n_states + s2] = 0.0;
    }
    for (auto [s2, p] : to) {
        g.transitions[(s * g.n_actions + a) * g.n_states + s2] = p;
    }
}

// State 0 live, state 1 absorbing. Action 0 ends the episode with reward 1;
// action 1 pays r1 and stays with probability stay, else ends.
TabularGame two_state(double r1, double stay) {
    TabularGame g = blank_game(2, 2, 0.9);
    g.terminal[1] = true;
    set_row(g, 0, 0, {{1, 1.0}});
    g.rewards[0] = 1.0;
    set_row(g, 0, 1, {{0, stay}, {1, 1.0 - stay}});
    g.rewards[1] = r1;
    return g;
}

// Chain 0-1-2-3 with absorbing 4 right of 3. Action 0 left, 1 right.
TabularGame chain5() {
    TabularGame g = blank_game(5, 2, 0.9);
    g.terminal[4] = true;
    for (std::size_t s = 0; s < 4; ++s) {
        set_row(g, s, 0, {{s == 0 ? 0 : s - 1, 1.0}});
        set_row(g, s, 1, {{s + 1, 1.0}});
        g.rewards[s * 2 + 1] = s == 3 ? 1.0 : 0.0;
    }
    return g;
}

std::vector<ExpertPolicy> experts_for(const std::vector<TabularGame>& games, double T) {
    std::vector<ExpertPolicy> out;
    for (const auto& g : games) {
        out.push_back(make_expert(g, T));
    }
    return out;
}

MimicConfig short_config(MimicLossKind loss, std::uint64_t seed, std::size_t epochs) {
    MimicConfig c;
    c.loss = loss;
    c.seed = seed;
    c.epochs = epochs;
    return c;
}

void expect_same_net(const Network& a, const Network& b) {
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        EXPECT_EQ(a.parameters()[i], b.parameters()[i]) << a.parameter_names()[i];
    }
}

void expect_same_metrics(const MimicResult& a, const MimicResult& b) {
    ASSERT_EQ(a.metrics.size(), b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
        EXPECT_EQ(a.metrics[i].eval_return_mean, b.metrics[i].eval_return_mean);
        EXPECT_EQ(a.metrics[i].kl_to_expert, b.metrics[i].kl_to_expert);
        EXPECT_EQ(a.metrics[i].zeroed_grad_fraction, b.metrics[i].zeroed_grad_fraction);
    }
    EXPECT_EQ(a.loss_start, b.loss_start);
    EXPECT_EQ(a.loss_end, b.loss_end);
}

} // namespace

TEST(Gridworld, DefaultGamesShareSpacesAndAreValid) {
    const auto games = default_games();
    ASSERT_EQ(games.size(), 2u);
    for (const auto& g : games) {
        EXPECT_NO_THROW(g.validate());
        EXPECT_EQ(g.n_states, kGridCells + 1);
        EXPECT_EQ(g.n_actions, kGridActions);
        EXPECT_TRUE(g.terminal[kGridCells]);
    }
    EXPECT_NE(games[0].rewards, games[1].rewards);
    EXPECT_NE(games[0].transitions, games[1].transitions);
    EXPECT_EQ(reachable_states(games[0]).size(), kGridCells - 1); // goal cell folds into the terminal
    EXPECT_THROW(gridworld(2), InvalidArgument);
}

TEST(Gridworld, ValidateRejectsBadRows) {
    auto g = gridworld(0);
    g.transitions[0] += 1e-6;
    EXPECT_THROW(g.validate(), InvalidArgument);
    g = gridworld(0);
    g.start_state = kGridCells;
    EXPECT_THROW(g.validate(), InvalidArgument);
}

TEST(ValueIteration, SingleStateGeometricSeries) {
    TabularGame g = blank_game(1, 1, 0.9);
    g.rewards[0] = 1.0;
    const auto r = value_iteration(g);
    EXPECT_NEAR(r.q[0], 10.0, 1e-8);
}

TEST(ValueIteration, ZeroRewardsGiveZeroQ) {
    auto g = gridworld(1);
    std::fill(g.rewards.begin(), g.rewards.end(), 0.0);
    for (double q : value_iteration(g).q) {
        EXPECT_EQ(q, 0.0);
    }
}

TEST(ValueIteration, TwoStateHandBackup) {
    // V = max(1, r1 + 0.9 * stay * V).
    // r1 = 0.2, stay = 0.5: V = 1, Q = (1, 0.2 + 0.45) = (1, 0.65).
    auto q = value_iteration(two_state(0.2, 0.5)).q;
    EXPECT_NEAR(q[0], 1.0, 1e-8);
    EXPECT_NEAR(q[1], 0.65, 1e-8);
    EXPECT_EQ(q[2], 0.0);
    EXPECT_EQ(q[3], 0.0);
    // r1 = 0.6, stay = 1: looping wins, V = 0.6 / 0.1 = 6, Q = (1, 6).
    q = value_iteration(two_state(0.6, 1.0)).q;
    EXPECT_NEAR(q[0], 1.0, 1e-8);
    EXPECT_NEAR(q[1], 6.0, 1e-8);
}

TEST(ValueIteration, IterationCapThrows) {
    TabularGame g = blank_game(1, 1, 0.999999);
    g.rewards[0] = 1.0;
    EXPECT_THROW(value_iteration(g, 1e-8, 100), NumericalFailure);
}

TEST(ExpertPolicy, UniformRowGivesUniformPolicy) {
    const auto e = expert_policy({3.0, 3.0, 3.0, 3.0}, 1, 4, 0.7);
    for (double p : e.policy[0].values()) {
        EXPECT_DOUBLE_EQ(p, 0.25);
    }
}

TEST(ExpertPolicy, LowTemperatureConcentrates) {
    const auto e = expert_policy({0.10, 0.30, 0.20}, 1, 3, 1e-3);
    EXPECT_GE(e.policy[0].values()[1], 0.99);
}

TEST(ExpertPolicy, SoftmaxOfOneTwo) {
    const auto e = expert_policy({1.0, 2.0}, 1, 2, 1.0);
    EXPECT_NEAR(e.policy[0].values()[0], 0.2689414213699951, 1e-15);
    EXPECT_NEAR(e.policy[0].values()[1], 0.7310585786300049, 1e-15);
    EXPECT_THROW(expert_policy({1.0, 2.0}, 1, 2, 0.0), InvalidArgument);
}

TEST(Guidance, UniformBehaviorCoversChain) {
    const std::vector<TabularGame> games{chain5()};
    const auto experts = experts_for(games, 1.0);
    const auto samples = generate_guidance(games, experts, 5000, 1.0, 3);
    std::set<std::size_t> seen;
    for (const auto& s : samples) {
        seen.insert(s.state);
        EXPECT_FALSE(games[0].terminal[s.state]);
        EXPECT_EQ(s.guidance, experts[0].policy[s.state]);
    }
    const auto reach = reachable_states(games[0]);
    EXPECT_EQ(std::vector<std::size_t>(seen.begin(), seen.end()), reach);
}

TEST(Guidance, FixedSeedIsDeterministic) {
    const auto games = default_games();
    const auto experts = experts_for(games, 1.0);
    const auto a = generate_guidance(games, experts, 300, 0.1, 11);
    const auto b = generate_guidance(games, experts, 300, 0.1, 11);
    const auto c = generate_guidance(games, experts, 300, 0.1, 12);
    ASSERT_EQ(a.size(), 600u);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].state, b[i].state);
        EXPECT_EQ(a[i].game_id, i < 300 ? 0u : 1u);
        differs = differs || a[i].state != c[i].state;
    }
    EXPECT_TRUE(differs);
}

TEST(Guidance, NearUniformExpertsConcentrateAtCentroid) {
    // Only a near-uniform expert puts most rows inside the near-centroid
    // threshold; at the default reward scale that takes T ~ 1e3.
    const auto games = default_games();
    const CCConfig cc;
    for (double T : {1e3, 5.0}) {
        const auto samples = generate_guidance(games, experts_for(games, T), 1000, 0.1, 5);
        std::size_t inside = 0;
        double mean_dev = 0.0;
        for (const auto& s : samples) {
            std::vector<double> eta;
            double dev = 0.0;
            for (double p : s.guidance.values()) {
                eta.push_back(std::log(p));
                dev = std::max(dev, std::abs(p - 0.25));
            }
            inside += detail::is_near_centroid(eta, cc.centroid_threshold) ? 1 : 0;
            mean_dev += dev / static_cast<double>(samples.size());
        }
        if (T > 100.0) {
            EXPECT_GT(inside, samples.size() / 2);
        } else {
            // Closer to the centroid than the T=1 expert, but not inside the threshold.
            EXPECT_LT(mean_dev, 0.05);
        }
    }
}

TEST(MimicLoss, OneHotGuidanceIsCrossEntropy) {
    const auto out = softmax(std::vector<double>{0.3, -1.2, 2.0, 0.1});
    const SimplexPoint onehot(std::vector<double>{0.0, 0.0, 1.0, 0.0});
    const auto l = mimic_loss({out}, {onehot}, MimicLossKind::AMN);
    EXPECT_DOUBLE_EQ(l.loss, -out.log_values()[2]);
}

TEST(MimicLoss, EqualityFixture) {
    const SimplexPoint g(std::vector<double>{0.8, 0.2});
    const PositiveComposition o(std::vector<double>{0.8, 0.2});
    const std::vector<PositiveComposition> outs(3, o);
    const std::vector<SimplexPoint> gs(3, g);
    EXPECT_NEAR(mimic_loss(outs, gs, MimicLossKind::AMN).loss, 0.500402423538188, 1e-12);
    EXPECT_NEAR(mimic_loss(outs, gs, MimicLossKind::CCAMN).loss, -0.337057460206084, 1e-12);
}

TEST(MimicLoss, DifferenceIsMeanNegLogC) {
    Rng rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<PositiveComposition> outs;
    std::vector<SimplexPoint> gs;
    double neg_log_c = 0.0;
    for (int i = 0; i < 16; ++i) {
        std::vector<double> z(4), w(4);
        for (std::size_t k = 0; k < 4; ++k) {
            z[k] = n(rng);
            w[k] = n(rng);
        }
        outs.push_back(softmax(z));
        const auto gp = softmax(w);
        gs.emplace_back(std::vector<double>(gp.values().begin(), gp.values().end()));
        neg_log_c -= log_norm_const(CCParams(outs.back())).log_c / 16.0;
    }
    const double amn = mimic_loss(outs, gs, MimicLossKind::AMN).loss;
    const double cc = mimic_loss(outs, gs, MimicLossKind::CCAMN).loss;
    EXPECT_NEAR(cc - amn, neg_log_c, 1e-10);
    EXPECT_THROW(mimic_loss(outs, {gs[0]}, MimicLossKind::AMN), DimensionMismatch);
}

TEST(MimicLoss, GibbsInequality) {
    Rng rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<PositiveComposition> at, perturbed;
        std::vector<SimplexPoint> gs;
        for (int i = 0; i < 8; ++i) {
            std::vector<double> z(4), dz(4);
            for (std::size_t k = 0; k < 4; ++k) {
                z[k] = n(rng);
                dz[k] = z[k] + 0.3 * n(rng);
            }
            const auto p = softmax(z);
            gs.emplace_back(std::vector<double>(p.values().begin(), p.values().end()));
            at.push_back(p);
            perturbed.push_back(softmax(dz));
        }
        EXPECT_GE(mimic_loss(perturbed, gs, MimicLossKind::AMN).loss,
                  mimic_loss(at, gs, MimicLossKind::AMN).loss);
    }
}

TEST(MimicLoss, ZeroedGradientsMatchAmnExactly) {
    // A zeroed final layer sends every state to the uniform output.
    const auto games = default_games();
    const auto experts = experts_for(games, 5.0);
    MimicConfig c;
    Network net = make_mimic_network(kGridCells + 1, 2, kGridActions, c);
    net.zero_final_layer();
    const auto samples = generate_guidance(games, experts, 16, 0.1, 2);
    std::vector<SimplexPoint> targets;
    for (const auto& s : samples) {
        targets.push_back(s.guidance);
    }
    const Tensor x = mimic_features(samples, kGridCells + 1, 2);
    TrainConfig ce, ccl;
    ccl.loss = LossKind::CC;
    Rng rng(0);
    const auto a = loss_and_grad(net, x, targets, ce, Mode::Train, rng);
    const auto b = loss_and_grad(net, x, targets, ccl, Mode::Train, rng);
    EXPECT_EQ(b.zeroed_samples, samples.size());
    ASSERT_EQ(a.grads.size(), b.grads.size());
    for (std::size_t i = 0; i < a.grads.size(); ++i) {
        EXPECT_EQ(a.grads[i], b.grads[i]);
    }
    EXPECT_EQ(mimic_loss(predict(net, x), targets, MimicLossKind::CCAMN).zeroed, samples.size());
}

TEST(TrainMimic, ZeroEpochsReturnsInitialNet) {
    const auto games = default_games();
    const auto experts = experts_for(games, 1.0);
    auto c = short_config(MimicLossKind::AMN, 1, 0);
    const Network net = make_mimic_network(kGridCells + 1, 2, kGridActions, c);
    const auto r = train_mimic(games, experts, net, c);
    EXPECT_TRUE(r.metrics.empty());
    expect_same_net(r.net, net);
}

TEST(TrainMimic, RejectsMismatchedNetworkAndMode) {
    const auto games = default_games();
    const auto experts = experts_for(games, 1.0);
    auto c = short_config(MimicLossKind::AMN, 1, 1);
    EXPECT_THROW(train_mimic(games, experts, make_mimic_network(kGridCells + 1, 1, kGridActions, c), c),
                 DimensionMismatch);
    EXPECT_THROW(train_mimic(games, experts, make_mimic_network(kGridCells + 1, 2, kGridActions, c), c, 2),
                 InvalidArgument);
}

TEST(TrainMimic, SingleTaskReachesExpertAgreement) {
    const auto games = default_games();
    const auto experts = experts_for(games, 1.0);
    std::vector<double> agreement;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto c = short_config(MimicLossKind::AMN, seed, 200);
        const auto r = train_mimic(games, experts, make_mimic_network(kGridCells + 1, 2, kGridActions, c), c, 0);
        for (const auto& m : r.metrics) {
            EXPECT_EQ(m.game_id, 0u);
        }
        agreement.push_back(greedy_agreement(r.net, games[0], experts[0], 0, 2));
    }
    std::sort(agreement.begin(), agreement.end());
    EXPECT_GE(agreement[2], 0.9);
}

TEST(TrainMimic, HighTemperatureCcAmnZeroesSomeGradients) {
    const auto games = default_games();
    const auto experts = experts_for(games, 5.0);
    const auto c = short_config(MimicLossKind::CCAMN, 0, 200);
    const auto r = train_mimic(games, experts, make_mimic_network(kGridCells + 1, 2, kGridActions, c), c, 0);
    double zeroed = 0.0;
    for (const auto& m : r.metrics) {
        zeroed += m.zeroed_grad_fraction;
    }
    EXPECT_GT(zeroed, 0.0);

    // AMN never zeroes.
    auto a = c;
    a.loss = MimicLossKind::AMN;
    a.epochs = 20;
    for (const auto& m : train_mimic(games, experts, make_mimic_network(kGridCells + 1, 2, kGridActions, a), a, 0).metrics) {
        EXPECT_EQ(m.zeroed_grad_fraction, 0.0);
    }
}

TEST(TrainMimic, SingleGameMultiTaskEqualsSingleTask) {
    const std::vector<TabularGame> games{gridworld(1)};
    const auto experts = experts_for(games, 1.0);
    for (auto kind : {MimicLossKind::AMN, MimicLossKind::CCAMN}) {
        const auto c = short_config(kind, 4, 15);
        const Network net = make_mimic_network(kGridCells + 1, 1, kGridActions, c);
        const auto multi = train_mimic(games, experts, net, c);
        const auto single = train_mimic(games, experts, net, c, 0);
        expect_same_metrics(multi, single);
        expect_same_net(multi.net, single.net);
        std::ostringstream a, b;
        write_mimic_metrics_csv(a, multi, std::nullopt);
        write_mimic_metrics_csv(b, single, 0);
        EXPECT_NE(a.str(), b.str()); // mode column differs, numbers do not
    }
}

TEST(TrainMimic, PipelinedMatchesSynchronous) {
    const auto games = default_games();
    const auto experts = experts_for(games, 1.0);
    auto c = short_config(MimicLossKind::AMN, 8, 10);
    const Network net = make_mimic_network(kGridCells + 1, 2, kGridActions, c);
    const auto sync = train_mimic(games, experts, net, c);
    c.pipelined = true;
    c.buffer_capacity = 2;
    const auto piped = train_mimic(games, experts, net, c);
    expect_same_metrics(sync, piped);
    expect_same_net(sync.net, piped.net);
}

TEST(TrainMimic, MultiTaskDescentProperty) {
    const auto games = default_games();
    const auto experts = experts_for(games, 1.0);
    double fraction = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto c = short_config(MimicLossKind::AMN, seed, 200);
        const auto r = train_mimic(games, experts, make_mimic_network(kGridCells + 1, 2, kGridActions, c), c);
        std::size_t down = 0;
        for (std::size_t e = 0; e < r.loss_start.size(); ++e) {
            down += r.loss_end[e] <= r.loss_start[e] ? 1 : 0;
        }
        fraction += static_cast<double>(down) / static_cast<double>(r.loss_start.size()) / 5.0;
        EXPECT_LT(r.metrics.back().kl_to_expert, r.metrics.front().kl_to_expert);
    }
    EXPECT_GE(fraction, 0.8);
}

TEST(TrainMimic, MetricsCsvSchema) {
    const auto games = default_games();
    const auto experts = experts_for(games, 1.0);
    const auto c = short_config(MimicLossKind::AMN, 3, 2);
    const auto r = train_mimic(games, experts, make_mimic_network(kGridCells + 1, 2, kGridActions, c), c);
    std::ostringstream os;
    write_mimic_metrics_csv(os, r, std::nullopt);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "epoch,mode,game_id,loss,eval_return_mean,eval_return_sd,kl_to_expert,zeroed_grad_fraction");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        EXPECT_EQ(line.rfind(std::to_string(rows / 2 + 1) + ",multi-task," + std::to_string(rows % 2) + ",", 0), 0u)
            << line;
        ++rows;
    }
    EXPECT_EQ(rows, 4u);
}

TEST(EvaluatePolicy, ExpertMatchesOptimalValue) {
    for (std::size_t id : {0, 1}) {
        const auto g = gridworld(id);
        const auto vi = value_iteration(g);
        const auto e = expert_policy(vi.q, g.n_states, g.n_actions, 1.0);
        const double v_star = *std::max_element(vi.q.begin() + g.start_state * g.n_actions,
                                                vi.q.begin() + (g.start_state + 1) * g.n_actions);
        Rng rng(id);
        const auto r = evaluate_policy(expert_policy_fn(e), g, 400, 400, rng, g.discount);
        if (id == 0) {
            EXPECT_EQ(r.sd, 0.0);
            EXPECT_NEAR(r.mean, v_star, 1e-9);
        } else {
            EXPECT_GT(r.sd, 0.0);
            EXPECT_LE(std::abs(r.mean - v_star), 3.0 * r.sd);
        }
    }
}

TEST(EvaluatePolicy, UniformRandomTrailsExpert) {
    const auto g = gridworld(0);
    const auto e = make_expert(g);
    Rng a(1), b(2);
    const auto expert = evaluate_policy(expert_policy_fn(e), g, 100, 100, a);
    const auto uniform = evaluate_stochastic_policy(uniform_policy_fn(kGridActions), g, 100, 100, b);
    EXPECT_LT(uniform.mean, expert.mean);
}

TEST(EvaluatePolicy, DeterministicGameHasZeroSd) {
    const auto g = chain5();
    Rng rng(0);
    const auto r = evaluate_policy(expert_policy_fn(make_expert(g)), g, 10, 20, rng);
    EXPECT_EQ(r.sd, 0.0);
    EXPECT_EQ(r.mean, 1.0);
    EXPECT_THROW(evaluate_policy(uniform_policy_fn(2), g, 10, 0, rng), InvalidArgument);
}
