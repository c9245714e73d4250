#pragma once

// Actor-mimic laboratory on tabular games that share a state space and
// action set: value-iteration experts, guidance generation, and mimic
// training with cross-entropy (AMN) or CC (CC-AMN) objectives.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "ccdist/minitrain.hpp"

namespace ccdist {

struct TabularGame {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    // T(s' | s, a) at [(s * A + a) * S + s'].
    std::vector<double> transitions;
    // Expected immediate reward R(s, a) at [s * A + a].
    std::vector<double> rewards;
    double discount = 0.95;
    // Absorbing, zero-value states.
    std::vector<bool> terminal;
    std::size_t start_state = 0;
    std::size_t id = 0;

    double T(std::size_t s, std::size_t a, std::size_t s2) const { return transitions[(s * n_actions + a) * n_states + s2]; }
    double R(std::size_t s, std::size_t a) const { return rewards[s * n_actions + a]; }
    void validate() const;
};

inline constexpr std::size_t kGridSide = 4;
inline constexpr std::size_t kGridCells = kGridSide * kGridSide;
// Actions: up, right, down, left.
inline constexpr std::size_t kGridActions = 4;

// The two default 4x4 games (16 cells + one terminal state, 4 moves).
// Game 0: start (0,0), goal (3,3), penalty cells, deterministic moves.
// Game 1: start (3,0), goal (0,3), penalty cells, and a wind that replaces the
// chosen move by "down" with probability 0.2.
TabularGame gridworld(std::size_t game_id);
std::vector<TabularGame> default_games();

inline constexpr double kValueTolerance = 1e-8;

struct ValueIterationResult {
    // Q(s, a) at [s * A + a].
    std::vector<double> q;
    std::size_t iterations = 0;
};

// Bellman optimality fixed point within tolerance (sup norm); the stopping
// rule residual < tol * (1 - gamma) / gamma bounds the distance to Q*.
// Throws NumericalFailure past max_iterations.
ValueIterationResult value_iteration(const TabularGame& game, double tolerance = kValueTolerance,
                                     std::size_t max_iterations = 1000000);

struct ExpertPolicy {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> q_values;
    double temperature = 1.0;
    // Row s is softmax(Q[s, .] / temperature).
    std::vector<SimplexPoint> policy;
};

ExpertPolicy expert_policy(const std::vector<double>& q_values, std::size_t n_states, std::size_t n_actions,
                           double temperature);
ExpertPolicy make_expert(const TabularGame& game, double temperature = 1.0);

struct GuidanceSample {
    std::size_t state = 0;
    std::size_t game_id = 0;
    SimplexPoint guidance;
};

// One game's endless state sequence under an epsilon-mixture of the expert
// (follow a sampled expert action with probability 1 - epsilon, else uniform).
// Terminal states send the walker back to the start state and are not recorded.
class GuidanceStream {
public:
    GuidanceStream(const TabularGame& game, const ExpertPolicy& expert, double epsilon, std::uint64_t seed);
    GuidanceSample next();

private:
    const TabularGame* game_;
    const ExpertPolicy* expert_;
    double epsilon_;
    Rng rng_;
    std::size_t state_;
};

// n_per_game samples per game, game-major. Stream g is seeded from (seed, game id).
std::vector<GuidanceSample> generate_guidance(const std::vector<TabularGame>& games,
                                              const std::vector<ExpertPolicy>& experts, std::size_t n_per_game,
                                              double epsilon_behavior, std::uint64_t seed);

// Network input: one-hot state followed by one-hot game index (n_games wide).
Tensor mimic_features(const std::vector<GuidanceSample>& samples, std::size_t n_states, std::size_t n_games);
std::vector<double> mimic_feature(std::size_t state, std::size_t game_index, std::size_t n_states,
                                  std::size_t n_games);

enum class MimicLossKind { AMN, CCAMN };

struct MimicLoss {
    double loss = 0.0;
    std::size_t zeroed = 0;
};

// AMN: batch mean of -sum_k g_k log o_k. CC-AMN: that plus batch mean of
// -log C(o). Failures name the sample index.
MimicLoss mimic_loss(const std::vector<PositiveComposition>& outputs, const std::vector<SimplexPoint>& guidance,
                     MimicLossKind kind, const CCConfig& cc = {});

struct MimicConfig {
    MimicLossKind loss = MimicLossKind::AMN;
    std::size_t epochs = 200;
    std::size_t steps_per_epoch = 10;
    // Guidance samples per game per gradient step.
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::size_t hidden = 32;
    double epsilon_behavior = 0.1;
    double temperature = 1.0;
    std::size_t eval_episodes = 10;
    std::size_t horizon = 100;
    std::uint64_t seed = 0;
    // Generate guidance on a producer thread feeding a bounded buffer.
    bool pipelined = false;
    std::size_t buffer_capacity = 4;
    CCConfig cc;

    void validate() const;
};

// nullopt: multi-task over all games; otherwise train on that game index only.
using MimicMode = std::optional<std::size_t>;

struct MimicEpochMetrics {
    std::size_t epoch = 0;
    std::size_t game_id = 0;
    // Mean mimic loss over this epoch's training samples of the game.
    double loss = 0.0;
    double eval_return_mean = 0.0;
    double eval_return_sd = 0.0;
    // KL(expert || mimic) averaged over the states visited this epoch.
    double kl_to_expert = 0.0;
    double zeroed_grad_fraction = 0.0;
};

struct MimicResult {
    Network net;
    std::vector<MimicEpochMetrics> metrics;
    // Full-state mimic loss (all non-terminal states of the active games)
    // before and after each epoch.
    std::vector<double> loss_start;
    std::vector<double> loss_end;
};

Network make_mimic_network(std::size_t n_states, std::size_t n_games, std::size_t n_actions,
                           const MimicConfig& config);

MimicResult train_mimic(const std::vector<TabularGame>& games, const std::vector<ExpertPolicy>& experts,
                        Network net, const MimicConfig& config, MimicMode mode = std::nullopt);

// epoch,mode,game_id,loss,eval_return_mean,eval_return_sd,kl_to_expert,zeroed_grad_fraction
void write_mimic_metrics_csv(std::ostream& os, const MimicResult& result, MimicMode mode);

// Action distribution for a state.
using PolicyFn = std::function<std::vector<double>(std::size_t state)>;

PolicyFn expert_policy_fn(const ExpertPolicy& expert);
PolicyFn mimic_policy_fn(const Network& net, std::size_t game_index, std::size_t n_states, std::size_t n_games);
PolicyFn uniform_policy_fn(std::size_t n_actions);

struct ReturnStats {
    double mean = 0.0;
    double sd = 0.0;
};

// Greedy rollouts from the start state, ties to the lowest action index.
// Returns are undiscounted unless a discount is given.
ReturnStats evaluate_policy(const PolicyFn& policy, const TabularGame& game, std::size_t episodes,
                            std::size_t horizon, Rng& rng, double discount = 1.0);

// Same, but the action is sampled from the policy row instead of taken greedily.
ReturnStats evaluate_stochastic_policy(const PolicyFn& policy, const TabularGame& game, std::size_t episodes,
                                       std::size_t horizon, Rng& rng, double discount = 1.0);

// Non-terminal states reachable from the start state.
std::vector<std::size_t> reachable_states(const TabularGame& game);

// Fraction of reachable non-terminal states where the mimic's greedy action
// is one of the expert's maximizing actions.
double greedy_agreement(const Network& net, const TabularGame& game, const ExpertPolicy& expert,
                        std::size_t game_index, std::size_t n_games);

} // namespace ccdist
