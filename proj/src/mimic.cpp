#include "ccdist/mimic.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

#include "ccdist/errors.hpp"

namespace ccdist {

namespace {

constexpr double kStepReward = -0.04;
constexpr double kGoalReward = 1.0;
constexpr double kPenaltyReward = -1.0;
constexpr double kWind = 0.2;

struct GridLayout {
    std::size_t start, goal;
    std::vector<std::size_t> penalties;
    double wind;
};

std::size_t cell(std::size_t r, std::size_t c) {
    return r * kGridSide + c;
}

std::size_t move(std::size_t s, std::size_t a) {
    std::size_t r = s / kGridSide, c = s % kGridSide;
    switch (a) {
    case 0:
        r = r > 0 ? r - 1 : r;
        break;
    case 1:
        c = c + 1 < kGridSide ? c + 1 : c;
        break;
    case 2:
        r = r + 1 < kGridSide ? r + 1 : r;
        break;
    default:
        c = c > 0 ? c - 1 : c;
        break;
    }
    return cell(r, c);
}

std::size_t sample_row(std::span<const double> p, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        acc += p[k];
        if (u < acc) {
            return k;
        }
    }
    // Rounding left u above the cumulative sum: last non-zero entry.
    for (std::size_t k = p.size(); k-- > 0;) {
        if (p[k] > 0.0) {
            return k;
        }
    }
    return p.size() - 1;
}

std::size_t sample_next(const TabularGame& g, std::size_t s, std::size_t a, Rng& rng) {
    const std::span<const double> row(g.transitions.data() + (s * g.n_actions + a) * g.n_states, g.n_states);
    return sample_row(row, rng);
}

ReturnStats rollouts(const PolicyFn& policy, const TabularGame& game, std::size_t episodes, std::size_t horizon,
                     Rng& rng, double discount, bool greedy) {
    if (horizon == 0 || episodes == 0) {
        throw InvalidArgument("evaluation needs horizon >= 1 and episodes >= 1");
    }
    std::vector<double> returns;
    for (std::size_t e = 0; e < episodes; ++e) {
        std::size_t s = game.start_state;
        double ret = 0.0, w = 1.0;
        for (std::size_t t = 0; t < horizon && !game.terminal[s]; ++t) {
            const auto row = policy(s);
            const std::size_t a = greedy ? argmax(row) : sample_row(row, rng);
            ret += w * game.R(s, a);
            w *= discount;
            s = sample_next(game, s, a, rng);
        }
        returns.push_back(ret);
    }
    // Shifted by the first return so identical episodes give sd exactly 0.
    const double n = static_cast<double>(returns.size());
    const double x0 = returns[0];
    double shift = 0.0;
    for (double r : returns) {
        shift += r - x0;
    }
    shift /= n;
    double ss = 0.0;
    for (double r : returns) {
        ss += (r - x0 - shift) * (r - x0 - shift);
    }
    ReturnStats out;
    out.mean = x0 + shift;
    out.sd = returns.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return out;
}

void check_games(const std::vector<TabularGame>& games, const std::vector<ExpertPolicy>& experts) {
    if (games.empty() || games.size() != experts.size()) {
        throw InvalidArgument("need one expert per game and at least one game");
    }
    for (std::size_t g = 0; g < games.size(); ++g) {
        games[g].validate();
        if (games[g].n_states != games[0].n_states || games[g].n_actions != games[0].n_actions) {
            throw DimensionMismatch("games must share the state space and action set");
        }
        if (experts[g].n_states != games[g].n_states || experts[g].n_actions != games[g].n_actions) {
            throw DimensionMismatch("expert does not match its game");
        }
    }
}

double kl(const SimplexPoint& p, const PositiveComposition& q) {
    double out = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) {
            out += p[k] * (std::log(p[k]) - q.log_values()[k]);
        }
    }
    return out;
}

// Bounded FIFO for the producer/consumer mode.
class BatchQueue {
public:
    explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(std::vector<GuidanceSample> batch) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return q_.size() < capacity_ || closed_; });
        if (closed_) {
            return;
        }
        q_.push_back(std::move(batch));
        not_empty_.notify_one();
    }

    std::vector<GuidanceSample> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !q_.empty() || error_; });
        if (q_.empty()) {
            std::rethrow_exception(error_);
        }
        auto b = std::move(q_.front());
        q_.pop_front();
        not_full_.notify_one();
        return b;
    }

    void fail(std::exception_ptr e) {
        std::lock_guard lock(mu_);
        error_ = e;
        not_empty_.notify_all();
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_full_.notify_all();
    }

private:
    std::size_t capacity_;
    std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<std::vector<GuidanceSample>> q_;
    std::exception_ptr error_;
    bool closed_ = false;
};

} // namespace

void TabularGame::validate() const {
    if (n_states == 0 || n_actions == 0) {
        throw InvalidArgument("game needs states and actions");
    }
    if (transitions.size() != n_states * n_actions * n_states || rewards.size() != n_states * n_actions ||
        terminal.size() != n_states) {
        throw DimensionMismatch("game arrays do not match n_states / n_actions");
    }
    if (!(discount > 0.0 && discount < 1.0)) {
        throw InvalidArgument("discount must be in (0, 1)");
    }
    if (start_state >= n_states || terminal[start_state]) {
        throw InvalidArgument("start state must be a non-terminal state");
    }
    for (std::size_t s = 0; s < n_states; ++s) {
        for (std::size_t a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (std::size_t s2 = 0; s2 < n_states; ++s2) {
                const double p = T(s, a, s2);
                if (!(p >= 0.0)) {
                    throw InvalidArgument("transition probabilities must be non-negative");
                }
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9) {
                throw InvalidArgument("transition row (" + std::to_string(s) + "," + std::to_string(a) +
                                      ") sums to " + std::to_string(sum));
            }
        }
    }
}

TabularGame gridworld(std::size_t game_id) {
    GridLayout layout;
    if (game_id == 0) {
        layout = {cell(0, 0), cell(3, 3), {cell(1, 1), cell(1, 2), cell(2, 1)}, 0.0};
    } else if (game_id == 1) {
        layout = {cell(3, 0), cell(0, 3), {cell(1, 2), cell(2, 2), cell(2, 1)}, kWind};
    } else {
        throw InvalidArgument("default games are 0 and 1");
    }
    const std::size_t S = kGridCells + 1, A = kGridActions, term = kGridCells;
    TabularGame g;
    g.n_states = S;
    g.n_actions = A;
    g.transitions.assign(S * A * S, 0.0);
    g.rewards.assign(S * A, 0.0);
    g.terminal.assign(S, false);
    g.terminal[term] = true;
    g.start_state = layout.start;
    g.id = game_id;
    auto bonus = [&](std::size_t dest) {
        if (dest == layout.goal) {
            return kGoalReward;
        }
        return std::find(layout.penalties.begin(), layout.penalties.end(), dest) != layout.penalties.end()
                   ? kPenaltyReward
                   : 0.0;
    };
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            double* row = g.transitions.data() + (s * A + a) * S;
            if (s == term) {
                row[term] = 1.0;
                continue;
            }
            // Intended move with 1 - wind, pushed down with wind.
            const std::pair<std::size_t, double> outcomes[2] = {{move(s, a), 1.0 - layout.wind},
                                                                {move(s, 2), layout.wind}};
            double r = kStepReward;
            for (const auto& [dest, p] : outcomes) {
                if (p == 0.0) {
                    continue;
                }
                row[dest == layout.goal ? term : dest] += p;
                r += p * bonus(dest);
            }
            g.rewards[s * A + a] = r;
        }
    }
    g.validate();
    return g;
}

std::vector<TabularGame> default_games() {
    return {gridworld(0), gridworld(1)};
}

ValueIterationResult value_iteration(const TabularGame& game, double tolerance, std::size_t max_iterations) {
    game.validate();
    const std::size_t S = game.n_states, A = game.n_actions;
    const double gamma = game.discount;
    const double stop = tolerance * (1.0 - gamma) / gamma;
    std::vector<double> q(S * A, 0.0), next(S * A, 0.0), v(S, 0.0);
    for (std::size_t it = 1; it <= max_iterations; ++it) {
        for (std::size_t s = 0; s < S; ++s) {
            v[s] = game.terminal[s] ? 0.0 : *std::max_element(q.begin() + s * A, q.begin() + (s + 1) * A);
        }
        double residual = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t a = 0; a < A; ++a) {
                double val = 0.0;
                if (!game.terminal[s]) {
                    double ev = 0.0;
                    for (std::size_t s2 = 0; s2 < S; ++s2) {
                        ev += game.T(s, a, s2) * v[s2];
                    }
                    val = game.R(s, a) + gamma * ev;
                }
                residual = std::max(residual, std::abs(val - q[s * A + a]));
                next[s * A + a] = val;
            }
        }
        q.swap(next);
        if (residual < stop) {
            return {q, it};
        }
    }
    throw NumericalFailure("value iteration did not converge in " + std::to_string(max_iterations) +
                           " iterations (discount " + std::to_string(gamma) + " too close to 1?)");
}

ExpertPolicy expert_policy(const std::vector<double>& q_values, std::size_t S, std::size_t A, double temperature) {
    if (!(temperature > 0.0)) {
        throw InvalidArgument("temperature must be positive");
    }
    if (q_values.size() != S * A) {
        throw DimensionMismatch("Q table size does not match S x A");
    }
    ExpertPolicy e{S, A, q_values, temperature, {}};
    std::vector<double> scaled(A);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            scaled[a] = q_values[s * A + a] / temperature;
        }
        const auto p = softmax(scaled);
        e.policy.emplace_back(std::vector<double>(p.values().begin(), p.values().end()));
    }
    return e;
}

ExpertPolicy make_expert(const TabularGame& game, double temperature) {
    return expert_policy(value_iteration(game).q, game.n_states, game.n_actions, temperature);
}

GuidanceStream::GuidanceStream(const TabularGame& game, const ExpertPolicy& expert, double epsilon,
                               std::uint64_t seed)
    : game_(&game), expert_(&expert), epsilon_(epsilon), rng_(seed), state_(game.start_state) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw InvalidArgument("behavior epsilon must be in [0, 1]");
    }
    game.validate();
}

GuidanceSample GuidanceStream::next() {
    GuidanceSample out{state_, game_->id, expert_->policy[state_]};
    std::size_t a;
    if (uniform01(rng_) < epsilon_) {
        a = std::uniform_int_distribution<std::size_t>(0, game_->n_actions - 1)(rng_);
    } else {
        a = sample_row(expert_->policy[state_].values(), rng_);
    }
    const std::size_t s2 = sample_next(*game_, state_, a, rng_);
    state_ = game_->terminal[s2] ? game_->start_state : s2;
    return out;
}

std::vector<GuidanceSample> generate_guidance(const std::vector<TabularGame>& games,
                                              const std::vector<ExpertPolicy>& experts, std::size_t n_per_game,
                                              double epsilon_behavior, std::uint64_t seed) {
    check_games(games, experts);
    std::vector<GuidanceSample> out;
    out.reserve(games.size() * n_per_game);
    for (std::size_t g = 0; g < games.size(); ++g) {
        GuidanceStream stream(games[g], experts[g], epsilon_behavior, derive_seed(seed, {0x5eed, g}));
        for (std::size_t i = 0; i < n_per_game; ++i) {
            out.push_back(stream.next());
        }
    }
    return out;
}

std::vector<double> mimic_feature(std::size_t state, std::size_t game_index, std::size_t S, std::size_t n_games) {
    std::vector<double> f(S + n_games, 0.0);
    f[state] = 1.0;
    f[S + game_index] = 1.0;
    return f;
}

Tensor mimic_features(const std::vector<GuidanceSample>& samples, std::size_t S, std::size_t n_games) {
    std::vector<double> data;
    data.reserve(samples.size() * (S + n_games));
    for (const auto& s : samples) {
        const auto f = mimic_feature(s.state, s.game_id, S, n_games);
        data.insert(data.end(), f.begin(), f.end());
    }
    return Tensor({samples.size(), S + n_games}, std::move(data));
}

MimicLoss mimic_loss(const std::vector<PositiveComposition>& outputs, const std::vector<SimplexPoint>& guidance,
                     MimicLossKind kind, const CCConfig& cc) {
    if (outputs.size() != guidance.size() || outputs.empty()) {
        throw DimensionMismatch("outputs and guidance batches differ in size");
    }
    MimicLoss out;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        try {
            const auto s =
                sample_loss(outputs[i], guidance[i], kind == MimicLossKind::CCAMN ? LossKind::CC : LossKind::CE, cc);
            out.loss += s.loss;
            out.zeroed += s.zeroed ? 1 : 0;
        } catch (const NumericalFailure& e) {
            throw NumericalFailure("sample " + std::to_string(i) + ": " + e.what());
        }
    }
    out.loss /= static_cast<double>(outputs.size());
    return out;
}

void MimicConfig::validate() const {
    if (batch_size == 0 || steps_per_epoch == 0 || hidden == 0 || buffer_capacity == 0) {
        throw InvalidArgument("batch_size, steps_per_epoch, hidden and buffer_capacity must be positive");
    }
    if (!(learning_rate > 0.0) || !(temperature > 0.0)) {
        throw InvalidArgument("learning_rate and temperature must be positive");
    }
    if (!(epsilon_behavior >= 0.0 && epsilon_behavior <= 1.0)) {
        throw InvalidArgument("epsilon_behavior must be in [0, 1]");
    }
    if (eval_episodes == 0 || horizon == 0) {
        throw InvalidArgument("eval_episodes and horizon must be positive");
    }
}

Network make_mimic_network(std::size_t S, std::size_t n_games, std::size_t A, const MimicConfig& config) {
    NetworkSpec spec;
    spec.input_dim = S + n_games;
    spec.output_dim = A;
    spec.layers = {LayerSpec::dense(config.hidden), LayerSpec::nonlinearity(ActivationKind::Relu),
                   LayerSpec::dense(A)};
    return Network(spec, derive_seed(config.seed, {0}));
}

MimicResult train_mimic(const std::vector<TabularGame>& games, const std::vector<ExpertPolicy>& experts,
                        Network net, const MimicConfig& config, MimicMode mode) {
    config.validate();
    check_games(games, experts);
    const std::size_t L = games.size(), S = games[0].n_states, A = games[0].n_actions;
    if (net.spec().input_dim != S + L || net.spec().output_dim != A) {
        throw DimensionMismatch("mimic network must take S + n_games inputs and produce A outputs");
    }
    std::vector<std::size_t> active;
    if (mode) {
        if (*mode >= L) {
            throw InvalidArgument("single-task game index out of range");
        }
        active.push_back(*mode);
    } else {
        active.resize(L);
        std::iota(active.begin(), active.end(), std::size_t{0});
    }

    TrainConfig tc;
    tc.loss = config.loss == MimicLossKind::CCAMN ? LossKind::CC : LossKind::CE;
    tc.learning_rate = config.learning_rate;
    tc.optimizer = config.optimizer;
    tc.cc = config.cc;
    Optimizer opt(net, tc);
    Rng unused(0);

    std::vector<GuidanceStream> streams;
    std::vector<Rng> eval_rng;
    for (std::size_t g : active) {
        streams.emplace_back(games[g], experts[g], config.epsilon_behavior, derive_seed(config.seed, {0x5eed, g}));
        eval_rng.emplace_back(derive_seed(config.seed, {0xe7a1, g}));
    }
    // Sample game_id carries the index into `games` for feature encoding.
    auto make_batch = [&] {
        std::vector<GuidanceSample> batch;
        batch.reserve(active.size() * config.batch_size);
        for (std::size_t j = 0; j < active.size(); ++j) {
            for (std::size_t i = 0; i < config.batch_size; ++i) {
                auto smp = streams[j].next();
                smp.game_id = active[j];
                batch.push_back(std::move(smp));
            }
        }
        return batch;
    };

    std::vector<GuidanceSample> all_states;
    for (std::size_t g : active) {
        for (std::size_t s : reachable_states(games[g])) {
            all_states.push_back({s, g, experts[g].policy[s]});
        }
    }
    const Tensor all_x = mimic_features(all_states, S, L);
    std::vector<SimplexPoint> all_targets;
    for (const auto& smp : all_states) {
        all_targets.push_back(smp.guidance);
    }
    auto full_loss = [&] { return mimic_loss(predict(net, all_x), all_targets, config.loss, config.cc).loss; };

    const std::size_t total_steps = config.epochs * config.steps_per_epoch;
    BatchQueue queue(config.buffer_capacity);
    std::thread producer;
    if (config.pipelined && total_steps > 0) {
        producer = std::thread([&] {
            try {
                for (std::size_t i = 0; i < total_steps; ++i) {
                    queue.push(make_batch());
                }
            } catch (...) {
                queue.fail(std::current_exception());
            }
        });
    }
    struct JoinGuard {
        std::thread& t;
        BatchQueue& q;
        ~JoinGuard() {
            q.close();
            if (t.joinable()) {
                t.join();
            }
        }
    } guard{producer, queue};

    MimicResult res{net, {}, {}, {}};
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        res.loss_start.push_back(full_loss());
        std::vector<double> loss_sum(L, 0.0), kl_sum(L, 0.0), count(L, 0.0), zeroed(L, 0.0);
        for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
            const auto batch = config.pipelined ? queue.pop() : make_batch();
            std::vector<SimplexPoint> targets;
            for (const auto& smp : batch) {
                targets.push_back(smp.guidance);
            }
            LossAndGrad lg;
            try {
                lg = loss_and_grad(net, mimic_features(batch, S, L), targets, tc, Mode::Train, unused);
            } catch (const NumericalFailure& e) {
                throw NumericalFailure("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                                       e.what());
            }
            if (!std::isfinite(lg.loss)) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "non-finite mimic loss at epoch %zu step %zu (zeroed fraction %.4f)",
                              epoch, step,
                              static_cast<double>(lg.zeroed_samples) / static_cast<double>(batch.size()));
                throw NumericalFailure(buf);
            }
            const Tensor& logits = lg.cache.logits();
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const std::size_t g = batch[i].game_id;
                loss_sum[g] += lg.sample_losses[i];
                kl_sum[g] += kl(batch[i].guidance, softmax(logits.row(i)));
                zeroed[g] += lg.sample_zeroed[i] ? 1.0 : 0.0;
                count[g] += 1.0;
            }
            opt.step(net, lg.grads);
        }
        res.loss_end.push_back(full_loss());
        for (std::size_t j = 0; j < active.size(); ++j) {
            const std::size_t g = active[j];
            MimicEpochMetrics m;
            m.epoch = epoch;
            m.game_id = games[g].id;
            m.loss = loss_sum[g] / count[g];
            m.kl_to_expert = kl_sum[g] / count[g];
            m.zeroed_grad_fraction = zeroed[g] / count[g];
            const auto r = evaluate_policy(mimic_policy_fn(net, g, S, L), games[g], config.eval_episodes,
                                           config.horizon, eval_rng[j]);
            m.eval_return_mean = r.mean;
            m.eval_return_sd = r.sd;
            res.metrics.push_back(m);
        }
    }
    res.net = std::move(net);
    return res;
}

void write_mimic_metrics_csv(std::ostream& os, const MimicResult& result, MimicMode mode) {
    os << "epoch,mode,game_id,loss,eval_return_mean,eval_return_sd,kl_to_expert,zeroed_grad_fraction\n";
    char buf[256];
    for (const auto& m : result.metrics) {
        std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch,
                      mode ? "single-task" : "multi-task", m.game_id, m.loss, m.eval_return_mean, m.eval_return_sd,
                      m.kl_to_expert, m.zeroed_grad_fraction);
        os << buf;
    }
}

PolicyFn expert_policy_fn(const ExpertPolicy& expert) {
    return [rows = expert.policy](std::size_t s) {
        return std::vector<double>(rows[s].values().begin(), rows[s].values().end());
    };
}

PolicyFn mimic_policy_fn(const Network& net, std::size_t game_index, std::size_t S, std::size_t n_games) {
    std::vector<GuidanceSample> states;
    for (std::size_t s = 0; s < S; ++s) {
        states.push_back({s, game_index, SimplexPoint::centroid(net.spec().output_dim)});
    }
    const auto out = predict(net, mimic_features(states, S, n_games));
    std::vector<std::vector<double>> table;
    for (const auto& p : out) {
        table.emplace_back(p.values().begin(), p.values().end());
    }
    return [table = std::move(table)](std::size_t s) { return table[s]; };
}

PolicyFn uniform_policy_fn(std::size_t A) {
    return [A](std::size_t) { return std::vector<double>(A, 1.0 / static_cast<double>(A)); };
}

ReturnStats evaluate_policy(const PolicyFn& policy, const TabularGame& game, std::size_t episodes,
                            std::size_t horizon, Rng& rng, double discount) {
    return rollouts(policy, game, episodes, horizon, rng, discount, true);
}

ReturnStats evaluate_stochastic_policy(const PolicyFn& policy, const TabularGame& game, std::size_t episodes,
                                       std::size_t horizon, Rng& rng, double discount) {
    return rollouts(policy, game, episodes, horizon, rng, discount, false);
}

std::vector<std::size_t> reachable_states(const TabularGame& game) {
    std::vector<bool> seen(game.n_states, false);
    std::vector<std::size_t> stack{game.start_state};
    seen[game.start_state] = true;
    while (!stack.empty()) {
        const std::size_t s = stack.back();
        stack.pop_back();
        if (game.terminal[s]) {
            continue;
        }
        for (std::size_t a = 0; a < game.n_actions; ++a) {
            for (std::size_t s2 = 0; s2 < game.n_states; ++s2) {
                if (game.T(s, a, s2) > 0.0 && !seen[s2]) {
                    seen[s2] = true;
                    stack.push_back(s2);
                }
            }
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < game.n_states; ++s) {
        if (seen[s] && !game.terminal[s]) {
            out.push_back(s);
        }
    }
    return out;
}

double greedy_agreement(const Network& net, const TabularGame& game, const ExpertPolicy& expert,
                        std::size_t game_index, std::size_t n_games) {
    const auto policy = mimic_policy_fn(net, game_index, game.n_states, n_games);
    const auto states = reachable_states(game);
    const std::size_t A = game.n_actions;
    std::size_t agree = 0;
    for (std::size_t s : states) {
        const std::size_t a = argmax(policy(s));
        const auto q = std::span<const double>(expert.q_values).subspan(s * A, A);
        const double best = *std::max_element(q.begin(), q.end());
        agree += q[a] >= best - 1e-12 * std::max(1.0, std::abs(best)) ? 1 : 0;
    }
    return static_cast<double>(agree) / static_cast<double>(states.size());
}

} // namespace ccdist
