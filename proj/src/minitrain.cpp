#include "ccdist/minitrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "ccdist/errors.hpp"

namespace ccdist {

namespace {

double cross_entropy(const PositiveComposition& output, const SimplexPoint& target) {
    const auto logp = output.log_values();
    double ce = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) {
        if (target[k] != 0.0) {
            ce -= target[k] * logp[k];
        }
    }
    return ce;
}

void check_target(const PositiveComposition& output, const SimplexPoint& target) {
    if (output.size() != target.size()) {
        throw DimensionMismatch("target has " + std::to_string(target.size()) + " classes, output has " +
                                std::to_string(output.size()));
    }
}

double sample_loss_value(const PositiveComposition& output, const SimplexPoint& target, LossKind kind,
                         const CCConfig& cc) {
    check_target(output, target);
    double loss = cross_entropy(output, target);
    if (kind == LossKind::CC) {
        loss -= log_norm_const(CCParams(output), cc).log_c;
    }
    return loss;
}

double final_weight_sq_norm(const Network& net) {
    const auto& w = net.parameters()[net.final_weight_index()].data();
    return std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
}

NumericalFailure at_sample(std::size_t i, const std::exception& e, const PositiveComposition& output) {
    std::string msg = "sample " + std::to_string(i) + ": " + e.what() + "; log-output (";
    char buf[32];
    for (std::size_t k = 0; k < output.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%s%.17g", k ? "," : "", output.log_values()[k]);
        msg += buf;
    }
    return NumericalFailure(msg + ")");
}

// Forward plus batch-mean loss, no gradients.
double batch_loss(const Network& net, const Tensor& batch, const std::vector<SimplexPoint>& targets,
                  const TrainConfig& config, Mode mode, Rng& rng) {
    const auto fwd = forward(net, batch, mode, rng);
    double total = 0.0;
    for (std::size_t i = 0; i < fwd.outputs.size(); ++i) {
        try {
            total += sample_loss_value(fwd.outputs[i], targets[i], config.loss, config.cc);
        } catch (const NumericalFailure& e) {
            throw at_sample(i, e, fwd.outputs[i]);
        }
    }
    return total / static_cast<double>(fwd.outputs.size()) + 0.5 * config.weight_decay * final_weight_sq_norm(net);
}

std::string format_metrics(const EpochMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu train_loss %.6g train_acc %.4f test_acc %.4f", m.epoch, m.train_loss,
                  m.train_acc, m.test_acc);
    return buf;
}

} // namespace

void TrainConfig::validate() const {
    if (!(label_epsilon >= 0.0 && label_epsilon <= 1.0)) {
        throw InvalidArgument("label_epsilon must be in [0, 1]");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw InvalidArgument("learning_rate must be positive");
    }
    if (batch_size == 0) {
        throw InvalidArgument("batch_size must be positive");
    }
    if (!(weight_decay >= 0.0)) {
        throw InvalidArgument("weight_decay must be non-negative");
    }
}

Network make_network(std::size_t input_dim, std::size_t K, const TrainConfig& config, std::size_t hidden) {
    DefaultNetOptions o;
    o.hidden = hidden;
    o.dropout_on = config.dropout_on;
    o.batchnorm_on = config.batchnorm_on;
    return Network(default_network_spec(input_dim, K, o), derive_seed(config.seed, {0}));
}

void Dataset::validate() const {
    if (K < 2) {
        throw InvalidArgument("dataset needs at least 2 classes");
    }
    if (x_train.rows() != y_train.size() || x_test.rows() != y_test.size()) {
        throw DimensionMismatch("dataset feature rows and label counts differ");
    }
    if (x_train.cols() != x_test.cols()) {
        throw DimensionMismatch("train and test feature dimensions differ");
    }
    for (const auto* ys : {&y_train, &y_test}) {
        for (std::size_t y : *ys) {
            if (y >= K) {
                throw InvalidArgument("label out of range");
            }
        }
    }
}

SampleLoss sample_loss(const PositiveComposition& output, const SimplexPoint& target, LossKind kind,
                       const CCConfig& cc) {
    check_target(output, target);
    const std::size_t K = output.size();
    SampleLoss out;
    out.loss = cross_entropy(output, target);
    // d/dz of sum_k g_k eta_k with eta = log softmax(z): g_j - p_j sum_k g_k.
    std::vector<double> g(target.values().begin(), target.values().end());
    for (double& v : g) {
        v = -v;
    }
    if (kind == LossKind::CC) {
        const CCParams params(output);
        out.neg_log_c = -log_norm_const(params, cc).log_c;
        out.loss += out.neg_log_c;
        const auto grad = grad_cc_nll(params, target, cc);
        g = grad.gradient;
        out.zeroed = grad.zeroed;
    }
    const double gsum = std::accumulate(g.begin(), g.end(), 0.0);
    out.dlogits.resize(K);
    for (std::size_t j = 0; j < K; ++j) {
        out.dlogits[j] = g[j] - output[j] * gsum;
    }
    return out;
}

LossAndGrad loss_and_grad(const Network& net, const Tensor& batch, const std::vector<SimplexPoint>& targets,
                          const TrainConfig& config, Mode mode, Rng& rng) {
    if (targets.size() != batch.rows()) {
        throw DimensionMismatch("batch has " + std::to_string(batch.rows()) + " rows but " +
                                std::to_string(targets.size()) + " targets");
    }
    auto fwd = forward(net, batch, mode, rng);
    const std::size_t n = fwd.outputs.size();
    const std::size_t K = net.spec().output_dim;
    const double inv_n = 1.0 / static_cast<double>(n);
    LossAndGrad out;
    Tensor dlogits({n, K});
    for (std::size_t i = 0; i < n; ++i) {
        SampleLoss s;
        try {
            s = sample_loss(fwd.outputs[i], targets[i], config.loss, config.cc);
        } catch (const NumericalFailure& e) {
            throw at_sample(i, e, fwd.outputs[i]);
        }
        out.data_loss += s.loss;
        out.sample_losses.push_back(s.loss);
        out.sample_zeroed.push_back(s.zeroed);
        out.mean_neg_log_c += s.neg_log_c;
        out.zeroed_samples += s.zeroed ? 1 : 0;
        for (std::size_t k = 0; k < K; ++k) {
            dlogits.at(i, k) = s.dlogits[k] * inv_n;
        }
    }
    out.data_loss *= inv_n;
    out.mean_neg_log_c *= inv_n;
    out.loss = out.data_loss + 0.5 * config.weight_decay * final_weight_sq_norm(net);
    out.grads = backward(net, fwd.cache, dlogits);
    add_weight_decay(net, out.grads, config.weight_decay);
    out.cache = std::move(fwd.cache);
    return out;
}

void add_weight_decay(const Network& net, std::vector<Tensor>& grads, double weight_decay) {
    if (weight_decay == 0.0) {
        return;
    }
    const std::size_t idx = net.final_weight_index();
    const auto& w = net.parameters()[idx].data();
    auto& g = grads[idx].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
        g[i] += weight_decay * w[i];
    }
}

Optimizer::Optimizer(const Network& net, const TrainConfig& config)
    : kind_(config.optimizer),
      lr_(config.learning_rate),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_epsilon) {
    if (kind_ == OptimizerKind::Adam) {
        for (const auto& p : net.parameters()) {
            m_.emplace_back(p.shape(), 0.0);
            v_.emplace_back(p.shape(), 0.0);
        }
    }
}

void Optimizer::step(Network& net, const std::vector<Tensor>& grads) {
    auto& params = net.parameters();
    if (grads.size() != params.size()) {
        throw DimensionMismatch("gradient list does not match parameters");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].data();
        const auto& g = grads[p].data();
        if (kind_ == OptimizerKind::SGD) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= lr_ * g[i];
            }
            continue;
        }
        auto& m = m_[p].data();
        auto& v = v_[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

std::vector<SimplexPoint> make_targets(const std::vector<std::size_t>& labels, std::size_t K,
                                       const TrainConfig& config, Rng* rng) {
    std::vector<SimplexPoint> out;
    out.reserve(labels.size());
    for (std::size_t y : labels) {
        const OneHotLabel label(y, K);
        if (config.label_epsilon == 0.0) {
            out.push_back(label.vector());
        } else if (config.stochastic_smoothing && rng != nullptr) {
            out.push_back(smooth_labels(label, config.label_epsilon, sample_uniform_simplex(K, *rng)));
        } else {
            out.push_back(smooth_labels(label, config.label_epsilon));
        }
    }
    return out;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double accuracy(const Network& net, const Tensor& x, const std::vector<std::size_t>& y) {
    const auto out = predict(net, x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        hits += argmax(out[i].values()) == y[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(out.size());
}

EpochMetrics evaluate_metrics(const Network& net, const Dataset& data, const TrainConfig& config, std::size_t epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    const auto out = predict(net, data.x_train);
    const auto targets = make_targets(data.y_train, data.K, config);
    double loss = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        try {
            loss += sample_loss_value(out[i], targets[i], config.loss, config.cc);
        } catch (const NumericalFailure& e) {
            throw at_sample(i, e, out[i]);
        }
        hits += argmax(out[i].values()) == data.y_train[i] ? 1 : 0;
    }
    m.train_loss = loss / static_cast<double>(out.size());
    m.train_acc = static_cast<double>(hits) / static_cast<double>(out.size());
    m.test_acc = accuracy(net, data.x_test, data.y_test);
    return m;
}

TrainResult train(Network net, const Dataset& data, const TrainConfig& config) {
    config.validate();
    data.validate();
    if (data.x_train.cols() != net.spec().input_dim || data.K != net.spec().output_dim) {
        throw DimensionMismatch("dataset does not fit the network's input or output dimension");
    }
    Rng shuffle_rng(derive_seed(config.seed, {1}));
    Rng dropout_rng(derive_seed(config.seed, {2}));
    Rng label_rng(derive_seed(config.seed, {3}));
    Optimizer opt(net, config);
    const std::size_t n = data.y_train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult res{net, evaluate_metrics(net, data, config, 0), {}};
    EpochMetrics last = res.initial;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0, b = 0; start < n; start += config.batch_size, ++b) {
            const std::size_t end = std::min(n, start + config.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Tensor x = data.x_train.gather_rows(idx);
            std::vector<std::size_t> labels(idx.begin(), idx.end());
            for (auto& l : labels) {
                l = data.y_train[l];
            }
            const auto targets = make_targets(labels, data.K, config, &label_rng);
            LossAndGrad lg;
            try {
                lg = loss_and_grad(net, x, targets, config, Mode::Train, dropout_rng);
            } catch (const NumericalFailure& e) {
                throw NumericalFailure("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " +
                                       e.what() + "; last " + format_metrics(last));
            }
            if (!std::isfinite(lg.loss)) {
                throw NumericalFailure("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                       std::to_string(b) + " (zeroed " + std::to_string(lg.zeroed_samples) + "/" +
                                       std::to_string(idx.size()) + "); last " + format_metrics(last));
            }
            commit_batch_statistics(net, lg.cache);
            opt.step(net, lg.grads);
        }
        last = evaluate_metrics(net, data, config, epoch);
        if (!std::isfinite(last.train_loss)) {
            throw NumericalFailure("non-finite train loss after " + format_metrics(last));
        }
        res.epochs.push_back(last);
    }
    res.net = std::move(net);
    return res;
}

void write_metrics_csv(std::ostream& os, const TrainResult& result) {
    os << "epoch,train_loss,train_acc,test_acc\n";
    char buf[128];
    auto row = [&](const EpochMetrics& m) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", m.epoch, m.train_loss, m.train_acc, m.test_acc);
        os << buf;
    };
    row(result.initial);
    for (const auto& m : result.epochs) {
        row(m);
    }
}

GradcheckResult gradcheck(const Network& net, const Tensor& batch, const std::vector<SimplexPoint>& targets,
                          const TrainConfig& config, double step, std::uint64_t mask_seed) {
    if (!(step >= 1e-7 && step <= 1e-3)) {
        throw InvalidArgument("gradcheck step must be in [1e-7, 1e-3]");
    }
    Rng rng(mask_seed);
    const auto analytic = loss_and_grad(net, batch, targets, config, Mode::Train, rng);
    GradcheckResult res;
    res.zeroed_samples = analytic.zeroed_samples;
    Network probe = net;
    for (std::size_t p = 0; p < probe.parameters().size(); ++p) {
        auto& w = probe.parameters()[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w[i];
            w[i] = saved + step;
            Rng r1(mask_seed);
            const double lp = batch_loss(probe, batch, targets, config, Mode::Train, r1);
            w[i] = saved - step;
            Rng r2(mask_seed);
            const double lm = batch_loss(probe, batch, targets, config, Mode::Train, r2);
            w[i] = saved;
            const double numeric = (lp - lm) / (2.0 * step);
            const double a = analytic.grads[p].data()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_parameter = net.parameter_names()[p] + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

} // namespace ccdist
