#pragma once

// Losses, optimizers and the training loop for Network.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ccdist/cc_core.hpp"
#include "ccdist/network.hpp"
#include "ccdist/simplex.hpp"
#include "ccdist/tensor.hpp"

namespace ccdist {

// CE: -sum_k y_k log p_k. CC: the same plus -log C(p).
enum class LossKind { CE, CC };
enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
    LossKind loss = LossKind::CE;
    // Label smoothing strength; 0 trains on hard labels.
    double label_epsilon = 0.0;
    // Draw the smoothing vector u uniformly on the simplex per sample instead
    // of using the centroid.
    bool stochastic_smoothing = false;
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    // L2 penalty 0.5 * wd * ||W_final||^2 on the final dense weights only.
    double weight_decay = 0.0;
    bool dropout_on = false;
    bool batchnorm_on = false;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    CCConfig cc;

    void validate() const;
};

// Network for a config: default_network_spec with its dropout/batchnorm switches.
Network make_network(std::size_t input_dim, std::size_t K, const TrainConfig& config, std::size_t hidden = 64);

struct Dataset {
    std::size_t K = 0;
    Tensor x_train;
    std::vector<std::size_t> y_train;
    Tensor x_test;
    std::vector<std::size_t> y_test;

    void validate() const;
};

struct SampleLoss {
    double loss = 0.0;
    // d loss / d logits.
    std::vector<double> dlogits;
    // CC only: -log C(p), and whether its gradient was zeroed.
    double neg_log_c = 0.0;
    bool zeroed = false;
};

// Per-sample loss for a softmax output. NumericalFailure propagates from cc_core.
SampleLoss sample_loss(const PositiveComposition& output, const SimplexPoint& target, LossKind kind,
                       const CCConfig& cc = {});

struct LossAndGrad {
    // Batch-mean per-sample loss plus the weight-decay penalty.
    double loss = 0.0;
    // Batch-mean per-sample loss alone.
    double data_loss = 0.0;
    // Batch mean of -log C(output); 0 for CE.
    double mean_neg_log_c = 0.0;
    std::vector<Tensor> grads;
    std::size_t zeroed_samples = 0;
    std::vector<double> sample_losses;
    std::vector<bool> sample_zeroed;
    ForwardCache cache;
};

// Forward, per-sample losses and backward in one go. A cc_core failure is
// rethrown as NumericalFailure naming the sample index.
LossAndGrad loss_and_grad(const Network& net, const Tensor& batch, const std::vector<SimplexPoint>& targets,
                          const TrainConfig& config, Mode mode, Rng& rng);

// Adds wd * W_final to the final-layer gradient.
void add_weight_decay(const Network& net, std::vector<Tensor>& grads, double weight_decay);

class Optimizer {
public:
    Optimizer(const Network& net, const TrainConfig& config);
    void step(Network& net, const std::vector<Tensor>& grads);

private:
    OptimizerKind kind_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Training targets for hard labels under the config's smoothing.
std::vector<SimplexPoint> make_targets(const std::vector<std::size_t>& labels, std::size_t K,
                                       const TrainConfig& config, Rng* rng = nullptr);

std::size_t argmax(std::span<const double> v);
double accuracy(const Network& net, const Tensor& x, const std::vector<std::size_t>& y);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
};

struct TrainResult {
    Network net;
    // Metrics of the untrained net (epoch 0).
    EpochMetrics initial;
    std::vector<EpochMetrics> epochs;
};

// Eval-mode metrics. train_loss is the batch-mean data loss over the whole
// training split with the config's (deterministic, centroid-u) targets.
EpochMetrics evaluate_metrics(const Network& net, const Dataset& data, const TrainConfig& config, std::size_t epoch);

// Deterministic given config.seed. Non-finite loss throws NumericalFailure
// with the epoch, batch and last finite metrics.
TrainResult train(Network net, const Dataset& data, const TrainConfig& config);

// epoch,train_loss,train_acc,test_acc; epoch 0 is the untrained net.
void write_metrics_csv(std::ostream& os, const TrainResult& result);

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    // Samples whose CC gradient was zeroed: analytic and numeric gradients
    // differ there by design, so a large error is expected, not a failure.
    std::size_t zeroed_samples = 0;
    bool flagged() const { return zeroed_samples > 0; }
};

inline constexpr double kGradcheckFloor = 1e-6;

// Central differences on every parameter entry in train mode with a fixed
// dropout mask. Relative error |a - n| / max(|a|, |n|, kGradcheckFloor).
GradcheckResult gradcheck(const Network& net, const Tensor& batch, const std::vector<SimplexPoint>& targets,
                          const TrainConfig& config, double step = 1e-5, std::uint64_t mask_seed = 0);

} // namespace ccdist
