#pragma once

// Small feed-forward classifier: dense, nonlinearity, dropout and batchnorm
// layers, always ending in dense(K) -> softmax.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ccdist/rng.hpp"
#include "ccdist/simplex.hpp"
#include "ccdist/tensor.hpp"

namespace ccdist {

enum class LayerKind { Dense, Activation, Dropout, BatchNorm };
enum class ActivationKind { Relu, Tanh };
enum class Mode { Train, Eval };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t width = 0;
    ActivationKind activation = ActivationKind::Relu;
    double rate = 0.0;

    static LayerSpec dense(std::size_t width) { return {LayerKind::Dense, width, {}, 0.0}; }
    static LayerSpec nonlinearity(ActivationKind a) { return {LayerKind::Activation, 0, a, 0.0}; }
    static LayerSpec dropout(double rate) { return {LayerKind::Dropout, 0, {}, rate}; }
    static LayerSpec batchnorm() { return {LayerKind::BatchNorm, 0, {}, 0.0}; }
};

// The last layer must be dense(output_dim); the softmax head is implicit.
struct NetworkSpec {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<LayerSpec> layers;

    void validate() const;
};

struct DefaultNetOptions {
    std::size_t hidden = 64;
    ActivationKind activation = ActivationKind::Relu;
    bool dropout_on = false;
    double dropout_rate = 0.2;
    bool batchnorm_on = false;
};

// dense(h) -> act -> [dropout] -> [batchnorm] -> dense(h) -> act -> dense(K).
NetworkSpec default_network_spec(std::size_t input_dim, std::size_t K, const DefaultNetOptions& options = {});

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

class Network {
public:
    // Weights ~ N(0, 1/fan_in), biases zero, batchnorm gamma=1 beta=0.
    Network(NetworkSpec spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }

    // Trainable tensors in layer order: dense W (in x out) then b; batchnorm
    // gamma then beta.
    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    const std::vector<std::string>& parameter_names() const { return names_; }

    // Index into parameters() of the final dense weight matrix (d' x K).
    std::size_t final_weight_index() const { return final_weight_; }
    std::size_t final_bias_index() const { return final_weight_ + 1; }

    // First parameter index owned by each layer (unused for parameter-free layers).
    std::size_t param_offset(std::size_t layer) const { return offsets_[layer]; }

    // Running batchnorm statistics per layer (empty for other layers).
    std::vector<std::vector<double>>& running_mean() { return running_mean_; }
    std::vector<std::vector<double>>& running_var() { return running_var_; }
    const std::vector<std::vector<double>>& running_mean() const { return running_mean_; }
    const std::vector<std::vector<double>>& running_var() const { return running_var_; }

    void zero_final_layer();

private:
    NetworkSpec spec_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    std::vector<std::size_t> offsets_;
    std::vector<std::vector<double>> running_mean_;
    std::vector<std::vector<double>> running_var_;
    std::size_t final_weight_ = 0;
};

// Everything backward() needs from one forward pass.
struct ForwardCache {
    Mode mode = Mode::Eval;
    // inputs[l] is the input of layer l; inputs.back() is the logits.
    std::vector<Tensor> inputs;
    // Dropout keep masks (already scaled by 1/(1-rate)) or batchnorm x-hat.
    std::vector<Tensor> aux;
    // Batchnorm 1/sqrt(var + eps) and batch means, per feature.
    std::vector<std::vector<double>> inv_std;
    std::vector<std::vector<double>> batch_mean;
    std::vector<std::vector<double>> batch_var;

    const Tensor& logits() const { return inputs.back(); }
    // Input of the final dense layer.
    const Tensor& penultimate() const { return inputs[inputs.size() - 2]; }
};

struct ForwardResult {
    std::vector<PositiveComposition> outputs;
    ForwardCache cache;
};

// Pure: running statistics are not touched (see commit_batch_statistics).
// rng is only drawn from for dropout in train mode.
ForwardResult forward(const Network& net, const Tensor& batch, Mode mode, Rng& rng);

// Eval-mode forward without an rng.
std::vector<PositiveComposition> predict(const Network& net, const Tensor& batch);

// Gradients w.r.t. parameters() given d loss / d logits.
std::vector<Tensor> backward(const Network& net, const ForwardCache& cache, const Tensor& dlogits);

// Fold a train-mode pass's batch statistics into the running averages.
void commit_batch_statistics(Network& net, const ForwardCache& cache);

} // namespace ccdist
