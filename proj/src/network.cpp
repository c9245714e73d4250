#include "ccdist/network.hpp"

#include <cmath>
#include <string>

#include "ccdist/errors.hpp"

namespace ccdist {

namespace {

// out[n x o] = x[n x i] * w[i x o] + b
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
    Tensor y({n, out});
    for (std::size_t r = 0; r < n; ++r) {
        double* yr = y.row(r).data();
        for (std::size_t o = 0; o < out; ++o) {
            yr[o] = b.data()[o];
        }
        const double* xr = x.row(r).data();
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = xr[i];
            if (xi == 0.0) {
                continue;
            }
            const double* wi = w.row(i).data();
            for (std::size_t o = 0; o < out; ++o) {
                yr[o] += xi * wi[o];
            }
        }
    }
    return y;
}

std::size_t width_after(const NetworkSpec& spec, std::size_t layer) {
    std::size_t w = spec.input_dim;
    for (std::size_t l = 0; l <= layer; ++l) {
        if (spec.layers[l].kind == LayerKind::Dense) {
            w = spec.layers[l].width;
        }
    }
    return w;
}

std::size_t width_before(const NetworkSpec& spec, std::size_t layer) {
    return layer == 0 ? spec.input_dim : width_after(spec, layer - 1);
}

} // namespace

void NetworkSpec::validate() const {
    if (input_dim == 0) {
        throw InvalidArgument("network input_dim must be positive");
    }
    if (output_dim < 2) {
        throw InvalidArgument("network output_dim must be at least 2");
    }
    if (layers.empty() || layers.back().kind != LayerKind::Dense || layers.back().width != output_dim) {
        throw InvalidArgument("network must end in dense(output_dim)");
    }
    for (const auto& l : layers) {
        if (l.kind == LayerKind::Dense && l.width == 0) {
            throw InvalidArgument("dense width must be positive");
        }
        if (l.kind == LayerKind::Dropout && !(l.rate >= 0.0 && l.rate < 1.0)) {
            throw InvalidArgument("dropout rate must be in [0, 1)");
        }
    }
}

NetworkSpec default_network_spec(std::size_t input_dim, std::size_t K, const DefaultNetOptions& o) {
    NetworkSpec s;
    s.input_dim = input_dim;
    s.output_dim = K;
    s.layers.push_back(LayerSpec::dense(o.hidden));
    s.layers.push_back(LayerSpec::nonlinearity(o.activation));
    if (o.dropout_on) {
        s.layers.push_back(LayerSpec::dropout(o.dropout_rate));
    }
    if (o.batchnorm_on) {
        s.layers.push_back(LayerSpec::batchnorm());
    }
    s.layers.push_back(LayerSpec::dense(o.hidden));
    s.layers.push_back(LayerSpec::nonlinearity(o.activation));
    s.layers.push_back(LayerSpec::dense(K));
    return s;
}

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t L = spec_.layers.size();
    offsets_.assign(L, 0);
    running_mean_.assign(L, {});
    running_var_.assign(L, {});
    for (std::size_t l = 0; l < L; ++l) {
        const auto& layer = spec_.layers[l];
        const std::size_t in = width_before(spec_, l);
        offsets_[l] = params_.size();
        const std::string tag = "layer" + std::to_string(l);
        if (layer.kind == LayerKind::Dense) {
            Tensor w({in, layer.width});
            const double sd = 1.0 / std::sqrt(static_cast<double>(in));
            for (double& v : w.data()) {
                v = sd * normal(rng);
            }
            final_weight_ = params_.size();
            params_.push_back(std::move(w));
            params_.emplace_back(std::vector<std::size_t>{layer.width}, 0.0);
            names_.push_back(tag + ".W");
            names_.push_back(tag + ".b");
        } else if (layer.kind == LayerKind::BatchNorm) {
            params_.emplace_back(std::vector<std::size_t>{in}, 1.0);
            params_.emplace_back(std::vector<std::size_t>{in}, 0.0);
            names_.push_back(tag + ".gamma");
            names_.push_back(tag + ".beta");
            running_mean_[l].assign(in, 0.0);
            running_var_[l].assign(in, 1.0);
        }
    }
}

void Network::zero_final_layer() {
    for (double& v : params_[final_weight_].data()) {
        v = 0.0;
    }
    for (double& v : params_[final_weight_ + 1].data()) {
        v = 0.0;
    }
}

ForwardResult forward(const Network& net, const Tensor& batch, Mode mode, Rng& rng) {
    const auto& spec = net.spec();
    if (batch.shape().size() != 2 || batch.cols() != spec.input_dim) {
        throw DimensionMismatch("batch feature dimension " + std::to_string(batch.cols()) +
                                " does not match network input_dim " + std::to_string(spec.input_dim));
    }
    const std::size_t L = spec.layers.size();
    const std::size_t n = batch.rows();
    ForwardResult res;
    auto& c = res.cache;
    c.mode = mode;
    c.inputs.reserve(L + 1);
    c.inputs.push_back(batch);
    c.aux.assign(L, Tensor());
    c.inv_std.assign(L, {});
    c.batch_mean.assign(L, {});
    c.batch_var.assign(L, {});
    const auto& P = net.parameters();
    for (std::size_t l = 0; l < L; ++l) {
        const auto& layer = spec.layers[l];
        const Tensor& x = c.inputs.back();
        Tensor y;
        switch (layer.kind) {
        case LayerKind::Dense: {
            const std::size_t p = net.param_offset(l);
            y = affine(x, P[p], P[p + 1]);
            break;
        }
        case LayerKind::Activation:
            y = x;
            for (double& v : y.data()) {
                v = layer.activation == ActivationKind::Relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
            }
            break;
        case LayerKind::Dropout:
            y = x;
            if (mode == Mode::Train && layer.rate > 0.0) {
                Tensor mask(x.shape());
                const double keep_scale = 1.0 / (1.0 - layer.rate);
                for (std::size_t i = 0; i < mask.size(); ++i) {
                    mask.data()[i] = uniform01(rng) < layer.rate ? 0.0 : keep_scale;
                    y.data()[i] *= mask.data()[i];
                }
                c.aux[l] = std::move(mask);
            }
            break;
        case LayerKind::BatchNorm: {
            const std::size_t d = x.cols();
            const std::size_t p = net.param_offset(l);
            const auto& gamma = P[p].data();
            const auto& beta = P[p + 1].data();
            std::vector<double> mean(d, 0.0), var(d, 0.0);
            if (mode == Mode::Train) {
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        mean[j] += x.at(r, j);
                    }
                }
                for (double& m : mean) {
                    m /= static_cast<double>(n);
                }
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dx = x.at(r, j) - mean[j];
                        var[j] += dx * dx;
                    }
                }
                for (double& v : var) {
                    v /= static_cast<double>(n);
                }
            } else {
                mean = net.running_mean()[l];
                var = net.running_var()[l];
            }
            std::vector<double> inv(d);
            for (std::size_t j = 0; j < d; ++j) {
                inv[j] = 1.0 / std::sqrt(var[j] + kBatchNormEpsilon);
            }
            Tensor xhat(x.shape());
            y = Tensor(x.shape());
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < d; ++j) {
                    const double h = (x.at(r, j) - mean[j]) * inv[j];
                    xhat.at(r, j) = h;
                    y.at(r, j) = gamma[j] * h + beta[j];
                }
            }
            c.aux[l] = std::move(xhat);
            c.inv_std[l] = std::move(inv);
            c.batch_mean[l] = std::move(mean);
            c.batch_var[l] = std::move(var);
            break;
        }
        }
        c.inputs.push_back(std::move(y));
    }
    const Tensor& logits = c.inputs.back();
    res.outputs.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        res.outputs.push_back(softmax(logits.row(r)));
    }
    return res;
}

std::vector<PositiveComposition> predict(const Network& net, const Tensor& batch) {
    Rng unused(0);
    return forward(net, batch, Mode::Eval, unused).outputs;
}

std::vector<Tensor> backward(const Network& net, const ForwardCache& cache, const Tensor& dlogits) {
    const auto& spec = net.spec();
    const auto& P = net.parameters();
    const std::size_t L = spec.layers.size();
    if (dlogits.shape() != cache.logits().shape()) {
        throw DimensionMismatch("dlogits shape does not match the forward pass");
    }
    std::vector<Tensor> grads;
    grads.reserve(P.size());
    for (const auto& p : P) {
        grads.emplace_back(p.shape(), 0.0);
    }
    Tensor g = dlogits;
    for (std::size_t l = L; l-- > 0;) {
        const auto& layer = spec.layers[l];
        const Tensor& x = cache.inputs[l];
        const std::size_t n = x.rows();
        switch (layer.kind) {
        case LayerKind::Dense: {
            const std::size_t p = net.param_offset(l);
            const Tensor& w = P[p];
            const std::size_t in = w.rows(), out = w.cols();
            Tensor& gw = grads[p];
            Tensor& gb = grads[p + 1];
            Tensor gx({n, in});
            for (std::size_t r = 0; r < n; ++r) {
                const double* gr = g.row(r).data();
                const double* xr = x.row(r).data();
                for (std::size_t o = 0; o < out; ++o) {
                    gb.data()[o] += gr[o];
                }
                double* gxr = gx.row(r).data();
                for (std::size_t i = 0; i < in; ++i) {
                    const double* wi = w.row(i).data();
                    double* gwi = gw.row(i).data();
                    const double xi = xr[i];
                    double acc = 0.0;
                    for (std::size_t o = 0; o < out; ++o) {
                        gwi[o] += xi * gr[o];
                        acc += wi[o] * gr[o];
                    }
                    gxr[i] = acc;
                }
            }
            g = std::move(gx);
            break;
        }
        case LayerKind::Activation: {
            const Tensor& y = cache.inputs[l + 1];
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (layer.activation == ActivationKind::Relu) {
                    g.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
                } else {
                    const double t = y.data()[i];
                    g.data()[i] *= 1.0 - t * t;
                }
            }
            break;
        }
        case LayerKind::Dropout:
            if (cache.aux[l].size() > 0) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g.data()[i] *= cache.aux[l].data()[i];
                }
            }
            break;
        case LayerKind::BatchNorm: {
            const std::size_t p = net.param_offset(l);
            const auto& gamma = P[p].data();
            const Tensor& xhat = cache.aux[l];
            const auto& inv = cache.inv_std[l];
            const std::size_t d = x.cols();
            std::vector<double> sum_g(d, 0.0), sum_gh(d, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < d; ++j) {
                    sum_g[j] += g.at(r, j);
                    sum_gh[j] += g.at(r, j) * xhat.at(r, j);
                }
            }
            for (std::size_t j = 0; j < d; ++j) {
                grads[p].data()[j] += sum_gh[j];
                grads[p + 1].data()[j] += sum_g[j];
            }
            const double nd = static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < d; ++j) {
                    double& v = g.at(r, j);
                    if (cache.mode == Mode::Train) {
                        v = gamma[j] * inv[j] * (v - sum_g[j] / nd - xhat.at(r, j) * sum_gh[j] / nd);
                    } else {
                        v = gamma[j] * inv[j] * v;
                    }
                }
            }
            break;
        }
        }
    }
    return grads;
}

void commit_batch_statistics(Network& net, const ForwardCache& cache) {
    if (cache.mode != Mode::Train) {
        return;
    }
    const auto& layers = net.spec().layers;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].kind != LayerKind::BatchNorm) {
            continue;
        }
        auto& rm = net.running_mean()[l];
        auto& rv = net.running_var()[l];
        const auto& bm = cache.batch_mean[l];
        const auto& bv = cache.batch_var[l];
        for (std::size_t j = 0; j < rm.size(); ++j) {
            rm[j] = (1.0 - kBatchNormMomentum) * rm[j] + kBatchNormMomentum * bm[j];
            rv[j] = (1.0 - kBatchNormMomentum) * rv[j] + kBatchNormMomentum * bv[j];
        }
    }
}

} // namespace ccdist
