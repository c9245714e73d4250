#include "ccdist/cc_core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>

#include "ccdist/errors.hpp"

namespace ccdist {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void warn_if_large(std::size_t K, const CCConfig& config) {
    static std::atomic<bool> warned{false};
    if (K > config.soft_max_K && !warned.exchange(true)) {
        std::cerr << "warning: continuous-categorical evaluation with K=" << K << " exceeds the soft cap of "
                  << config.soft_max_K
                  << "; the closed-form summands cancel beyond double precision as K grows\n";
    }
}

struct TieResolution {
    std::vector<double> eta;
    bool adjusted = false;
    bool full_tie = false;
};

TieResolution resolve_ties(std::span<const double> eta, const CCConfig& config) {
    const std::size_t K = eta.size();
    TieResolution out;
    out.eta.assign(eta.begin(), eta.end());

    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eta[a] < eta[b]; });

    std::size_t begin = 0;
    while (begin < K) {
        std::size_t end = begin + 1;
        while (end < K && eta[order[end]] - eta[order[end - 1]] < config.tie_tolerance) {
            ++end;
        }
        const std::size_t m = end - begin;
        if (m == K) {
            out.full_tie = true;
            out.adjusted = true;
            return out;
        }
        if (m > 1) {
            double mean = 0.0;
            for (std::size_t r = begin; r < end; ++r) {
                mean += eta[order[r]];
            }
            mean /= static_cast<double>(m);
            for (std::size_t r = begin; r < end; ++r) {
                const double offset = static_cast<double>(r - begin) - 0.5 * static_cast<double>(m - 1);
                out.eta[order[r]] = mean + offset * config.tie_jitter;
            }
            out.adjusted = true;
        }
        begin = end;
    }
    return out;
}

// Closed-form expansion in scaled form: the k-th summand of
// I = sum_k exp(eta_k) / prod_{i != k} (eta_k - eta_i) equals
// scaled[k] * exp(log_scale).
template <typename Real>
struct Expansion {
    TieResolution ties;
    std::vector<SignedLogTerm> raw_terms;  // without the (-1)^{K+1} factor
    std::vector<Real> scaled;
    Real log_scale = 0;
    Real sum = 0;
    Real abs_sum = 0;
    // Rounding-error bound of sum: each log-magnitude carries about
    // K * (1 + |log_mag|) * eps absolute error, which exp turns relative.
    Real noise = 0;
};

template <typename Real>
Expansion<Real> expand(std::span<const double> eta_in, const CCConfig& config) {
    const std::size_t K = eta_in.size();
    Expansion<Real> ex;
    ex.ties = resolve_ties(eta_in, config);
    if (ex.ties.full_tie) {
        return ex;
    }
    const auto& eta = ex.ties.eta;
    std::vector<Real> log_mag(K);
    std::vector<int> sign(K);
    for (std::size_t k = 0; k < K; ++k) {
        Real acc = eta[k];
        int negatives = 0;
        for (std::size_t i = 0; i < K; ++i) {
            if (i == k) {
                continue;
            }
            const Real d = static_cast<Real>(eta[i]) - static_cast<Real>(eta[k]);
            acc -= std::log(std::abs(d));
            negatives += d < 0 ? 1 : 0;
        }
        log_mag[k] = acc;
        sign[k] = negatives % 2 == 0 ? 1 : -1;
    }
    ex.raw_terms.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        ex.raw_terms[k] = SignedLogTerm{sign[k], static_cast<double>(log_mag[k])};
    }
    // (-1)^{K+1} == (-1)^{K-1}
    const int global_sign = (K % 2 == 1) ? 1 : -1;
    ex.log_scale = *std::max_element(log_mag.begin(), log_mag.end());
    ex.scaled.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        ex.scaled[k] = static_cast<Real>(global_sign * sign[k]) * std::exp(log_mag[k] - ex.log_scale);
        ex.abs_sum += std::abs(ex.scaled[k]);
    }
    ex.sum = detail::compensated_sum(ex.scaled);
    Real worst_log = 0;
    for (const Real l : log_mag) {
        worst_log = std::max(worst_log, std::abs(l));
    }
    ex.noise = ex.abs_sum * std::numeric_limits<Real>::epsilon() * static_cast<Real>(K) * (1 + worst_log);
    return ex;
}

template <typename Real>
EvalDiagnostics diagnose(std::span<const double> eta, const Expansion<Real>& ex, const CCConfig& config) {
    EvalDiagnostics d;
    d.near_centroid = detail::is_near_centroid(eta, config.centroid_threshold);
    d.tie_adjusted = ex.ties.adjusted;
    d.min_log_ratio = detail::min_abs_gap(eta);
    if (ex.ties.full_tie) {
        d.condition_number = 1.0;
    } else if (ex.sum > 0) {
        d.condition_number = std::max(1.0, static_cast<double>(ex.abs_sum / ex.sum));
    } else {
        d.condition_number = kInf;
    }
    return d;
}

double mean_eta(std::span<const double> eta) {
    return std::accumulate(eta.begin(), eta.end(), 0.0) / static_cast<double>(eta.size());
}

void check_dims(const CCParams& params, const SimplexPoint& y) {
    if (params.K() != y.size()) {
        throw DimensionMismatch("parameter has K=" + std::to_string(params.K()) + " but observation has K=" +
                                std::to_string(y.size()));
    }
}

// E[y_j] = (dI/d eta_j) / I, differentiating the closed form summand-wise.
template <typename Real>
std::vector<double> mean_from_expansion(const Expansion<Real>& ex) {
    const auto& eta = ex.ties.eta;
    const std::size_t K = eta.size();
    std::vector<double> mean(K);
    std::vector<Real> parts;
    parts.reserve(2 * K);
    for (std::size_t j = 0; j < K; ++j) {
        parts.clear();
        parts.push_back(ex.scaled[j]);
        for (std::size_t i = 0; i < K; ++i) {
            if (i == j) {
                continue;
            }
            const Real d = static_cast<Real>(eta[i]) - static_cast<Real>(eta[j]);
            // j-th summand through 1/(eta_j - eta_i), i-th summand through 1/(eta_i - eta_j)
            parts.push_back(ex.scaled[j] / d);
            parts.push_back(ex.scaled[i] / d);
        }
        mean[j] = static_cast<double>(detail::compensated_sum(parts) / ex.sum);
    }
    return mean;
}

// Result of one closed-form evaluation, independent of the accumulator type.
struct Evaluation {
    TieResolution ties;
    std::vector<SignedLogTerm> raw_terms;
    EvalDiagnostics diag;
    bool sum_positive = false;
    double log_inv_c = 0.0;          // log(1/C) when sum_positive
    std::vector<double> mean;        // filled when requested and sum_positive
};

template <typename Real>
Evaluation evaluate_as(std::span<const double> eta, const CCConfig& config, bool want_mean) {
    Expansion<Real> ex = expand<Real>(eta, config);
    Evaluation out;
    out.diag = diagnose(eta, ex, config);
    out.raw_terms = ex.raw_terms;
    // A sum inside its own error bound has no reliable sign.
    if (!ex.ties.full_tie && ex.sum > ex.noise) {
        out.sum_positive = true;
        out.log_inv_c = static_cast<double>(ex.log_scale + std::log(ex.sum));
        if (want_mean) {
            out.mean = mean_from_expansion(ex);
        }
    }
    out.ties = std::move(ex.ties);
    return out;
}

Evaluation evaluate(std::span<const double> eta, const CCConfig& config, bool want_mean) {
    return config.extended_precision ? evaluate_as<long double>(eta, config, want_mean)
                                     : evaluate_as<double>(eta, config, want_mean);
}

} // namespace

namespace detail {

template <typename Real>
Real compensated_sum(std::vector<Real> values) {
    std::sort(values.begin(), values.end(), [](Real a, Real b) { return std::abs(a) > std::abs(b); });
    Real sum = 0;
    Real carry = 0;
    for (Real v : values) {
        const Real t = sum + v;
        if (std::abs(sum) >= std::abs(v)) {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    return sum + carry;
}

template double compensated_sum<double>(std::vector<double>);
template long double compensated_sum<long double>(std::vector<long double>);

bool is_near_centroid(std::span<const double> eta, double threshold) {
    const double max_eta = *std::max_element(eta.begin(), eta.end());
    double total = 0.0;
    for (double e : eta) {
        total += std::exp(e - max_eta);
    }
    const double K = static_cast<double>(eta.size());
    double worst = 0.0;
    for (double e : eta) {
        worst = std::max(worst, std::abs(std::exp(e - max_eta) / total * K - 1.0));
    }
    return worst < threshold;
}

double min_abs_gap(std::span<const double> eta) {
    std::vector<double> sorted(eta.begin(), eta.end());
    std::sort(sorted.begin(), sorted.end());
    double gap = kInf;
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        gap = std::min(gap, sorted[i] - sorted[i - 1]);
    }
    return gap;
}

} // namespace detail

CCParams::CCParams(PositiveComposition lambda) : lambda_(std::move(lambda)) {}

CCParams::CCParams(std::vector<double> lambda) : lambda_(PositiveComposition(std::move(lambda))) {}

double SignedLogTerm::value() const {
    return sign * std::exp(log_magnitude);
}

std::vector<SignedLogTerm> inv_norm_const_terms(const CCParams& params, const CCConfig& config) {
    warn_if_large(params.K(), config);
    Evaluation ev = evaluate(params.eta(), config, false);
    if (ev.ties.full_tie) {
        throw InvalidArgument("all parameter entries are tied; use the uniform limit");
    }
    return ev.raw_terms;
}

LogNormConst log_norm_const(const CCParams& params, const CCConfig& config) {
    warn_if_large(params.K(), config);
    const auto eta = params.eta();
    const Evaluation ev = evaluate(eta, config, false);
    LogNormConst out;
    out.diag = ev.diag;
    if (ev.ties.full_tie) {
        out.log_c = std::lgamma(static_cast<double>(params.K())) - mean_eta(eta);
        return out;
    }
    if (!ev.sum_positive) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "normalizing-constant sum lost its sign to cancellation (K=%zu, min log-ratio %.3g, "
                      "condition number %.3g)",
                      params.K(), out.diag.min_log_ratio, out.diag.condition_number);
        throw NumericalFailure(buf);
    }
    out.log_c = -ev.log_inv_c;
    return out;
}

double cc_nll(const CCParams& params, const SimplexPoint& y, const CCConfig& config) {
    check_dims(params, y);
    const double log_c = log_norm_const(params, config).log_c;
    const auto eta = params.eta();
    double cross = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (y[k] != 0.0) {
            cross += y[k] * eta[k];
        }
    }
    return -log_c - cross;
}

CCMean cc_mean(const CCParams& params, const CCConfig& config) {
    warn_if_large(params.K(), config);
    Evaluation ev = evaluate(params.eta(), config, true);
    CCMean out;
    out.diag = ev.diag;
    if (ev.ties.full_tie) {
        out.mean.assign(params.K(), 1.0 / static_cast<double>(params.K()));
        return out;
    }
    if (!ev.sum_positive) {
        throw NumericalFailure("normalizing-constant sum lost its sign to cancellation");
    }
    out.mean = std::move(ev.mean);
    return out;
}

CCGradient grad_cc_nll(const CCParams& params, const SimplexPoint& y, const CCConfig& config) {
    check_dims(params, y);
    warn_if_large(params.K(), config);
    const Evaluation ev = evaluate(params.eta(), config, true);
    CCGradient out;
    out.diag = ev.diag;
    out.gradient.resize(params.K());
    const bool unstable = ev.ties.full_tie || !ev.sum_positive || out.diag.near_centroid ||
                          out.diag.condition_number > config.condition_bound;
    for (std::size_t k = 0; k < y.size(); ++k) {
        out.gradient[k] = (unstable ? 0.0 : ev.mean[k]) - y[k];
    }
    out.zeroed = unstable;
    return out;
}

SimplexPoint sample_cc(const CCParams& params, Rng& rng, const CCConfig& config) {
    const std::size_t K = params.K();
    const auto eta = params.eta();
    const double max_eta = *std::max_element(eta.begin(), eta.end());
    // Acceptance rate = (K-1)! * (1/C) * exp(-max eta). If log C itself is
    // unavailable the attempt budget below still bounds the work.
    double log_rate = 0.0;
    bool have_rate = false;
    try {
        log_rate = std::lgamma(static_cast<double>(K)) - log_norm_const(params, config).log_c - max_eta;
        have_rate = true;
    } catch (const NumericalFailure&) {
    }
    if (have_rate && log_rate < std::log(config.min_acceptance)) {
        throw NumericalFailure("rejection acceptance rate " + std::to_string(std::exp(log_rate)) +
                               " is below the configured minimum");
    }
    const auto max_attempts = static_cast<std::size_t>(std::ceil(100.0 / config.min_acceptance));
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        SimplexPoint proposal = sample_uniform_simplex(K, rng);
        double log_accept = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            log_accept += proposal[k] * (eta[k] - max_eta);
        }
        if (std::log(uniform01(rng)) < log_accept) {
            return proposal;
        }
    }
    throw NumericalFailure("rejection sampler exceeded its attempt budget");
}

} // namespace ccdist
