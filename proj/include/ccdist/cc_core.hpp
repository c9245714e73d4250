#pragma once

// Continuous-categorical distribution on the simplex:
//
//   p(y; lambda) = C(lambda) * prod_k lambda_k^{y_k},
//   1 / C(lambda) = (-1)^{K+1} sum_k lambda_k / prod_{i != k} log(lambda_i / lambda_k),
//
// with the integral taken against the (K-1)-coordinate Lebesgue measure on the
// simplex (volume 1/(K-1)!). The closed form is a divided difference of exp
// and cancels badly when lambda is near uniform or K is large, so every
// evaluation reports an EvalDiagnostics.

#include <cstddef>
#include <span>
#include <vector>

#include "ccdist/rng.hpp"
#include "ccdist/simplex.hpp"

namespace ccdist {

struct CCConfig {
    // |eta_i - eta_k| below this counts as an exact tie.
    double tie_tolerance = 1e-12;
    // Symmetric offset (in log space) applied to members of a partially tied group.
    double tie_jitter = 1e-9;
    // near_centroid when max_k |p_k K - 1| < centroid_threshold, p = lambda / sum(lambda).
    double centroid_threshold = 1e-3;
    // Gradient of -log C is zeroed above this summation condition number.
    double condition_bound = 1e8;
    // Evaluations with K above this emit a one-time warning on stderr.
    std::size_t soft_max_K = 12;
    // sample_cc refuses parameters whose rejection acceptance rate is lower.
    double min_acceptance = 1e-4;
    // Accumulate the closed-form summands in long double; false uses plain
    // double, the precision a straightforward implementation gets.
    bool extended_precision = true;
};

class CCParams {
public:
    explicit CCParams(PositiveComposition lambda);
    explicit CCParams(std::vector<double> lambda);

    std::size_t K() const { return lambda_.size(); }
    const PositiveComposition& lambda() const { return lambda_; }
    std::span<const double> eta() const { return lambda_.log_values(); }

private:
    PositiveComposition lambda_;
};

// sign * exp(log_magnitude); log_magnitude == -inf encodes zero.
struct SignedLogTerm {
    int sign = 1;
    double log_magnitude = 0.0;

    double value() const;
};

struct EvalDiagnostics {
    double condition_number = 1.0;
    bool near_centroid = false;
    bool tie_adjusted = false;
    double min_log_ratio = 0.0;
};

// Summands lambda_k / prod_{i != k} (eta_i - eta_k) of the closed form, before
// the (-1)^{K+1} factor. Partial ties are jittered first; a full tie throws
// because every summand is singular there.
std::vector<SignedLogTerm> inv_norm_const_terms(const CCParams& params, const CCConfig& config = {});

struct LogNormConst {
    double log_c = 0.0;
    EvalDiagnostics diag;
};

// log C(lambda). Exact full ties return the analytic limit log((K-1)!) - eta.
// Throws NumericalFailure if the signed sum is not positive.
LogNormConst log_norm_const(const CCParams& params, const CCConfig& config = {});

// -log C(lambda) - sum_k y_k log lambda_k.
double cc_nll(const CCParams& params, const SimplexPoint& y, const CCConfig& config = {});

// Distribution mean E[y], equal to -d log C / d eta.
struct CCMean {
    std::vector<double> mean;
    EvalDiagnostics diag;
};
CCMean cc_mean(const CCParams& params, const CCConfig& config = {});

struct CCGradient {
    // d cc_nll / d eta.
    std::vector<double> gradient;
    EvalDiagnostics diag;
    // The -log C contribution was replaced by zero.
    bool zeroed = false;
};

// Closed-form gradient E[y] - y. Inside the unstable region (near_centroid, or
// condition number above config.condition_bound, or total cancellation) the
// E[y] part is dropped and the gradient is -y.
CCGradient grad_cc_nll(const CCParams& params, const SimplexPoint& y, const CCConfig& config = {});

// Exact draw by rejection from the uniform simplex.
SimplexPoint sample_cc(const CCParams& params, Rng& rng, const CCConfig& config = {});

// Numerically careful helpers shared with the oracle.
namespace detail {

// Neumaier-compensated sum over values sorted by descending magnitude.
template <typename Real>
Real compensated_sum(std::vector<Real> values);

bool is_near_centroid(std::span<const double> eta, double threshold);

double min_abs_gap(std::span<const double> eta);

} // namespace detail

} // namespace ccdist
