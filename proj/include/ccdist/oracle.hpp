#pragma once

// Brute-force checks for cc_core that share none of its closed-form code:
// Monte Carlo integration over the simplex, the K=2 integral, the uniform
// limit, importance-weighted moments, and a cancellation probe.

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ccdist/cc_core.hpp"
#include "ccdist/rng.hpp"

namespace ccdist::oracle {

inline constexpr std::size_t kMaxTrustedK = 6;
inline constexpr std::size_t kMinSamples = 10000;

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_samples = 0;
};

// Integral of prod_k lambda_k^{y_k} over the simplex w.r.t. the
// (K-1)-coordinate Lebesgue measure, i.e. 1 / C(lambda).
McEstimate mc_inv_norm_const(const CCParams& params, std::size_t n, Rng& rng);

// (lambda_1 - lambda_2) / log(lambda_1 / lambda_2), the K=2 value of 1/C.
double closed_form_K2(const CCParams& params);

// log K!, the value of log C at the centroid.
double uniform_limit_log_C(std::size_t K);

struct ImportanceOptions {
    std::size_t n = 1000000;
    double min_effective_sample_size = 1000.0;
};

// E[y] under the CC density by self-normalized importance sampling from the
// uniform simplex.
std::vector<McEstimate> importance_mean(const CCParams& params, Rng& rng, const ImportanceOptions& options = {});

struct PrecisionRow {
    std::size_t K = 0;
    std::string lambda_descriptor;
    double condition_number = 0.0;
    std::optional<double> oracle_rel_deviation;
};

struct ProbeOptions {
    std::size_t trials = 50;
    std::uint64_t seed = 0;
    // Monte Carlo samples for the K <= 6 deviation column; 0 disables it.
    std::size_t oracle_samples = 100000;
    // Max |lambda_k - 1/K| of the near-centroid row added per K.
    double near_centroid_deviation = 1e-4;
    std::size_t threads = 1;
    // The probe measures plain double evaluation unless told otherwise.
    CCConfig cc = [] {
        CCConfig c;
        c.extended_precision = false;
        return c;
    }();
};

// Rows sorted by (K, trial); the near-centroid row is last within each K.
std::vector<PrecisionRow> precision_probe(const std::vector<std::size_t>& K_values, const ProbeOptions& options);

void write_precision_csv(std::ostream& os, const std::vector<PrecisionRow>& rows);

// Median condition number per K, in the order the K values first appear.
std::vector<std::pair<std::size_t, double>> median_condition_by_K(const std::vector<PrecisionRow>& rows,
                                                                  bool random_rows_only = true);

struct AgreementOptions {
    std::size_t n_samples = 1000000;
    std::size_t K_min = 2;
    std::size_t K_max = kMaxTrustedK;
    std::size_t lambdas_per_K = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    double z_bound = 3.0;
    // Plain double, like the probe.
    CCConfig cc = [] {
        CCConfig c;
        c.extended_precision = false;
        return c;
    }();
};

// One closed form vs Monte Carlo comparison of 1/C.
struct AgreementRow {
    std::size_t K = 0;
    std::string case_id;
    double closed_form = 0.0;
    double mc_value = 0.0;
    double mc_std_error = 0.0;
    // (closed_form - mc_value) / mc_std_error; 0 when both agree to rounding.
    double z = 0.0;
    // "ok", "violation", or "warning:stderr-too-large" below kMinSamples.
    std::string status;
};

// lambdas_per_K uniform-simplex draws per K plus the exact centroid, whose
// closed form must also equal log K!. Rows ordered by (K, case).
std::vector<AgreementRow> agreement_suite(const AgreementOptions& options);
bool suite_passed(const std::vector<AgreementRow>& rows);

// K,case,closed_form,mc_value,mc_std_error,z,status
void write_agreement_csv(std::ostream& os, const std::vector<AgreementRow>& rows);

// lambda with max_k |lambda_k - 1/K| == deviation along a random zero-sum direction.
std::vector<double> near_centroid_lambda(std::size_t K, double deviation, Rng& rng);

} // namespace ccdist::oracle
