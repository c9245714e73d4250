#include "ccdist/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "ccdist/errors.hpp"
#include "ccdist/parallel.hpp"
#include "ccdist/simplex.hpp"

namespace ccdist::oracle {

namespace {

void check_trusted(std::size_t K) {
    if (K < 2 || K > kMaxTrustedK) {
        throw InvalidArgument("Monte Carlo oracle is only trusted for 2 <= K <= " + std::to_string(kMaxTrustedK) +
                              ", got K=" + std::to_string(K));
    }
}

// Uniform simplex draw into a reusable buffer (same construction as
// sample_uniform_simplex, without the per-draw allocation).
void draw_uniform(std::vector<double>& y, std::exponential_distribution<double>& expo, Rng& rng) {
    double total = 0.0;
    for (auto& v : y) {
        v = expo(rng);
        total += v;
    }
    for (auto& v : y) {
        v /= total;
    }
}

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

McEstimate mc_unchecked(const CCParams& params, std::size_t n, Rng& rng) {
    const std::size_t K = params.K();
    const auto eta = params.eta();
    const double max_eta = *std::max_element(eta.begin(), eta.end());
    std::vector<double> shifted(K);
    for (std::size_t k = 0; k < K; ++k) {
        shifted[k] = eta[k] - max_eta;
    }

    std::exponential_distribution<double> expo(1.0);
    std::vector<double> y(K);
    // Welford on the integrand scaled by exp(-max_eta).
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        draw_uniform(y, expo, rng);
        double exponent = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            exponent += y[k] * shifted[k];
        }
        const double g = std::exp(exponent);
        const double delta = g - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (g - mean);
    }
    const double sd = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
    // Uniform density on the simplex is (K-1)!, so the integral is E[f] / (K-1)!.
    const double scale = std::exp(max_eta - std::lgamma(static_cast<double>(K)));
    return McEstimate{mean * scale, sd / std::sqrt(static_cast<double>(n)) * scale, n};
}

} // namespace

McEstimate mc_inv_norm_const(const CCParams& params, std::size_t n, Rng& rng) {
    check_trusted(params.K());
    if (n < kMinSamples) {
        throw InvalidArgument("Monte Carlo oracle needs at least " + std::to_string(kMinSamples) + " samples");
    }
    return mc_unchecked(params, n, rng);
}

double closed_form_K2(const CCParams& params) {
    if (params.K() != 2) {
        throw InvalidArgument("closed_form_K2 needs K=2");
    }
    const auto& lambda = params.lambda();
    if (lambda[0] == lambda[1]) {
        throw InvalidArgument("closed_form_K2 is singular at an exact tie");
    }
    return (lambda[0] - lambda[1]) / std::log(lambda[0] / lambda[1]);
}

double uniform_limit_log_C(std::size_t K) {
    if (K < 2) {
        throw InvalidArgument("uniform limit needs K >= 2");
    }
    return std::lgamma(static_cast<double>(K) + 1.0);
}

std::vector<McEstimate> importance_mean(const CCParams& params, Rng& rng, const ImportanceOptions& options) {
    const std::size_t K = params.K();
    check_trusted(K);
    const auto eta = params.eta();
    const double max_eta = *std::max_element(eta.begin(), eta.end());

    std::exponential_distribution<double> expo(1.0);
    std::vector<double> y(K);
    double sum_w = 0.0;
    double sum_w2 = 0.0;
    std::vector<double> sum_wy(K, 0.0);
    std::vector<double> sum_w2y(K, 0.0);
    std::vector<double> sum_w2y2(K, 0.0);
    for (std::size_t i = 0; i < options.n; ++i) {
        draw_uniform(y, expo, rng);
        double exponent = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            exponent += y[k] * (eta[k] - max_eta);
        }
        const double w = std::exp(exponent);
        const double w2 = w * w;
        sum_w += w;
        sum_w2 += w2;
        for (std::size_t k = 0; k < K; ++k) {
            sum_wy[k] += w * y[k];
            sum_w2y[k] += w2 * y[k];
            sum_w2y2[k] += w2 * y[k] * y[k];
        }
    }
    const double ess = sum_w * sum_w / sum_w2;
    if (!(ess >= options.min_effective_sample_size)) {
        throw NumericalFailure("importance sampler effective sample size " + std::to_string(ess) +
                               " is below the configured floor");
    }
    std::vector<McEstimate> out(K);
    for (std::size_t k = 0; k < K; ++k) {
        const double m = sum_wy[k] / sum_w;
        // Delta-method variance of the ratio estimator.
        const double spread = std::max(0.0, sum_w2y2[k] - 2.0 * m * sum_w2y[k] + m * m * sum_w2);
        out[k] = McEstimate{m, std::sqrt(spread) / sum_w, options.n};
    }
    return out;
}

std::vector<double> near_centroid_lambda(std::size_t K, double deviation, Rng& rng) {
    std::normal_distribution<double> normal;
    std::vector<double> dir(K);
    double mean = 0.0;
    for (auto& d : dir) {
        d = normal(rng);
        mean += d;
    }
    mean /= static_cast<double>(K);
    double max_abs = 0.0;
    for (auto& d : dir) {
        d -= mean;
        max_abs = std::max(max_abs, std::abs(d));
    }
    std::vector<double> lambda(K);
    for (std::size_t k = 0; k < K; ++k) {
        lambda[k] = 1.0 / static_cast<double>(K) + deviation * dir[k] / max_abs;
    }
    return lambda;
}

std::vector<PrecisionRow> precision_probe(const std::vector<std::size_t>& K_values, const ProbeOptions& options) {
    if (options.trials < 1) {
        throw InvalidArgument("precision probe needs at least one trial");
    }
    struct Job {
        std::size_t K;
        std::size_t trial;  // == options.trials marks the near-centroid row
    };
    std::vector<Job> jobs;
    for (std::size_t K : K_values) {
        if (K < 2) {
            throw InvalidArgument("precision probe needs K >= 2");
        }
        for (std::size_t t = 0; t <= options.trials; ++t) {
            jobs.push_back({K, t});
        }
    }
    std::vector<PrecisionRow> rows(jobs.size());
    parallel_for(jobs.size(), options.threads, [&](std::size_t j) {
        const auto [K, trial] = jobs[j];
        Rng rng(derive_seed(options.seed, {K, trial}));
        PrecisionRow row;
        row.K = K;
        std::vector<double> lambda;
        if (trial < options.trials) {
            const auto p = sample_uniform_simplex(K, rng);
            lambda.assign(p.values().begin(), p.values().end());
            row.lambda_descriptor = "random:" + std::to_string(trial);
        } else {
            lambda = near_centroid_lambda(K, options.near_centroid_deviation, rng);
            char buf[48];
            std::snprintf(buf, sizeof buf, "near_centroid:%.0e", options.near_centroid_deviation);
            row.lambda_descriptor = buf;
        }
        // Uniform draws can underflow to exact zero for tiny entries.
        for (auto& v : lambda) {
            v = std::max(v, kPositiveFloor);
        }
        const CCParams params(lambda);
        std::optional<double> log_c;
        try {
            const auto r = log_norm_const(params, options.cc);
            row.condition_number = r.diag.condition_number;
            log_c = r.log_c;
        } catch (const NumericalFailure&) {
            row.condition_number = std::numeric_limits<double>::infinity();
        }
        if (K <= kMaxTrustedK && options.oracle_samples >= kMinSamples) {
            const auto mc = mc_inv_norm_const(params, options.oracle_samples, rng);
            row.oracle_rel_deviation =
                log_c ? std::abs(std::exp(-*log_c) - mc.value) / mc.value : std::numeric_limits<double>::infinity();
        }
        rows[j] = std::move(row);
    });
    return rows;
}

void write_precision_csv(std::ostream& os, const std::vector<PrecisionRow>& rows) {
    os << "K,lambda_descriptor,condition_number,oracle_rel_deviation\n";
    for (const auto& r : rows) {
        os << r.K << ',' << r.lambda_descriptor << ',' << format_double(r.condition_number) << ',';
        if (r.oracle_rel_deviation) {
            os << format_double(*r.oracle_rel_deviation);
        }
        os << '\n';
    }
}

std::vector<std::pair<std::size_t, double>> median_condition_by_K(const std::vector<PrecisionRow>& rows,
                                                                  bool random_rows_only) {
    std::vector<std::size_t> order;
    std::map<std::size_t, std::vector<double>> by_K;
    for (const auto& r : rows) {
        if (random_rows_only && r.lambda_descriptor.rfind("random:", 0) != 0) {
            continue;
        }
        if (!by_K.contains(r.K)) {
            order.push_back(r.K);
        }
        by_K[r.K].push_back(r.condition_number);
    }
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t K : order) {
        auto v = by_K[K];
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        const double median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        out.emplace_back(K, median);
    }
    return out;
}

std::vector<AgreementRow> agreement_suite(const AgreementOptions& options) {
    if (options.K_min < 2 || options.K_max > kMaxTrustedK || options.K_min > options.K_max) {
        throw InvalidArgument("agreement suite needs 2 <= K_min <= K_max <= " + std::to_string(kMaxTrustedK));
    }
    if (options.n_samples < 2) {
        throw InvalidArgument("agreement suite needs at least 2 samples");
    }
    struct Job {
        std::size_t K;
        std::size_t index;  // == lambdas_per_K marks the centroid
    };
    std::vector<Job> jobs;
    for (std::size_t K = options.K_min; K <= options.K_max; ++K) {
        for (std::size_t i = 0; i <= options.lambdas_per_K; ++i) {
            jobs.push_back({K, i});
        }
    }
    std::vector<AgreementRow> rows(jobs.size());
    parallel_for(jobs.size(), options.threads, [&](std::size_t j) {
        const auto [K, index] = jobs[j];
        Rng rng(derive_seed(options.seed, {K, index}));
        AgreementRow row;
        row.K = K;
        std::vector<double> lambda;
        const bool centroid = index == options.lambdas_per_K;
        if (centroid) {
            lambda.assign(K, 1.0 / static_cast<double>(K));
            row.case_id = "centroid";
        } else {
            const auto p = sample_uniform_simplex(K, rng);
            lambda.assign(p.values().begin(), p.values().end());
            for (auto& v : lambda) {
                v = std::max(v, kPositiveFloor);
            }
            row.case_id = "random:" + std::to_string(index);
        }
        const CCParams params(lambda);
        const auto lc = log_norm_const(params, options.cc);
        row.closed_form = std::exp(-lc.log_c);
        const auto mc = mc_unchecked(params, options.n_samples, rng);
        row.mc_value = mc.value;
        row.mc_std_error = mc.std_error;
        const double diff = row.closed_form - mc.value;
        // Constant integrands give a zero (or rounding-sized) stderr; agreement
        // to 1e-12 relative then counts as exact.
        const bool exact = std::abs(diff) <= 1e-12 * std::abs(row.closed_form);
        row.z = exact ? 0.0 : diff / mc.std_error;
        bool ok = std::abs(row.z) <= options.z_bound;
        if (centroid) {
            ok = ok && std::abs(lc.log_c - uniform_limit_log_C(K)) <= 1e-12 * uniform_limit_log_C(K);
        }
        if (options.n_samples < kMinSamples) {
            row.status = "warning:stderr-too-large";
        } else {
            row.status = ok ? "ok" : "violation";
        }
        rows[j] = std::move(row);
    });
    return rows;
}

bool suite_passed(const std::vector<AgreementRow>& rows) {
    return std::all_of(rows.begin(), rows.end(), [](const AgreementRow& r) { return r.status == "ok"; });
}

void write_agreement_csv(std::ostream& os, const std::vector<AgreementRow>& rows) {
    os << "K,case,closed_form,mc_value,mc_std_error,z,status\n";
    for (const auto& r : rows) {
        os << r.K << ',' << r.case_id << ',' << format_double(r.closed_form) << ',' << format_double(r.mc_value) << ','
           << format_double(r.mc_std_error) << ',' << format_double(r.z) << ',' << r.status << '\n';
    }
}

} // namespace ccdist::oracle
