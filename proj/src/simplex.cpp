#include "ccdist/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ccdist/errors.hpp"

namespace ccdist {

SimplexPoint::SimplexPoint(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) {
        throw InvalidArgument("simplex point needs K >= 2, got " + std::to_string(values_.size()));
    }
    double sum = 0.0;
    for (double v : values_) {
        if (!std::isfinite(v) || v < 0.0) {
            throw InvalidArgument("simplex point entries must be finite and non-negative");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSimplexSumTolerance) {
        throw InvalidArgument("simplex point entries sum to " + std::to_string(sum) + ", not 1");
    }
}

SimplexPoint SimplexPoint::vertex(std::size_t k, std::size_t K) {
    if (k >= K) {
        throw InvalidArgument("vertex index out of range");
    }
    std::vector<double> v(K, 0.0);
    v[k] = 1.0;
    return SimplexPoint(std::move(v));
}

SimplexPoint SimplexPoint::centroid(std::size_t K) {
    return SimplexPoint(std::vector<double>(K, 1.0 / static_cast<double>(K)));
}

PositiveComposition::PositiveComposition(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) {
        throw InvalidArgument("composition needs K >= 2");
    }
    log_values_.reserve(values_.size());
    for (double v : values_) {
        if (!std::isfinite(v) || !(v >= kPositiveFloor)) {
            throw InvalidArgument("composition entries must be finite and strictly positive");
        }
        log_values_.push_back(std::log(v));
    }
}

PositiveComposition PositiveComposition::from_logs(std::vector<double> log_values) {
    if (log_values.size() < 2) {
        throw InvalidArgument("composition needs K >= 2");
    }
    PositiveComposition out;
    out.values_.reserve(log_values.size());
    for (double l : log_values) {
        if (!std::isfinite(l)) {
            throw InvalidArgument("composition log-values must be finite");
        }
        out.values_.push_back(std::exp(l));
    }
    out.log_values_ = std::move(log_values);
    return out;
}

OneHotLabel::OneHotLabel(std::size_t class_index_, std::size_t K_) : class_index(class_index_), K(K_) {
    if (K < 2 || class_index >= K) {
        throw InvalidArgument("one-hot label needs K >= 2 and class index < K");
    }
}

SimplexPoint smooth_labels(const OneHotLabel& y, double epsilon, const std::optional<SimplexPoint>& u) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw InvalidArgument("smoothing epsilon must lie in [0, 1]");
    }
    if (u && u->size() != y.K) {
        throw DimensionMismatch("smoothing vector has K=" + std::to_string(u->size()) +
                                " but label has K=" + std::to_string(y.K));
    }
    const double uniform = 1.0 / static_cast<double>(y.K);
    std::vector<double> out(y.K);
    for (std::size_t k = 0; k < y.K; ++k) {
        const double uk = u ? (*u)[k] : uniform;
        out[k] = epsilon * uk + (k == y.class_index ? 1.0 - epsilon : 0.0);
    }
    return SimplexPoint(std::move(out));
}

PositiveComposition softmax(std::span<const double> logits) {
    if (logits.size() < 2) {
        throw InvalidArgument("softmax needs at least two logits");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double x : logits) {
        if (!std::isfinite(x)) {
            throw InvalidArgument("softmax logits must be finite");
        }
        max_logit = std::max(max_logit, x);
    }
    double sum = 0.0;
    for (double x : logits) {
        sum += std::exp(x - max_logit);
    }
    const double log_sum = std::log(sum);
    std::vector<double> logs(logits.size());
    std::transform(logits.begin(), logits.end(), logs.begin(),
                   [&](double x) { return (x - max_logit) - log_sum; });
    return PositiveComposition::from_logs(std::move(logs));
}

SimplexPoint sample_uniform_simplex(std::size_t K, Rng& rng) {
    if (K < 2) {
        throw InvalidArgument("uniform simplex sampling needs K >= 2");
    }
    std::exponential_distribution<double> expo(1.0);
    std::vector<double> v(K);
    double total = 0.0;
    for (auto& x : v) {
        x = expo(rng);
        total += x;
    }
    for (auto& x : v) {
        x /= total;
    }
    return SimplexPoint(std::move(v));
}

PositiveComposition project_to_positive(const SimplexPoint& p, double floor) {
    const std::size_t K = p.size();
    if (!(floor > 0.0) || floor * static_cast<double>(K) >= 1.0) {
        throw InvalidArgument("projection floor must satisfy 0 < floor and floor * K < 1");
    }
    std::vector<double> v(p.values().begin(), p.values().end());
    if (std::all_of(v.begin(), v.end(), [&](double x) { return x >= floor; })) {
        return PositiveComposition(std::move(v));
    }
    // Entries pinned at the floor stay there; the free entries share the
    // remaining mass proportionally. Rescaling can push a free entry under the
    // floor, so repeat until the pinned set is stable (at most K rounds).
    std::vector<bool> pinned(K, false);
    for (std::size_t round = 0; round < K; ++round) {
        bool changed = false;
        std::size_t n_pinned = 0;
        double free_mass = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            if (!pinned[k] && v[k] < floor) {
                pinned[k] = true;
                changed = true;
            }
            if (pinned[k]) {
                ++n_pinned;
            } else {
                free_mass += v[k];
            }
        }
        if (!changed) {
            break;
        }
        const double scale = (1.0 - floor * static_cast<double>(n_pinned)) / free_mass;
        for (std::size_t k = 0; k < K; ++k) {
            v[k] = pinned[k] ? floor : v[k] * scale;
        }
    }
    return PositiveComposition(std::move(v));
}

} // namespace ccdist
