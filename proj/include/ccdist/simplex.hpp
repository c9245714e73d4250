#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ccdist/rng.hpp"

namespace ccdist {

inline constexpr double kSimplexSumTolerance = 1e-9;
inline constexpr double kPositiveFloor = 1e-300;

// A point of the probability simplex: K >= 2 non-negative entries summing to
// one within kSimplexSumTolerance.
class SimplexPoint {
public:
    explicit SimplexPoint(std::vector<double> values);

    static SimplexPoint vertex(std::size_t k, std::size_t K);
    static SimplexPoint centroid(std::size_t K);

    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t k) const { return values_[k]; }
    std::span<const double> values() const { return values_; }

    friend bool operator==(const SimplexPoint&, const SimplexPoint&) = default;

private:
    std::vector<double> values_;
};

// Strictly positive K-vector with cached natural logs. Need not sum to one.
class PositiveComposition {
public:
    // Entries must be finite and >= kPositiveFloor.
    explicit PositiveComposition(std::vector<double> values);

    // Builds from log-values; the logs are kept verbatim, which matters for
    // softmax outputs whose exponentials may underflow.
    static PositiveComposition from_logs(std::vector<double> log_values);

    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t k) const { return values_[k]; }
    std::span<const double> values() const { return values_; }
    std::span<const double> log_values() const { return log_values_; }

private:
    PositiveComposition() = default;

    std::vector<double> values_;
    std::vector<double> log_values_;
};

struct OneHotLabel {
    OneHotLabel(std::size_t class_index, std::size_t K);

    std::size_t class_index;
    std::size_t K;

    SimplexPoint vector() const { return SimplexPoint::vertex(class_index, K); }
};

// (1 - epsilon) * e_k + epsilon * u, with u the centroid unless given.
SimplexPoint smooth_labels(const OneHotLabel& y, double epsilon,
                           const std::optional<SimplexPoint>& u = std::nullopt);

// Max-shifted softmax; log_values are the log-softmax.
PositiveComposition softmax(std::span<const double> logits);

// Uniform draw on the simplex from normalized standard-exponential spacings.
SimplexPoint sample_uniform_simplex(std::size_t K, Rng& rng);

// Clip entries below `floor` up to `floor` and rescale the rest so the result
// still sums to one. Returns the input unchanged if nothing was below floor.
PositiveComposition project_to_positive(const SimplexPoint& p, double floor);

} // namespace ccdist
