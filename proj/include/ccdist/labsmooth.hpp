#pragma once

// Label-smoothing laboratory: synthetic blobs, the regularizer x loss ablation
// grid, and the template-plane representation analysis.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ccdist/minitrain.hpp"

namespace ccdist {

struct BlobsSpec {
    std::size_t K = 5;
    std::size_t d = 10;
    std::size_t n_per_class = 1000;
    // Pairwise distance between class means (exact when d >= K).
    double separation = 3.0;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Isotropic Gaussian clusters; stratified 80/20 train/test split, rows grouped
// by class.
Dataset make_blobs(const BlobsSpec& spec);

enum class LossColumn { Baseline, LS, CCLS };

std::string to_string(LossColumn c);

struct AblationCell {
    bool dropout_on = false;
    bool weight_decay_on = false;
    bool batchnorm_on = false;
    LossColumn column = LossColumn::Baseline;
    std::size_t replicates = 3;

    // "dropout+wd+bn" style, "none" when all are off.
    std::string regularizers() const;
};

// The 8 regularizer combinations in table order (dropout, wd, bn):
// YYY NYY YNY NNY YYN NYN YNN NNN.
std::vector<std::array<bool, 3>> regularizer_combinations();

// 8 combinations x {baseline, LS, CC-LS}, combination-major.
std::vector<AblationCell> default_grid(std::size_t replicates = 3);

struct AblationOptions {
    double epsilon = 0.1;
    // Used by cells with weight_decay_on.
    double weight_decay = 1e-4;
    double dropout_rate = 0.2;
    std::size_t hidden = 64;
    std::size_t threads = 1;
};

struct RunRecord {
    std::size_t cell = 0;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double initial_train_loss = 0.0;
    double final_train_loss = 0.0;
    double final_train_acc = 0.0;
    double final_test_acc = 0.0;
};

struct CellResult {
    AblationCell cell;
    std::size_t completed = 0;
    // Mean and sample standard deviation of final test accuracy over
    // completed replicates; failed when none completed.
    double mean_test_acc = 0.0;
    double sd_test_acc = 0.0;
    bool failed() const { return completed == 0; }
};

struct AblationResult {
    std::vector<CellResult> cells;
    std::vector<RunRecord> runs;
};

// Seed of a run; independent of the loss column so every column of a row
// starts from the same initialization and batch order.
std::uint64_t ablation_seed(std::uint64_t base_seed, const AblationCell& cell, std::size_t replicate);

// base_config supplies optimizer, learning rate, batch size, epochs and seed;
// the cell sets loss, smoothing and regularizers. Runs are spread over
// options.threads; results do not depend on scheduling.
AblationResult run_ablation(const BlobsSpec& spec, const std::vector<AblationCell>& grid, const TrainConfig& base_config,
                            const AblationOptions& options = {});

// Cell config as run_ablation builds it.
TrainConfig cell_config(const AblationCell& cell, const TrainConfig& base_config, const AblationOptions& options);

// regularizers,baseline_mean,baseline_sd,ls_mean,ls_sd,ccls_mean,ccls_sd
// One row per regularizer combination present in the grid; failed cells print "failed".
void write_ablation_csv(std::ostream& os, const AblationResult& result);

// regularizers,column,replicate,seed,status,initial_train_loss,final_train_loss,final_train_acc,final_test_acc
void write_runs_csv(std::ostream& os, const AblationResult& result);

using Vec = std::vector<double>;

// Columns of the final dense weight matrix: w_k for k = 0..K-1.
std::vector<Vec> template_vectors(const Network& net);

inline constexpr double kCollinearTolerance = 1e-8;

// Gram-Schmidt on {w_b - w_a, w_c - w_a}. Throws InvalidArgument when the
// differences are parallel within kCollinearTolerance (relative).
std::array<Vec, 2> plane_basis(const Vec& w_a, const Vec& w_b, const Vec& w_c);

struct ProjectedPoint {
    std::size_t cls = 0;
    double x = 0.0;
    double y = 0.0;
};

struct RepresentationReport {
    std::array<std::size_t, 3> class_triple{};
    std::array<Vec, 2> basis;
    Vec anchor;
    std::vector<ProjectedPoint> train;
    std::vector<ProjectedPoint> test;
    double wcss_bcss_train = 0.0;
    double wcss_bcss_test = 0.0;
};

// Penultimate activations of n_per_class random samples per class and split,
// minus w_a, in the plane_basis coordinates of the triple's templates.
RepresentationReport project_representation(const Network& net, const Dataset& data,
                                            std::array<std::size_t, 3> class_triple, std::size_t n_per_class = 200,
                                            std::uint64_t seed = 0);

// split,class,x,y
void write_representation_csv(std::ostream& os, const RepresentationReport& report);

// Within-cluster over between-cluster sum of squares of 2-D points.
double wcss_bcss(const std::vector<ProjectedPoint>& points);

struct ClusterGeometry {
    double min_centroid_distance = 0.0;
    // Mean over clusters of the mean distance to the own centroid.
    double mean_within_radius = 0.0;
};
ClusterGeometry cluster_geometry(const std::vector<ProjectedPoint>& points);

} // namespace ccdist
