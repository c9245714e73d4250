#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ccdist/errors.hpp"
#include "ccdist/labsmooth.hpp"

using namespace ccdist;

namespace {

// 3x3 projection matrix P = e1 e1^T + e2 e2^T.
std::vector<double> projector(const std::array<Vec, 2>& b) {
    const std::size_t d = b[0].size();
    std::vector<double> P(d * d, 0.0);
    for (const auto& e : b) {
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                P[i * d + j] += e[i] * e[j];
            }
        }
    }
    return P;
}

// Network whose penultimate layer is the input itself: a single dense(K)
// layer, with the given template columns.
Network linear_net(std::size_t d, const std::vector<Vec>& templates) {
    NetworkSpec s;
    s.input_dim = d;
    s.output_dim = templates.size();
    s.layers = {LayerSpec::dense(templates.size())};
    Network net(s, 0);
    auto& w = net.parameters()[net.final_weight_index()];
    for (std::size_t k = 0; k < templates.size(); ++k) {
        for (std::size_t i = 0; i < d; ++i) {
            w.at(i, k) = templates[k][i];
        }
    }
    return net;
}

} // namespace

TEST(Blobs, DeterministicAndStratified) {
    BlobsSpec spec;
    spec.n_per_class = 50;
    spec.seed = 3;
    const auto a = make_blobs(spec);
    const auto b = make_blobs(spec);
    EXPECT_EQ(a.x_train, b.x_train);
    EXPECT_EQ(a.y_test, b.y_test);
    EXPECT_EQ(a.y_train.size(), 5u * 40u);
    EXPECT_EQ(a.y_test.size(), 5u * 10u);
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_EQ(std::count(a.y_test.begin(), a.y_test.end(), k), 10);
    }
    spec.K = 2;
    EXPECT_THROW(make_blobs(spec), InvalidArgument);
}

TEST(Blobs, WellSeparatedNearestCentroid) {
    BlobsSpec spec;
    spec.separation = 20.0;
    spec.n_per_class = 200;
    const auto data = make_blobs(spec);
    std::vector<Vec> centroid(spec.K, Vec(spec.d, 0.0));
    std::vector<double> count(spec.K, 0.0);
    for (std::size_t i = 0; i < data.y_train.size(); ++i) {
        for (std::size_t j = 0; j < spec.d; ++j) {
            centroid[data.y_train[i]][j] += data.x_train.at(i, j);
        }
        count[data.y_train[i]] += 1.0;
    }
    for (std::size_t k = 0; k < spec.K; ++k) {
        for (double& v : centroid[k]) {
            v /= count[k];
        }
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.y_test.size(); ++i) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t k = 0; k < spec.K; ++k) {
            double dist = 0.0;
            for (std::size_t j = 0; j < spec.d; ++j) {
                dist += std::pow(data.x_test.at(i, j) - centroid[k][j], 2);
            }
            if (dist < best_d) {
                best_d = dist;
                best = k;
            }
        }
        hits += best == data.y_test[i] ? 1 : 0;
    }
    EXPECT_GE(static_cast<double>(hits) / static_cast<double>(data.y_test.size()), 0.99);
}

TEST(Blobs, ZeroSeparationIsChance) {
    BlobsSpec spec;
    spec.separation = 0.0;
    spec.n_per_class = 200;
    const auto data = make_blobs(spec);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 1;
    const auto res = train(make_network(spec.d, spec.K, cfg, 16), data, cfg);
    EXPECT_NEAR(res.epochs.back().test_acc, 0.2, 0.1);
}

TEST(Grid, ShapeAndOrder) {
    const auto grid = default_grid(3);
    ASSERT_EQ(grid.size(), 24u);
    EXPECT_EQ(grid[0].regularizers(), "dropout+wd+bn");
    EXPECT_EQ(grid[3].regularizers(), "wd+bn");
    EXPECT_EQ(grid[21].regularizers(), "none");
    EXPECT_EQ(grid[2].column, LossColumn::CCLS);
    // Columns of one row share the seed.
    EXPECT_EQ(ablation_seed(7, grid[0], 1), ablation_seed(7, grid[2], 1));
    EXPECT_NE(ablation_seed(7, grid[0], 1), ablation_seed(7, grid[3], 1));
}

TEST(Ablation, SmallGridCsvAndDeterminism) {
    BlobsSpec spec;
    spec.n_per_class = 40;
    spec.seed = 2;
    TrainConfig base;
    base.epochs = 8;
    base.batch_size = 32;
    base.seed = 5;
    AblationOptions opts;
    opts.hidden = 16;
    opts.threads = 3;
    const auto grid = default_grid(2);
    const auto a = run_ablation(spec, grid, base, opts);
    opts.threads = 1;
    const auto b = run_ablation(spec, grid, base, opts);
    std::ostringstream sa, sb, ra, rb;
    write_ablation_csv(sa, a);
    write_ablation_csv(sb, b);
    write_runs_csv(ra, a);
    write_runs_csv(rb, b);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(ra.str(), rb.str());
    std::istringstream in(sa.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "regularizers,baseline_mean,baseline_sd,ls_mean,ls_sd,ccls_mean,ccls_sd");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
    }
    EXPECT_EQ(rows, 8u);
    for (const auto& r : a.runs) {
        EXPECT_TRUE(r.ok) << r.error;
        EXPECT_LT(r.final_train_loss, r.initial_train_loss);
    }
}

TEST(Ablation, LsWithZeroEpsilonIsBaseline) {
    BlobsSpec spec;
    spec.n_per_class = 30;
    TrainConfig base;
    base.epochs = 2;
    base.batch_size = 16;
    AblationOptions opts;
    opts.hidden = 8;
    opts.epsilon = 0.0;
    std::vector<AblationCell> grid = {{true, true, false, LossColumn::Baseline, 2},
                                      {true, true, false, LossColumn::LS, 2}};
    const auto res = run_ablation(spec, grid, base, opts);
    EXPECT_EQ(res.cells[0].mean_test_acc, res.cells[1].mean_test_acc);
    EXPECT_EQ(res.cells[0].sd_test_acc, res.cells[1].sd_test_acc);
    for (std::size_t r = 0; r < 2; ++r) {
        EXPECT_EQ(res.runs[r].final_train_loss, res.runs[2 + r].final_train_loss);
    }
    grid[0].replicates = 1;
    EXPECT_THROW(run_ablation(spec, grid, base, opts), InvalidArgument);
}

TEST(Templates, ReadOffFinalLayer) {
    const std::vector<Vec> id = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const auto t = template_vectors(linear_net(3, id));
    EXPECT_EQ(t, id);
    Network net(default_network_spec(4, 3), 1);
    net.zero_final_layer();
    for (const auto& w : template_vectors(net)) {
        EXPECT_EQ(w, Vec(64, 0.0));
    }
}

TEST(Templates, TrainedNetPrefersOwnClass) {
    BlobsSpec spec;
    spec.K = 3;
    spec.separation = 8.0;
    spec.n_per_class = 100;
    const auto data = make_blobs(spec);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    const auto res = train(make_network(spec.d, spec.K, cfg, 16), data, cfg);
    Rng unused(0);
    const auto fwd = forward(res.net, data.x_train, Mode::Eval, unused);
    std::vector<Vec> mean_logit(3, Vec(3, 0.0));
    for (std::size_t i = 0; i < data.y_train.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            mean_logit[data.y_train[i]][k] += fwd.cache.logits().at(i, k);
        }
    }
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(argmax(mean_logit[c]), c);
    }
}

TEST(PlaneBasis, Examples) {
    const auto b = plane_basis({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
    EXPECT_EQ(b[0], (Vec{1, 0, 0}));
    EXPECT_EQ(b[1], (Vec{0, 1, 0}));
    EXPECT_THROW(plane_basis({0, 0, 0}, {2, 2, 2}, {1, 1, 1}), InvalidArgument);
    EXPECT_THROW(plane_basis({0, 0}, {1, 0, 0}, {0, 1, 0}), DimensionMismatch);
}

TEST(PlaneBasis, OrthonormalAndOrderInvariant) {
    Rng rng(4);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<Vec, 3> w;
        for (auto& v : w) {
            v.resize(7);
            for (double& x : v) {
                x = normal(rng) * (trial % 2 ? 1e3 : 1.0);
            }
        }
        const auto b = plane_basis(w[0], w[1], w[2]);
        auto dot = [](const Vec& a, const Vec& c) { return std::inner_product(a.begin(), a.end(), c.begin(), 0.0); };
        EXPECT_NEAR(dot(b[0], b[0]), 1.0, 1e-10);
        EXPECT_NEAR(dot(b[1], b[1]), 1.0, 1e-10);
        EXPECT_NEAR(dot(b[0], b[1]), 0.0, 1e-10);
        const auto P = projector(b);
        const auto Q = projector(plane_basis(w[2], w[0], w[1]));
        for (std::size_t i = 0; i < P.size(); ++i) {
            EXPECT_NEAR(P[i], Q[i], 1e-9);
        }
    }
}

TEST(Wcss, HandFixtures) {
    EXPECT_EQ(wcss_bcss({{0, 0, 0}, {0, 0, 2}, {1, 10, 0}, {1, 10, 2}}), 0.04);
    EXPECT_EQ(wcss_bcss({{0, 1, 1}, {1, 2, 5}, {2, -3, 0}}), 0.0);
    EXPECT_THROW(wcss_bcss({{0, 1, 1}, {1, 1, 1}}), InvalidArgument);
    EXPECT_THROW(wcss_bcss({{0, 1, 1}, {0, 2, 1}}), InvalidArgument);
}

TEST(Wcss, RigidMotionInvariance) {
    Rng rng(6);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ProjectedPoint> pts;
        for (std::size_t i = 0; i < 30; ++i) {
            pts.push_back({i % 3, normal(rng) + 3.0 * static_cast<double>(i % 3), normal(rng)});
        }
        const double th = normal(rng), tx = 100 * normal(rng), ty = 100 * normal(rng);
        auto moved = pts;
        for (auto& p : moved) {
            const double x = p.x, y = p.y;
            p.x = std::cos(th) * x - std::sin(th) * y + tx;
            p.y = std::sin(th) * x + std::cos(th) * y + ty;
        }
        EXPECT_NEAR(wcss_bcss(pts), wcss_bcss(moved), 1e-9);
    }
}

TEST(Projection, IdentityFeatureMapTriangle) {
    // Penultimate = input; templates at triangle vertices in the z=0 plane,
    // blobs centered on the templates.
    const std::vector<Vec> tmpl = {{0, 0, 0}, {4, 0, 0}, {2, 3.5, 0}};
    const Network net = linear_net(3, tmpl);
    Rng rng(8);
    std::normal_distribution<double> normal(0.0, 0.1);
    Dataset data;
    data.K = 3;
    std::vector<double> xtr, xte;
    for (std::size_t i = 0; i < 300; ++i) {
        const std::size_t c = i % 3;
        auto& dst = i < 240 ? xtr : xte;
        for (std::size_t j = 0; j < 3; ++j) {
            dst.push_back(tmpl[c][j] + normal(rng));
        }
        (i < 240 ? data.y_train : data.y_test).push_back(c);
    }
    data.x_train = Tensor({240, 3}, xtr);
    data.x_test = Tensor({60, 3}, xte);
    const auto rep = project_representation(net, data, {0, 1, 2}, 20, 1);
    EXPECT_EQ(rep.train.size(), 60u);
    EXPECT_EQ(rep.test.size(), 60u);
    const auto g = cluster_geometry(rep.train);
    EXPECT_GT(g.min_centroid_distance, 10.0 * g.mean_within_radius);
    // In-plane scatter per cluster is 2 * 0.1^2 per point; between-cluster
    // scatter follows from the triangle.
    EXPECT_LT(rep.wcss_bcss_train, 0.01);
    EXPECT_GT(rep.wcss_bcss_train, 0.0);
    const auto again = project_representation(net, data, {0, 1, 2}, 20, 1);
    std::ostringstream a, b;
    write_representation_csv(a, rep);
    write_representation_csv(b, again);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_THROW(project_representation(net, data, {0, 1, 2}, 21, 1), InvalidArgument);
    EXPECT_THROW(project_representation(net, data, {0, 1, 1}, 5, 1), InvalidArgument);
}

TEST(Projection, IdenticalSamplesPerClassGiveZeroRatio) {
    const std::vector<Vec> tmpl = {{0, 0}, {1, 0}, {0, 1}};
    const Network net = linear_net(2, tmpl);
    Dataset data;
    data.K = 3;
    std::vector<double> x;
    for (std::size_t i = 0; i < 15; ++i) {
        x.insert(x.end(), tmpl[i % 3].begin(), tmpl[i % 3].end());
        data.y_train.push_back(i % 3);
        data.y_test.push_back(i % 3);
    }
    data.x_train = Tensor({15, 2}, x);
    data.x_test = data.x_train;
    const auto rep = project_representation(net, data, {0, 1, 2}, 5, 2);
    EXPECT_EQ(rep.wcss_bcss_train, 0.0);
    EXPECT_EQ(rep.wcss_bcss_test, 0.0);
}
