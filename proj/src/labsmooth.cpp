#include "ccdist/labsmooth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "ccdist/errors.hpp"
#include "ccdist/parallel.hpp"

namespace ccdist {

namespace {

double dot(const Vec& a, const Vec& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

Vec sub(const Vec& a, const Vec& b) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return out;
}

std::size_t combination_index(const AblationCell& cell) {
    const auto combos = regularizer_combinations();
    for (std::size_t i = 0; i < combos.size(); ++i) {
        if (combos[i] == std::array<bool, 3>{cell.dropout_on, cell.weight_decay_on, cell.batchnorm_on}) {
            return i;
        }
    }
    return 0;
}

struct Cluster {
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    double mx() const { return sx / static_cast<double>(n); }
    double my() const { return sy / static_cast<double>(n); }
};

std::map<std::size_t, Cluster> clusters_of(const std::vector<ProjectedPoint>& points) {
    std::map<std::size_t, Cluster> c;
    for (const auto& p : points) {
        auto& cl = c[p.cls];
        cl.sx += p.x;
        cl.sy += p.y;
        ++cl.n;
    }
    if (c.size() < 2) {
        throw InvalidArgument("need at least two non-empty clusters");
    }
    return c;
}

std::vector<std::size_t> sample_class(const std::vector<std::size_t>& labels, std::size_t cls, std::size_t n,
                                      Rng& rng, const char* split) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == cls) {
            idx.push_back(i);
        }
    }
    if (idx.size() < n) {
        throw InvalidArgument(std::string(split) + " split has " + std::to_string(idx.size()) +
                              " samples of class " + std::to_string(cls) + ", need " + std::to_string(n));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    return idx;
}

} // namespace

void BlobsSpec::validate() const {
    if (K < 3) {
        throw InvalidArgument("blobs need K >= 3");
    }
    if (d < 2) {
        throw InvalidArgument("blobs need d >= 2");
    }
    if (n_per_class < 5) {
        throw InvalidArgument("blobs need at least 5 samples per class for an 80/20 split");
    }
    if (!(separation >= 0.0) || !(noise_sd > 0.0)) {
        throw InvalidArgument("blobs need separation >= 0 and noise_sd > 0");
    }
}

Dataset make_blobs(const BlobsSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, {0xb10b5}));
    std::normal_distribution<double> normal(0.0, 1.0);
    // Orthonormal random directions scaled by separation / sqrt(2) give
    // pairwise distance exactly `separation`; with d < K the directions are
    // only unit-norm and the distance is approximate.
    std::vector<Vec> means;
    for (std::size_t k = 0; k < spec.K; ++k) {
        Vec v(spec.d);
        for (double& x : v) {
            x = normal(rng);
        }
        if (k < spec.d) {
            for (const auto& m : means) {
                const double c = dot(v, m);
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] -= c * m[i];
                }
            }
        }
        const double norm = std::sqrt(dot(v, v));
        for (double& x : v) {
            x /= norm;
        }
        means.push_back(std::move(v));
    }
    const double scale = spec.separation / std::sqrt(2.0);
    const std::size_t n_train = spec.n_per_class * 4 / 5;
    Dataset data;
    data.K = spec.K;
    std::vector<double> xtr, xte;
    for (std::size_t k = 0; k < spec.K; ++k) {
        for (std::size_t i = 0; i < spec.n_per_class; ++i) {
            auto& dst = i < n_train ? xtr : xte;
            for (std::size_t j = 0; j < spec.d; ++j) {
                dst.push_back(scale * means[k][j] + spec.noise_sd * normal(rng));
            }
            (i < n_train ? data.y_train : data.y_test).push_back(k);
        }
    }
    data.x_train = Tensor({data.y_train.size(), spec.d}, std::move(xtr));
    data.x_test = Tensor({data.y_test.size(), spec.d}, std::move(xte));
    return data;
}

std::string to_string(LossColumn c) {
    switch (c) {
    case LossColumn::Baseline:
        return "baseline";
    case LossColumn::LS:
        return "ls";
    case LossColumn::CCLS:
        return "ccls";
    }
    return "?";
}

std::string AblationCell::regularizers() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (on) {
            s += s.empty() ? name : std::string("+") + name;
        }
    };
    add(dropout_on, "dropout");
    add(weight_decay_on, "wd");
    add(batchnorm_on, "bn");
    return s.empty() ? "none" : s;
}

std::vector<std::array<bool, 3>> regularizer_combinations() {
    std::vector<std::array<bool, 3>> out;
    for (bool bn : {true, false}) {
        for (bool wd : {true, false}) {
            for (bool dropout : {true, false}) {
                out.push_back({dropout, wd, bn});
            }
        }
    }
    return out;
}

std::vector<AblationCell> default_grid(std::size_t replicates) {
    std::vector<AblationCell> grid;
    for (const auto& c : regularizer_combinations()) {
        for (auto col : {LossColumn::Baseline, LossColumn::LS, LossColumn::CCLS}) {
            grid.push_back({c[0], c[1], c[2], col, replicates});
        }
    }
    return grid;
}

std::uint64_t ablation_seed(std::uint64_t base_seed, const AblationCell& cell, std::size_t replicate) {
    return derive_seed(base_seed, {combination_index(cell), replicate});
}

TrainConfig cell_config(const AblationCell& cell, const TrainConfig& base, const AblationOptions& options) {
    TrainConfig cfg = base;
    cfg.dropout_on = cell.dropout_on;
    cfg.batchnorm_on = cell.batchnorm_on;
    cfg.weight_decay = cell.weight_decay_on ? options.weight_decay : 0.0;
    cfg.loss = cell.column == LossColumn::CCLS ? LossKind::CC : LossKind::CE;
    cfg.label_epsilon = cell.column == LossColumn::Baseline ? 0.0 : options.epsilon;
    return cfg;
}

AblationResult run_ablation(const BlobsSpec& spec, const std::vector<AblationCell>& grid, const TrainConfig& base,
                            const AblationOptions& options) {
    for (const auto& c : grid) {
        if (c.replicates < 2) {
            throw InvalidArgument("ablation cells need at least 2 replicates");
        }
    }
    const Dataset data = make_blobs(spec);
    AblationResult res;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        for (std::size_t r = 0; r < grid[c].replicates; ++r) {
            RunRecord rec;
            rec.cell = c;
            rec.replicate = r;
            rec.seed = ablation_seed(base.seed, grid[c], r);
            res.runs.push_back(rec);
        }
    }
    parallel_for(res.runs.size(), options.threads, [&](std::size_t i) {
        RunRecord& rec = res.runs[i];
        TrainConfig cfg = cell_config(grid[rec.cell], base, options);
        cfg.seed = rec.seed;
        DefaultNetOptions net_opts;
        net_opts.hidden = options.hidden;
        net_opts.dropout_on = cfg.dropout_on;
        net_opts.dropout_rate = options.dropout_rate;
        net_opts.batchnorm_on = cfg.batchnorm_on;
        try {
            Network net(default_network_spec(spec.d, spec.K, net_opts), derive_seed(cfg.seed, {0}));
            const auto tr = train(std::move(net), data, cfg);
            const auto& last = tr.epochs.empty() ? tr.initial : tr.epochs.back();
            rec.initial_train_loss = tr.initial.train_loss;
            rec.final_train_loss = last.train_loss;
            rec.final_train_acc = last.train_acc;
            rec.final_test_acc = last.test_acc;
            rec.ok = true;
        } catch (const NumericalFailure& e) {
            rec.error = e.what();
        }
    });
    for (std::size_t c = 0; c < grid.size(); ++c) {
        CellResult cr;
        cr.cell = grid[c];
        std::vector<double> acc;
        for (const auto& rec : res.runs) {
            if (rec.cell == c && rec.ok) {
                acc.push_back(rec.final_test_acc);
            }
        }
        cr.completed = acc.size();
        if (!acc.empty()) {
            const double n = static_cast<double>(acc.size());
            cr.mean_test_acc = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
            double ss = 0.0;
            for (double a : acc) {
                ss += (a - cr.mean_test_acc) * (a - cr.mean_test_acc);
            }
            cr.sd_test_acc = acc.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        }
        res.cells.push_back(cr);
    }
    return res;
}

void write_ablation_csv(std::ostream& os, const AblationResult& result) {
    os << "regularizers,baseline_mean,baseline_sd,ls_mean,ls_sd,ccls_mean,ccls_sd\n";
    char buf[64];
    for (const auto& combo : regularizer_combinations()) {
        std::array<const CellResult*, 3> cols{};
        bool any = false;
        for (const auto& cr : result.cells) {
            const auto& c = cr.cell;
            if (std::array<bool, 3>{c.dropout_on, c.weight_decay_on, c.batchnorm_on} == combo) {
                cols[static_cast<std::size_t>(c.column)] = &cr;
                any = true;
            }
        }
        if (!any) {
            continue;
        }
        os << AblationCell{combo[0], combo[1], combo[2], LossColumn::Baseline, 2}.regularizers();
        for (const auto* cr : cols) {
            if (cr == nullptr) {
                os << ",,";
            } else if (cr->failed()) {
                os << ",failed,failed";
            } else {
                std::snprintf(buf, sizeof buf, ",%.17g,%.17g", cr->mean_test_acc, cr->sd_test_acc);
                os << buf;
            }
        }
        os << '\n';
    }
}

void write_runs_csv(std::ostream& os, const AblationResult& result) {
    os << "regularizers,column,replicate,seed,status,initial_train_loss,final_train_loss,final_train_acc,"
          "final_test_acc\n";
    char buf[160];
    for (const auto& r : result.runs) {
        const auto& cell = result.cells[r.cell].cell;
        os << cell.regularizers() << ',' << to_string(cell.column) << ',' << r.replicate << ',' << r.seed << ','
           << (r.ok ? "ok" : "failed");
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g\n", r.initial_train_loss, r.final_train_loss,
                      r.final_train_acc, r.final_test_acc);
        os << buf;
    }
}

std::vector<Vec> template_vectors(const Network& net) {
    const Tensor& w = net.parameters()[net.final_weight_index()];
    std::vector<Vec> out(w.cols(), Vec(w.rows()));
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t k = 0; k < w.cols(); ++k) {
            out[k][i] = w.at(i, k);
        }
    }
    return out;
}

std::array<Vec, 2> plane_basis(const Vec& w_a, const Vec& w_b, const Vec& w_c) {
    if (w_a.size() != w_b.size() || w_a.size() != w_c.size()) {
        throw DimensionMismatch("template vectors differ in length");
    }
    Vec u = sub(w_b, w_a);
    Vec v = sub(w_c, w_a);
    const double nu = std::sqrt(dot(u, u));
    const double nv = std::sqrt(dot(v, v));
    if (nu == 0.0 || nv == 0.0) {
        throw InvalidArgument("template vectors coincide");
    }
    for (double& x : u) {
        x /= nu;
    }
    // Two passes of Gram-Schmidt keep orthogonality at rounding level.
    for (int pass = 0; pass < 2; ++pass) {
        const double c = dot(v, u);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] -= c * u[i];
        }
    }
    const double nr = std::sqrt(dot(v, v));
    if (nr <= kCollinearTolerance * nv) {
        throw InvalidArgument("template vectors are collinear");
    }
    for (double& x : v) {
        x /= nr;
    }
    return {u, v};
}

RepresentationReport project_representation(const Network& net, const Dataset& data,
                                            std::array<std::size_t, 3> triple, std::size_t n_per_class,
                                            std::uint64_t seed) {
    if (triple[0] == triple[1] || triple[0] == triple[2] || triple[1] == triple[2]) {
        throw InvalidArgument("class triple must be distinct");
    }
    for (std::size_t c : triple) {
        if (c >= net.spec().output_dim) {
            throw InvalidArgument("class " + std::to_string(c) + " is not an output of the network");
        }
    }
    if (n_per_class == 0) {
        throw InvalidArgument("n_per_class must be positive");
    }
    const auto templates = template_vectors(net);
    RepresentationReport rep;
    rep.class_triple = triple;
    rep.anchor = templates[triple[0]];
    rep.basis = plane_basis(templates[triple[0]], templates[triple[1]], templates[triple[2]]);
    Rng rng(derive_seed(seed, {0x9e7}));
    auto project = [&](const Tensor& x, const std::vector<std::size_t>& y, const char* split) {
        std::vector<std::size_t> rows, cls;
        for (std::size_t c : triple) {
            for (std::size_t i : sample_class(y, c, n_per_class, rng, split)) {
                rows.push_back(i);
                cls.push_back(c);
            }
        }
        Rng unused(0);
        const auto fwd = forward(net, x.gather_rows(rows), Mode::Eval, unused);
        const Tensor& z = fwd.cache.penultimate();
        std::vector<ProjectedPoint> pts;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto zr = z.row(r);
            double px = 0.0, py = 0.0;
            for (std::size_t j = 0; j < zr.size(); ++j) {
                const double c = zr[j] - rep.anchor[j];
                px += c * rep.basis[0][j];
                py += c * rep.basis[1][j];
            }
            pts.push_back({cls[r], px, py});
        }
        return pts;
    };
    rep.train = project(data.x_train, data.y_train, "train");
    rep.test = project(data.x_test, data.y_test, "test");
    rep.wcss_bcss_train = wcss_bcss(rep.train);
    rep.wcss_bcss_test = wcss_bcss(rep.test);
    return rep;
}

void write_representation_csv(std::ostream& os, const RepresentationReport& report) {
    os << "split,class,x,y\n";
    char buf[96];
    for (const auto* split : {&report.train, &report.test}) {
        const char* name = split == &report.train ? "train" : "test";
        for (const auto& p : *split) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g\n", name, p.cls, p.x, p.y);
            os << buf;
        }
    }
}

double wcss_bcss(const std::vector<ProjectedPoint>& points) {
    const auto clusters = clusters_of(points);
    double gx = 0.0, gy = 0.0;
    for (const auto& p : points) {
        gx += p.x;
        gy += p.y;
    }
    gx /= static_cast<double>(points.size());
    gy /= static_cast<double>(points.size());
    double wcss = 0.0;
    for (const auto& p : points) {
        const auto& c = clusters.at(p.cls);
        wcss += (p.x - c.mx()) * (p.x - c.mx()) + (p.y - c.my()) * (p.y - c.my());
    }
    double bcss = 0.0;
    for (const auto& [cls, c] : clusters) {
        bcss += static_cast<double>(c.n) * ((c.mx() - gx) * (c.mx() - gx) + (c.my() - gy) * (c.my() - gy));
    }
    if (bcss == 0.0) {
        throw InvalidArgument("between-cluster sum of squares is zero (all centroids coincide)");
    }
    return wcss / bcss;
}

ClusterGeometry cluster_geometry(const std::vector<ProjectedPoint>& points) {
    const auto clusters = clusters_of(points);
    std::map<std::size_t, double> radius;
    for (const auto& p : points) {
        const auto& c = clusters.at(p.cls);
        radius[p.cls] += std::hypot(p.x - c.mx(), p.y - c.my()) / static_cast<double>(c.n);
    }
    ClusterGeometry g;
    g.min_centroid_distance = INFINITY;
    for (auto a = clusters.begin(); a != clusters.end(); ++a) {
        for (auto b = std::next(a); b != clusters.end(); ++b) {
            g.min_centroid_distance = std::min(
                g.min_centroid_distance, std::hypot(a->second.mx() - b->second.mx(), a->second.my() - b->second.my()));
        }
        g.mean_within_radius += radius[a->first] / static_cast<double>(clusters.size());
    }
    return g;
}

} // namespace ccdist
