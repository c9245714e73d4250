// Acceptance suite: one PASS/FAIL line per criterion, exit 4 if any fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ccdist/cc_core.hpp"
#include "ccdist/errors.hpp"
#include "ccdist/labsmooth.hpp"
#include "ccdist/mimic.hpp"
#include "ccdist/oracle.hpp"

namespace fs = std::filesystem;
using namespace ccdist;

namespace {

struct Options {
    std::size_t threads = 1;
    std::string cli;
    bool quick = false;
    std::uint64_t seed = 0;
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<double> random_lambda(std::size_t K, Rng& rng) {
    const auto p = sample_uniform_simplex(K, rng);
    std::vector<double> v(p.values().begin(), p.values().end());
    for (auto& x : v) {
        x = std::max(x, 1e-12);
    }
    return v;
}

CCParams from_eta(std::vector<double> eta) {
    return CCParams(PositiveComposition::from_logs(std::move(eta)));
}

std::vector<double> logs(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](double x) { return std::log(x); });
    return out;
}

// ---------------------------------------------------------------------------

Outcome oracle_agreement(const Options& o) {
    oracle::AgreementOptions opt;
    opt.seed = o.seed;
    opt.threads = o.threads;
    if (o.quick) {
        opt.n_samples = 100000;
        opt.lambdas_per_K = 20;
    }
    const auto rows = oracle::agreement_suite(opt);
    std::size_t bad = 0, random_cases = 0;
    double max_z = 0.0;
    std::string worst;
    for (const auto& r : rows) {
        random_cases += r.case_id != "centroid" ? 1 : 0;
        if (r.status != "ok") {
            ++bad;
        }
        if (std::abs(r.z) > max_z) {
            max_z = std::abs(r.z);
            worst = "K=" + std::to_string(r.K) + " " + r.case_id;
        }
    }
    // Two-sided tail beyond 3 sigma is 0.0027 per case.
    return {oracle::suite_passed(rows),
            format("%zu cases at n=%zu, %zu outside 3 stderr (chance alone expects %.2f), max |z| %.2f at %s",
                   rows.size(), opt.n_samples, bad, 0.0027 * static_cast<double>(random_cases), max_z,
                   worst.c_str())};
}

Outcome k2_closed_form(const Options& o) {
    Rng rng(derive_seed(o.seed, {2}));
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> l = random_lambda(2, rng);
        if (l[0] == l[1]) {
            --i;
            continue;
        }
        const CCParams p(l);
        const double closed = oracle::closed_form_K2(p);
        worst = std::max(worst, std::abs(std::exp(-log_norm_const(p).log_c) - closed) / closed);
    }
    return {worst < 1e-10, format("100 pairs, max relative error %.3g (bound 1e-10)", worst)};
}

Outcome uniform_limit(const Options& o) {
    bool ok = true;
    double worst = 0.0, worst_z = 0.0;
    for (std::size_t K = 2; K <= 6; ++K) {
        const CCParams p(std::vector<double>(K, 1.0 / static_cast<double>(K)));
        const auto r = log_norm_const(p);
        const double expect = std::lgamma(static_cast<double>(K) + 1.0);
        worst = std::max(worst, std::abs(r.log_c - expect));
        ok = ok && r.diag.tie_adjusted;
        Rng rng(derive_seed(o.seed, {3, K}));
        const auto mc = oracle::mc_inv_norm_const(p, o.quick ? 100000 : 1000000, rng);
        const double diff = std::exp(-r.log_c) - mc.value;
        // The integrand is constant at the centroid: agreement to rounding is exact.
        const double z = std::abs(diff) <= 1e-12 * mc.value ? 0.0 : std::abs(diff) / mc.std_error;
        worst_z = std::max(worst_z, z);
    }
    ok = ok && worst <= 1e-14 && worst_z <= 3.0;
    return {ok, format("K=2..6: max |log C - log K!| %.3g, max Monte Carlo |z| %.2f", worst, worst_z)};
}

Outcome invariance(const Options& o) {
    Rng rng(derive_seed(o.seed, {4}));
    double worst_scale = 0.0, worst_perm = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t K = 2 + static_cast<std::size_t>(i) % 5;
        auto l = random_lambda(K, rng);
        const double base = log_norm_const(CCParams(l)).log_c;
        for (double c : {0.5, 2.0, 10.0}) {
            std::vector<double> s(l);
            for (auto& x : s) {
                x *= c;
            }
            worst_scale = std::max(worst_scale, std::abs(log_norm_const(CCParams(s)).log_c - (base - std::log(c))));
        }
        std::shuffle(l.begin(), l.end(), rng);
        worst_perm = std::max(worst_perm, std::abs(log_norm_const(CCParams(l)).log_c - base));
    }
    return {worst_scale <= 1e-10 && worst_perm <= 1e-10,
            format("100 lambda, K<=6: max scale error %.3g, max permutation error %.3g (bound 1e-10)", worst_scale,
                   worst_perm)};
}

Outcome gradients(const Options& o) {
    Rng rng(derive_seed(o.seed, {5}));
    double worst = 0.0;
    int checked = 0, skipped = 0;
    while (checked < 100) {
        const std::size_t K = 2 + static_cast<std::size_t>(checked + skipped) % 5;
        const auto eta = logs(random_lambda(K, rng));
        const auto y = sample_uniform_simplex(K, rng);
        const auto g = grad_cc_nll(from_eta(eta), y);
        if (g.zeroed) {
            ++skipped;
            continue;
        }
        ++checked;
        const double h = 1e-5;
        double err = 0.0, scale = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            auto up = eta, down = eta;
            up[k] += h;
            down[k] -= h;
            const double fd = (cc_nll(from_eta(up), y) - cc_nll(from_eta(down), y)) / (2 * h);
            err = std::max(err, std::abs(g.gradient[k] - fd));
            scale = std::max(scale, std::abs(fd));
        }
        worst = std::max(worst, err / scale);
    }
    // Full network, K=3, two dense layers.
    NetworkSpec spec;
    spec.input_dim = 4;
    spec.output_dim = 3;
    spec.layers = {LayerSpec::dense(8), LayerSpec::nonlinearity(ActivationKind::Tanh), LayerSpec::dense(3)};
    const Network net(spec, derive_seed(o.seed, {5, 1}));
    std::vector<double> x(6 * 4);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : x) {
        v = normal(rng);
    }
    const Tensor batch({6, 4}, x);
    TrainConfig cfg;
    cfg.label_epsilon = 0.1;
    const auto targets = make_targets({0, 1, 2, 2, 1, 0}, 3, cfg);
    double net_err = 0.0;
    bool flagged = false;
    for (auto kind : {LossKind::CE, LossKind::CC}) {
        cfg.loss = kind;
        const auto r = gradcheck(net, batch, targets, cfg);
        net_err = std::max(net_err, r.max_rel_error);
        flagged = flagged || r.flagged();
    }
    return {worst < 1e-5 && net_err < 1e-4 && !flagged,
            format("100 (lambda, y) outside the zeroed region (%d skipped): max rel error %.3g (bound 1e-5); "
                   "network CE/CC gradcheck %.3g (bound 1e-4)",
                   skipped, worst, net_err)};
}

Outcome mean_parameter(const Options& o) {
    Rng rng(derive_seed(o.seed, {6}));
    double worst_z = 0.0;
    oracle::ImportanceOptions io;
    if (o.quick) {
        io.n = 100000;
    }
    for (int i = 0; i < 10; ++i) {
        const CCParams p(random_lambda(3, rng));
        const auto closed = cc_mean(p);
        const auto mc = oracle::importance_mean(p, rng, io);
        for (std::size_t k = 0; k < 3; ++k) {
            worst_z = std::max(worst_z, std::abs(closed.mean[k] - mc[k].value) / mc[k].std_error);
        }
    }
    return {worst_z <= 3.0, format("10 lambda x 3 coordinates: max |z| %.2f (bound 3)", worst_z)};
}

Outcome instability(const Options& o) {
    oracle::ProbeOptions opt;
    opt.trials = 50;
    opt.seed = o.seed;
    opt.oracle_samples = 0;
    opt.threads = o.threads;
    opt.cc.soft_max_K = 15;
    const auto rows = oracle::precision_probe({3, 6, 9, 12, 15}, opt);
    const auto medians = oracle::median_condition_by_K(rows);
    bool monotone = true;
    std::string med;
    for (std::size_t i = 0; i < medians.size(); ++i) {
        monotone = monotone && (i == 0 || medians[i].second >= medians[i - 1].second);
        med += format("%s%zu:%.3g", i ? " " : "", medians[i].first, medians[i].second);
    }
    Rng rng(derive_seed(o.seed, {7}));
    double min_cond = INFINITY;
    bool flagged = true, zeroed = true;
    for (int i = 0; i < 20; ++i) {
        const CCParams p(oracle::near_centroid_lambda(3, 1e-4, rng));
        const auto g = grad_cc_nll(p, SimplexPoint({0.2, 0.3, 0.5}));
        min_cond = std::min(min_cond, g.diag.condition_number);
        flagged = flagged && g.diag.near_centroid;
        zeroed = zeroed && g.zeroed;
    }
    return {monotone && min_cond > 1e3 && flagged && zeroed,
            format("median condition by K {%s}; 20 near-centroid K=3 fixtures: min condition %.3g, near_centroid %s, "
                   "zeroed %s",
                   med.c_str(), min_cond, flagged ? "all" : "not all", zeroed ? "all" : "not all")};
}

Outcome loss_identities(const Options& o) {
    // CC-LS minus LS on one batch.
    const std::size_t K = 5, d = 10;
    TrainConfig cfg;
    cfg.seed = o.seed;
    cfg.label_epsilon = 0.1;
    const Network net = make_network(d, K, cfg);
    Rng rng(derive_seed(o.seed, {8}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x(32 * d);
    std::vector<std::size_t> labels(32);
    for (std::size_t i = 0; i < 32; ++i) {
        labels[i] = i % K;
        for (std::size_t j = 0; j < d; ++j) {
            x[i * d + j] = normal(rng);
        }
    }
    const Tensor batch({32, d}, x);
    const auto targets = make_targets(labels, K, cfg);
    Rng unused(0);
    const auto ls = loss_and_grad(net, batch, targets, cfg, Mode::Eval, unused);
    cfg.loss = LossKind::CC;
    const auto ccls = loss_and_grad(net, batch, targets, cfg, Mode::Eval, unused);
    double neg_log_c = 0.0;
    const auto outputs = predict(net, batch);
    for (const auto& p : outputs) {
        neg_log_c -= log_norm_const(CCParams(p)).log_c / static_cast<double>(outputs.size());
    }
    const double ls_gap = std::abs((ccls.data_loss - ls.data_loss) - neg_log_c);

    // CC-AMN minus AMN.
    const auto games = default_games();
    std::vector<ExpertPolicy> experts;
    for (const auto& g : games) {
        experts.push_back(make_expert(g, 1.0));
    }
    const auto samples = generate_guidance(games, experts, 32, 0.1, o.seed);
    MimicConfig mc;
    mc.seed = o.seed;
    const Network mnet = make_mimic_network(kGridCells + 1, games.size(), kGridActions, mc);
    const auto mout = predict(mnet, mimic_features(samples, kGridCells + 1, games.size()));
    std::vector<SimplexPoint> guidance;
    double m_neg_log_c = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        guidance.push_back(samples[i].guidance);
        m_neg_log_c -= log_norm_const(CCParams(mout[i])).log_c / static_cast<double>(samples.size());
    }
    const double amn_gap = std::abs(mimic_loss(mout, guidance, MimicLossKind::CCAMN).loss -
                                    mimic_loss(mout, guidance, MimicLossKind::AMN).loss - m_neg_log_c);

    // LS with epsilon 0 against the baseline, same seeds.
    BlobsSpec spec;
    spec.n_per_class = 100;
    spec.seed = o.seed;
    AblationCell base_cell, ls_cell;
    ls_cell.column = LossColumn::LS;
    base_cell.replicates = ls_cell.replicates = 2;
    TrainConfig tc;
    tc.epochs = 5;
    tc.seed = o.seed;
    AblationOptions ao;
    ao.epsilon = 0.0;
    ao.hidden = 32;
    ao.threads = o.threads;
    const auto res = run_ablation(spec, {base_cell, ls_cell}, tc, ao);
    bool identical = true;
    for (std::size_t r = 0; r < 2; ++r) {
        const auto& a = res.runs[r];
        const auto& b = res.runs[2 + r];
        identical = identical && a.ok && b.ok && a.final_train_loss == b.final_train_loss &&
                    a.final_test_acc == b.final_test_acc && a.initial_train_loss == b.initial_train_loss;
    }
    return {ls_gap <= 1e-10 && amn_gap <= 1e-10 && identical,
            format("|(CC-LS - LS) - mean(-log C)| %.3g; |(CC-AMN - AMN) - mean(-log C)| %.3g (bound 1e-10); "
                   "LS(eps=0) == baseline: %s",
                   ls_gap, amn_gap, identical ? "bit-identical" : "differs")};
}

Outcome ablation(const Options& o) {
    BlobsSpec spec;
    spec.seed = o.seed;
    TrainConfig tc;
    tc.seed = o.seed;
    if (o.quick) {
        tc.epochs = 5;
    }
    AblationOptions ao;
    ao.threads = o.threads;
    const auto start = std::chrono::steady_clock::now();
    const auto res = run_ablation(spec, default_grid(3), tc, ao);
    const double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    std::size_t failed = 0, not_decreasing = 0;
    for (const auto& r : res.runs) {
        if (!r.ok) {
            ++failed;
        } else if (!(r.final_train_loss < r.initial_train_loss)) {
            ++not_decreasing;
        }
    }
    std::ostringstream csv;
    write_ablation_csv(csv, res);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    bool schema = line == "regularizers,baseline_mean,baseline_sd,ls_mean,ls_sd,ccls_mean,ccls_sd";
    std::set<std::string> names;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        std::istringstream fields(line);
        std::string f;
        std::vector<std::string> cols;
        while (std::getline(fields, f, ',')) {
            cols.push_back(f);
        }
        schema = schema && cols.size() == 7;
        if (!cols.empty()) {
            names.insert(cols[0]);
        }
        for (std::size_t c = 1; c < cols.size(); ++c) {
            char* end = nullptr;
            std::strtod(cols[c].c_str(), &end);
            schema = schema && end != cols[c].c_str() && *end == '\0';
        }
    }
    schema = schema && rows == 8 && names.size() == 8;
    return {failed == 0 && not_decreasing == 0 && schema,
            format("%zu runs (8x3 cells x 3 replicates, %zu epochs): %zu failed, %zu without strict loss decrease; "
                   "CSV schema %s; %.1f min on %zu thread(s) (target < 30 min with 4)",
                   res.runs.size(), tc.epochs, failed, not_decreasing, schema ? "ok" : "mismatch", minutes,
                   o.threads)};
}

Outcome representation(const Options& o) {
    Rng rng(derive_seed(o.seed, {10}));
    std::normal_distribution<double> normal(0.0, 1.0);
    double ortho = 0.0;
    for (int t = 0; t < 20; ++t) {
        std::array<Vec, 3> w;
        for (auto& v : w) {
            v.resize(8);
            for (auto& x : v) {
                x = normal(rng);
            }
        }
        const auto b = plane_basis(w[0], w[1], w[2]);
        double dots[3] = {0.0, 0.0, 0.0};
        for (std::size_t i = 0; i < 8; ++i) {
            dots[0] += b[0][i] * b[0][i];
            dots[1] += b[1][i] * b[1][i];
            dots[2] += b[0][i] * b[1][i];
        }
        ortho = std::max({ortho, std::abs(dots[0] - 1.0), std::abs(dots[1] - 1.0), std::abs(dots[2])});
    }
    const double fixture = wcss_bcss({{0, 0, 0}, {0, 0, 2}, {1, 10, 0}, {1, 10, 2}});

    std::vector<ProjectedPoint> pts;
    for (std::size_t i = 0; i < 60; ++i) {
        pts.push_back({i % 3, normal(rng) + 3.0 * static_cast<double>(i % 3), normal(rng)});
    }
    double rigid = 0.0;
    for (int t = 0; t < 10; ++t) {
        const double a = 6.283185307179586 * uniform01(rng), dx = normal(rng) * 5, dy = normal(rng) * 5;
        auto moved = pts;
        for (auto& p : moved) {
            const double x = p.x, y = p.y;
            p.x = std::cos(a) * x - std::sin(a) * y + dx;
            p.y = std::sin(a) * x + std::cos(a) * y + dy;
        }
        rigid = std::max(rigid, std::abs(wcss_bcss(moved) - wcss_bcss(pts)));
    }

    BlobsSpec spec;
    spec.separation = 10.0;
    spec.n_per_class = 300;
    spec.seed = o.seed;
    const auto data = make_blobs(spec);
    TrainConfig tc;
    tc.epochs = 20;
    tc.seed = o.seed;
    const auto tr = train(make_network(spec.d, spec.K, tc), data, tc);
    const auto rep = project_representation(tr.net, data, {0, 1, 2}, 50, o.seed);
    const auto gtr = cluster_geometry(rep.train);
    const auto gte = cluster_geometry(rep.test);
    const bool separated = gtr.min_centroid_distance > gtr.mean_within_radius &&
                           gte.min_centroid_distance > gte.mean_within_radius;
    return {ortho <= 1e-10 && fixture == 0.04 && rigid <= 1e-9 && separated,
            format("basis orthonormality %.3g; wcss/bcss fixture %.17g; rigid-motion drift %.3g; separated blobs "
                   "centroid gap / radius train %.4g test %.4g",
                   ortho, fixture, rigid, gtr.min_centroid_distance / gtr.mean_within_radius,
                   gte.min_centroid_distance / gte.mean_within_radius)};
}

Outcome mimic(const Options& o) {
    // Two-state hand oracle: V = max(1, 0.6 + 0.9 V) = 6, Q = (1, 6).
    TabularGame g;
    g.n_states = 2;
    g.n_actions = 2;
    g.discount = 0.9;
    g.transitions = {0, 1, 1, 0, 0, 1, 0, 1};
    g.rewards = {1.0, 0.6, 0.0, 0.0};
    g.terminal = {false, true};
    const auto q = value_iteration(g, 1e-10).q;
    const double vi_err = std::max(std::abs(q[0] - 1.0), std::abs(q[1] - 6.0));

    const auto games = default_games();
    std::vector<ExpertPolicy> experts, hot;
    for (const auto& game : games) {
        experts.push_back(make_expert(game, 1.0));
        hot.push_back(make_expert(game, 5.0));
    }
    std::vector<double> agreement;
    for (std::uint64_t s = 0; s < 5; ++s) {
        MimicConfig c;
        c.seed = derive_seed(o.seed, {11, s});
        const auto r = train_mimic(games, experts, make_mimic_network(kGridCells + 1, 2, kGridActions, c), c, 0);
        agreement.push_back(greedy_agreement(r.net, games[0], experts[0], 0, 2));
    }
    std::sort(agreement.begin(), agreement.end());

    MimicConfig cc;
    cc.loss = MimicLossKind::CCAMN;
    cc.seed = o.seed;
    const auto hr = train_mimic(games, hot, make_mimic_network(kGridCells + 1, 2, kGridActions, cc), cc, 0);
    double zeroed = 0.0;
    for (const auto& m : hr.metrics) {
        zeroed += m.zeroed_grad_fraction / static_cast<double>(hr.metrics.size());
    }

    const std::vector<TabularGame> one{games[1]};
    const std::vector<ExpertPolicy> one_expert{experts[1]};
    MimicConfig sc;
    sc.epochs = 20;
    sc.seed = o.seed;
    const Network net = make_mimic_network(kGridCells + 1, 1, kGridActions, sc);
    const auto multi = train_mimic(one, one_expert, net, sc);
    const auto single = train_mimic(one, one_expert, net, sc, 0);
    bool same = multi.loss_end == single.loss_end && multi.metrics.size() == single.metrics.size();
    for (std::size_t i = 0; same && i < multi.metrics.size(); ++i) {
        same = multi.metrics[i].loss == single.metrics[i].loss &&
               multi.metrics[i].kl_to_expert == single.metrics[i].kl_to_expert &&
               multi.metrics[i].eval_return_mean == single.metrics[i].eval_return_mean;
    }
    for (std::size_t i = 0; same && i < net.parameters().size(); ++i) {
        same = multi.net.parameters()[i] == single.net.parameters()[i];
    }
    return {vi_err <= 1e-8 && agreement[2] >= 0.9 && zeroed > 0.0 && same,
            format("value iteration error %.3g (bound 1e-8); AMN single-task agreement median %.3f over 5 seeds "
                   "(bound 0.9); CC-AMN T=5 mean zeroed fraction %.4f; L=1 single == multi: %s",
                   vi_err, agreement[2], zeroed, same ? "bit-identical" : "differs")};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const Options& o) {
    if (o.cli.empty() || !fs::exists(o.cli)) {
        return {false, "ccdist binary not given (--cli)"};
    }
    const fs::path root = fs::temp_directory_path() / ("ccdist-acceptance-" + std::to_string(::getpid()));
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"cc-eval", "cc-eval 0.5,0.3,0.2 --y 0.2,0.3,0.5"},
        {"cc-check", "cc-check --n-samples 20000 --lambdas 3"},
        {"probe-precision", "probe-precision --trials 3 --oracle-samples 10000"},
        {"ls-ablate", "ls-ablate --epochs 2 --n-per-class 60 --hidden 16 --replicates 2"},
        {"ls-project", "ls-project --epochs 3 --n-per-class 60 --samples 10 --column ccls"},
        {"mimic-train", "mimic-train --epochs 5 --loss ccamn"},
        {"mimic-eval", "mimic-eval --epochs 5 --episodes 5"},
    };
    std::vector<std::string> bad;
    std::size_t files = 0;
    for (const auto& [name, args] : commands) {
        std::string outputs[2];
        int codes[2];
        for (int run = 0; run < 2; ++run) {
            const fs::path dir = root / (name + "-" + std::to_string(run));
            const std::string cmd = "\"" + o.cli + "\" --seed " + std::to_string(o.seed) + " --output-dir \"" +
                                    dir.string() + "\" " + args + " > /dev/null 2>&1";
            codes[run] = std::system(cmd.c_str());
            std::vector<fs::path> csvs;
            if (fs::exists(dir)) {
                for (const auto& e : fs::directory_iterator(dir)) {
                    if (e.path().extension() == ".csv") {
                        csvs.push_back(e.path());
                    }
                }
            }
            std::sort(csvs.begin(), csvs.end());
            for (const auto& p : csvs) {
                outputs[run] += p.filename().string() + "\n" + slurp(p);
            }
            files += run == 0 ? csvs.size() : 0;
        }
        if (codes[0] != codes[1] || outputs[0].empty() || outputs[0] != outputs[1]) {
            bad.push_back(name);
        }
    }
    std::error_code ec;
    fs::remove_all(root, ec);
    std::string detail = format("%zu commands run twice, %zu CSV files compared", commands.size(), files);
    for (const auto& b : bad) {
        detail += "; differs: " + b;
    }
    return {bad.empty(), detail};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite for the ccdist library and CLI", "ccdist_acceptance"};
    Options o;
    std::vector<int> only;
    app.add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--cli", o.cli, "Path to the ccdist binary (criterion 12)");
    app.add_option("--seed", o.seed, "Base seed");
    app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 12));
    app.add_flag("--quick", o.quick, "Smaller sample sizes and epochs; not an acceptance run");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria = {
        {"Oracle agreement", oracle_agreement},
        {"K=2 closed form", k2_closed_form},
        {"Uniform limit", uniform_limit},
        {"Scale and permutation invariance", invariance},
        {"Gradient correctness", gradients},
        {"Mean-parameter property", mean_parameter},
        {"Instability characterization", instability},
        {"Loss identities", loss_identities},
        {"Desk-scale ablation harness", ablation},
        {"Representation analysis", representation},
        {"Mimic harness", mimic},
        {"Determinism", determinism},
    };
    if (o.quick) {
        std::printf("quick mode: reduced sizes, results are indicative only\n");
    }
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[i].second(o);
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        all = all && out.pass;
        std::printf("[%s] %2d. %s: %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(),
                    out.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return all ? 0 : 4;
}
