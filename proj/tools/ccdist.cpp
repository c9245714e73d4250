// ccdist: command-line front end for the CC distribution library and its labs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ccdist/cc_core.hpp"
#include "ccdist/errors.hpp"
#include "ccdist/labsmooth.hpp"
#include "ccdist/mimic.hpp"
#include "ccdist/oracle.hpp"

#ifndef CCDIST_VERSION
#define CCDIST_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ccdist;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitSuite = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Options that can also come from a --config file, keyed by long name.
class Params {
public:
    template <class T>
    CLI::Option* add(CLI::App* app, const std::string& key, T& var, const std::string& help) {
        auto* opt = app->add_option("--" + key, var, help)->capture_default_str();
        list_.push_back({app, key, opt, [&var] { return json(var); }});
        return opt;
    }

    CLI::Option* flag(CLI::App* app, const std::string& key, bool& var, const std::string& help) {
        auto* opt = app->add_flag("--" + key, var, help);
        list_.push_back({app, key, opt, [&var] { return json(var); }});
        return opt;
    }

    CLI::Option* positional(CLI::App* app, const std::string& key, std::string& var, const std::string& help) {
        auto* opt = app->add_option(key, var, help);
        list_.push_back({app, key, opt, [&var] { return json(var); }});
        return opt;
    }

    // Fills options absent from the command line with file values.
    void apply(const std::map<std::string, std::string>& file, const CLI::App* global, const CLI::App* sub) {
        for (const auto& [key, value] : file) {
            bool known = false;
            for (auto& p : list_) {
                if (p.key != key || (p.app != global && p.app != sub)) {
                    continue;
                }
                known = true;
                if (p.opt->count() == 0) {
                    p.opt->add_result(value);
                    p.opt->run_callback();
                }
            }
            if (!known) {
                throw UsageError("config key '" + key + "' is not an option of " + sub->get_name());
            }
        }
    }

    json resolved(const CLI::App* app) const {
        json out = json::object();
        for (const auto& p : list_) {
            if (p.app == app) {
                out[p.key] = p.value();
            }
        }
        return out;
    }

private:
    struct Entry {
        const CLI::App* app;
        std::string key;
        CLI::Option* opt;
        std::function<json()> value;
    };
    std::vector<Entry> list_;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::string scalar(const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
}

// key=value lines (# comments), or a JSON object. A manifest's "config"
// object is accepted as-is so a run can be replayed from its manifest.
std::map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot read config file " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    std::map<std::string, std::string> out;
    if (trim(text).starts_with("{")) {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw UsageError("config " + path + ": " + e.what());
        }
        if (j.contains("config") && j["config"].is_object()) {
            const json inner = j["config"];
            j = inner;
        }
        for (const auto& [k, v] : j.items()) {
            if (v.is_object() || v.is_array()) {
                throw UsageError("config " + path + ": key '" + k + "' must be a scalar");
            }
            out[k] = scalar(v);
        }
        return out;
    }
    std::istringstream lines(text);
    std::string line;
    for (std::size_t n = 1; std::getline(lines, line); ++n) {
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config " + path + ":" + std::to_string(n) + ": expected key=value");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

double parse_real(const std::string& tok, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != tok.size() || !std::isfinite(v)) {
        throw UsageError(what + ": '" + tok + "' is not a finite number");
    }
    return v;
}

std::vector<double> parse_reals(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        out.push_back(parse_real(trim(tok), what));
    }
    if (!s.empty() && s.back() == ',') {
        throw UsageError(what + ": trailing comma");
    }
    return out;
}

std::vector<std::size_t> parse_indices(const std::string& s, const std::string& what) {
    std::vector<std::size_t> out;
    for (double v : parse_reals(s, what)) {
        if (v < 0.0 || v != std::floor(v)) {
            throw UsageError(what + ": expected non-negative integers");
        }
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

struct Global {
    std::uint64_t seed = 0;
    std::string output_dir = "ccdist-out";
    std::size_t threads = 1;
    std::string config;
};

class Output {
public:
    Output(std::string dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
        const fs::path p = fs::path(dir_) / name;
        std::ofstream os(p, std::ios::binary);
        body(os);
        if (!os) {
            throw std::runtime_error("failed writing " + p.string());
        }
        artifacts_.push_back(name);
    }

    void manifest(const std::string& command, const json& global, const json& config) {
        json m;
        m["tool"] = "ccdist";
        m["version"] = CCDIST_VERSION;
        m["command"] = command;
        m["seed"] = global["seed"];
        m["threads"] = global["threads"];
        m["output_dir"] = dir_;
        m["config"] = config;
        m["artifacts"] = artifacts_;
        m["rerun"] = "ccdist " + command + " --config " + (fs::path(dir_) / "manifest.json").string();
        std::ofstream os(fs::path(dir_) / "manifest.json", std::ios::binary);
        os << m.dump(2) << '\n';
    }

private:
    std::string dir_;
    std::vector<std::string> artifacts_;
};

// ---------------------------------------------------------------------------

struct CcEvalOpts {
    std::string lambda;
    std::string y;
    bool plain = false;
};

int run_cc_eval(const CcEvalOpts& o, const Global& g, bool write_files, const json& gj, const json& cj) {
    const auto lambda = parse_reals(o.lambda, "lambda");
    if (lambda.size() < 2) {
        throw UsageError("lambda needs at least 2 values");
    }
    for (double v : lambda) {
        if (!(v > 0.0)) {
            throw UsageError("lambda entries must be positive");
        }
    }
    CCConfig cc;
    cc.extended_precision = !o.plain;
    const CCParams params(lambda);
    const auto r = log_norm_const(params, cc);
    std::string line = fmt(r.log_c) + "," + fmt(r.diag.condition_number) + "," +
                       (r.diag.near_centroid ? "true" : "false") + "," + (r.diag.tie_adjusted ? "true" : "false");
    std::string header = "logC,condition_number,near_centroid,tie_adjusted";
    if (!o.y.empty()) {
        std::vector<double> y;
        try {
            y = parse_reals(o.y, "y");
            if (y.size() != lambda.size()) {
                throw UsageError("y must have as many entries as lambda");
            }
            line += "," + fmt(cc_nll(params, SimplexPoint(y), cc));
        } catch (const DimensionMismatch& e) {
            throw UsageError(e.what());
        }
        header += ",nll";
    }
    std::cout << line << '\n';
    if (write_files) {
        Output out(g.output_dir);
        out.write("cc_eval.csv", [&](std::ostream& os) { os << header << '\n' << line << '\n'; });
        out.manifest("cc-eval", gj, cj);
    }
    return kExitOk;
}

struct CcCheckOpts {
    std::size_t n_samples = 1000000;
    std::size_t k_min = 2;
    std::size_t k_max = oracle::kMaxTrustedK;
    std::size_t lambdas = 100;
    double z_bound = 3.0;
};

int run_cc_check(const CcCheckOpts& o, const Global& g, const json& gj, const json& cj) {
    if (o.k_max > oracle::kMaxTrustedK) {
        throw UsageError("--k-max must be <= " + std::to_string(oracle::kMaxTrustedK));
    }
    oracle::AgreementOptions opt;
    opt.n_samples = o.n_samples;
    opt.K_min = o.k_min;
    opt.K_max = o.k_max;
    opt.lambdas_per_K = o.lambdas;
    opt.z_bound = o.z_bound;
    opt.seed = g.seed;
    opt.threads = g.threads;
    const auto rows = oracle::agreement_suite(opt);
    Output out(g.output_dir);
    out.write("cc_check.csv", [&](std::ostream& os) { oracle::write_agreement_csv(os, rows); });
    out.manifest("cc-check", gj, cj);
    std::size_t violations = 0, warnings = 0;
    double max_z = 0.0;
    for (const auto& r : rows) {
        violations += r.status == "violation" ? 1 : 0;
        warnings += r.status.starts_with("warning") ? 1 : 0;
        max_z = std::max(max_z, std::abs(r.z));
        if (r.status != "ok") {
            std::cerr << r.status << ": K=" << r.K << ' ' << r.case_id << " z=" << r.z << '\n';
        }
    }
    if (warnings > 0) {
        std::cerr << "warning: n_samples=" << o.n_samples << " is below " << oracle::kMinSamples
                  << "; Monte Carlo standard errors are too large to trust\n";
    }
    const bool pass = oracle::suite_passed(rows);
    std::printf("cc-check: %zu cases, %zu violations, %zu warnings, max |z| %.3f: %s\n", rows.size(), violations,
                warnings, max_z, pass ? "PASS" : "FAIL");
    return pass ? kExitOk : kExitSuite;
}

struct ProbeOpts {
    std::string K = "3,6,9,12,15";
    std::size_t trials = 50;
    std::size_t oracle_samples = 100000;
    double deviation = 1e-4;
    bool extended = false;
};

int run_probe(const ProbeOpts& o, const Global& g, const json& gj, const json& cj) {
    const auto Ks = parse_indices(o.K, "K");
    if (Ks.empty()) {
        throw UsageError("--K needs at least one value");
    }
    oracle::ProbeOptions opt;
    opt.trials = o.trials;
    opt.seed = g.seed;
    opt.oracle_samples = o.oracle_samples;
    opt.near_centroid_deviation = o.deviation;
    opt.threads = g.threads;
    opt.cc.extended_precision = o.extended;
    const auto rows = oracle::precision_probe(Ks, opt);
    Output out(g.output_dir);
    out.write("precision.csv", [&](std::ostream& os) { oracle::write_precision_csv(os, rows); });
    out.manifest("probe-precision", gj, cj);
    std::cout << "median_condition_number";
    for (const auto& [K, m] : oracle::median_condition_by_K(rows)) {
        std::cout << " K=" << K << ':' << fmt(m);
    }
    std::cout << '\n';
    return kExitOk;
}

struct BlobOpts {
    std::size_t num_classes = 5;
    std::size_t dim = 10;
    std::size_t n_per_class = 1000;
    double separation = 3.0;
    double noise_sd = 1.0;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    double epsilon = 0.1;
    double weight_decay = 1e-4;
    double dropout_rate = 0.2;
    std::size_t hidden = 64;

    BlobsSpec spec(std::uint64_t seed) const {
        BlobsSpec s;
        s.K = num_classes;
        s.d = dim;
        s.n_per_class = n_per_class;
        s.separation = separation;
        s.noise_sd = noise_sd;
        s.seed = seed;
        return s;
    }

    TrainConfig base(std::uint64_t seed) const {
        TrainConfig c;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.learning_rate = lr;
        c.seed = seed;
        return c;
    }

    AblationOptions ablation(std::size_t threads) const {
        AblationOptions a;
        a.epsilon = epsilon;
        a.weight_decay = weight_decay;
        a.dropout_rate = dropout_rate;
        a.hidden = hidden;
        a.threads = threads;
        return a;
    }
};

void add_blob_options(Params& p, CLI::App* app, BlobOpts& o) {
    p.add(app, "num-classes", o.num_classes, "Blob classes K");
    p.add(app, "dim", o.dim, "Input dimension");
    p.add(app, "n-per-class", o.n_per_class, "Samples per class (80% train)");
    p.add(app, "separation", o.separation, "Distance between class means");
    p.add(app, "noise-sd", o.noise_sd, "Isotropic noise standard deviation");
    p.add(app, "epochs", o.epochs, "Training epochs");
    p.add(app, "batch-size", o.batch_size, "Minibatch size");
    p.add(app, "lr", o.lr, "Adam learning rate");
    p.add(app, "epsilon", o.epsilon, "Label smoothing strength for ls and ccls");
    p.add(app, "weight-decay", o.weight_decay, "Final-layer L2 strength when wd is on");
    p.add(app, "dropout-rate", o.dropout_rate, "Dropout rate when dropout is on");
    p.add(app, "hidden", o.hidden, "Hidden width");
}

struct AblateOpts {
    BlobOpts blobs;
    std::size_t replicates = 3;
};

int run_ablate(const AblateOpts& o, const Global& g, const json& gj, const json& cj) {
    const auto res =
        run_ablation(o.blobs.spec(g.seed), default_grid(o.replicates), o.blobs.base(g.seed), o.blobs.ablation(g.threads));
    Output out(g.output_dir);
    out.write("ablation.csv", [&](std::ostream& os) { write_ablation_csv(os, res); });
    out.write("runs.csv", [&](std::ostream& os) { write_runs_csv(os, res); });
    out.manifest("ls-ablate", gj, cj);
    std::size_t failed = 0;
    for (const auto& r : res.runs) {
        if (!r.ok) {
            ++failed;
            std::cerr << "run failed: " << r.error << '\n';
        }
    }
    std::printf("ls-ablate: %zu runs, %zu failed\n", res.runs.size(), failed);
    return failed == 0 ? kExitOk : kExitNumerical;
}

struct ProjectOpts {
    BlobOpts blobs;
    std::string classes = "0,1,2";
    std::size_t samples = 200;
    std::string column = "baseline";
    bool dropout = false;
    bool wd = false;
    bool bn = false;
};

int run_project(const ProjectOpts& o, const Global& g, const json& gj, const json& cj) {
    const auto cls = parse_indices(o.classes, "classes");
    if (cls.size() != 3) {
        throw UsageError("--classes needs exactly three class indices");
    }
    AblationCell cell;
    cell.dropout_on = o.dropout;
    cell.weight_decay_on = o.wd;
    cell.batchnorm_on = o.bn;
    cell.column = o.column == "ls" ? LossColumn::LS : o.column == "ccls" ? LossColumn::CCLS : LossColumn::Baseline;
    const auto spec = o.blobs.spec(g.seed);
    const auto data = make_blobs(spec);
    const auto aopt = o.blobs.ablation(1);
    // Same network as replicate 0 of the matching ablation cell.
    TrainConfig cfg = cell_config(cell, o.blobs.base(g.seed), aopt);
    cfg.seed = ablation_seed(g.seed, cell, 0);
    DefaultNetOptions net_opts;
    net_opts.hidden = aopt.hidden;
    net_opts.dropout_on = cfg.dropout_on;
    net_opts.dropout_rate = aopt.dropout_rate;
    net_opts.batchnorm_on = cfg.batchnorm_on;
    Network net(default_network_spec(spec.d, spec.K, net_opts), derive_seed(cfg.seed, {0}));
    const auto tr = train(std::move(net), data, cfg);
    const auto rep = project_representation(tr.net, data, {cls[0], cls[1], cls[2]}, o.samples, g.seed);
    Output out(g.output_dir);
    out.write("representation.csv", [&](std::ostream& os) { write_representation_csv(os, rep); });
    out.write("representation_summary.csv", [&](std::ostream& os) {
        os << "split,wcss_bcss,min_centroid_distance,mean_within_radius\n";
        for (const auto& [name, pts, ratio] : {std::tuple{"train", &rep.train, rep.wcss_bcss_train},
                                               std::tuple{"test", &rep.test, rep.wcss_bcss_test}}) {
            const auto geo = cluster_geometry(*pts);
            os << name << ',' << fmt(ratio) << ',' << fmt(geo.min_centroid_distance) << ','
               << fmt(geo.mean_within_radius) << '\n';
        }
    });
    out.manifest("ls-project", gj, cj);
    std::printf("ls-project: wcss/bcss train %.6g test %.6g\n", rep.wcss_bcss_train, rep.wcss_bcss_test);
    return kExitOk;
}

struct MimicOpts {
    std::string mode = "multi-task";
    std::size_t game = 0;
    std::string loss = "amn";
    std::size_t epochs = 200;
    std::size_t steps_per_epoch = 10;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::size_t hidden = 32;
    double epsilon_behavior = 0.1;
    double temperature = 1.0;
    std::size_t eval_episodes = 10;
    std::size_t horizon = 100;
    bool pipelined = false;
    std::size_t buffer_capacity = 4;
    std::size_t episodes = 100;

    MimicConfig config(std::uint64_t seed, MimicLossKind kind) const {
        MimicConfig c;
        c.loss = kind;
        c.epochs = epochs;
        c.steps_per_epoch = steps_per_epoch;
        c.batch_size = batch_size;
        c.learning_rate = lr;
        c.hidden = hidden;
        c.epsilon_behavior = epsilon_behavior;
        c.temperature = temperature;
        c.eval_episodes = eval_episodes;
        c.horizon = horizon;
        c.seed = seed;
        c.pipelined = pipelined;
        c.buffer_capacity = buffer_capacity;
        return c;
    }

    MimicMode run_mode() const {
        if (mode == "single-task") {
            return game;
        }
        return std::nullopt;
    }
};

void add_mimic_options(Params& p, CLI::App* app, MimicOpts& o) {
    p.add(app, "mode", o.mode, "multi-task or single-task")->check(CLI::IsMember({"multi-task", "single-task"}));
    p.add(app, "game", o.game, "Game index for single-task mode");
    p.add(app, "epochs", o.epochs, "Training epochs");
    p.add(app, "steps-per-epoch", o.steps_per_epoch, "Gradient steps per epoch");
    p.add(app, "batch-size", o.batch_size, "Guidance samples per game per step");
    p.add(app, "lr", o.lr, "Adam learning rate");
    p.add(app, "hidden", o.hidden, "Hidden width");
    p.add(app, "epsilon-behavior", o.epsilon_behavior, "Uniform-action probability of the behavior policy");
    p.add(app, "temperature", o.temperature, "Expert softmax temperature");
    p.add(app, "eval-episodes", o.eval_episodes, "Evaluation episodes per epoch");
    p.add(app, "horizon", o.horizon, "Episode horizon");
    p.flag(app, "pipelined", o.pipelined, "Generate guidance on a producer thread");
    p.add(app, "buffer-capacity", o.buffer_capacity, "Bounded buffer size in pipelined mode");
}

MimicLossKind mimic_kind(const std::string& s) {
    return s == "ccamn" ? MimicLossKind::CCAMN : MimicLossKind::AMN;
}

int run_mimic_train(const MimicOpts& o, const Global& g, const json& gj, const json& cj) {
    const auto games = default_games();
    if (o.mode == "single-task" && o.game >= games.size()) {
        throw UsageError("--game must be < " + std::to_string(games.size()));
    }
    std::vector<ExpertPolicy> experts;
    for (const auto& game : games) {
        experts.push_back(make_expert(game, o.temperature));
    }
    const auto cfg = o.config(g.seed, mimic_kind(o.loss));
    const auto res = train_mimic(games, experts, make_mimic_network(kGridCells + 1, games.size(), kGridActions, cfg),
                                 cfg, o.run_mode());
    Output out(g.output_dir);
    out.write("mimic_metrics.csv", [&](std::ostream& os) { write_mimic_metrics_csv(os, res, o.run_mode()); });
    out.manifest("mimic-train", gj, cj);
    if (!res.metrics.empty()) {
        const auto& last = res.metrics.back();
        std::printf("mimic-train: epoch %zu game %zu loss %.6g return %.4g kl %.4g\n", last.epoch, last.game_id,
                    last.loss, last.eval_return_mean, last.kl_to_expert);
    }
    return kExitOk;
}

int run_mimic_eval(const MimicOpts& o, const Global& g, const json& gj, const json& cj) {
    const auto games = default_games();
    if (o.mode == "single-task" && o.game >= games.size()) {
        throw UsageError("--game must be < " + std::to_string(games.size()));
    }
    std::vector<ExpertPolicy> experts;
    for (const auto& game : games) {
        experts.push_back(make_expert(game, o.temperature));
    }
    const std::size_t L = games.size(), S = kGridCells + 1;
    std::vector<std::size_t> active;
    if (o.mode == "single-task") {
        active.push_back(o.game);
    } else {
        for (std::size_t i = 0; i < L; ++i) {
            active.push_back(i);
        }
    }
    struct Row {
        std::string policy;
        std::size_t game;
        ReturnStats r;
        std::string agreement;
    };
    std::vector<Row> rows;
    for (std::size_t gi : active) {
        Rng a(derive_seed(g.seed, {0xe7a1, 0, gi})), b(derive_seed(g.seed, {0xe7a1, 1, gi}));
        rows.push_back({"expert", gi, evaluate_policy(expert_policy_fn(experts[gi]), games[gi], o.episodes, o.horizon, a),
                        fmt(1.0)});
        rows.push_back({"uniform", gi,
                        evaluate_stochastic_policy(uniform_policy_fn(kGridActions), games[gi], o.episodes, o.horizon, b),
                        ""});
    }
    for (auto [name, kind] : {std::pair{"amn", MimicLossKind::AMN}, std::pair{"ccamn", MimicLossKind::CCAMN}}) {
        const auto cfg = o.config(g.seed, kind);
        const auto res =
            train_mimic(games, experts, make_mimic_network(S, L, kGridActions, cfg), cfg, o.run_mode());
        for (std::size_t gi : active) {
            Rng rng(derive_seed(g.seed, {0xe7a1, 2, gi}));
            rows.push_back({name, gi,
                            evaluate_policy(mimic_policy_fn(res.net, gi, S, L), games[gi], o.episodes, o.horizon, rng),
                            fmt(greedy_agreement(res.net, games[gi], experts[gi], gi, L))});
        }
    }
    Output out(g.output_dir);
    out.write("mimic_eval.csv", [&](std::ostream& os) {
        os << "policy,game_id,return_mean,return_sd,greedy_agreement\n";
        for (const auto& r : rows) {
            os << r.policy << ',' << r.game << ',' << fmt(r.r.mean) << ',' << fmt(r.r.sd) << ',' << r.agreement << '\n';
        }
    });
    out.manifest("mimic-eval", gj, cj);
    for (const auto& r : rows) {
        std::printf("%-8s game %zu: %.4g +- %.4g\n", r.policy.c_str(), r.game, r.r.mean, r.r.sd);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continuous-categorical distribution toolkit and desk-scale labs", "ccdist"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CCDIST_VERSION);
    Params params;
    Global g;
    params.add(&app, "seed", g.seed, "Base seed for every random stream");
    params.add(&app, "output-dir", g.output_dir, "Directory for CSV outputs and manifest.json");
    params.add(&app, "threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--config", g.config, "key=value or JSON config file; flags override it")
        ->check(CLI::ExistingFile);

    CcEvalOpts eval;
    auto* s_eval = app.add_subcommand("cc-eval", "Evaluate log C(lambda) and its diagnostics");
    params.positional(s_eval, "lambda", eval.lambda, "Comma-separated positive reals")->required();
    params.add(s_eval, "y", eval.y, "Comma-separated simplex point; adds the NLL column");
    params.flag(s_eval, "plain", eval.plain, "Accumulate in plain double instead of long double");

    CcCheckOpts check;
    auto* s_check = app.add_subcommand("cc-check", "Closed form vs Monte Carlo agreement suite");
    params.add(s_check, "n-samples", check.n_samples, "Monte Carlo samples per case");
    params.add(s_check, "k-min", check.k_min, "Smallest K");
    params.add(s_check, "k-max", check.k_max, "Largest K (<= 6)");
    params.add(s_check, "lambdas", check.lambdas, "Random lambda per K");
    params.add(s_check, "z-bound", check.z_bound, "Allowed |z| in Monte Carlo standard errors");

    ProbeOpts probe;
    auto* s_probe = app.add_subcommand("probe-precision", "Summation condition numbers by K");
    params.add(s_probe, "K", probe.K, "Comma-separated K values");
    params.add(s_probe, "trials", probe.trials, "Random lambda per K");
    params.add(s_probe, "oracle-samples", probe.oracle_samples, "Monte Carlo samples for K <= 6 (0 disables)");
    params.add(s_probe, "deviation", probe.deviation, "Max |lambda_k - 1/K| of the near-centroid row");
    params.flag(s_probe, "extended", probe.extended, "Evaluate in long double instead of plain double");

    AblateOpts ablate;
    auto* s_ablate = app.add_subcommand("ls-ablate", "Label smoothing ablation grid on Gaussian blobs");
    add_blob_options(params, s_ablate, ablate.blobs);
    params.add(s_ablate, "replicates", ablate.replicates, "Replicates per cell (>= 2)");

    ProjectOpts project;
    auto* s_project = app.add_subcommand("ls-project", "Penultimate-layer projection onto a template plane");
    add_blob_options(params, s_project, project.blobs);
    params.add(s_project, "classes", project.classes, "Three class indices");
    params.add(s_project, "samples", project.samples, "Samples per class and split");
    params.add(s_project, "column", project.column, "baseline, ls or ccls")
        ->check(CLI::IsMember({"baseline", "ls", "ccls"}));
    params.flag(s_project, "dropout", project.dropout, "Train with dropout");
    params.flag(s_project, "wd", project.wd, "Train with final-layer weight decay");
    params.flag(s_project, "bn", project.bn, "Train with batch normalization");

    MimicOpts mtrain;
    auto* s_mtrain = app.add_subcommand("mimic-train", "Train an actor-mimic network on the default gridworlds");
    add_mimic_options(params, s_mtrain, mtrain);
    params.add(s_mtrain, "loss", mtrain.loss, "amn or ccamn")->check(CLI::IsMember({"amn", "ccamn"}));

    MimicOpts meval;
    auto* s_meval = app.add_subcommand("mimic-eval", "Evaluation returns of expert, uniform, AMN and CC-AMN policies");
    add_mimic_options(params, s_meval, meval);
    params.add(s_meval, "episodes", meval.episodes, "Evaluation episodes per policy");

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForVersion& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return kExitUsage;
        }
        CLI::App* sub = app.get_subcommands().front();
        if (!g.config.empty()) {
            try {
                params.apply(read_config(g.config), &app, sub);
            } catch (const CLI::ParseError& e) {
                throw UsageError(std::string("config value: ") + e.what());
            }
        }
        if (g.threads == 0) {
            throw UsageError("--threads must be positive");
        }
        const json gj = params.resolved(&app);
        // Globals first, so the manifest's config alone replays the run.
        json cj = gj;
        const json sj = params.resolved(sub);
        for (const auto& [k, v] : sj.items()) {
            cj[k] = v;
        }
        const std::string name = sub->get_name();
        if (name == "cc-eval") {
            return run_cc_eval(eval, g, app.get_option("--output-dir")->count() > 0, gj, cj);
        }
        if (name == "cc-check") {
            return run_cc_check(check, g, gj, cj);
        }
        if (name == "probe-precision") {
            return run_probe(probe, g, gj, cj);
        }
        if (name == "ls-ablate") {
            return run_ablate(ablate, g, gj, cj);
        }
        if (name == "ls-project") {
            return run_project(project, g, gj, cj);
        }
        if (name == "mimic-train") {
            return run_mimic_train(mtrain, g, gj, cj);
        }
        return run_mimic_eval(meval, g, gj, cj);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
