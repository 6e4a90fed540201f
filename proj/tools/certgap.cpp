#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"
#include "certgap/datagen.hpp"
#include "certgap/evaluate.hpp"
#include "certgap/experiment.hpp"
#include "certgap/theory.hpp"

using namespace certgap;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::string> dataset;
    std::optional<std::size_t> n;
    std::optional<std::size_t> n_test;
    std::optional<int> d;
    std::optional<double> gamma;
    std::optional<double> r_inner;
    std::optional<double> sigma;
    std::optional<std::string> threat;
    std::optional<double> eps;
    std::optional<int> k;
    std::optional<std::uint64_t> dir_seed;
    std::optional<std::string> trainer;
    std::vector<std::uint64_t> seeds;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<int> batch_size;
    std::vector<int> hidden;
    std::optional<int> steps;
    std::optional<int> restarts;
    std::vector<std::string> modes;
    std::string out;
};

void add_common(CLI::App* app, CommonFlags& f) {
    app->add_option("--config", f.config, "TOML config file; flags override its values");
    app->add_option("--dataset", f.dataset, "spheres | linsep");
    app->add_option("--n", f.n, "training set size");
    app->add_option("--n-test", f.n_test, "test set size");
    app->add_option("--d", f.d, "input dimension");
    app->add_option("--gamma", f.gamma, "margin (spheres: r_outer - r_inner)");
    app->add_option("--r-inner", f.r_inner, "inner sphere radius");
    app->add_option("--sigma", f.sigma, "noise scale for linsep");
    app->add_option("--threat", f.threat, "linf | l2 | signal");
    app->add_option("--eps", f.eps, "perturbation budget");
    app->add_option("--k", f.k, "number of signal directions");
    app->add_option("--dir-seed", f.dir_seed, "seed for signal directions");
    app->add_option("--trainer", f.trainer, "standard | at | ibp | coap");
    app->add_option("--seeds", f.seeds, "comma separated seeds")->delimiter(',');
    app->add_option("--epochs", f.epochs, "training epochs");
    app->add_option("--lr", f.lr, "learning rate");
    app->add_option("--batch-size", f.batch_size, "mini-batch size");
    app->add_option("--hidden", f.hidden, "hidden widths, comma separated")->delimiter(',');
    app->add_option("--steps", f.steps, "PGD steps for evaluation");
    app->add_option("--restarts", f.restarts, "PGD restarts for evaluation");
    app->add_option("--mode", f.modes, "pgd, exact, certified-coap, certified-ibp")->delimiter(',');
    app->add_option("--out", f.out, "output path");
}

void apply(const CommonFlags& f, RunConfig& cfg) {
    if (f.dataset) cfg.data.kind = dataset_kind_from_string(*f.dataset);
    if (f.n) cfg.data.n_train = *f.n;
    if (f.n_test) cfg.data.n_test = *f.n_test;
    if (f.d) cfg.data.d = *f.d;
    if (f.gamma) cfg.data.gamma = *f.gamma;
    if (f.r_inner) cfg.data.r_inner = *f.r_inner;
    if (f.sigma) cfg.data.sigma = *f.sigma;
    if (f.threat) cfg.threat.kind = threat_kind_from_string(*f.threat);
    if (f.eps) cfg.threat.eps = *f.eps;
    if (f.k) cfg.threat.k = *f.k;
    if (f.dir_seed) cfg.threat.dir_seed = *f.dir_seed;
    if (f.trainer) cfg.trainer = trainer_from_string(*f.trainer);
    if (!f.seeds.empty()) cfg.seeds = f.seeds;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.lr) cfg.train.learning_rate = *f.lr;
    if (f.batch_size) cfg.train.batch_size = *f.batch_size;
    if (!f.hidden.empty()) cfg.hidden = f.hidden;
    if (f.steps) cfg.eval_attack.steps = *f.steps;
    if (f.restarts) cfg.eval_attack.restarts = *f.restarts;
    if (!f.modes.empty()) {
        cfg.eval_modes.clear();
        for (const std::string& m : f.modes) cfg.eval_modes.push_back(eval_mode_from_string(m));
    }
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

void print_result(const SeedResult& r) {
    std::printf("seed=%llu std_err=%.4f pgd=%s exact=%s cert_coap=%s cert_ibp=%s total_unstable=%.4f%s time=%.1fs\n",
                static_cast<unsigned long long>(r.seed), r.standard_error, fmt(r.pgd_error).c_str(),
                fmt(r.exact_error).c_str(), fmt(r.coap_certified_error).c_str(), fmt(r.ibp_certified_error).c_str(),
                r.total_unstable, r.diverged ? " DIVERGED" : "", r.wall_time_s);
}

int cmd_train(const CommonFlags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    apply(f, cfg);
    cfg.validate();
    for (std::uint64_t seed : cfg.seeds) {
        const auto start = std::chrono::steady_clock::now();
        RunConfig seeded = cfg;
        seeded.eval_attack.seed = derive_seed(seed, 5);
        const SeedArtifacts art = train_seed(seeded, seed);
        SeedResult r = evaluate_seed(seeded, art);
        r.seed = seed;
        r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        print_result(r);
        if (!f.out.empty()) {
            const std::string path = cfg.seeds.size() == 1 ? f.out : f.out + ".seed" + std::to_string(seed) + ".json";
            save_checkpoint(art.net, path);
            std::printf("checkpoint: %s\n", path.c_str());
        }
    }
    return 0;
}

int cmd_evaluate(const CommonFlags& f, const std::string& checkpoint) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    apply(f, cfg);
    cfg.validate();
    const DenseNet net = load_checkpoint(checkpoint);
    const std::uint64_t seed = cfg.seeds.front();
    RunConfig single = cfg;
    single.train.epochs = 0;
    single.trainer = Trainer::Standard;
    SeedArtifacts art = train_seed(single, seed);
    art.net = net;
    single.eval_attack.seed = derive_seed(seed, 5);
    SeedResult r = evaluate_seed(single, art);
    r.seed = seed;
    print_result(r);
    return 0;
}

int cmd_ablate(const CommonFlags& f, const std::optional<std::string>& axis, const std::vector<double>& values,
               const std::vector<std::string>& trainers, const std::vector<double>& lrs, bool quiet) {
    AblationConfig cfg;
    if (!f.config.empty()) cfg = load_ablation_config(f.config);
    apply(f, cfg.base);
    if (axis) cfg.axis = axis_from_string(*axis);
    if (!values.empty()) cfg.values = values;
    if (!trainers.empty()) {
        cfg.trainers.clear();
        for (const std::string& t : trainers) cfg.trainers.push_back(trainer_from_string(t));
    }
    if (!lrs.empty()) cfg.learning_rates = lrs;
    if (cfg.axis == Axis::K) {
        cfg.base.threat.kind = ThreatKind::Signal;
        bool has_exact = false;
        for (EvalMode m : cfg.base.eval_modes) has_exact = has_exact || m == EvalMode::Exact;
        if (!has_exact) cfg.base.eval_modes.push_back(EvalMode::Exact);
    }
    ProgressFn progress;
    if (!quiet) progress = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
    const AblationResult result = ablate(cfg, true, progress);
    if (f.out.empty()) {
        std::cout << csv_header() << '\n';
        for (const AblationRow& r : result.rows) std::cout << csv_row(r) << '\n';
    } else {
        write_csv(f.out, result.rows);
        write_summary_csv(f.out + ".summary.csv", result.summary);
        std::printf("wrote %s and %s.summary.csv\n", f.out.c_str(), f.out.c_str());
    }
    return 0;
}

int cmd_theory(bool quick, std::uint64_t seed) {
    theory::VerifyOptions opts;
    opts.seed = seed;
    if (quick) {
        opts.gradient_configs = 200;
        opts.risk_configs = 10;
        opts.risk_samples = 100000;
        opts.separation_configs = 5;
        opts.separation_samples = 200000;
    }
    bool ok = true;
    for (const theory::CheckReport& rep : theory::theory_verify(opts)) {
        std::printf("%s  %-40s worst=%.3e  (%s)\n", rep.passed ? "PASS" : "FAIL", rep.name.c_str(), rep.worst,
                    rep.detail.c_str());
        ok = ok && rep.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial and certified training of small ReLU networks on synthetic data"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");

    CommonFlags train_flags;
    CLI::App* train = app.add_subcommand("train", "train networks and report their errors");
    add_common(train, train_flags);

    CommonFlags eval_flags;
    std::string checkpoint;
    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a saved network on a freshly sampled test set");
    add_common(evaluate, eval_flags);
    evaluate->add_option("--checkpoint", checkpoint, "network JSON written by train")->required();

    CommonFlags ablate_flags;
    std::optional<std::string> axis;
    std::vector<double> values;
    std::vector<std::string> trainers;
    std::vector<double> lrs;
    bool quiet = false;
    CLI::App* abl = app.add_subcommand("ablate", "sweep epsilon, gamma or k and write per-seed CSV rows");
    add_common(abl, ablate_flags);
    abl->add_option("--axis", axis, "epsilon | gamma | k");
    abl->add_option("--values", values, "axis values, comma separated")->delimiter(',');
    abl->add_option("--trainers", trainers, "trainers to compare, comma separated")->delimiter(',');
    abl->add_option("--lrs", lrs, "candidate learning rates, comma separated")->delimiter(',');
    abl->add_flag("--quiet", quiet, "suppress per-cell progress");

    bool quick = false;
    std::uint64_t theory_seed = 2024;
    CLI::App* theory_cmd = app.add_subcommand("theory-verify", "numerical checks of the one-neuron results");
    theory_cmd->add_flag("--quick", quick, "smaller sample sizes");
    theory_cmd->add_option("--seed", theory_seed, "seed for sampled configurations");

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) omp_set_num_threads(threads);
    try {
        if (*train) return cmd_train(train_flags);
        if (*evaluate) return cmd_evaluate(eval_flags, checkpoint);
        if (*abl) return cmd_ablate(ablate_flags, axis, values, trainers, lrs, quiet);
        if (*theory_cmd) return cmd_theory(quick, theory_seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
