#include "certgap/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "certgap/datagen.hpp"

namespace certgap {

std::string to_string(Trainer t) {
    switch (t) {
        case Trainer::Standard: return "standard";
        case Trainer::At: return "at";
        case Trainer::Ibp: return "ibp";
        case Trainer::Coap: return "coap";
    }
    return "unknown";
}

Trainer trainer_from_string(const std::string& s) {
    if (s == "standard") return Trainer::Standard;
    if (s == "at" || s == "adv") return Trainer::At;
    if (s == "ibp") return Trainer::Ibp;
    if (s == "coap") return Trainer::Coap;
    throw std::invalid_argument("unknown trainer: " + s);
}

std::string to_string(DatasetKind k) { return k == DatasetKind::Spheres ? "spheres" : "linsep"; }

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "spheres") return DatasetKind::Spheres;
    if (s == "linsep") return DatasetKind::Linsep;
    throw std::invalid_argument("unknown dataset: " + s);
}

std::string to_string(Axis a) {
    switch (a) {
        case Axis::Epsilon: return "epsilon";
        case Axis::Gamma: return "gamma";
        case Axis::K: return "k";
    }
    return "unknown";
}

Axis axis_from_string(const std::string& s) {
    if (s == "epsilon" || s == "eps") return Axis::Epsilon;
    if (s == "gamma") return Axis::Gamma;
    if (s == "k") return Axis::K;
    throw std::invalid_argument("unknown ablation axis: " + s);
}

void DatasetSpec::validate() const {
    if (d < 2) throw std::invalid_argument("dataset: d must be >= 2");
    if (n_train == 0) throw std::invalid_argument("dataset: n_train must be positive");
    if (!(gamma > 0.0)) throw std::invalid_argument("dataset: gamma must be positive");
    if (kind == DatasetKind::Spheres && !(r_inner > 0.0)) throw std::invalid_argument("dataset: r_inner must be positive");
    if (kind == DatasetKind::Linsep && !(sigma > 0.0)) throw std::invalid_argument("dataset: sigma must be positive");
}

void RunConfig::validate() const {
    data.validate();
    train.validate();
    train_attack.validate();
    eval_attack.validate();
    if (threat.eps < 0.0) throw std::invalid_argument("run config: eps must be nonnegative");
    if (threat.kind == ThreatKind::Signal && (threat.k < 1 || threat.k > data.d)) {
        throw std::invalid_argument("run config: signal k must lie in [1, d]");
    }
    for (int w : hidden) {
        if (w < 1) throw std::invalid_argument("run config: hidden widths must be positive");
    }
    for (EvalMode m : eval_modes) {
        if (m == EvalMode::Exact && threat.kind != ThreatKind::Signal) {
            throw std::invalid_argument("run config: exact evaluation requires a signal threat model");
        }
    }
    if (seeds.empty()) throw std::invalid_argument("run config: no seeds");
}

SeedArtifacts train_seed(const RunConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SeedArtifacts art;
    const std::uint64_t data_seed = derive_seed(seed, 1);
    if (cfg.data.kind == DatasetKind::Spheres) {
        SpheresParams p;
        p.d = cfg.data.d;
        p.r_inner = cfg.data.r_inner;
        p.r_outer = cfg.data.r_inner + cfg.data.gamma;
        p.n_train = cfg.data.n_train;
        p.n_test = cfg.data.n_test;
        p.seed = data_seed;
        art.train = sample_spheres(p);
        art.test = sample_spheres_test(p);
    } else {
        LinsepParams p{cfg.data.d, cfg.data.gamma, cfg.data.sigma, cfg.data.n_train, data_seed};
        art.train = sample_linsep(p);
        p.n = cfg.data.n_test;
        p.seed = derive_seed(data_seed, 0x7e57);
        art.test = sample_linsep(p);
    }
    art.threat = cfg.threat.build(cfg.data.d);

    std::vector<int> widths{cfg.data.d};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(2);
    art.net = DenseNet::random(widths, derive_seed(seed, 2));

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(seed, 3);
    AttackConfig attack = cfg.train_attack;
    attack.seed = derive_seed(seed, 4);
    CertifiedOptions certified = cfg.certified;
    certified.unstable_method = cfg.unstable_method;
    switch (cfg.trainer) {
        case Trainer::Standard:
            art.trace = train_standard(art.net, art.train, tc,
                                       unstable_recorder(art.train, art.threat, cfg.unstable_method));
            break;
        case Trainer::At: {
            AdvTrainOptions opts;
            opts.unstable_method = cfg.unstable_method;
            art.trace = adv_train(art.net, art.train, art.threat, tc, attack, opts);
            break;
        }
        case Trainer::Ibp: art.trace = ibp_train(art.net, art.train, art.threat, tc, certified); break;
        case Trainer::Coap: art.trace = coap_train(art.net, art.train, art.threat, tc, certified); break;
    }
    return art;
}

SeedResult evaluate_seed(const RunConfig& cfg, const SeedArtifacts& art, bool parallel) {
    SeedResult r;
    r.standard_error =
        failure_rate(parallel ? standard_failures(art.net, art.test) : standard_failures_serial(art.net, art.test));
    for (EvalMode mode : cfg.eval_modes) {
        const auto flags = parallel ? robust_failures(art.net, art.test, art.threat, mode, cfg.eval_attack)
                                    : robust_failures_serial(art.net, art.test, art.threat, mode, cfg.eval_attack);
        const double err = failure_rate(flags);
        switch (mode) {
            case EvalMode::Pgd: r.pgd_error = err; break;
            case EvalMode::Exact: r.exact_error = err; break;
            case EvalMode::CertifiedCoap: r.coap_certified_error = err; break;
            case EvalMode::CertifiedIbp: r.ibp_certified_error = err; break;
        }
    }
    r.unstable = art.trace.unstable;
    r.total_unstable = std::accumulate(r.unstable.begin(), r.unstable.end(), 0.0);
    r.diverged = art.trace.diverged;
    return r;
}

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, bool parallel) {
    const auto start = std::chrono::steady_clock::now();
    RunConfig seeded = cfg;
    seeded.eval_attack.seed = derive_seed(seed, 5);
    const SeedArtifacts art = train_seed(seeded, seed);
    SeedResult r = evaluate_seed(seeded, art, parallel);
    r.seed = seed;
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

RunResult run(const RunConfig& cfg) {
    cfg.validate();
    RunResult out;
    for (std::uint64_t s : cfg.seeds) out.seeds.push_back(run_seed(cfg, s));
    return out;
}

RunConfig apply_axis(const RunConfig& base, Axis axis, double value) {
    RunConfig cfg = base;
    switch (axis) {
        case Axis::Epsilon: cfg.threat.eps = value; break;
        case Axis::Gamma: cfg.data.gamma = value; break;
        case Axis::K:
            if (value < 1.0 || value != std::floor(value)) throw std::invalid_argument("k axis values must be positive integers");
            cfg.threat.kind = ThreatKind::Signal;
            cfg.threat.k = static_cast<int>(value);
            break;
    }
    return cfg;
}

void AblationConfig::validate() const {
    if (values.empty()) throw std::invalid_argument("ablation: no axis values");
    if (trainers.empty()) throw std::invalid_argument("ablation: no trainers");
    if (learning_rates.empty()) throw std::invalid_argument("ablation: no learning rates");
    for (double v : values) apply_axis(base, axis, v).validate();
}

MeanSe mean_se(const std::vector<double>& v) {
    MeanSe m;
    if (v.empty()) return m;
    const double n = static_cast<double>(v.size());
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.se = std::sqrt(ss / (n - 1.0) / n);
    }
    return m;
}

double headline_robust_error(const SeedResult& r) {
    if (r.exact_error) return *r.exact_error;
    if (r.pgd_error) return *r.pgd_error;
    return r.standard_error;
}

AblationResult ablate(const AblationConfig& cfg, bool parallel, const ProgressFn& progress) {
    cfg.validate();
    struct Cell {
        std::size_t value;
        std::size_t trainer;
        std::size_t rate;
        std::size_t seed;
    };
    const RunConfig& base = cfg.base;
    std::vector<Cell> cells;
    for (std::size_t v = 0; v < cfg.values.size(); ++v) {
        for (std::size_t t = 0; t < cfg.trainers.size(); ++t) {
            for (std::size_t r = 0; r < cfg.learning_rates.size(); ++r) {
                for (std::size_t s = 0; s < base.seeds.size(); ++s) cells.push_back({v, t, r, s});
            }
        }
    }
    std::vector<SeedResult> results(cells.size());
    auto run_cell = [&](std::size_t i) {
        const Cell& c = cells[i];
        RunConfig rc = apply_axis(base, cfg.axis, cfg.values[c.value]);
        rc.trainer = cfg.trainers[c.trainer];
        rc.train.learning_rate = cfg.learning_rates[c.rate];
        results[i] = run_seed(rc, base.seeds[c.seed], !parallel);
        if (progress) {
            std::ostringstream os;
            os << to_string(cfg.axis) << "=" << cfg.values[c.value] << " trainer=" << to_string(rc.trainer)
               << " lr=" << rc.train.learning_rate << " seed=" << base.seeds[c.seed]
               << " std=" << results[i].standard_error << " rob=" << headline_robust_error(results[i])
               << " t=" << results[i].wall_time_s << "s";
#pragma omp critical(certgap_progress)
            progress(os.str());
        }
    };
    const auto n = static_cast<long>(cells.size());
    if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
        for (long i = 0; i < n; ++i) run_cell(static_cast<std::size_t>(i));
    } else {
        for (long i = 0; i < n; ++i) run_cell(static_cast<std::size_t>(i));
    }

    AblationResult out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const Cell& c = cells[i];
        out.all_rows.push_back(AblationRow{cfg.values[c.value], cfg.trainers[c.trainer], cfg.learning_rates[c.rate], results[i]});
    }
    const std::size_t per_rate = base.seeds.size();
    const std::size_t per_trainer = per_rate * cfg.learning_rates.size();
    const std::size_t per_value = per_trainer * cfg.trainers.size();
    for (std::size_t v = 0; v < cfg.values.size(); ++v) {
        for (std::size_t t = 0; t < cfg.trainers.size(); ++t) {
            std::size_t best_rate = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < cfg.learning_rates.size(); ++r) {
                double sum = 0.0;
                for (std::size_t s = 0; s < per_rate; ++s) {
                    sum += headline_robust_error(results[v * per_value + t * per_trainer + r * per_rate + s]);
                }
                if (sum < best) {
                    best = sum;
                    best_rate = r;
                }
            }
            for (std::size_t s = 0; s < per_rate; ++s) {
                out.rows.push_back(AblationRow{cfg.values[v], cfg.trainers[t], cfg.learning_rates[best_rate],
                                               results[v * per_value + t * per_trainer + best_rate * per_rate + s]});
            }
        }
    }
    out.summary = summarize(out.rows);
    return out;
}

std::vector<SummaryRow> summarize(const std::vector<AblationRow>& rows) {
    std::vector<SummaryRow> out;
    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i;
        std::vector<double> std_err, pgd, exact, cert, unstable;
        while (j < rows.size() && rows[j].axis_value == rows[i].axis_value && rows[j].trainer == rows[i].trainer) {
            const SeedResult& r = rows[j].result;
            std_err.push_back(r.standard_error);
            if (r.pgd_error) pgd.push_back(*r.pgd_error);
            if (r.exact_error) exact.push_back(*r.exact_error);
            if (r.coap_certified_error) cert.push_back(*r.coap_certified_error);
            unstable.push_back(r.total_unstable);
            ++j;
        }
        SummaryRow s;
        s.axis_value = rows[i].axis_value;
        s.trainer = rows[i].trainer;
        s.learning_rate = rows[i].learning_rate;
        s.std_err = mean_se(std_err);
        if (!pgd.empty()) s.rob_err_pgd = mean_se(pgd);
        if (!exact.empty()) s.rob_err_exact = mean_se(exact);
        if (!cert.empty()) s.cert_err = mean_se(cert);
        s.total_unstable = mean_se(unstable);
        out.push_back(s);
        i = j;
    }
    return out;
}

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::string opt(const std::optional<MeanSe>& v, bool se) {
    if (!v) return {};
    return num(se ? v->se : v->mean);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path);
}

}  // namespace

std::string csv_header() {
    return "axis_value,seed,trainer,std_err,rob_err_pgd,rob_err_exact,cert_err,total_unstable,wall_time_s";
}

std::string csv_row(const AblationRow& row) {
    const SeedResult& r = row.result;
    char wall[32];
    std::snprintf(wall, sizeof(wall), "%.3f", r.wall_time_s);
    std::ostringstream os;
    os << num(row.axis_value) << ',' << r.seed << ',' << to_string(row.trainer) << ',' << num(r.standard_error) << ','
       << opt(r.pgd_error) << ',' << opt(r.exact_error) << ',' << opt(r.coap_certified_error) << ','
       << num(r.total_unstable) << ',' << wall;
    return os.str();
}

void write_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << csv_header() << '\n';
    for (const AblationRow& r : rows) os << csv_row(r) << '\n';
    write_text(path, os.str());
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os << "axis_value,trainer,learning_rate,std_err_mean,std_err_se,rob_err_pgd_mean,rob_err_pgd_se,"
          "rob_err_exact_mean,rob_err_exact_se,cert_err_mean,cert_err_se,total_unstable_mean,total_unstable_se\n";
    for (const SummaryRow& s : rows) {
        os << num(s.axis_value) << ',' << to_string(s.trainer) << ',' << num(s.learning_rate) << ','
           << num(s.std_err.mean) << ',' << num(s.std_err.se) << ',' << opt(s.rob_err_pgd, false) << ','
           << opt(s.rob_err_pgd, true) << ',' << opt(s.rob_err_exact, false) << ',' << opt(s.rob_err_exact, true)
           << ',' << opt(s.cert_err, false) << ',' << opt(s.cert_err, true) << ',' << num(s.total_unstable.mean)
           << ',' << num(s.total_unstable.se) << '\n';
    }
    write_text(path, os.str());
}

}  // namespace certgap
