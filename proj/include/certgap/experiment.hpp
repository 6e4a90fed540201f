#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "certgap/attacks.hpp"
#include "certgap/evaluate.hpp"
#include "certgap/interval.hpp"
#include "certgap/net.hpp"
#include "certgap/robust_objectives.hpp"
#include "certgap/threat.hpp"

namespace certgap {

enum class Trainer { Standard, At, Ibp, Coap };
enum class DatasetKind { Spheres, Linsep };

std::string to_string(Trainer t);
Trainer trainer_from_string(const std::string& s);
std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Spheres;
    int d = 10;
    std::size_t n_train = 500;
    std::size_t n_test = 10000;
    /// Spheres: r_outer = r_inner + gamma. Linsep: half-gap along e_1.
    double gamma = 20.0;
    double r_inner = 10.0;
    double sigma = 1.0;

    void validate() const;
};

struct RunConfig {
    DatasetSpec data;
    ThreatSpec threat;
    Trainer trainer = Trainer::Coap;
    std::vector<int> hidden{100};
    TrainConfig train;
    AttackConfig train_attack{10, 1, 0.0, 0, false};
    AttackConfig eval_attack{100, 5, 0.0, 0, true};
    std::vector<EvalMode> eval_modes{EvalMode::Pgd, EvalMode::CertifiedCoap};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    BoundMethod unstable_method = BoundMethod::Ibp;
    CertifiedOptions certified;

    void validate() const;
};

struct SeedResult {
    std::uint64_t seed = 0;
    double standard_error = 0.0;
    std::optional<double> pgd_error;
    std::optional<double> exact_error;
    std::optional<double> coap_certified_error;
    std::optional<double> ibp_certified_error;
    std::vector<double> unstable;  // per epoch
    double total_unstable = 0.0;
    bool diverged = false;
    double wall_time_s = 0.0;
};

struct RunResult {
    std::vector<SeedResult> seeds;
};

/// Everything derived from one seed for one run.
struct SeedArtifacts {
    LabeledSet train;
    LabeledSet test;
    ThreatModel threat;
    DenseNet net;
    TrainTrace trace;
};

/// Samples data, initialises and trains the network. Data depends only on the
/// seed and dataset spec, so trainers sharing a seed see identical samples.
SeedArtifacts train_seed(const RunConfig& cfg, std::uint64_t seed);
SeedResult evaluate_seed(const RunConfig& cfg, const SeedArtifacts& art, bool parallel = true);
SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, bool parallel = true);
RunResult run(const RunConfig& cfg);

enum class Axis { Epsilon, Gamma, K };
std::string to_string(Axis a);
Axis axis_from_string(const std::string& s);

/// Copy of `base` with the swept quantity set to `value`.
RunConfig apply_axis(const RunConfig& base, Axis axis, double value);

struct AblationConfig {
    RunConfig base;
    Axis axis = Axis::Epsilon;
    std::vector<double> values;
    std::vector<Trainer> trainers{Trainer::At, Trainer::Coap};
    /// Candidate learning rates; per (value, trainer) the rate with the lowest
    /// mean robust test error over seeds is kept.
    std::vector<double> learning_rates{0.1, 0.01, 0.001};

    void validate() const;
};

struct AblationRow {
    double axis_value = 0.0;
    Trainer trainer = Trainer::Coap;
    double learning_rate = 0.0;
    SeedResult result;
};

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};
MeanSe mean_se(const std::vector<double>& v);

struct SummaryRow {
    double axis_value = 0.0;
    Trainer trainer = Trainer::Coap;
    double learning_rate = 0.0;
    MeanSe std_err;
    std::optional<MeanSe> rob_err_pgd;
    std::optional<MeanSe> rob_err_exact;
    std::optional<MeanSe> cert_err;
    MeanSe total_unstable;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // selected learning rate only
    std::vector<AblationRow> all_rows;  // every (value, trainer, rate, seed) cell
    std::vector<SummaryRow> summary;
};

/// Robust error used for learning-rate selection and gap reporting: exact
/// when available, otherwise PGD, otherwise the standard error.
double headline_robust_error(const SeedResult& r);

using ProgressFn = std::function<void(const std::string&)>;

/// Cells (value, trainer, rate, seed) run in parallel when `parallel` is set;
/// the result is identical either way apart from wall times.
AblationResult ablate(const AblationConfig& cfg, bool parallel = true, const ProgressFn& progress = {});

std::vector<SummaryRow> summarize(const std::vector<AblationRow>& rows);

/// axis_value,seed,trainer,std_err,rob_err_pgd,rob_err_exact,cert_err,total_unstable,wall_time_s
std::string csv_header();
std::string csv_row(const AblationRow& row);
void write_csv(const std::string& path, const std::vector<AblationRow>& rows);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

/// TOML config files mirroring RunConfig / AblationConfig.
RunConfig load_run_config(const std::string& path);
AblationConfig load_ablation_config(const std::string& path);
RunConfig parse_run_config(const std::string& toml_text);
AblationConfig parse_ablation_config(const std::string& toml_text);

}  // namespace certgap
