#pragma once

#include <string>
#include <vector>

#include "certgap/attacks.hpp"
#include "certgap/dataset.hpp"
#include "certgap/net.hpp"
#include "certgap/threat.hpp"

namespace certgap {

enum class EvalMode { Pgd, Exact, CertifiedCoap, CertifiedIbp };

std::string to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& s);

struct EvalResult {
    double standard_error = 0.0;
    /// For certified modes this is 1 - certified fraction.
    double robust_error = 0.0;
};

/// Per-example flag: 1 when the example is misclassified at delta = 0.
std::vector<char> standard_failures(const DenseNet& net, const LabeledSet& data);
std::vector<char> standard_failures_serial(const DenseNet& net, const LabeledSet& data);

/// Per-example flag: 1 when `mode` finds (or cannot exclude) a misclassifying
/// perturbation. PGD randomness for example i comes from derive_seed(attack.seed, i),
/// so the result does not depend on the thread count.
std::vector<char> robust_failures(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, EvalMode mode,
                                  const AttackConfig& attack = {});
/// Single-threaded reference for `robust_failures`.
std::vector<char> robust_failures_serial(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm,
                                         EvalMode mode, const AttackConfig& attack = {});

double failure_rate(const std::vector<char>& flags);

EvalResult evaluate(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, EvalMode mode,
                    const AttackConfig& attack = {});
EvalResult evaluate_serial(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, EvalMode mode,
                           const AttackConfig& attack = {});

}  // namespace certgap
