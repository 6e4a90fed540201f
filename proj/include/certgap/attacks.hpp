#pragma once

#include <cstdint>
#include <optional>

#include "certgap/dataset.hpp"
#include "certgap/interval.hpp"
#include "certgap/linalg.hpp"
#include "certgap/net.hpp"
#include "certgap/threat.hpp"

namespace certgap {

struct AttackConfig {
    int steps = 100;
    int restarts = 5;
    /// Non-positive means 2.5 * eps / steps.
    double step_size = 0.0;
    std::uint64_t seed = 0;
    /// Stop as soon as an iterate misclassifies.
    bool early_stop = true;

    double resolved_step(double eps) const;
    void validate() const;
};

struct AttackResult {
    Vec delta;
    double loss = 0.0;
    bool misclassified = false;
};

/// Projected gradient ascent on the cross-entropy with random restarts.
/// delta = 0 is always a candidate. A misclassifying iterate is preferred
/// over any correctly classified one; otherwise the highest loss wins.
/// Signal sets ascend the coefficient of each direction separately.
AttackResult pgd_search(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm, const AttackConfig& cfg);
Vec pgd_attack(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm, const AttackConfig& cfg);

/// Candidate offsets t in [-eps, eps] along `direction` where the margin can
/// change sign: both ends, every first-layer ReLU breakpoint and the
/// midpoints between consecutive ones. With more than one hidden layer the
/// candidates are a uniform grid of `grid_points`.
std::vector<double> line_candidates(const DenseNet& net, const Vec& x, const Vec& direction, double eps,
                                    int grid_points = 1001);

struct LineSearchVerdict {
    bool misclassified = false;
    std::optional<Vec> witness;
};

/// Exact for networks with one hidden layer; requires a Signal threat model.
LineSearchVerdict line_search_attack(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);

/// Loss-maximising perturbation over the Signal set. The loss is convex
/// between consecutive breakpoints, so the candidates above contain the
/// maximiser for one-hidden-layer networks.
AttackResult line_search_max_loss(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);

struct AdvTrainOptions {
    /// Craft Signal perturbations with the line search instead of PGD.
    bool exact_signal = true;
    BoundMethod unstable_method = BoundMethod::Ibp;
};

/// SGD with momentum on the loss at adversarial examples crafted at the full
/// budget. Attack randomness is derived from (attack seed, epoch, example).
TrainTrace adv_train(DenseNet& net, const LabeledSet& data, const ThreatModel& tm, const TrainConfig& cfg,
                     const AttackConfig& attack, const AdvTrainOptions& opts = {});

}  // namespace certgap
