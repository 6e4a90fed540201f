#pragma once

#include <vector>

#include "certgap/dataset.hpp"
#include "certgap/linalg.hpp"
#include "certgap/net.hpp"
#include "certgap/threat.hpp"

namespace certgap {

struct Interval {
    Vec lower;
    Vec upper;
};

/// Pre-activation bounds of every hidden layer for one input; `output`
/// holds the logit interval when the method produces one (IBP).
struct BoundState {
    std::vector<Interval> hidden;
    Interval output;
};

/// Neuron indices per stability class for one layer. `inactive` is u <= 0,
/// `active` is l >= 0 (and not inactive), `unstable` is l < 0 < u.
struct StabilityPartition {
    std::vector<int> inactive;
    std::vector<int> active;
    std::vector<int> unstable;
};

StabilityPartition partition(const Interval& bounds);

/// Bounds of W1 (x + delta) + b1 over the threat set; exact for every variant.
Interval first_layer_bounds(const ThreatModel& tm, const Vec& x, const Mat& w1, const Vec& b1);

Interval interval_affine(const Mat& w, const Vec& b, const Interval& in);
Interval interval_relu(const Interval& in);

BoundState ibp_bounds(const DenseNet& net, const Vec& x, const ThreatModel& tm);

enum class BoundMethod { Ibp, Coap };

/// Fraction of (hidden neuron, example) pairs with l <= 0 <= u.
double unstable_fraction(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, BoundMethod method);
/// Count of unstable neurons for a single example.
int count_unstable(const BoundState& bounds);

/// Logit vector with the lower bound for class y and upper bounds elsewhere.
Vec ibp_worst_logits(const Interval& output, int y);
double ibp_robust_loss(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);
/// Lower bound on the logit margin from the output interval.
double ibp_worst_margin(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);
bool ibp_certify(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);

}  // namespace certgap
