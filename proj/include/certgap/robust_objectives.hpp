#pragma once

#include <span>
#include <vector>

#include "certgap/autodiff.hpp"
#include "certgap/dataset.hpp"
#include "certgap/interval.hpp"
#include "certgap/net.hpp"
#include "certgap/threat.hpp"

// Batched certified losses recorded on an autodiff tape so that gradients
// flow through the bound computation itself.
namespace certgap {

/// Network parameters bound to a tape. Biases are 1 x out rows.
struct TapeNet {
    std::vector<ad::Var> weight;
    std::vector<ad::Var> bias;

    static TapeNet bind(ad::Tape& tape, const DenseNet& net);
    /// Reads parameter gradients after `Tape::backward`.
    Gradient gradient(const ad::Tape& tape) const;
};

struct TapeInterval {
    ad::Var lower;  // batch x width
    ad::Var upper;
};

struct CertifiedOptions {
    /// Treat pre-activation bounds as constants when differentiating.
    bool freeze_bounds = false;
    /// Use IBP rather than the dual network for hidden layers past the first.
    bool ibp_intermediate = false;
    /// Bound method used for the per-epoch unstable fraction.
    BoundMethod unstable_method = BoundMethod::Ibp;
};

RowMat gather_inputs(const LabeledSet& data, std::span<const std::size_t> rows);
std::vector<int> gather_labels(const LabeledSet& data, std::span<const std::size_t> rows);

/// Exact first-layer bounds for every row of `x`.
TapeInterval tape_first_layer_bounds(ad::Tape& tape, const TapeNet& p, const Mat& x, const ThreatModel& tm);

/// Dual objective for each query row of `c` over the prefix of `depth` layers;
/// query q belongs to batch row `owner[q]`. Returns a Q x 1 column.
ad::Var tape_dual_objectives(ad::Tape& tape, const TapeNet& p, std::size_t depth, const Mat& x,
                             const std::vector<TapeInterval>& hidden, const Mat& c, const std::vector<int>& owner,
                             const ThreatModel& tm);

/// Mean IBP robust cross-entropy over the batch.
ad::Var ibp_batch_loss(ad::Tape& tape, const TapeNet& p, const Mat& x, const std::vector<int>& y,
                       const ThreatModel& tm);
/// Mean COAP robust cross-entropy over the batch.
ad::Var coap_batch_loss(ad::Tape& tape, const TapeNet& p, const Mat& x, const std::vector<int>& y,
                        const ThreatModel& tm, const CertifiedOptions& opts = {});

/// Loss value and, when `grad` is given, its parameter gradient (overwritten).
double ibp_loss_and_gradient(const DenseNet& net, const Mat& x, const std::vector<int>& y, const ThreatModel& tm,
                             Gradient* grad);
double coap_loss_and_gradient(const DenseNet& net, const Mat& x, const std::vector<int>& y, const ThreatModel& tm,
                              const CertifiedOptions& opts, Gradient* grad);

/// Appends the unstable fraction on `data` at the full budget to the trace.
EpochHook unstable_recorder(const LabeledSet& data, const ThreatModel& tm, BoundMethod method);

/// SGD with momentum on the IBP / COAP robust loss with the eps ramp of `cfg`.
TrainTrace ibp_train(DenseNet& net, const LabeledSet& data, const ThreatModel& tm, const TrainConfig& cfg,
                     const CertifiedOptions& opts = {});
TrainTrace coap_train(DenseNet& net, const LabeledSet& data, const ThreatModel& tm, const TrainConfig& cfg,
                      const CertifiedOptions& opts = {});

}  // namespace certgap
