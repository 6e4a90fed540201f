#pragma once

#include <span>
#include <vector>

#include "certgap/interval.hpp"
#include "certgap/linalg.hpp"
#include "certgap/net.hpp"
#include "certgap/threat.hpp"

namespace certgap {

/// Lower-bounds z_y - z_target over the threat set.
struct MarginQuery {
    int true_class = 0;
    int target_class = 1;

    /// c = e_y - e_target; for a single-logit network c = sgn(y).
    Vec objective(int num_logits) const;
};

/// Backward dual-network variables for one query. nu[i] is the dual of the
/// output of affine layer i, nu_hat[i] = W_i^T nu[i] is the dual of its input.
struct DualState {
    std::vector<Vec> nu;
    std::vector<Vec> nu_hat;
    double objective = 0.0;
};

/// eps * sup_{delta in set} (-nu_hat^T delta): the l1 norm (Linf ball),
/// l2 norm (L2 ball) or max_m |nu_hat . dir_m| (signal-aligned segments).
double support_penalty(const ThreatModel& tm, const Vec& nu_hat_input);

/// Dual objective for each row of `c` (queries x outputs of the prefix
/// `layers`). `hidden` must hold bounds for every hidden layer of the prefix.
/// The ReLU relaxation slope on unstable neurons is u / (u - l).
Vec dual_objectives(std::span<const Layer> layers, const Vec& x, const Mat& c, const ThreatModel& tm,
                    std::span<const Interval> hidden);

/// Certified lower bound J~ on c^T f(x + delta) over the threat set.
double dual_bound(const DenseNet& net, const Vec& x, const Vec& c, const ThreatModel& tm, const BoundState& bounds,
                  DualState* state = nullptr);
double dual_bound(const DenseNet& net, const Vec& x, const MarginQuery& q, const ThreatModel& tm,
                  const BoundState& bounds);

/// Layer-1 bounds are exact; deeper layers are bounded with the dual
/// network of the truncated prefix using c = +-e_j, or with IBP when
/// `ibp_intermediate` is set.
BoundState coap_layer_bounds(const DenseNet& net, const Vec& x, const ThreatModel& tm, bool ibp_intermediate = false);

/// J~(y -> j) for all j (entry y is 0). Single-logit networks return one entry.
Vec coap_margins(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);

/// Cross-entropy on the logit vector with component y = 0 and j != y set to -J~(y -> j).
double coap_robust_loss(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);

/// Certified iff every J~(y -> j) > 0.
bool coap_certify(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm);

}  // namespace certgap
