#include "certgap/coap.hpp"

#include <stdexcept>

namespace certgap {

Vec MarginQuery::objective(int num_logits) const {
    if (num_logits == 1) {
        Vec c(1);
        c(0) = true_class == 1 ? 1.0 : -1.0;
        return c;
    }
    if (true_class == target_class) throw std::invalid_argument("MarginQuery: target must differ from true class");
    Vec c = Vec::Zero(num_logits);
    c(true_class) = 1.0;
    c(target_class) = -1.0;
    return c;
}

double support_penalty(const ThreatModel& tm, const Vec& nu_hat_input) {
    switch (tm.kind) {
        case ThreatKind::Linf: return tm.eps * nu_hat_input.lpNorm<1>();
        case ThreatKind::L2: return tm.eps * nu_hat_input.norm();
        case ThreatKind::Signal: return tm.eps * (tm.directions * nu_hat_input).cwiseAbs().maxCoeff();
    }
    return 0.0;
}

namespace {

Vec relu_slopes(const Interval& b) {
    Vec d(b.lower.size());
    for (Eigen::Index j = 0; j < d.size(); ++j) {
        const double l = b.lower(j);
        const double u = b.upper(j);
        if (u <= 0.0) {
            d(j) = 0.0;
        } else if (l >= 0.0) {
            d(j) = 1.0;
        } else {
            d(j) = u / (u - l);
        }
    }
    return d;
}

// Shared backward pass; fills `state` for single-row queries when requested.
Vec dual_pass(std::span<const Layer> layers, const Vec& x, const Mat& c, const ThreatModel& tm,
              std::span<const Interval> hidden, DualState* state) {
    if (layers.empty()) throw std::invalid_argument("dual pass: no layers");
    if (hidden.size() + 1 < layers.size()) throw std::invalid_argument("dual pass: missing bounds for hidden layers");
    if (c.cols() != layers.back().weight.rows()) throw std::invalid_argument("dual pass: objective has wrong width");
    if (x.size() != layers.front().weight.cols()) throw std::invalid_argument("dual pass: input dimension mismatch");

    const std::size_t depth = layers.size();
    if (state) {
        state->nu.assign(depth, Vec());
        state->nu_hat.assign(depth, Vec());
    }
    Mat nu = -c;
    Vec objective = Vec::Zero(c.rows());
    for (std::size_t k = depth; k-- > 0;) {
        const Layer& layer = layers[k];
        objective -= nu * layer.bias;
        Mat nu_hat = nu * layer.weight;
        if (state) {
            state->nu[k] = nu.row(0).transpose();
            state->nu_hat[k] = nu_hat.row(0).transpose();
        }
        if (k == 0) {
            objective -= nu_hat * x;
            for (Eigen::Index q = 0; q < nu_hat.rows(); ++q) {
                objective(q) -= support_penalty(tm, nu_hat.row(q).transpose());
            }
            break;
        }
        const Interval& bounds = hidden[k - 1];
        const Vec slopes = relu_slopes(bounds);
        nu = nu_hat * slopes.asDiagonal();
        for (Eigen::Index j = 0; j < slopes.size(); ++j) {
            if (bounds.lower(j) < 0.0 && bounds.upper(j) > 0.0) {
                objective += bounds.lower(j) * nu.col(j).cwiseMax(0.0);
            }
        }
    }
    if (state) state->objective = objective(0);
    return objective;
}

}  // namespace

Vec dual_objectives(std::span<const Layer> layers, const Vec& x, const Mat& c, const ThreatModel& tm,
                    std::span<const Interval> hidden) {
    return dual_pass(layers, x, c, tm, hidden, nullptr);
}

double dual_bound(const DenseNet& net, const Vec& x, const Vec& c, const ThreatModel& tm, const BoundState& bounds,
                  DualState* state) {
    if (bounds.hidden.size() + 1 < net.depth()) throw std::invalid_argument("dual_bound: missing layer bounds");
    const Mat row = c.transpose();
    return dual_pass(net.layers(), x, row, tm, bounds.hidden, state)(0);
}

double dual_bound(const DenseNet& net, const Vec& x, const MarginQuery& q, const ThreatModel& tm,
                  const BoundState& bounds) {
    return dual_bound(net, x, q.objective(net.output_dim()), tm, bounds);
}

BoundState coap_layer_bounds(const DenseNet& net, const Vec& x, const ThreatModel& tm, bool ibp_intermediate) {
    if (ibp_intermediate) {
        BoundState s = ibp_bounds(net, x, tm);
        s.output = {};
        return s;
    }
    const auto& layers = net.layers();
    BoundState state;
    if (layers.size() < 2) return state;
    state.hidden.push_back(first_layer_bounds(tm, x, layers[0].weight, layers[0].bias));
    for (std::size_t k = 1; k + 1 < layers.size(); ++k) {
        const auto width = layers[k].weight.rows();
        Mat c(2 * width, width);
        c << Mat::Identity(width, width), -Mat::Identity(width, width);
        const Vec j = dual_objectives(std::span<const Layer>(layers.data(), k + 1), x, c, tm, state.hidden);
        state.hidden.push_back({j.head(width), -j.tail(width)});
    }
    return state;
}

Vec coap_margins(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    const BoundState bounds = coap_layer_bounds(net, x, tm);
    const int k = net.output_dim();
    if (k == 1) {
        const Mat c = MarginQuery{y, y}.objective(1).transpose();
        return dual_objectives(net.layers(), x, c, tm, bounds.hidden);
    }
    Mat c = Mat::Zero(k, k);
    for (int j = 0; j < k; ++j) {
        if (j == y) continue;
        c(j, y) = 1.0;
        c(j, j) = -1.0;
    }
    Vec margins = dual_objectives(net.layers(), x, c, tm, bounds.hidden);
    margins(y) = 0.0;
    return margins;
}

double coap_robust_loss(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    const Vec margins = coap_margins(net, x, y, tm);
    if (margins.size() == 1) {
        Vec z(1);
        z(0) = y == 1 ? margins(0) : -margins(0);
        return loss_value(LossKind::BinarySigmoid, z, y);
    }
    return loss_value(LossKind::SoftmaxCE, -margins, y);
}

bool coap_certify(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    const Vec margins = coap_margins(net, x, y, tm);
    for (Eigen::Index j = 0; j < margins.size(); ++j) {
        if (margins.size() > 1 && j == y) continue;
        if (!(margins(j) > 0.0)) return false;
    }
    return true;
}

}  // namespace certgap
