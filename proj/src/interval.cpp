#include "certgap/interval.hpp"

#include <limits>
#include <stdexcept>

#include "certgap/coap.hpp"

namespace certgap {

StabilityPartition partition(const Interval& bounds) {
    StabilityPartition p;
    for (Eigen::Index j = 0; j < bounds.lower.size(); ++j) {
        const double l = bounds.lower(j);
        const double u = bounds.upper(j);
        if (u <= 0.0) {
            p.inactive.push_back(static_cast<int>(j));
        } else if (l >= 0.0) {
            p.active.push_back(static_cast<int>(j));
        } else {
            p.unstable.push_back(static_cast<int>(j));
        }
    }
    return p;
}

Interval first_layer_bounds(const ThreatModel& tm, const Vec& x, const Mat& w1, const Vec& b1) {
    if (x.size() != w1.cols() || b1.size() != w1.rows()) {
        throw std::invalid_argument("first_layer_bounds: shape mismatch");
    }
    const Vec center = w1 * x + b1;
    Vec radius(w1.rows());
    switch (tm.kind) {
        case ThreatKind::Linf: radius = tm.eps * w1.cwiseAbs().rowwise().sum(); break;
        case ThreatKind::L2: radius = tm.eps * w1.rowwise().norm(); break;
        case ThreatKind::Signal:
            radius = tm.eps * (w1 * tm.directions.transpose()).cwiseAbs().rowwise().maxCoeff();
            break;
    }
    return {center - radius, center + radius};
}

Interval interval_affine(const Mat& w, const Vec& b, const Interval& in) {
    const Mat pos = w.cwiseMax(0.0);
    const Mat neg = w.cwiseMin(0.0);
    return {pos * in.lower + neg * in.upper + b, pos * in.upper + neg * in.lower + b};
}

Interval interval_relu(const Interval& in) { return {in.lower.cwiseMax(0.0), in.upper.cwiseMax(0.0)}; }

BoundState ibp_bounds(const DenseNet& net, const Vec& x, const ThreatModel& tm) {
    const auto& layers = net.layers();
    BoundState state;
    Interval current = first_layer_bounds(tm, x, layers[0].weight, layers[0].bias);
    for (std::size_t i = 1; i < layers.size(); ++i) {
        state.hidden.push_back(current);
        current = interval_affine(layers[i].weight, layers[i].bias, interval_relu(current));
    }
    state.output = std::move(current);
    return state;
}

int count_unstable(const BoundState& bounds) {
    int count = 0;
    for (const Interval& layer : bounds.hidden) {
        count += static_cast<int>(((layer.lower.array() <= 0.0) && (layer.upper.array() >= 0.0)).count());
    }
    return count;
}

double unstable_fraction(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, BoundMethod method) {
    const int m = net.hidden_neurons();
    if (m == 0 || data.size() == 0) return 0.0;
    long long total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vec x = data.row(i);
        total += method == BoundMethod::Ibp ? count_unstable(ibp_bounds(net, x, tm))
                                            : count_unstable(coap_layer_bounds(net, x, tm));
    }
    return static_cast<double>(total) / (static_cast<double>(m) * static_cast<double>(data.size()));
}

Vec ibp_worst_logits(const Interval& output, int y) {
    if (output.lower.size() == 1) {
        Vec z(1);
        z(0) = y == 1 ? output.lower(0) : output.upper(0);
        return z;
    }
    Vec z = output.upper;
    z(y) = output.lower(y);
    return z;
}

double ibp_robust_loss(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    const BoundState state = ibp_bounds(net, x, tm);
    return loss_value(loss_kind_for(net), ibp_worst_logits(state.output, y), y);
}

double ibp_worst_margin(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    return logit_margin(ibp_worst_logits(ibp_bounds(net, x, tm).output, y), y);
}

bool ibp_certify(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    return ibp_worst_margin(net, x, y, tm) > 0.0;
}

}  // namespace certgap
