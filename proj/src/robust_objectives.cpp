#include "certgap/robust_objectives.hpp"

#include <stdexcept>

namespace certgap {

using ad::Tape;
using ad::Var;

TapeNet TapeNet::bind(Tape& tape, const DenseNet& net) {
    TapeNet p;
    for (const Layer& layer : net.layers()) {
        p.weight.push_back(tape.parameter(layer.weight));
        p.bias.push_back(tape.parameter(layer.bias.transpose()));
    }
    return p;
}

Gradient TapeNet::gradient(const Tape& tape) const {
    Gradient g;
    for (std::size_t i = 0; i < weight.size(); ++i) {
        const Mat gb = tape.grad(bias[i]);
        g.layers.push_back(Layer{tape.grad(weight[i]), gb.row(0).transpose()});
    }
    return g;
}

RowMat gather_inputs(const LabeledSet& data, std::span<const std::size_t> rows) {
    RowMat x(static_cast<Eigen::Index>(rows.size()), data.inputs.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = data.inputs.row(static_cast<Eigen::Index>(rows[i]));
    }
    return x;
}

std::vector<int> gather_labels(const LabeledSet& data, std::span<const std::size_t> rows) {
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = data.labels[rows[i]];
    return y;
}

namespace {

Var input_penalty(Tape& tape, Var nu_hat, const ThreatModel& tm) {
    switch (tm.kind) {
        case ThreatKind::Linf: return ad::row_sum(ad::abs(nu_hat));
        case ThreatKind::L2: return ad::row_norm2(nu_hat);
        case ThreatKind::Signal: return ad::row_max_abs(ad::matmul_t(nu_hat, tape.constant(tm.directions)));
    }
    throw std::invalid_argument("input_penalty: unknown threat kind");
}

TapeInterval maybe_freeze(Tape& tape, TapeInterval b, bool freeze) {
    if (!freeze) return b;
    return {tape.constant(b.lower.value()), tape.constant(b.upper.value())};
}

TapeInterval tape_interval_affine(Var w, Var b, const TapeInterval& in) {
    const Var lo = ad::relu(in.lower);
    const Var up = ad::relu(in.upper);
    const Var mid = ad::scale(ad::add(lo, up), 0.5);
    const Var rad = ad::scale(ad::sub(up, lo), 0.5);
    const Var mid_out = ad::add_row(ad::matmul_t(mid, w), b);
    const Var rad_out = ad::matmul_t(rad, ad::abs(w));
    return {ad::sub(mid_out, rad_out), ad::add(mid_out, rad_out)};
}

std::vector<int> repeat_rows(Eigen::Index batch, Eigen::Index times) {
    std::vector<int> owner(static_cast<std::size_t>(batch * times));
    for (Eigen::Index e = 0; e < batch; ++e) {
        for (Eigen::Index j = 0; j < times; ++j) owner[static_cast<std::size_t>(e * times + j)] = static_cast<int>(e);
    }
    return owner;
}

// Hidden pre-activation bounds for every hidden layer of the network.
std::vector<TapeInterval> coap_hidden_bounds(Tape& tape, const TapeNet& p, const Mat& x, const ThreatModel& tm,
                                             const CertifiedOptions& opts) {
    std::vector<TapeInterval> hidden;
    const std::size_t depth = p.weight.size();
    if (depth < 2) return hidden;
    hidden.push_back(maybe_freeze(tape, tape_first_layer_bounds(tape, p, x, tm), opts.freeze_bounds));
    const Eigen::Index batch = x.rows();
    for (std::size_t k = 1; k + 1 < depth; ++k) {
        if (opts.ibp_intermediate) {
            hidden.push_back(
                maybe_freeze(tape, tape_interval_affine(p.weight[k], p.bias[k], hidden.back()), opts.freeze_bounds));
            continue;
        }
        const Eigen::Index width = p.weight[k].rows();
        Mat c(batch * 2 * width, width);
        for (Eigen::Index e = 0; e < batch; ++e) {
            c.middleRows(e * 2 * width, width).setIdentity();
            c.middleRows(e * 2 * width + width, width) = -Mat::Identity(width, width);
        }
        const Var j = tape_dual_objectives(tape, p, k + 1, x, hidden, c, repeat_rows(batch, 2 * width), tm);
        Eigen::MatrixXi lo_idx(batch, width), up_idx(batch, width);
        for (Eigen::Index e = 0; e < batch; ++e) {
            for (Eigen::Index r = 0; r < width; ++r) {
                lo_idx(e, r) = static_cast<int>(e * 2 * width + r);
                up_idx(e, r) = static_cast<int>(e * 2 * width + width + r);
            }
        }
        TapeInterval b{ad::pick(j, lo_idx), ad::scale(ad::pick(j, up_idx), -1.0)};
        hidden.push_back(maybe_freeze(tape, b, opts.freeze_bounds));
    }
    return hidden;
}

}  // namespace

TapeInterval tape_first_layer_bounds(Tape& tape, const TapeNet& p, const Mat& x, const ThreatModel& tm) {
    const Var w = p.weight.front();
    if (x.cols() != w.cols()) throw std::invalid_argument("tape_first_layer_bounds: input dimension mismatch");
    const Var centre = ad::add_row(ad::matmul_t(tape.constant(x), w), p.bias.front());
    Var radius;
    switch (tm.kind) {
        case ThreatKind::Linf: radius = ad::row_sum(ad::abs(w)); break;
        case ThreatKind::L2: radius = ad::row_norm2(w); break;
        case ThreatKind::Signal: radius = ad::row_max_abs(ad::matmul_t(w, tape.constant(tm.directions))); break;
    }
    const Var r = ad::transpose(ad::scale(radius, tm.eps));
    return {ad::add_row(centre, ad::scale(r, -1.0)), ad::add_row(centre, r)};
}

Var tape_dual_objectives(Tape& tape, const TapeNet& p, std::size_t depth, const Mat& x,
                         const std::vector<TapeInterval>& hidden, const Mat& c, const std::vector<int>& owner,
                         const ThreatModel& tm) {
    if (depth == 0 || depth > p.weight.size()) throw std::invalid_argument("tape_dual_objectives: bad depth");
    if (hidden.size() + 1 < depth) throw std::invalid_argument("tape_dual_objectives: missing hidden bounds");
    if (static_cast<std::size_t>(c.rows()) != owner.size()) throw std::invalid_argument("tape_dual_objectives: owner size");
    Var nu = tape.constant(-c);
    Var objective = tape.constant(Mat::Zero(c.rows(), 1));
    for (std::size_t k = depth; k-- > 0;) {
        objective = ad::sub(objective, ad::matmul_t(nu, p.bias[k]));
        const Var nu_hat = ad::matmul(nu, p.weight[k]);
        if (k == 0) {
            Mat xq(c.rows(), x.cols());
            for (std::size_t q = 0; q < owner.size(); ++q) xq.row(static_cast<Eigen::Index>(q)) = x.row(owner[q]);
            objective = ad::sub(objective, ad::row_sum(ad::mask_mul(nu_hat, xq)));
            objective = ad::sub(objective, ad::scale(input_penalty(tape, nu_hat, tm), tm.eps));
            break;
        }
        const Var lo = ad::gather_rows(hidden[k - 1].lower, owner);
        const Var up = ad::gather_rows(hidden[k - 1].upper, owner);
        nu = ad::mul(nu_hat, ad::relu_slope(lo, up));
        const Mat unstable =
            ((lo.value().array() < 0.0) && (up.value().array() > 0.0)).cast<double>().matrix();
        objective = ad::add(objective, ad::row_sum(ad::mul(ad::mask_mul(lo, unstable), ad::relu(nu))));
    }
    return objective;
}

Var ibp_batch_loss(Tape& tape, const TapeNet& p, const Mat& x, const std::vector<int>& y, const ThreatModel& tm) {
    TapeInterval current = tape_first_layer_bounds(tape, p, x, tm);
    for (std::size_t k = 1; k < p.weight.size(); ++k) current = tape_interval_affine(p.weight[k], p.bias[k], current);
    const Eigen::Index classes = current.lower.cols();
    Mat take_lower = Mat::Zero(x.rows(), classes);
    for (Eigen::Index e = 0; e < x.rows(); ++e) {
        const int label = y[static_cast<std::size_t>(e)];
        if (classes == 1) {
            take_lower(e, 0) = label == 1 ? 1.0 : 0.0;
        } else {
            take_lower(e, label) = 1.0;
        }
    }
    const Mat take_upper = Mat::Ones(x.rows(), classes) - take_lower;
    const Var logits = ad::add(ad::mask_mul(current.lower, take_lower), ad::mask_mul(current.upper, take_upper));
    return ad::cross_entropy(logits, y);
}

Var coap_batch_loss(Tape& tape, const TapeNet& p, const Mat& x, const std::vector<int>& y, const ThreatModel& tm,
                    const CertifiedOptions& opts) {
    const std::vector<TapeInterval> hidden = coap_hidden_bounds(tape, p, x, tm, opts);
    const Eigen::Index batch = x.rows();
    const Eigen::Index classes = p.weight.back().rows();
    if (classes == 1) {
        Mat c(batch, 1);
        for (Eigen::Index e = 0; e < batch; ++e) c(e, 0) = y[static_cast<std::size_t>(e)] == 1 ? 1.0 : -1.0;
        std::vector<int> owner(static_cast<std::size_t>(batch));
        for (Eigen::Index e = 0; e < batch; ++e) owner[static_cast<std::size_t>(e)] = static_cast<int>(e);
        const Var j = tape_dual_objectives(tape, p, p.weight.size(), x, hidden, c, owner, tm);
        return ad::cross_entropy(ad::mask_mul(j, c), y);
    }
    const Eigen::Index per = classes - 1;
    Mat c = Mat::Zero(batch * per, classes);
    Eigen::MatrixXi idx = Eigen::MatrixXi::Constant(batch, classes, -1);
    for (Eigen::Index e = 0; e < batch; ++e) {
        const int label = y[static_cast<std::size_t>(e)];
        Eigen::Index q = e * per;
        for (Eigen::Index j = 0; j < classes; ++j) {
            if (j == label) continue;
            c(q, label) = 1.0;
            c(q, j) = -1.0;
            idx(e, j) = static_cast<int>(q);
            ++q;
        }
    }
    const Var j = tape_dual_objectives(tape, p, p.weight.size(), x, hidden, c, repeat_rows(batch, per), tm);
    return ad::cross_entropy(ad::scale(ad::pick(j, idx), -1.0), y);
}

namespace {

template <class LossFn>
double loss_and_gradient(const DenseNet& net, Gradient* grad, LossFn&& fn) {
    Tape tape;
    const TapeNet p = TapeNet::bind(tape, net);
    const Var loss = fn(tape, p);
    const double value = loss.value()(0, 0);
    if (grad) {
        tape.backward(loss);
        *grad = p.gradient(tape);
    }
    return value;
}

}  // namespace

double ibp_loss_and_gradient(const DenseNet& net, const Mat& x, const std::vector<int>& y, const ThreatModel& tm,
                             Gradient* grad) {
    return loss_and_gradient(net, grad, [&](Tape& t, const TapeNet& p) { return ibp_batch_loss(t, p, x, y, tm); });
}

double coap_loss_and_gradient(const DenseNet& net, const Mat& x, const std::vector<int>& y, const ThreatModel& tm,
                              const CertifiedOptions& opts, Gradient* grad) {
    return loss_and_gradient(net, grad,
                             [&](Tape& t, const TapeNet& p) { return coap_batch_loss(t, p, x, y, tm, opts); });
}

EpochHook unstable_recorder(const LabeledSet& data, const ThreatModel& tm, BoundMethod method) {
    return [&data, tm, method](const DenseNet& net, int, TrainTrace& trace) {
        trace.unstable.push_back(unstable_fraction(net, data, tm, method));
    };
}

namespace {

template <class LossFn>
TrainTrace certified_fit(DenseNet& net, const LabeledSet& data, const ThreatModel& tm, const TrainConfig& cfg,
                         BoundMethod unstable_method, LossFn&& loss) {
    tm.validate();
    const BatchObjective objective = [&](const DenseNet& current, std::span<const std::size_t> batch, int epoch,
                                         Gradient& grad) {
        const Mat x = gather_inputs(data, batch);
        const std::vector<int> y = gather_labels(data, batch);
        const ThreatModel scheduled = tm.with_eps(cfg.eps_schedule.at(epoch, tm.eps));
        return loss(current, x, y, scheduled, &grad);
    };
    return fit(net, data, cfg, objective, unstable_recorder(data, tm, unstable_method));
}

}  // namespace

TrainTrace ibp_train(DenseNet& net, const LabeledSet& data, const ThreatModel& tm, const TrainConfig& cfg,
                     const CertifiedOptions& opts) {
    return certified_fit(net, data, tm, cfg, opts.unstable_method,
                         [](const DenseNet& n, const Mat& x, const std::vector<int>& y, const ThreatModel& t,
                            Gradient* g) { return ibp_loss_and_gradient(n, x, y, t, g); });
}

TrainTrace coap_train(DenseNet& net, const LabeledSet& data, const ThreatModel& tm, const TrainConfig& cfg,
                      const CertifiedOptions& opts) {
    return certified_fit(net, data, tm, cfg, opts.unstable_method,
                         [&opts](const DenseNet& n, const Mat& x, const std::vector<int>& y, const ThreatModel& t,
                                 Gradient* g) { return coap_loss_and_gradient(n, x, y, t, opts, g); });
}

}  // namespace certgap
