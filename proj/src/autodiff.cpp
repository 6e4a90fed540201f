#include "certgap/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace certgap::ad {

const Mat& Var::value() const { return tape->value(id); }

Var Tape::constant(Mat value) { return record(std::move(value), false, nullptr); }

Var Tape::parameter(Mat value) { return record(std::move(value), true, nullptr); }

Var Tape::record(Mat value, bool requires_grad, Backprop backprop) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, false, std::move(backprop)});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(int id, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var out) {
    if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("Tape::backward: target must be 1x1");
    for (Node& n : nodes_) n.has_grad = false;
    accumulate(out.id, Mat::Ones(1, 1));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backprop) continue;
        const Mat upstream = n.grad;
        n.backprop(*this, upstream);
    }
}

Mat Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

namespace {

bool any_grad(Var a) { return a.tape->requires_grad(a.id); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument("autodiff: variables from different tapes");
}

void check_same_shape(Var a, Var b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: shape mismatch in matmul");
    const int ia = a.id, ib = b.id;
    return a.tape->record(a.value() * b.value(), any_grad(a, b), [ia, ib](Tape& t, const Mat& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
    });
}

Var matmul_t(Var a, Var b) {
    check_same_tape(a, b);
    if (a.cols() != b.cols()) throw std::invalid_argument("autodiff: shape mismatch in matmul_t");
    const int ia = a.id, ib = b.id;
    return a.tape->record(a.value() * b.value().transpose(), any_grad(a, b), [ia, ib](Tape& t, const Mat& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
        if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
    });
}

Var transpose(Var a) {
    const int ia = a.id;
    return a.tape->record(a.value().transpose(), any_grad(a),
                          [ia](Tape& t, const Mat& g) { t.accumulate(ia, g.transpose()); });
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    check_same_shape(a, b, "add");
    const int ia = a.id, ib = b.id;
    return a.tape->record(a.value() + b.value(), any_grad(a, b), [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    check_same_shape(a, b, "sub");
    const int ia = a.id, ib = b.id;
    return a.tape->record(a.value() - b.value(), any_grad(a, b), [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        if (t.requires_grad(ib)) t.accumulate(ib, -g);
    });
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    check_same_shape(a, b, "mul");
    const int ia = a.id, ib = b.id;
    return a.tape->record(a.value().cwiseProduct(b.value()), any_grad(a, b), [ia, ib](Tape& t, const Mat& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
    });
}

Var scale(Var a, double s) {
    const int ia = a.id;
    return a.tape->record(a.value() * s, any_grad(a), [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

Var mask_mul(Var a, const Mat& mask) {
    if (a.rows() != mask.rows() || a.cols() != mask.cols()) throw std::invalid_argument("autodiff: mask shape mismatch");
    const int ia = a.id;
    return a.tape->record(a.value().cwiseProduct(mask), any_grad(a),
                          [ia, mask](Tape& t, const Mat& g) { t.accumulate(ia, g.cwiseProduct(mask)); });
}

Var add_row(Var a, Var r) {
    check_same_tape(a, r);
    if (r.rows() != 1 || r.cols() != a.cols()) throw std::invalid_argument("autodiff: add_row expects a 1 x m row");
    const int ia = a.id, ir = r.id;
    Mat out = a.value();
    out.rowwise() += r.value().row(0);
    return a.tape->record(std::move(out), any_grad(a, r), [ia, ir](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
    });
}

Var relu(Var a) {
    const int ia = a.id;
    return a.tape->record(a.value().cwiseMax(0.0), any_grad(a), [ia](Tape& t, const Mat& g) {
        const Mat& x = t.value(ia);
        t.accumulate(ia, (x.array() > 0.0).select(g, 0.0));
    });
}

Var abs(Var a) {
    const int ia = a.id;
    return a.tape->record(a.value().cwiseAbs(), any_grad(a), [ia](Tape& t, const Mat& g) {
        const Mat& x = t.value(ia);
        t.accumulate(ia, g.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); })));
    });
}

Var row_sum(Var a) {
    const int ia = a.id;
    const Eigen::Index cols = a.cols();
    return a.tape->record(a.value().rowwise().sum(), any_grad(a), [ia, cols](Tape& t, const Mat& g) {
        t.accumulate(ia, g.replicate(1, cols));
    });
}

Var row_norm2(Var a) {
    const int ia = a.id;
    Mat norms = a.value().rowwise().norm();
    return a.tape->record(norms, any_grad(a), [ia, norms](Tape& t, const Mat& g) {
        const Mat& x = t.value(ia);
        Mat out = Mat::Zero(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            if (norms(r, 0) > 0.0) out.row(r) = x.row(r) * (g(r, 0) / norms(r, 0));
        }
        t.accumulate(ia, out);
    });
}

Var row_max_abs(Var a) {
    const int ia = a.id;
    const Mat& x = a.value();
    Mat out(x.rows(), 1);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        Eigen::Index j = 0;
        out(r, 0) = x.row(r).cwiseAbs().maxCoeff(&j);
        arg[static_cast<std::size_t>(r)] = j;
    }
    return a.tape->record(std::move(out), any_grad(a), [ia, arg](Tape& t, const Mat& g) {
        const Mat& v = t.value(ia);
        Mat d = Mat::Zero(v.rows(), v.cols());
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            const Eigen::Index j = arg[static_cast<std::size_t>(r)];
            const double x = v(r, j);
            d(r, j) = g(r, 0) * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
        t.accumulate(ia, d);
    });
}

Var sum(Var a) {
    const int ia = a.id;
    const Eigen::Index rows = a.rows(), cols = a.cols();
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape->record(std::move(out), any_grad(a), [ia, rows, cols](Tape& t, const Mat& g) {
        t.accumulate(ia, Mat::Constant(rows, cols, g(0, 0)));
    });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
    const int ia = a.id;
    const Mat& x = a.value();
    Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
    const Eigen::Index src_rows = x.rows();
    return a.tape->record(std::move(out), any_grad(a), [ia, rows, src_rows](Tape& t, const Mat& g) {
        Mat d = Mat::Zero(src_rows, g.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) d.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
        t.accumulate(ia, d);
    });
}

Var pick(Var a, const Eigen::MatrixXi& idx) {
    if (a.cols() != 1) throw std::invalid_argument("autodiff: pick expects a column");
    const int ia = a.id;
    const Mat& x = a.value();
    Mat out = Mat::Zero(idx.rows(), idx.cols());
    for (Eigen::Index r = 0; r < idx.rows(); ++r) {
        for (Eigen::Index c = 0; c < idx.cols(); ++c) {
            if (idx(r, c) >= 0) out(r, c) = x(idx(r, c), 0);
        }
    }
    const Eigen::Index src_rows = x.rows();
    return a.tape->record(std::move(out), any_grad(a), [ia, idx, src_rows](Tape& t, const Mat& g) {
        Mat d = Mat::Zero(src_rows, 1);
        for (Eigen::Index r = 0; r < idx.rows(); ++r) {
            for (Eigen::Index c = 0; c < idx.cols(); ++c) {
                if (idx(r, c) >= 0) d(idx(r, c), 0) += g(r, c);
            }
        }
        t.accumulate(ia, d);
    });
}

Var relu_slope(Var lower, Var upper) {
    check_same_tape(lower, upper);
    check_same_shape(lower, upper, "relu_slope");
    const int il = lower.id, iu = upper.id;
    const Mat& l = lower.value();
    const Mat& u = upper.value();
    Mat s(l.rows(), l.cols());
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.cols(); ++c) {
            const double lo = l(r, c), up = u(r, c);
            s(r, c) = up <= 0.0 ? 0.0 : (lo >= 0.0 ? 1.0 : up / (up - lo));
        }
    }
    return lower.tape->record(std::move(s), any_grad(lower, upper), [il, iu](Tape& t, const Mat& g) {
        const Mat& l = t.value(il);
        const Mat& u = t.value(iu);
        Mat dl = Mat::Zero(l.rows(), l.cols());
        Mat du = Mat::Zero(l.rows(), l.cols());
        for (Eigen::Index r = 0; r < l.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.cols(); ++c) {
                const double lo = l(r, c), up = u(r, c);
                if (!(lo < 0.0 && up > 0.0)) continue;
                const double w = up - lo;
                dl(r, c) = g(r, c) * up / (w * w);
                du(r, c) = -g(r, c) * lo / (w * w);
            }
        }
        t.accumulate(il, dl);
        t.accumulate(iu, du);
    });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
    const Mat& z = logits.value();
    if (static_cast<std::size_t>(z.rows()) != labels.size()) throw std::invalid_argument("cross_entropy: label count");
    const Eigen::Index n = z.rows();
    Mat dz(z.rows(), z.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (z.cols() == 1) {
            const double v = z(r, 0);
            const double sp = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
            total += sp - (y == 1 ? v : 0.0);
            const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            dz(r, 0) = sig - (y == 1 ? 1.0 : 0.0);
        } else {
            const double m = z.row(r).maxCoeff();
            const Eigen::RowVectorXd e = (z.row(r).array() - m).exp();
            const double s = e.sum();
            total += m + std::log(s) - z(r, y);
            dz.row(r) = e / s;
            dz(r, y) -= 1.0;
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    dz *= inv;
    Mat out(1, 1);
    out(0, 0) = total * inv;
    const int iz = logits.id;
    return logits.tape->record(std::move(out), any_grad(logits),
                               [iz, dz](Tape& t, const Mat& g) { t.accumulate(iz, dz * g(0, 0)); });
}

}  // namespace certgap::ad
