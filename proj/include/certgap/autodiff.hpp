#pragma once

#include <functional>
#include <vector>

#include "certgap/linalg.hpp"

// Minimal reverse-mode differentiation over dense matrices, sufficient for
// the batched certified losses. Every node owns its value; gradients are
// accumulated in reverse creation order by `Tape::backward`.
namespace certgap::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    Var constant(Mat value);
    Var parameter(Mat value);

    /// Seeds d(out)/d(out) = 1 for a 1x1 node and propagates.
    void backward(Var out);

    const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    /// Gradient of the last `backward` target; zeros when the node was unreachable.
    Mat grad(Var v) const;
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    using Backprop = std::function<void(Tape&, const Mat& upstream)>;
    Var record(Mat value, bool requires_grad, Backprop backprop);
    /// Adds `g` into the gradient buffer of node `id` when it requires one.
    void accumulate(int id, const Mat& g);

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backprop backprop;
    };
    std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_t(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Elementwise product with a constant matrix of the same shape.
Var mask_mul(Var a, const Mat& mask);
/// a (n x m) + r (1 x m) broadcast over rows.
Var add_row(Var a, Var r);
Var relu(Var a);
Var abs(Var a);
/// n x m -> n x 1
Var row_sum(Var a);
Var row_norm2(Var a);
Var row_max_abs(Var a);
Var sum(Var a);
Var gather_rows(Var a, const std::vector<int>& rows);
/// out(i, j) = a(idx(i, j), 0), or 0 where idx(i, j) < 0; `a` is a column.
Var pick(Var a, const Eigen::MatrixXi& idx);
/// Slope of the ReLU relaxation: 0 where u <= 0, 1 where l >= 0, u / (u - l) otherwise.
Var relu_slope(Var lower, Var upper);
/// Mean cross-entropy over rows; a single column means sigmoid BCE with labels {0, 1}.
Var cross_entropy(Var logits, const std::vector<int>& labels);

}  // namespace certgap::ad
