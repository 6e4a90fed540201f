#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "certgap/dataset.hpp"
#include "certgap/linalg.hpp"

namespace certgap {

struct Layer {
    Mat weight;  // out x in
    Vec bias;    // out
};

/// Dense feed-forward network: affine layers with ReLU between consecutive
/// layers and no activation after the last one.
class DenseNet {
public:
    DenseNet() = default;
    explicit DenseNet(std::vector<Layer> layers);

    /// `widths` = {input, hidden..., output}. Weights and biases are drawn
    /// uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    static DenseNet random(std::span<const int> widths, std::uint64_t seed);

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    const Layer& layer(std::size_t i) const { return layers_[i]; }

    std::size_t depth() const { return layers_.size(); }
    int input_dim() const;
    int output_dim() const;
    /// Total number of hidden (ReLU) neurons.
    int hidden_neurons() const;

    /// Throws std::invalid_argument on chain-incompatible shapes or non-finite parameters.
    void validate() const;

private:
    std::vector<Layer> layers_;
};

/// pre[i] is the output of affine layer i; act[0] is the input and
/// act[i + 1] = relu(pre[i]) for every hidden layer.
struct ForwardCache {
    std::vector<Vec> pre;
    std::vector<Vec> act;
};

Vec forward(const DenseNet& net, const Vec& x, ForwardCache* cache = nullptr);

/// Forward pass for every column of `inputs` (d x N); returns K x N logits.
Mat forward_columns(const DenseNet& net, const Mat& inputs);

int predict(const DenseNet& net, const Vec& x);

/// BinarySigmoid expects a single logit and labels in {0, 1};
/// SoftmaxCE expects K >= 2 logits.
enum class LossKind { BinarySigmoid, SoftmaxCE };

LossKind loss_kind_for(const DenseNet& net);
double loss_value(LossKind kind, const Vec& logits, int y);
Vec loss_logit_gradient(LossKind kind, const Vec& logits, int y);

/// True iff the logits classify `y` correctly with a strict margin.
bool is_correct(const Vec& logits, int y);
/// min_{j != y} (z_y - z_j); for a single logit, sgn(y) * z.
double logit_margin(const Vec& logits, int y);

/// Parameter-shaped container used for gradients and momentum buffers.
struct Gradient {
    std::vector<Layer> layers;

    static Gradient zeros_like(const DenseNet& net);
    Gradient& operator+=(const Gradient& other);
    Gradient& operator*=(double s);
    double squared_norm() const;
};

/// Backpropagates `logit_grad` through the cached pass; accumulates into
/// `grad` (may be null) and returns the gradient with respect to the input.
Vec backward_from_logits(const DenseNet& net, const ForwardCache& cache, const Vec& logit_grad, Gradient* grad);

Gradient backward(const DenseNet& net, const Vec& x, int y, LossKind kind);

/// dL/dx; writes the loss value to `loss_out` when given.
Vec input_gradient(const DenseNet& net, const Vec& x, int y, LossKind kind, double* loss_out = nullptr);

/// Linear ramp of the training budget from `start` to the target over `ramp_epochs`.
struct EpsSchedule {
    double start = 0.01;
    int ramp_epochs = 20;

    double at(int epoch, double target) const;
};

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.95;
    int epochs = 150;
    int batch_size = 50;
    std::uint64_t seed = 0;
    EpsSchedule eps_schedule;

    void validate() const;
};

/// Classical momentum: v <- mu v + g, theta <- theta - eta v.
void sgd_step(DenseNet& net, const Gradient& grad, const TrainConfig& cfg, Gradient& velocity);

struct TrainTrace {
    std::vector<double> loss;
    std::vector<double> unstable;
    bool diverged = false;
};

/// Computes the mean loss over `batch` and writes its gradient into `grad`
/// (pre-zeroed, parameter-shaped).
using BatchObjective =
    std::function<double(const DenseNet& net, std::span<const std::size_t> batch, int epoch, Gradient& grad)>;
using EpochHook = std::function<void(const DenseNet& net, int epoch, TrainTrace& trace)>;

/// Shared SGD loop: seeded shuffling, full batch when batch_size >= n,
/// divergence detection on non-finite loss.
TrainTrace fit(DenseNet& net, const LabeledSet& data, const TrainConfig& cfg, const BatchObjective& objective,
               const EpochHook& on_epoch_end = {});

TrainTrace train_standard(DenseNet& net, const LabeledSet& data, const TrainConfig& cfg,
                          const EpochHook& on_epoch_end = {});

std::string to_json(const DenseNet& net);
DenseNet net_from_json(const std::string& text);
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(const std::string& path);

}  // namespace certgap
