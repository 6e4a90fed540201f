#include "certgap/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace certgap {

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

DenseNet DenseNet::random(std::span<const int> widths, std::uint64_t seed) {
    if (widths.size() < 2) {
        throw std::invalid_argument("DenseNet::random: need at least input and output widths");
    }
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const int fan_in = widths[i];
        const int fan_out = widths[i + 1];
        if (fan_in <= 0 || fan_out <= 0) {
            throw std::invalid_argument("DenseNet::random: widths must be positive");
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> unif(-bound, bound);
        Layer layer{Mat(fan_out, fan_in), Vec(fan_out)};
        for (int r = 0; r < fan_out; ++r) {
            for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = unif(rng);
        }
        for (int r = 0; r < fan_out; ++r) layer.bias(r) = unif(rng);
        layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
}

int DenseNet::input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }

int DenseNet::output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

int DenseNet::hidden_neurons() const {
    int m = 0;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) m += static_cast<int>(layers_[i].weight.rows());
    return m;
}

void DenseNet::validate() const {
    if (layers_.empty()) throw std::invalid_argument("DenseNet: no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& l = layers_[i];
        if (l.weight.rows() != l.bias.size()) {
            throw std::invalid_argument("DenseNet: bias size does not match layer " + std::to_string(i));
        }
        if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
            throw std::invalid_argument("DenseNet: layer " + std::to_string(i) + " is not chain-compatible");
        }
        if (!l.weight.allFinite() || !l.bias.allFinite()) {
            throw std::invalid_argument("DenseNet: non-finite parameter in layer " + std::to_string(i));
        }
    }
}

Vec forward(const DenseNet& net, const Vec& x, ForwardCache* cache) {
    if (x.size() != net.input_dim()) {
        throw std::invalid_argument("forward: input has dimension " + std::to_string(x.size()) + ", expected " +
                                    std::to_string(net.input_dim()));
    }
    const auto& layers = net.layers();
    if (cache) {
        cache->pre.clear();
        cache->act.clear();
        cache->act.push_back(x);
    }
    Vec a = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Vec z = layers[i].weight * a + layers[i].bias;
        if (cache) cache->pre.push_back(z);
        if (i + 1 == layers.size()) return z;
        a = z.cwiseMax(0.0);
        if (cache) cache->act.push_back(a);
    }
    return a;
}

Mat forward_columns(const DenseNet& net, const Mat& inputs) {
    if (inputs.rows() != net.input_dim()) throw std::invalid_argument("forward_columns: input dimension mismatch");
    const auto& layers = net.layers();
    Mat a = inputs;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Mat z = layers[i].weight * a;
        z.colwise() += layers[i].bias;
        if (i + 1 == layers.size()) return z;
        a = z.cwiseMax(0.0);
    }
    return a;
}

int predict(const DenseNet& net, const Vec& x) {
    const Vec z = forward(net, x);
    if (z.size() == 1) return z(0) > 0.0 ? 1 : 0;
    Eigen::Index arg = 0;
    z.maxCoeff(&arg);
    return static_cast<int>(arg);
}

LossKind loss_kind_for(const DenseNet& net) {
    return net.output_dim() == 1 ? LossKind::BinarySigmoid : LossKind::SoftmaxCE;
}

namespace {

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace

double loss_value(LossKind kind, const Vec& logits, int y) {
    if (kind == LossKind::BinarySigmoid) {
        const double z = logits(0);
        return y == 1 ? softplus(-z) : softplus(z);
    }
    const double m = logits.maxCoeff();
    return m + std::log((logits.array() - m).exp().sum()) - logits(y);
}

Vec loss_logit_gradient(LossKind kind, const Vec& logits, int y) {
    if (kind == LossKind::BinarySigmoid) {
        Vec g(1);
        g(0) = sigmoid(logits(0)) - (y == 1 ? 1.0 : 0.0);
        return g;
    }
    const double m = logits.maxCoeff();
    Vec p = (logits.array() - m).exp();
    p /= p.sum();
    p(y) -= 1.0;
    return p;
}

double logit_margin(const Vec& logits, int y) {
    if (logits.size() == 1) return y == 1 ? logits(0) : -logits(0);
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.size(); ++j) {
        if (j != y) best = std::min(best, logits(y) - logits(j));
    }
    return best;
}

bool is_correct(const Vec& logits, int y) { return logit_margin(logits, y) > 0.0; }

Gradient Gradient::zeros_like(const DenseNet& net) {
    Gradient g;
    for (const Layer& l : net.layers()) {
        g.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
    }
    return g;
}

Gradient& Gradient::operator+=(const Gradient& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

Gradient& Gradient::operator*=(double s) {
    for (Layer& l : layers) {
        l.weight *= s;
        l.bias *= s;
    }
    return *this;
}

double Gradient::squared_norm() const {
    double s = 0.0;
    for (const Layer& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
    return s;
}

Vec backward_from_logits(const DenseNet& net, const ForwardCache& cache, const Vec& logit_grad, Gradient* grad) {
    const auto& layers = net.layers();
    Vec delta = logit_grad;
    for (std::size_t k = layers.size(); k-- > 0;) {
        if (grad) {
            grad->layers[k].weight.noalias() += delta * cache.act[k].transpose();
            grad->layers[k].bias += delta;
        }
        Vec upstream = layers[k].weight.transpose() * delta;
        if (k > 0) {
            const Vec& pre = cache.pre[k - 1];
            for (Eigen::Index j = 0; j < upstream.size(); ++j) {
                if (pre(j) <= 0.0) upstream(j) = 0.0;
            }
        }
        delta = std::move(upstream);
    }
    return delta;
}

Gradient backward(const DenseNet& net, const Vec& x, int y, LossKind kind) {
    ForwardCache cache;
    const Vec logits = forward(net, x, &cache);
    Gradient g = Gradient::zeros_like(net);
    backward_from_logits(net, cache, loss_logit_gradient(kind, logits, y), &g);
    return g;
}

Vec input_gradient(const DenseNet& net, const Vec& x, int y, LossKind kind, double* loss_out) {
    ForwardCache cache;
    const Vec logits = forward(net, x, &cache);
    if (loss_out) *loss_out = loss_value(kind, logits, y);
    return backward_from_logits(net, cache, loss_logit_gradient(kind, logits, y), nullptr);
}

double EpsSchedule::at(int epoch, double target) const {
    if (ramp_epochs <= 0 || epoch >= ramp_epochs) return target;
    const double s = std::min(start, target);
    return s + (target - s) * static_cast<double>(epoch) / static_cast<double>(ramp_epochs);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must lie in [0,1)");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be nonnegative");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
}

void sgd_step(DenseNet& net, const Gradient& grad, const TrainConfig& cfg, Gradient& velocity) {
    auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        velocity.layers[i].weight = cfg.momentum * velocity.layers[i].weight + grad.layers[i].weight;
        velocity.layers[i].bias = cfg.momentum * velocity.layers[i].bias + grad.layers[i].bias;
        layers[i].weight -= cfg.learning_rate * velocity.layers[i].weight;
        layers[i].bias -= cfg.learning_rate * velocity.layers[i].bias;
    }
}

TrainTrace fit(DenseNet& net, const LabeledSet& data, const TrainConfig& cfg, const BatchObjective& objective,
               const EpochHook& on_epoch_end) {
    cfg.validate();
    TrainTrace trace;
    const std::size_t n = data.size();
    if (n == 0 || cfg.epochs == 0) return trace;

    std::mt19937_64 rng(derive_seed(cfg.seed, 0x5u));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Gradient velocity = Gradient::zeros_like(net);
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const bool full_batch = batch >= n;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (!full_batch) std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            Gradient g = Gradient::zeros_like(net);
            const double loss = objective(net, idx, epoch, g);
            if (!std::isfinite(loss) || !std::isfinite(g.squared_norm())) {
                trace.diverged = true;
                trace.loss.push_back(loss);
                return trace;
            }
            epoch_loss += loss * static_cast<double>(idx.size());
            sgd_step(net, g, cfg, velocity);
        }
        trace.loss.push_back(epoch_loss / static_cast<double>(n));
        if (on_epoch_end) on_epoch_end(net, epoch, trace);
    }
    return trace;
}

TrainTrace train_standard(DenseNet& net, const LabeledSet& data, const TrainConfig& cfg,
                          const EpochHook& on_epoch_end) {
    const LossKind kind = loss_kind_for(net);
    auto objective = [&](const DenseNet& current, std::span<const std::size_t> batch, int, Gradient& grad) {
        double total = 0.0;
        ForwardCache cache;
        for (std::size_t i : batch) {
            const Vec logits = forward(current, data.row(i), &cache);
            total += loss_value(kind, logits, data.labels[i]);
            backward_from_logits(current, cache, loss_logit_gradient(kind, logits, data.labels[i]), &grad);
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        grad *= inv;
        return total * inv;
    };
    return fit(net, data, cfg, objective, on_epoch_end);
}

std::string to_json(const DenseNet& net) {
    nlohmann::json doc;
    doc["layers"] = nlohmann::json::array();
    for (const Layer& l : net.layers()) {
        nlohmann::json w = nlohmann::json::array();
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(l.weight.cols()));
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row[static_cast<std::size_t>(c)] = l.weight(r, c);
            w.push_back(row);
        }
        std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
        doc["layers"].push_back({{"w", w}, {"b", b}});
    }
    return doc.dump();
}

DenseNet net_from_json(const std::string& text) {
    const auto doc = nlohmann::json::parse(text);
    std::vector<Layer> layers;
    for (const auto& jl : doc.at("layers")) {
        const auto& w = jl.at("w");
        const auto& b = jl.at("b");
        const auto rows = static_cast<Eigen::Index>(w.size());
        const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(w.at(0).size());
        Layer layer{Mat(rows, cols), Vec(static_cast<Eigen::Index>(b.size()))};
        for (Eigen::Index r = 0; r < rows; ++r) {
            const auto& row = w.at(static_cast<std::size_t>(r));
            if (static_cast<Eigen::Index>(row.size()) != cols) throw std::invalid_argument("checkpoint: ragged weight matrix");
            for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = b.at(static_cast<std::size_t>(r)).get<double>();
        layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
}

void save_checkpoint(const DenseNet& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_json(net) << '\n';
}

DenseNet load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return net_from_json(ss.str());
}

}  // namespace certgap
