#include "certgap/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "certgap/robust_objectives.hpp"

namespace certgap {

double AttackConfig::resolved_step(double eps) const {
    return step_size > 0.0 ? step_size : 2.5 * eps / static_cast<double>(steps);
}

void AttackConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("AttackConfig: steps must be >= 1");
    if (restarts < 1) throw std::invalid_argument("AttackConfig: restarts must be >= 1");
}

namespace {

// Allocation-free forward/backward for a block of inputs sharing one label.
class Prober {
public:
    explicit Prober(const DenseNet& net) : net_(net), kind_(loss_kind_for(net)) {}

    void run(const Mat& x, int y, bool want_grad) {
        const Layer& first = net_.layer(0);
        pre_.resize(net_.depth());
        pre_[0].noalias() = first.weight * x;
        pre_[0].colwise() += first.bias;
        finish(y, want_grad);
    }

    /// Inputs x + t * dir for each t; the first layer is evaluated as an affine function of t.
    void run_line(const Vec& x, const Vec& dir, const std::vector<double>& ts, int y) {
        const Layer& first = net_.layer(0);
        base_.noalias() = first.weight * x;
        base_ += first.bias;
        slope_.noalias() = first.weight * dir;
        const Eigen::Map<const Vec> t(ts.data(), static_cast<Eigen::Index>(ts.size()));
        pre_.resize(net_.depth());
        pre_[0].noalias() = slope_ * t.transpose();
        pre_[0].colwise() += base_;
        finish(y, false);
    }

    /// Inputs x + beta_c * dir_(c mod k) with one column per coefficient. Call set_directions first.
    /// With want_grad, coeff_grad() holds the derivative of each column's loss in beta_j.
    void run_coefficients(const Vec& beta, int y, bool want_grad) {
        pre_.resize(net_.depth());
        pre_[0].noalias() = slopes_ * beta.asDiagonal();
        pre_[0].colwise() += base_;
        finish(y, want_grad, true);
        if (want_grad) coeff_grad_ = (slopes_.array() * delta_.array()).colwise().sum().transpose();
    }

    void set_directions(const Vec& x, const Mat& dirs, int copies) {
        const Layer& first = net_.layer(0);
        base_.noalias() = first.weight * x;
        base_ += first.bias;
        slope_block_.noalias() = first.weight * dirs.transpose();
        slopes_ = slope_block_.replicate(1, copies);
    }

    const Vec& coeff_grad() const { return coeff_grad_; }

    double loss(Eigen::Index c) const { return loss_(c); }
    bool correct(Eigen::Index c) const { return correct_[static_cast<std::size_t>(c)] != 0; }
    /// Input gradient of the loss, one column per input; valid after run(..., true).
    const Mat& input_grad() const { return delta_; }

private:
    // stop_at_first leaves delta_ holding the gradient at the first pre-activation.
    void finish(int y, bool want_grad, bool stop_at_first = false) {
        const auto& layers = net_.layers();
        const std::size_t depth = layers.size();
        act_.resize(depth);
        for (std::size_t i = 1; i < depth; ++i) {
            act_[i] = pre_[i - 1].cwiseMax(0.0);
            pre_[i].noalias() = layers[i].weight * act_[i];
            pre_[i].colwise() += layers[i].bias;
        }
        const Mat& z = pre_.back();
        const Eigen::Index n = z.cols();
        loss_.resize(n);
        correct_.assign(static_cast<std::size_t>(n), 0);
        delta_.resize(z.rows(), n);
        for (Eigen::Index c = 0; c < n; ++c) {
            if (kind_ == LossKind::BinarySigmoid) {
                const double v = z(0, c);
                const double s = y == 1 ? v : -v;
                loss_(c) = s > 0.0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s));
                correct_[static_cast<std::size_t>(c)] = s > 0.0;
                const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                delta_(0, c) = sig - (y == 1 ? 1.0 : 0.0);
                continue;
            }
            const double m = z.col(c).maxCoeff();
            double sum = 0.0;
            double rival = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < z.rows(); ++j) {
                const double e = std::exp(z(j, c) - m);
                delta_(j, c) = e;
                sum += e;
                if (j != y) rival = std::max(rival, z(j, c));
            }
            loss_(c) = m + std::log(sum) - z(y, c);
            correct_[static_cast<std::size_t>(c)] = z(y, c) - rival > 0.0;
            delta_.col(c) /= sum;
            delta_(y, c) -= 1.0;
        }
        if (!want_grad) return;
        for (std::size_t k = depth; k-- > 0;) {
            if (k == 0 && stop_at_first) break;
            up_.noalias() = layers[k].weight.transpose() * delta_;
            if (k > 0) up_ = (pre_[k - 1].array() > 0.0).select(up_, 0.0);
            std::swap(delta_, up_);
        }
    }

    const DenseNet& net_;
    LossKind kind_;
    std::vector<Mat> pre_;
    std::vector<Mat> act_;
    Mat delta_;
    Mat up_;
    Vec base_;
    Vec slope_;
    Mat slope_block_;
    Mat slopes_;
    Vec coeff_grad_;
    Vec loss_;
    std::vector<char> correct_;
};

bool improves(const AttackResult& best, bool misclassified, double loss) {
    if (misclassified != best.misclassified) return misclassified;
    return loss > best.loss;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Vec random_start(const ThreatModel& tm, Eigen::Index d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec delta(d);
    if (tm.kind == ThreatKind::Linf) {
        for (Eigen::Index i = 0; i < d; ++i) delta(i) = tm.eps * unit(rng);
        return delta;
    }
    std::normal_distribution<double> gauss;
    double norm = 0.0;
    do {
        for (Eigen::Index i = 0; i < d; ++i) delta(i) = gauss(rng);
        norm = delta.norm();
    } while (norm == 0.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double radius = tm.eps * std::pow(u01(rng), 1.0 / static_cast<double>(d));
    return delta * (radius / norm);
}

}  // namespace

AttackResult pgd_search(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm, const AttackConfig& cfg) {
    cfg.validate();
    if (x.size() != net.input_dim()) throw std::invalid_argument("pgd_search: input dimension mismatch");
    Prober prober(net);
    prober.run(x, y, false);
    AttackResult best{Vec::Zero(x.size()), prober.loss(0), !prober.correct(0)};
    if ((best.misclassified && cfg.early_stop) || tm.eps == 0.0) return best;
    const double alpha = cfg.resolved_step(tm.eps);

    if (tm.kind == ThreatKind::Signal) {
        // Each (restart, direction) pair carries its own coefficient; all of them advance together.
        const Mat& dirs = tm.directions;
        const Eigen::Index k = dirs.rows();
        std::uniform_real_distribution<double> coef(-tm.eps, tm.eps);
        Vec beta(k * cfg.restarts);
        for (int r = 0; r < cfg.restarts; ++r) {
            std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
            for (Eigen::Index j = 0; j < k; ++j) beta(r * k + j) = coef(rng);
        }
        prober.set_directions(x, dirs, cfg.restarts);
        for (int s = 0;; ++s) {
            prober.run_coefficients(beta, y, s < cfg.steps);
            for (Eigen::Index c = 0; c < beta.size(); ++c) {
                if (improves(best, !prober.correct(c), prober.loss(c))) {
                    best = AttackResult{beta(c) * dirs.row(c % k).transpose(), prober.loss(c), !prober.correct(c)};
                }
            }
            if (best.misclassified && cfg.early_stop) return best;
            if (s == cfg.steps) break;
            const Vec& g = prober.coeff_grad();
            for (Eigen::Index c = 0; c < beta.size(); ++c) {
                beta(c) = std::clamp(beta(c) + alpha * sign(g(c)), -tm.eps, tm.eps);
            }
        }
        return best;
    }

    Mat point(x.size(), 1);
    for (int r = 0; r < cfg.restarts; ++r) {
        std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        Vec delta = random_start(tm, x.size(), rng);
        for (int s = 0;; ++s) {
            point.col(0) = x + delta;
            prober.run(point, y, s < cfg.steps);
            if (improves(best, !prober.correct(0), prober.loss(0))) {
                best = AttackResult{delta, prober.loss(0), !prober.correct(0)};
                if (best.misclassified && cfg.early_stop) return best;
            }
            if (s == cfg.steps) break;
            const auto g = prober.input_grad().col(0);
            if (tm.kind == ThreatKind::Linf) {
                delta += alpha * g.unaryExpr([](double v) { return sign(v); });
            } else {
                const double n = g.norm();
                if (n > 0.0) delta += (alpha / n) * g;
            }
            delta = project(delta, tm);
        }
    }
    return best;
}

Vec pgd_attack(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm, const AttackConfig& cfg) {
    return pgd_search(net, x, y, tm, cfg).delta;
}

std::vector<double> line_candidates(const DenseNet& net, const Vec& x, const Vec& direction, double eps,
                                    int grid_points) {
    std::vector<double> t{-eps, 0.0, eps};
    if (eps == 0.0) return {0.0};
    if (net.depth() > 2) {
        const int n = std::max(grid_points, 2);
        for (int i = 0; i < n; ++i) t.push_back(-eps + 2.0 * eps * static_cast<double>(i) / (n - 1));
    } else if (net.depth() == 2) {
        const Layer& first = net.layer(0);
        const Vec h0 = first.weight * x + first.bias;
        const Vec slope = first.weight * direction;
        std::vector<double> breaks;
        for (Eigen::Index i = 0; i < h0.size(); ++i) {
            if (slope(i) == 0.0) continue;
            const double b = -h0(i) / slope(i);
            if (b > -eps && b < eps) breaks.push_back(b);
        }
        std::sort(breaks.begin(), breaks.end());
        std::vector<double> knots{-eps};
        knots.insert(knots.end(), breaks.begin(), breaks.end());
        knots.push_back(eps);
        for (std::size_t i = 0; i + 1 < knots.size(); ++i) t.push_back(0.5 * (knots[i] + knots[i + 1]));
        t.insert(t.end(), breaks.begin(), breaks.end());
    }
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

namespace {

void require_signal(const ThreatModel& tm, const char* who) {
    if (tm.kind != ThreatKind::Signal) throw std::invalid_argument(std::string(who) + ": requires a signal threat model");
}

}  // namespace

LineSearchVerdict line_search_attack(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    require_signal(tm, "line_search_attack");
    if (!is_correct(forward(net, x), y)) return {true, Vec::Zero(x.size())};
    Prober prober(net);
    for (Eigen::Index j = 0; j < tm.directions.rows(); ++j) {
        const Vec dir = tm.directions.row(j).transpose();
        const std::vector<double> ts = line_candidates(net, x, dir, tm.eps);
        prober.run_line(x, dir, ts, y);
        for (std::size_t i = 0; i < ts.size(); ++i) {
            if (!prober.correct(static_cast<Eigen::Index>(i))) return {true, Vec(ts[i] * dir)};
        }
    }
    return {false, std::nullopt};
}

AttackResult line_search_max_loss(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm) {
    require_signal(tm, "line_search_max_loss");
    Prober prober(net);
    prober.run(x, y, false);
    AttackResult best{Vec::Zero(x.size()), prober.loss(0), !prober.correct(0)};
    for (Eigen::Index j = 0; j < tm.directions.rows(); ++j) {
        const Vec dir = tm.directions.row(j).transpose();
        const std::vector<double> ts = line_candidates(net, x, dir, tm.eps);
        prober.run_line(x, dir, ts, y);
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            if (prober.loss(c) > best.loss) best = AttackResult{ts[i] * dir, prober.loss(c), !prober.correct(c)};
        }
    }
    return best;
}

TrainTrace adv_train(DenseNet& net, const LabeledSet& data, const ThreatModel& tm, const TrainConfig& cfg,
                     const AttackConfig& attack, const AdvTrainOptions& opts) {
    tm.validate();
    attack.validate();
    const LossKind kind = loss_kind_for(net);
    const bool exact = opts.exact_signal && tm.kind == ThreatKind::Signal;
    auto objective = [&](const DenseNet& current, std::span<const std::size_t> batch, int epoch, Gradient& grad) {
        double total = 0.0;
        ForwardCache cache;
        for (std::size_t i : batch) {
            const Vec x = data.row(i);
            const int y = data.labels[i];
            Vec delta = Vec::Zero(x.size());
            if (tm.eps > 0.0) {
                if (exact) {
                    delta = line_search_max_loss(current, x, y, tm).delta;
                } else {
                    AttackConfig a = attack;
                    a.early_stop = false;
                    a.seed = derive_seed(attack.seed, static_cast<std::uint64_t>(epoch), i);
                    delta = pgd_search(current, x, y, tm, a).delta;
                }
            }
            const Vec logits = forward(current, x + delta, &cache);
            total += loss_value(kind, logits, y);
            backward_from_logits(current, cache, loss_logit_gradient(kind, logits, y), &grad);
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        grad *= inv;
        return total * inv;
    };
    return fit(net, data, cfg, objective, unstable_recorder(data, tm, opts.unstable_method));
}

}  // namespace certgap
