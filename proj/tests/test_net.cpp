#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "certgap/datagen.hpp"
#include "certgap/net.hpp"
#include "doctest.h"

using namespace certgap;

namespace {

DenseNet net_from(std::vector<Layer> layers) { return DenseNet(std::move(layers)); }

// Loss computed with plain loops, no shared code with the library's forward pass.
double loss_ref(const DenseNet& net, const Vec& x, int y) {
    std::vector<double> a(x.data(), x.data() + x.size());
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const Layer& L = net.layer(l);
        std::vector<double> z(static_cast<std::size_t>(L.weight.rows()));
        for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
            double s = L.bias(i);
            for (Eigen::Index j = 0; j < L.weight.cols(); ++j) s += L.weight(i, j) * a[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(i)] = (l + 1 == net.depth()) ? s : std::max(s, 0.0);
        }
        a = z;
    }
    if (a.size() == 1) {
        const double m = y == 1 ? a[0] : -a[0];
        return std::log1p(std::exp(-std::abs(m))) + std::max(-m, 0.0);
    }
    double mx = a[0];
    for (double v : a) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : a) s += std::exp(v - mx);
    return mx + std::log(s) - a[static_cast<std::size_t>(y)];
}

double min_abs_preactivation(const DenseNet& net, const Vec& x) {
    ForwardCache cache;
    forward(net, x, &cache);
    double m = INFINITY;
    for (std::size_t i = 0; i + 1 < cache.pre.size(); ++i) m = std::min(m, cache.pre[i].cwiseAbs().minCoeff());
    return m;
}

}  // namespace

TEST_CASE("forward on hand-built networks") {
    const DenseNet id = net_from({Layer{Mat::Identity(2, 2), Vec::Zero(2)}});
    CHECK(forward(id, Vec::Map(std::vector<double>{1, 2}.data(), 2)).isApprox(Vec::Map(std::vector<double>{1, 2}.data(), 2)));

    const DenseNet two = net_from({Layer{Mat::Identity(2, 2), Vec::Constant(2, -1.0)}, Layer{Mat::Identity(2, 2), Vec::Zero(2)}});
    Vec x(2);
    x << 2, 0;
    const Vec out = forward(two, x);
    CHECK(out(0) == doctest::Approx(1.0));
    CHECK(out(1) == doctest::Approx(0.0));

    Mat theta(1, 2);
    theta << 1, 0;
    const DenseNet neuron = net_from({Layer{theta, Vec::Zero(1)}, Layer{Mat::Constant(1, 1, 1.0), Vec::Constant(1, -0.5)}});
    Vec p(2);
    p << 0.5, 1;
    CHECK(forward(neuron, p)(0) == doctest::Approx(0.0));
}

TEST_CASE("forward rejects dimension mismatch") {
    const DenseNet net = DenseNet::random(std::vector<int>{3, 4, 2}, 1);
    CHECK_THROWS_AS(forward(net, Vec::Zero(2)), std::invalid_argument);
    CHECK_THROWS_AS(DenseNet({Layer{Mat::Zero(3, 2), Vec::Zero(3)}, Layer{Mat::Zero(2, 4), Vec::Zero(2)}}), std::invalid_argument);
}

TEST_CASE("forward_columns matches forward per column") {
    const DenseNet net = DenseNet::random(std::vector<int>{4, 7, 5, 3}, 9);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Mat xs = Mat::NullaryExpr(4, 6, [&] { return g(rng); });
    const Mat out = forward_columns(net, xs);
    for (Eigen::Index c = 0; c < xs.cols(); ++c) CHECK((out.col(c) - forward(net, xs.col(c))).norm() < 1e-12);
}

TEST_CASE("softmax gradient at uniform logits") {
    const Vec z = Vec::Zero(4);
    const Vec g = loss_logit_gradient(LossKind::SoftmaxCE, z, 2);
    for (int j = 0; j < 4; ++j) CHECK(g(j) == doctest::Approx(0.25 - (j == 2 ? 1.0 : 0.0)));
}

TEST_CASE("backward matches finite differences on random networks") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g;
    int checked = 0;
    double worst = 0.0;
    while (checked < 1000) {
        const int d = 1 + static_cast<int>(u(rng) * 5);
        const bool binary = u(rng) < 0.3;
        const int k = binary ? 1 : 2 + static_cast<int>(u(rng) * 3);
        std::vector<int> widths{d};
        const int hidden = 1 + static_cast<int>(u(rng) * 2);
        for (int h = 0; h < hidden; ++h) widths.push_back(2 + static_cast<int>(u(rng) * 6));
        widths.push_back(k);
        DenseNet net = DenseNet::random(widths, rng());
        const Vec x = Vec::NullaryExpr(d, [&] { return g(rng); });
        const int y = binary ? (u(rng) < 0.5 ? 0 : 1) : static_cast<int>(u(rng) * k);
        if (min_abs_preactivation(net, x) < 1e-3) continue;
        const LossKind kind = loss_kind_for(net);
        const Gradient grad = backward(net, x, y, kind);
        const double h = 1e-4;
        double num = 0.0, den = 0.0;
        for (std::size_t l = 0; l < net.depth(); ++l) {
            auto probe = [&](double& param, double analytic) {
                const double keep = param;
                param = keep + h;
                const double up = loss_ref(net, x, y);
                param = keep - h;
                const double down = loss_ref(net, x, y);
                param = keep;
                const double fd = (up - down) / (2 * h);
                num += (fd - analytic) * (fd - analytic);
                den += analytic * analytic;
            };
            Layer& L = net.layers()[l];
            for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
                for (Eigen::Index j = 0; j < L.weight.cols(); ++j) probe(L.weight(i, j), grad.layers[l].weight(i, j));
                probe(L.bias(i), grad.layers[l].bias(i));
            }
        }
        const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
        worst = std::max(worst, rel);
        ++checked;
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("input gradient matches finite differences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    const DenseNet net = DenseNet::random(std::vector<int>{5, 9, 3}, 17);
    for (int t = 0; t < 50; ++t) {
        const Vec x = Vec::NullaryExpr(5, [&] { return g(rng); });
        if (min_abs_preactivation(net, x) < 1e-3) continue;
        const Vec grad = input_gradient(net, x, t % 3, LossKind::SoftmaxCE);
        for (int i = 0; i < 5; ++i) {
            Vec up = x, down = x;
            up(i) += 1e-5;
            down(i) -= 1e-5;
            const double fd = (loss_ref(net, up, t % 3) - loss_ref(net, down, t % 3)) / 2e-5;
            CHECK(fd == doctest::Approx(grad(i)).epsilon(1e-5).scale(1e-3));
        }
    }
}

TEST_CASE("last-layer gradient is logit gradient times hidden activation") {
    DenseNet net = DenseNet::random(std::vector<int>{3, 6, 2}, 4);
    net.layers()[1].weight.setZero();
    Vec x(3);
    x << 0.3, -1.2, 2.0;
    ForwardCache cache;
    const Vec z = forward(net, x, &cache);
    const Gradient gr = backward(net, x, 1, LossKind::SoftmaxCE);
    const Mat expected = loss_logit_gradient(LossKind::SoftmaxCE, z, 1) * cache.act[1].transpose();
    CHECK((gr.layers[1].weight - expected).norm() < 1e-14);
}

TEST_CASE("forward is linear between breakpoints along a line") {
    const DenseNet net = DenseNet::random(std::vector<int>{4, 10, 2}, 8);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
        const Vec x = Vec::NullaryExpr(4, [&] { return g(rng); });
        const Vec v = Vec::NullaryExpr(4, [&] { return g(rng); });
        const Vec h0 = net.layer(0).weight * x + net.layer(0).bias;
        const Vec s = net.layer(0).weight * v;
        // Nearest breakpoint to t = 0 bounds a linear piece.
        double reach = 1.0;
        for (Eigen::Index i = 0; i < h0.size(); ++i) {
            if (s(i) != 0.0 && -h0(i) / s(i) > 0.0) reach = std::min(reach, -h0(i) / s(i));
        }
        const double a = 0.1 * reach, b = 0.9 * reach;
        const Vec fa = forward(net, x + a * v), fb = forward(net, x + b * v);
        for (double w : {0.25, 0.5, 0.75}) {
            const double t2 = a + w * (b - a);
            CHECK((forward(net, x + t2 * v) - (fa + w * (fb - fa))).norm() < 1e-10);
        }
    }
}

TEST_CASE("sgd_step follows classical momentum") {
    DenseNet net = net_from({Layer{Mat::Constant(1, 1, 2.0), Vec::Constant(1, 3.0)}});
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.learning_rate = 1.0;
    Gradient v = Gradient::zeros_like(net);
    Gradient grad = Gradient::zeros_like(net);
    grad.layers[0].weight(0, 0) = 2.0;
    grad.layers[0].bias(0) = 3.0;
    sgd_step(net, grad, cfg, v);
    CHECK(net.layer(0).weight(0, 0) == 0.0);
    CHECK(net.layer(0).bias(0) == 0.0);

    cfg.momentum = 0.95;
    cfg.learning_rate = 0.1;
    DenseNet n2 = net_from({Layer{Mat::Constant(1, 1, 1.0), Vec::Constant(1, 0.0)}});
    Gradient v2 = Gradient::zeros_like(n2);
    Gradient g2 = Gradient::zeros_like(n2);
    g2.layers[0].weight(0, 0) = 1.0;
    sgd_step(n2, g2, cfg, v2);
    CHECK(n2.layer(0).weight(0, 0) == doctest::Approx(1.0 - 0.1));
    sgd_step(n2, g2, cfg, v2);
    CHECK(n2.layer(0).weight(0, 0) == doctest::Approx(1.0 - 0.1 - 0.1 * 1.95));

    Gradient zero = Gradient::zeros_like(n2);
    const double before = v2.layers[0].weight(0, 0);
    sgd_step(n2, zero, cfg, v2);
    CHECK(v2.layers[0].weight(0, 0) == doctest::Approx(0.95 * before));
}

TEST_CASE("train_standard separates separable data and is deterministic") {
    LinsepParams p;
    p.d = 2;
    p.gamma = 1.0;
    p.sigma = 1.0;
    p.n = 200;
    p.seed = 3;
    const LabeledSet data = sample_linsep(p);
    TrainConfig cfg;
    cfg.seed = 11;
    cfg.learning_rate = 0.01;
    DenseNet a = DenseNet::random(std::vector<int>{2, 100, 2}, 5);
    DenseNet b = a;
    train_standard(a, data, cfg);
    train_standard(b, data, cfg);
    int errors = 0;
    for (std::size_t i = 0; i < data.size(); ++i) errors += predict(a, data.row(i)) != data.labels[i];
    CHECK(errors == 0);
    for (std::size_t l = 0; l < a.depth(); ++l) {
        CHECK(a.layer(l).weight == b.layer(l).weight);
        CHECK(a.layer(l).bias == b.layer(l).bias);
    }

    DenseNet c = DenseNet::random(std::vector<int>{2, 5, 2}, 5);
    const DenseNet before = c;
    cfg.epochs = 0;
    train_standard(c, data, cfg);
    CHECK(c.layer(0).weight == before.layer(0).weight);
}

TEST_CASE("epsilon schedule ramps linearly from the start value") {
    EpsSchedule s;
    CHECK(s.at(0, 5.0) == doctest::Approx(0.01));
    CHECK(s.at(10, 5.0) == doctest::Approx(0.01 + (5.0 - 0.01) * 0.5));
    CHECK(s.at(20, 5.0) == 5.0);
    CHECK(s.at(100, 5.0) == 5.0);
}

TEST_CASE("checkpoint round trip is exact") {
    const DenseNet net = DenseNet::random(std::vector<int>{3, 4, 2}, 12);
    const DenseNet back = net_from_json(to_json(net));
    for (std::size_t l = 0; l < net.depth(); ++l) {
        CHECK(back.layer(l).weight == net.layer(l).weight);
        CHECK(back.layer(l).bias == net.layer(l).bias);
    }
    CHECK_THROWS(net_from_json("{\"layers\": []}"));
}

TEST_CASE("init draws weights from the fan-in range") {
    const DenseNet net = DenseNet::random(std::vector<int>{16, 50, 2}, 1);
    CHECK(net.layer(0).weight.cwiseAbs().maxCoeff() <= 0.25);
    CHECK(net.layer(1).weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(50.0));
    CHECK(net.hidden_neurons() == 50);
}
