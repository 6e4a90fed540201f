#include <cmath>
#include <random>

#include "certgap/attacks.hpp"
#include "certgap/coap.hpp"
#include "certgap/datagen.hpp"
#include "certgap/evaluate.hpp"
#include "certgap/interval.hpp"
#include "certgap/robust_objectives.hpp"
#include "doctest.h"

using namespace certgap;

namespace {

DenseNet one_neuron(const Vec& theta, double a, double b) {
    return DenseNet({Layer{Mat(theta.transpose()), Vec::Zero(1)}, Layer{Mat::Constant(1, 1, a), Vec::Constant(1, b)}});
}

ThreatModel along_e1(int d, double eps) {
    Mat dir = Mat::Zero(1, d);
    dir(0, 0) = 1.0;
    return ThreatModel::signal(dir, eps);
}

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

std::vector<Vec> preacts(const DenseNet& net, const Vec& x) {
    std::vector<Vec> out;
    Vec a = x;
    for (std::size_t i = 0; i < net.depth(); ++i) {
        out.push_back(net.layer(i).weight * a + net.layer(i).bias);
        a = out.back().cwiseMax(0.0);
    }
    return out;
}

// Minimum of z_y - z_j along every direction segment, from a dense scan.
double scanned_min_margin(const DenseNet& net, const Vec& x, int y, int j, const ThreatModel& tm, int points) {
    double best = INFINITY;
    for (Eigen::Index m = 0; m < tm.directions.rows(); ++m) {
        for (int i = 0; i < points; ++i) {
            const double t = -tm.eps + 2.0 * tm.eps * i / (points - 1);
            const Vec z = preacts(net, x + t * tm.directions.row(m).transpose()).back();
            best = std::min(best, z(y) - z(j));
        }
    }
    return best;
}

double ce(const Vec& z, int y) {
    const double m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum()) - z(y);
}

}  // namespace

TEST_CASE("one-neuron dual bound: unstable, active and inactive cases") {
    const DenseNet net = one_neuron(vec2(1, 0), 1.0, -0.5);
    const ThreatModel tm = along_e1(2, 1.0);
    const Vec x = vec2(0.5, 1);
    const BoundState bounds = coap_layer_bounds(net, x, tm);
    CHECK(bounds.hidden[0].lower(0) == doctest::Approx(-0.5));
    CHECK(bounds.hidden[0].upper(0) == doctest::Approx(1.5));
    DualState state;
    const double j = dual_bound(net, x, Vec::Constant(1, 1.0), tm, bounds, &state);
    CHECK(j == doctest::Approx(-0.875).epsilon(1e-14));
    CHECK(j < -0.5);
    CHECK(state.nu.back()(0) == -1.0);

    // Stable active: l > 0.
    const Vec far = vec2(3.0, 1);
    const double active = dual_bound(net, far, Vec::Constant(1, 1.0), tm, coap_layer_bounds(net, far, tm));
    CHECK(active == doctest::Approx(-0.5 + 1.0 * (3.0 - 1.0)).epsilon(1e-14));
    // Stable inactive: u < 0.
    const Vec neg = vec2(-3.0, 1);
    const double inactive = dual_bound(net, neg, Vec::Constant(1, 1.0), tm, coap_layer_bounds(net, neg, tm));
    CHECK(inactive == doctest::Approx(-0.5).epsilon(1e-14));
    CHECK(dual_bound(net, neg, Vec::Constant(1, -1.0), tm, coap_layer_bounds(net, neg, tm)) == doctest::Approx(0.5));
}

TEST_CASE("signal penalty with one axis direction is eps |nu_1|") {
    Vec nu(3);
    nu << -0.7, 2.0, 5.0;
    CHECK(support_penalty(along_e1(3, 1.5), nu) == 1.5 * 0.7);
    CHECK(support_penalty(ThreatModel::linf(2.0), nu) == doctest::Approx(2.0 * 7.7));
    CHECK(support_penalty(ThreatModel::l2(2.0), nu) == doctest::Approx(2.0 * nu.norm()));
}

TEST_CASE("layer bounds: one hidden layer equals first-layer bounds") {
    const DenseNet net = DenseNet::random(std::vector<int>{4, 6, 2}, 1);
    const Vec x = Vec::LinSpaced(4, -1, 1);
    const ThreatModel tm = ThreatModel::l2(0.4);
    const BoundState s = coap_layer_bounds(net, x, tm);
    const Interval f = first_layer_bounds(tm, x, net.layer(0).weight, net.layer(0).bias);
    CHECK(s.hidden.size() == 1);
    CHECK(s.hidden[0].lower == f.lower);
    CHECK(s.hidden[0].upper == f.upper);
}

TEST_CASE("dual bounds are sound on random deep nets") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int tighter = 0, total = 0;
    for (int n = 0; n < 100; ++n) {
        const int d = 2 + n % 4;
        const DenseNet net = DenseNet::random(std::vector<int>{d, 7, 5, 3}, rng());
        const double eps = 0.05 + 0.5 * u(rng);
        const std::vector<ThreatModel> threats{ThreatModel::linf(eps), ThreatModel::l2(eps), ThreatModel::signal(make_directions(d, 2, rng()), eps)};
        for (const ThreatModel& tm : threats) {
            for (int i = 0; i < 10; ++i) {
                const Vec x = Vec::NullaryExpr(d, [&] { return g(rng); });
                const int y = i % 3;
                const BoundState coap = coap_layer_bounds(net, x, tm);
                const BoundState ibp = ibp_bounds(net, x, tm);
                const Vec margins = coap_margins(net, x, y, tm);
                CHECK(margins(y) == 0.0);
                ++total;
                tighter += (coap.hidden[1].upper - coap.hidden[1].lower).sum() <= (ibp.hidden[1].upper - ibp.hidden[1].lower).sum() + 1e-12;
                for (int k = 0; k < 100; ++k) {
                    Vec delta = Vec::NullaryExpr(d, [&] { return g(rng); });
                    delta = project(delta, tm);
                    const std::vector<Vec> z = preacts(net, x + delta);
                    CHECK((z[1].array() >= coap.hidden[1].lower.array() - 1e-9).all());
                    CHECK((z[1].array() <= coap.hidden[1].upper.array() + 1e-9).all());
                    for (int j = 0; j < 3; ++j) {
                        if (j != y) CHECK(z[2](y) - z[2](j) >= margins(j) - 1e-9);
                    }
                }
            }
        }
    }
    MESSAGE("second-layer COAP intervals no wider than IBP in " << tighter << " of " << total << " cases");
    CHECK(tighter * 10 >= total * 9);
}

TEST_CASE("dual bound is exact when every neuron is stable") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    int checked = 0;
    for (int t = 0; t < 400 && checked < 40; ++t) {
        const DenseNet net = DenseNet::random(std::vector<int>{3, 4, 2}, rng());
        const Vec x = 3.0 * Vec::NullaryExpr(3, [&] { return g(rng); });
        const ThreatModel tm = ThreatModel::signal(make_directions(3, 2, rng()), 0.05);
        if (!partition(coap_layer_bounds(net, x, tm).hidden[0]).unstable.empty()) continue;
        const Vec m = coap_margins(net, x, 0, tm);
        CHECK(m(1) == doctest::Approx(scanned_min_margin(net, x, 0, 1, tm, 3)).epsilon(1e-10));
        ++checked;
    }
    CHECK(checked >= 10);
}

TEST_CASE("coap robust loss bounds standard and adversarial losses") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g;
    const DenseNet net = DenseNet::random(std::vector<int>{5, 12, 3}, 6);
    const AttackConfig attack{50, 2, 0.0, 3, false};
    for (int t = 0; t < 40; ++t) {
        const Vec x = Vec::NullaryExpr(5, [&] { return g(rng); });
        const int y = t % 3;
        const double clean = ce(forward(net, x), y);
        CHECK(coap_robust_loss(net, x, y, ThreatModel::linf(0.0)) == doctest::Approx(clean).epsilon(1e-12));
        for (double eps : {0.05, 0.2, 0.6}) {
            for (const ThreatModel& tm : {ThreatModel::linf(eps), ThreatModel::l2(eps), ThreatModel::signal(make_directions(5, 3, 7), eps)}) {
                const double loss = coap_robust_loss(net, x, y, tm);
                CHECK(loss >= clean - 1e-12);
                CHECK(loss >= pgd_search(net, x, y, tm, attack).loss - 1e-12);
                if (tm.kind == ThreatKind::Signal && coap_certify(net, x, y, tm)) CHECK_FALSE(line_search_attack(net, x, y, tm).misclassified);
            }
        }
    }
}

TEST_CASE("a dominant true-class bias certifies") {
    DenseNet net = DenseNet::random(std::vector<int>{3, 5, 2}, 2);
    net.layers()[1].bias << 100.0, -100.0;
    CHECK(coap_certify(net, Vec::Ones(3), 0, ThreatModel::l2(0.1)));
    CHECK_FALSE(coap_certify(net, Vec::Ones(3), 1, ThreatModel::l2(0.1)));
}

TEST_CASE("batched tape loss agrees with per-example loss and finite differences") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g;
    for (const std::vector<int>& widths : {std::vector<int>{4, 6, 2}, std::vector<int>{4, 5, 4, 3}}) {
        DenseNet net = DenseNet::random(widths, 31);
        Mat xs = Mat::NullaryExpr(6, 4, [&] { return g(rng); });
        std::vector<int> ys;
        for (int i = 0; i < 6; ++i) ys.push_back(i % widths.back());
        for (const ThreatModel& tm : {ThreatModel::linf(0.2), ThreatModel::l2(0.4), ThreatModel::signal(make_directions(4, 2, 3), 0.5)}) {
            double mean = 0.0;
            for (int i = 0; i < 6; ++i) mean += coap_robust_loss(net, xs.row(i).transpose(), ys[i], tm) / 6.0;
            Gradient grad = Gradient::zeros_like(net);
            const double batched = coap_loss_and_gradient(net, xs, ys, tm, {}, &grad);
            CHECK(batched == doctest::Approx(mean).epsilon(1e-12));

            double ibp_mean = 0.0;
            for (int i = 0; i < 6; ++i) ibp_mean += ibp_robust_loss(net, xs.row(i).transpose(), ys[i], tm) / 6.0;
            CHECK(ibp_loss_and_gradient(net, xs, ys, tm, nullptr) == doctest::Approx(ibp_mean).epsilon(1e-12));

            const double h = 1e-6;
            double num = 0.0, den = 0.0;
            for (std::size_t l = 0; l < net.depth(); ++l) {
                Mat& w = net.layers()[l].weight;
                for (Eigen::Index i = 0; i < w.size(); ++i) {
                    const double keep = w(i);
                    w(i) = keep + h;
                    const double up = coap_loss_and_gradient(net, xs, ys, tm, {}, nullptr);
                    w(i) = keep - h;
                    const double down = coap_loss_and_gradient(net, xs, ys, tm, {}, nullptr);
                    w(i) = keep;
                    const double fd = (up - down) / (2 * h);
                    num += std::pow(fd - grad.layers[l].weight(i), 2);
                    den += std::pow(grad.layers[l].weight(i), 2);
                }
            }
            CHECK(std::sqrt(num / den) < 1e-5);
        }
    }
}

TEST_CASE("coap training certifies most of the spheres at small budget") {
    SpheresParams sp;
    sp.n_train = 500;
    sp.seed = 1;
    const LabeledSet train = sample_spheres(sp);
    const LabeledSet test = sample_spheres(sp, 2000, 77);
    DenseNet net = DenseNet::random(std::vector<int>{10, 100, 2}, 2);
    TrainConfig cfg;
    cfg.seed = 3;
    const ThreatModel tm = ThreatModel::l2(1.0);
    const TrainTrace trace = coap_train(net, train, tm, cfg);
    CHECK_FALSE(trace.diverged);
    CHECK(trace.unstable.size() == 150);
    const double cert = evaluate(net, test, tm, EvalMode::CertifiedCoap).robust_error;
    MESSAGE("certified error " << cert);
    CHECK(cert < 0.1);
}
