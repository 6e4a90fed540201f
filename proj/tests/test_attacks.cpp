#include <cmath>
#include <random>

#include "certgap/attacks.hpp"
#include "certgap/datagen.hpp"
#include "certgap/evaluate.hpp"
#include "doctest.h"

using namespace certgap;

namespace {

double ce(const Vec& z, int y) {
    const double m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum()) - z(y);
}

DenseNet linear_net(int d, std::uint64_t seed) { return DenseNet::random(std::vector<int>{d, 2}, seed); }

bool grid_finds_error(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm, int points) {
    for (Eigen::Index j = 0; j < tm.directions.rows(); ++j) {
        const Vec dir = tm.directions.row(j).transpose();
        for (int i = 0; i < points; ++i) {
            const double t = -tm.eps + 2.0 * tm.eps * i / (points - 1);
            if (!is_correct(forward(net, x + t * dir), y)) return true;
        }
    }
    return false;
}

}  // namespace

TEST_CASE("pgd reaches the vertex optimum of a linear model under Linf") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
        const DenseNet net = linear_net(4, rng());
        const Vec x = Vec::NullaryExpr(4, [&] { return g(rng); });
        const int y = t % 2;
        const double eps = 0.3;
        const Vec w = net.layer(0).weight.row(y) - net.layer(0).weight.row(1 - y);
        const Vec best = -eps * w.cwiseSign();
        const AttackResult r = pgd_search(net, x, y, ThreatModel::linf(eps), AttackConfig{100, 3, 0.0, 7, false});
        CHECK(r.loss == doctest::Approx(ce(forward(net, x + best), y)).epsilon(1e-12));
        CHECK((r.delta - best).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("pgd reaches the L2 optimum of a linear model") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
        const DenseNet net = linear_net(5, rng());
        const Vec x = Vec::NullaryExpr(5, [&] { return g(rng); });
        const int y = t % 2;
        const double eps = 0.5;
        const Vec w = net.layer(0).weight.row(y) - net.layer(0).weight.row(1 - y);
        const Vec best = -eps * w / w.norm();
        const AttackResult r = pgd_search(net, x, y, ThreatModel::l2(eps), AttackConfig{200, 2, 0.5 * eps, 3, false});
        CHECK(r.loss == doctest::Approx(ce(forward(net, x + best), y)).epsilon(1e-8));
    }
}

TEST_CASE("pgd result stays in the set and never loses to the clean point") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    const DenseNet net = DenseNet::random(std::vector<int>{6, 20, 3}, 4);
    for (int t = 0; t < 30; ++t) {
        const Vec x = Vec::NullaryExpr(6, [&] { return g(rng); });
        const int y = t % 3;
        for (const ThreatModel& tm : {ThreatModel::linf(0.2), ThreatModel::l2(0.8), ThreatModel::signal(make_directions(6, 3, 5), 1.0)}) {
            const AttackResult r = pgd_search(net, x, y, tm, AttackConfig{20, 2, 0.0, rng(), false});
            CHECK(contains(tm, r.delta));
            CHECK(r.loss >= ce(forward(net, x), y) - 1e-12);
            CHECK(r.loss == doctest::Approx(ce(forward(net, x + r.delta), y)).epsilon(1e-10));
            CHECK(r.misclassified == !is_correct(forward(net, x + r.delta), y));
        }
    }
}

TEST_CASE("pgd failure flags are monotone in restarts") {
    SpheresParams sp;
    sp.n_train = 300;
    const LabeledSet data = sample_spheres(sp);
    const DenseNet net = DenseNet::random(std::vector<int>{10, 30, 2}, 8);
    for (const ThreatModel& tm : {ThreatModel::l2(4.0), ThreatModel::signal(make_directions(10, 4, 2), 4.0)}) {
        std::vector<char> prev(data.size(), 0);
        for (int restarts = 1; restarts <= 4; ++restarts) {
            const std::vector<char> f = robust_failures(net, data, tm, EvalMode::Pgd, AttackConfig{10, restarts, 0.0, 5, true});
            for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] >= prev[i]);
            prev = f;
        }
    }
}

TEST_CASE("line candidates include ends, zero and every breakpoint") {
    const DenseNet net = DenseNet::random(std::vector<int>{3, 8, 2}, 5);
    const Vec x = Vec::LinSpaced(3, -0.5, 0.5);
    const Vec dir = make_directions(3, 1, 1).row(0).transpose();
    const std::vector<double> ts = line_candidates(net, x, dir, 2.0);
    CHECK(std::is_sorted(ts.begin(), ts.end()));
    CHECK(ts.front() == -2.0);
    CHECK(ts.back() == 2.0);
    CHECK(std::find(ts.begin(), ts.end(), 0.0) != ts.end());
    const Vec h0 = net.layer(0).weight * x + net.layer(0).bias;
    const Vec s = net.layer(0).weight * dir;
    for (Eigen::Index i = 0; i < h0.size(); ++i) {
        const double b = -h0(i) / s(i);
        if (std::abs(b) < 2.0) CHECK(std::find(ts.begin(), ts.end(), b) != ts.end());
    }
    const DenseNet deep = DenseNet::random(std::vector<int>{3, 4, 4, 2}, 5);
    CHECK(line_candidates(deep, x, dir, 1.0).size() >= 1001);
}

TEST_CASE("line search on a net constant along the direction") {
    DenseNet net = DenseNet::random(std::vector<int>{3, 6, 2}, 9);
    net.layers()[0].weight.col(0).setZero();
    Mat e1 = Mat::Zero(1, 3);
    e1(0, 0) = 1.0;
    const ThreatModel tm = ThreatModel::signal(e1, 5.0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t = 0; t < 30; ++t) {
        const Vec x = Vec::NullaryExpr(3, [&] { return g(rng); });
        CHECK(line_search_attack(net, x, t % 2, tm).misclassified == !is_correct(forward(net, x), t % 2));
    }
}

TEST_CASE("line search agrees with a dense grid on one-hidden-layer nets") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> g;
    int flips = 0;
    for (int t = 0; t < 100; ++t) {
        const int d = 3 + t % 5;
        const DenseNet net = DenseNet::random(std::vector<int>{d, 10, 2}, rng());
        const Vec x = Vec::NullaryExpr(d, [&] { return g(rng); });
        const int y = predict(net, x);
        const ThreatModel tm = ThreatModel::signal(make_directions(d, 1 + t % 3, rng()), 1.5);
        const LineSearchVerdict v = line_search_attack(net, x, y, tm);
        CHECK(v.misclassified == grid_finds_error(net, x, y, tm, 100000));
        flips += v.misclassified;
        if (v.misclassified) {
            REQUIRE(v.witness);
            CHECK(contains(tm, *v.witness));
            CHECK_FALSE(is_correct(forward(net, x + *v.witness), y));
        } else {
            CHECK_FALSE(pgd_search(net, x, y, tm, AttackConfig{50, 3, 0.0, 1, true}).misclassified);
        }
    }
    MESSAGE(flips << " of 100 cases attackable");
    CHECK(flips > 10);
    CHECK(flips < 90);
}

TEST_CASE("line-search max loss dominates PGD and the grid") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int t = 0; t < 30; ++t) {
        const DenseNet net = DenseNet::random(std::vector<int>{4, 12, 3}, rng());
        const Vec x = Vec::NullaryExpr(4, [&] { return g(rng); });
        const int y = t % 3;
        const ThreatModel tm = ThreatModel::signal(make_directions(4, 2, rng()), 1.0);
        const AttackResult exact = line_search_max_loss(net, x, y, tm);
        CHECK(exact.loss >= pgd_search(net, x, y, tm, AttackConfig{50, 3, 0.0, 2, false}).loss - 1e-12);
        double grid = 0.0;
        for (int j = 0; j < 2; ++j) {
            for (int i = 0; i < 2001; ++i) {
                const double s = -1.0 + 2.0 * i / 2000.0;
                grid = std::max(grid, ce(forward(net, x + s * tm.directions.row(j).transpose()), y));
            }
        }
        CHECK(exact.loss >= grid - 1e-12);
    }
}

TEST_CASE("adversarial training") {
    SpheresParams sp;
    sp.n_train = 100;
    const LabeledSet data = sample_spheres(sp);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 4;
    const DenseNet init = DenseNet::random(std::vector<int>{10, 20, 2}, 3);

    DenseNet standard = init, zero = init;
    train_standard(standard, data, cfg);
    adv_train(zero, data, ThreatModel::l2(0.0), cfg, AttackConfig{10, 1, 0.0, 0, false});
    for (std::size_t l = 0; l < init.depth(); ++l) CHECK((standard.layer(l).weight - zero.layer(l).weight).norm() < 1e-10);

    for (const ThreatModel& tm : {ThreatModel::l2(3.0), ThreatModel::signal(make_directions(10, 3, 1), 3.0)}) {
        DenseNet a = init, b = init;
        const TrainTrace ta = adv_train(a, data, tm, cfg, AttackConfig{10, 1, 0.0, 9, false});
        adv_train(b, data, tm, cfg, AttackConfig{10, 1, 0.0, 9, false});
        CHECK(ta.loss.size() == 10);
        CHECK(ta.unstable.size() == 10);
        for (std::size_t l = 0; l < init.depth(); ++l) CHECK(a.layer(l).weight == b.layer(l).weight);
    }
}

TEST_CASE("evaluation modes") {
    SpheresParams sp;
    sp.n_train = 2000;
    sp.seed = 6;
    const LabeledSet data = sample_spheres(sp);

    DenseNet constant({Layer{Mat::Zero(2, 10), Vec::Zero(2)}});
    constant.layers()[0].bias << 1.0, 0.0;
    const EvalResult c = evaluate(constant, data, ThreatModel::l2(1.0), EvalMode::Pgd);
    CHECK(std::abs(c.standard_error - 0.5) <= 3.0 * std::sqrt(0.25 / 2000));

    DenseNet net = DenseNet::random(std::vector<int>{10, 40, 2}, 1);
    TrainConfig cfg;
    cfg.epochs = 30;
    train_standard(net, subset(data, [] {
                       std::vector<std::size_t> idx(500);
                       for (std::size_t i = 0; i < 500; ++i) idx[i] = i;
                       return idx;
                   }()),
                   cfg);
    const ThreatModel tm = ThreatModel::signal(make_directions(10, 3, 4), 4.0);
    const AttackConfig attack{30, 2, 0.0, 3, true};
    const std::vector<char> stdf = standard_failures(net, data);
    const std::vector<char> pgd = robust_failures(net, data, tm, EvalMode::Pgd, attack);
    const std::vector<char> exact = robust_failures(net, data, tm, EvalMode::Exact, attack);
    const std::vector<char> coap = robust_failures(net, data, tm, EvalMode::CertifiedCoap, attack);
    const std::vector<char> ibp = robust_failures(net, data, tm, EvalMode::CertifiedIbp, attack);
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(stdf[i] <= pgd[i]);
        CHECK(pgd[i] <= exact[i]);
        CHECK(exact[i] <= coap[i]);
        CHECK(exact[i] <= ibp[i]);
    }
    CHECK(stdf == standard_failures_serial(net, data));
    for (EvalMode m : {EvalMode::Pgd, EvalMode::Exact, EvalMode::CertifiedCoap, EvalMode::CertifiedIbp}) {
        CHECK(robust_failures(net, data, tm, m, attack) == robust_failures_serial(net, data, tm, m, attack));
        const EvalResult r = evaluate(net, data, tm, m, attack);
        CHECK(r.robust_error >= r.standard_error);
        CHECK(r.robust_error <= 1.0);
    }
    CHECK(evaluate(net, data, ThreatModel::l2(0.0), EvalMode::Pgd, attack).robust_error == failure_rate(stdf));
    CHECK_THROWS_AS(evaluate(net, data, ThreatModel::l2(1.0), EvalMode::Exact), std::invalid_argument);
    CHECK(eval_mode_from_string(to_string(EvalMode::CertifiedIbp)) == EvalMode::CertifiedIbp);
}
