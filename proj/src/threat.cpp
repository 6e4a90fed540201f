#include "certgap/threat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace certgap {

ThreatModel ThreatModel::linf(double eps) {
    ThreatModel tm{ThreatKind::Linf, eps, {}};
    tm.validate();
    return tm;
}

ThreatModel ThreatModel::l2(double eps) {
    ThreatModel tm{ThreatKind::L2, eps, {}};
    tm.validate();
    return tm;
}

ThreatModel ThreatModel::signal(Mat directions, double eps) {
    ThreatModel tm{ThreatKind::Signal, eps, std::move(directions)};
    tm.validate();
    return tm;
}

ThreatModel ThreatModel::with_eps(double e) const {
    ThreatModel tm = *this;
    tm.eps = e;
    if (e < 0.0) throw std::invalid_argument("ThreatModel: eps must be nonnegative");
    return tm;
}

void ThreatModel::validate() const {
    if (!(eps >= 0.0)) throw std::invalid_argument("ThreatModel: eps must be nonnegative");
    if (kind != ThreatKind::Signal) return;
    if (directions.rows() < 1) throw std::invalid_argument("ThreatModel: signal model needs at least one direction");
    if (directions.rows() > directions.cols()) throw std::invalid_argument("ThreatModel: more directions than dimensions");
    const Mat gram = directions * directions.transpose();
    const Mat eye = Mat::Identity(gram.rows(), gram.cols());
    if ((gram - eye).cwiseAbs().maxCoeff() > 1e-10) {
        throw std::invalid_argument("ThreatModel: signal directions are not orthonormal");
    }
}

std::string to_string(ThreatKind kind) {
    switch (kind) {
        case ThreatKind::Linf: return "linf";
        case ThreatKind::L2: return "l2";
        case ThreatKind::Signal: return "signal";
    }
    return "?";
}

ThreatKind threat_kind_from_string(const std::string& s) {
    if (s == "linf") return ThreatKind::Linf;
    if (s == "l2") return ThreatKind::L2;
    if (s == "signal") return ThreatKind::Signal;
    throw std::invalid_argument("unknown threat kind '" + s + "'");
}

Vec project(const Vec& delta, const ThreatModel& tm) {
    switch (tm.kind) {
        case ThreatKind::Linf:
            return delta.cwiseMax(-tm.eps).cwiseMin(tm.eps);
        case ThreatKind::L2: {
            const double n = delta.norm();
            if (n <= tm.eps) return delta;
            return delta * (tm.eps / n);
        }
        case ThreatKind::Signal: {
            // nearest point on the closest segment; distance^2 = |d|^2 - 2 beta p + beta^2
            const Vec proj = tm.directions * delta;
            double best_cost = std::numeric_limits<double>::infinity();
            Eigen::Index best_j = 0;
            double best_beta = 0.0;
            for (Eigen::Index j = 0; j < proj.size(); ++j) {
                const double beta = std::clamp(proj(j), -tm.eps, tm.eps);
                const double cost = beta * beta - 2.0 * beta * proj(j);
                if (cost < best_cost) {
                    best_cost = cost;
                    best_j = j;
                    best_beta = beta;
                }
            }
            return best_beta * tm.directions.row(best_j).transpose();
        }
    }
    return delta;
}

bool contains(const ThreatModel& tm, const Vec& delta, double tol) {
    switch (tm.kind) {
        case ThreatKind::Linf: return delta.cwiseAbs().maxCoeff() <= tm.eps + tol;
        case ThreatKind::L2: return delta.norm() <= tm.eps + tol;
        case ThreatKind::Signal: {
            const Vec p = tm.directions * delta;
            for (Eigen::Index j = 0; j < p.size(); ++j) {
                if (std::abs(p(j)) <= tm.eps + tol && (delta - p(j) * tm.directions.row(j).transpose()).norm() <= tol) {
                    return true;
                }
            }
            return delta.norm() <= tol;
        }
    }
    return false;
}

Mat make_directions(int d, int k, std::uint64_t seed) {
    if (k < 1 || k > d) throw std::invalid_argument("make_directions: need 1 <= k <= d");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat dirs(k, d);
    constexpr int kMaxRetries = 64;
    for (int j = 0; j < k; ++j) {
        bool accepted = false;
        for (int attempt = 0; attempt < kMaxRetries && !accepted; ++attempt) {
            Vec v(d);
            for (int c = 0; c < d; ++c) v(c) = normal(rng);
            // two passes of modified Gram-Schmidt keep rows orthogonal to ~1e-16
            for (int pass = 0; pass < 2; ++pass) {
                for (int i = 0; i < j; ++i) v -= dirs.row(i).dot(v) * dirs.row(i).transpose();
            }
            const double n = v.norm();
            if (n > 1e-8) {
                dirs.row(j) = (v / n).transpose();
                accepted = true;
            }
        }
        if (!accepted) throw std::runtime_error("make_directions: degenerate draws exhausted retries");
    }
    return dirs;
}

SignalOracle spheres_signal_oracle() {
    return [](const Vec& x, int y) -> Vec {
        const double n = x.norm();
        if (n == 0.0) throw std::invalid_argument("spheres oracle: zero input has no radial direction");
        return y == 0 ? Vec(x / n) : Vec(-x / n);
    };
}

SignalOracle linsep_signal_oracle() {
    return [](const Vec& x, int y) -> Vec {
        Vec s = Vec::Zero(x.size());
        s(0) = y == 1 ? -1.0 : 1.0;
        return s;
    };
}

double alignment(const ThreatModel& tm, const LabeledSet& data, const SignalOracle& oracle) {
    if (data.size() == 0) throw std::invalid_argument("alignment: empty dataset");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vec s = oracle(data.row(i), data.labels[i]);
        const double sn = s.norm();
        switch (tm.kind) {
            case ThreatKind::L2: total += 1.0; break;
            case ThreatKind::Linf:
                total += s.lpNorm<1>() / (std::sqrt(static_cast<double>(s.size())) * sn);
                break;
            case ThreatKind::Signal:
                total += (tm.directions * s).cwiseAbs().maxCoeff() / sn;
                break;
        }
    }
    return total / static_cast<double>(data.size());
}

double margin(const LabeledSet& data) {
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = i + 1; j < data.size(); ++j) {
            if (data.labels[i] == data.labels[j]) continue;
            found = true;
            best = std::min(best, (data.inputs.row(static_cast<Eigen::Index>(i)) -
                                   data.inputs.row(static_cast<Eigen::Index>(j)))
                                      .squaredNorm());
        }
    }
    if (!found) throw std::invalid_argument("margin: dataset has fewer than two classes");
    return std::sqrt(best);
}

ThreatModel ThreatSpec::build(int d) const {
    switch (kind) {
        case ThreatKind::Linf: return ThreatModel::linf(eps);
        case ThreatKind::L2: return ThreatModel::l2(eps);
        case ThreatKind::Signal: return ThreatModel::signal(make_directions(d, k, dir_seed), eps);
    }
    throw std::invalid_argument("ThreatSpec: bad kind");
}

std::string ThreatSpec::to_json() const {
    nlohmann::json j{{"kind", to_string(kind)}, {"eps", eps}, {"k", k}, {"dir_seed", dir_seed}};
    return j.dump();
}

ThreatSpec ThreatSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ThreatSpec s;
    s.kind = threat_kind_from_string(j.at("kind").get<std::string>());
    s.eps = j.at("eps").get<double>();
    s.k = j.value("k", 1);
    s.dir_seed = j.value("dir_seed", std::uint64_t{0});
    if (s.eps < 0.0) throw std::invalid_argument("ThreatSpec: eps must be nonnegative");
    return s;
}

}  // namespace certgap
