#include "certgap/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "certgap/normal.hpp"

namespace certgap::theory {

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
double label_sign(int y) {
    if (y != 1 && y != -1) throw std::invalid_argument("one-neuron labels must be -1 or +1");
    return static_cast<double>(y);
}

void require_theta1(const OneNeuronConfig& cfg) {
    if (cfg.theta.size() < 1 || cfg.theta(0) == 0.0) throw std::invalid_argument("theta_1 must be nonzero");
}

}  // namespace

double OneNeuronConfig::ratio() const { return theta.tail(theta.size() - 1).norm() / theta(0); }

void OneNeuronConfig::validate() const {
    if (theta.size() < 2) throw std::invalid_argument("OneNeuronConfig: d must be >= 2");
    if (!(a > 0.0)) throw std::invalid_argument("OneNeuronConfig: a must be positive");
    if (!(b < 0.0)) throw std::invalid_argument("OneNeuronConfig: b must be negative");
    if (!(sigma > 0.0) || !(gamma > 0.0)) throw std::invalid_argument("OneNeuronConfig: gamma and sigma must be positive");
    if (eps < 0.0 || !(eps < gamma)) throw std::invalid_argument("OneNeuronConfig: eps must lie in [0, gamma)");
    if (!theta.allFinite()) throw std::invalid_argument("OneNeuronConfig: theta must be finite");
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

PreActivationRange pre_activation_range(const OneNeuronConfig& cfg, const Vec& x) {
    const double centre = cfg.theta.dot(x);
    const double radius = cfg.eps * std::abs(cfg.theta(0));
    return {centre - radius, centre + radius};
}

double clean_objective(const OneNeuronConfig& cfg, const Vec& x, int y) {
    return label_sign(y) * (cfg.b + cfg.a * std::max(0.0, cfg.theta.dot(x)));
}

double at_objective(const OneNeuronConfig& cfg, const Vec& x, int y) {
    const double s = label_sign(y);
    const PreActivationRange r = pre_activation_range(cfg, x);
    const double h = cfg.a * s > 0.0 ? r.lower : r.upper;
    return s * (cfg.b + cfg.a * std::max(0.0, h));
}

double at_loss(const OneNeuronConfig& cfg, const Vec& x, int y) { return softplus(-at_objective(cfg, x, y)); }

double at_gradient(const OneNeuronConfig& cfg, const Vec& x, int y) {
    const double s = label_sign(y);
    const PreActivationRange r = pre_activation_range(cfg, x);
    const double j = at_objective(cfg, x, y);
    const double t1 = sgn(cfg.theta(0));
    if (cfg.a * s > 0.0) {
        if (!(r.lower > 0.0)) return 0.0;
        return -s * sigmoid(-j) * cfg.a * (x(0) - cfg.eps * t1);
    }
    if (!(r.upper > 0.0)) return 0.0;
    return -s * sigmoid(-j) * cfg.a * (x(0) + cfg.eps * t1);
}

bool in_loose_region(const OneNeuronConfig& cfg, const Vec& x, int y) {
    const PreActivationRange r = pre_activation_range(cfg, x);
    return r.lower < 0.0 && r.upper > 0.0 && cfg.a * label_sign(y) > 0.0;
}

double coap_objective(const OneNeuronConfig& cfg, const Vec& x, int y) {
    require_theta1(cfg);
    if (!in_loose_region(cfg, x, y)) return at_objective(cfg, x, y);
    const PreActivationRange r = pre_activation_range(cfg, x);
    return label_sign(y) * (cfg.b + cfg.a * r.upper * r.lower / (2.0 * cfg.eps * std::abs(cfg.theta(0))));
}

double coap_loss(const OneNeuronConfig& cfg, const Vec& x, int y) { return softplus(-coap_objective(cfg, x, y)); }

double coap_gradient(const OneNeuronConfig& cfg, const Vec& x, int y) {
    require_theta1(cfg);
    if (!in_loose_region(cfg, x, y)) return at_gradient(cfg, x, y);
    const double s = label_sign(y);
    const double t1 = cfg.theta(0);
    const double abs1 = std::abs(t1);
    const double sg = sgn(t1);
    const PreActivationRange r = pre_activation_range(cfg, x);
    const double j = coap_objective(cfg, x, y);
    const double inner = r.lower / abs1 * (x(0) + cfg.eps * sg) + r.upper * (x(0) * abs1 - cfg.theta.dot(x) * sg) / (t1 * t1);
    return -(cfg.a * s * sigmoid(-j) / (2.0 * cfg.eps)) * inner;
}

double robust_risk(const OneNeuronConfig& cfg) {
    const double spread = cfg.sigma * cfg.theta.tail(cfg.theta.size() - 1).norm();
    if (!(spread > 0.0)) throw std::invalid_argument("robust_risk: theta_{2:d} must be nonzero");
    const double t1 = cfg.theta(0);
    const double shift = cfg.gamma * t1 - cfg.eps * std::abs(t1);
    const double offset = cfg.b / cfg.a;
    return 0.5 * (normal::cdf((-shift - offset) / spread) + normal::cdf((-shift + offset) / spread));
}

double f_of_r(double r, double gamma, double sigma, double eps) {
    if (!(r > 0.0)) throw std::invalid_argument("f_of_r: r must be positive");
    if (!(eps > 0.0) || !(eps < gamma)) throw std::invalid_argument("f_of_r: eps must lie in (0, gamma)");
    const double alpha = -(gamma + eps) / (r * sigma);
    const double beta = -(gamma - eps) / (r * sigma);
    // Numerator and denominator of the ratio are both divided by phi(beta).
    const double pdf_ratio = std::exp(0.5 * (beta * beta - alpha * alpha));
    const double ratio =
        ((gamma - 3.0 * eps) - (gamma + eps) * pdf_ratio) / normal::interval_mass_over_pdf(alpha, beta);
    return gamma * gamma - eps * eps - 2.0 * sigma * sigma * r * r - sigma * r * ratio;
}

double r_star(double gamma, double sigma, double eps) {
    const double q = gamma * gamma - 10.0 * gamma * eps + 13.0 * eps * eps;
    if (!(eps > 0.0) || !(q > 0.0)) throw std::invalid_argument("r_star: requires eps > 0 and gamma^2 - 10 gamma eps + 13 eps^2 > 0");
    const double s2 = sigma * sigma;
    const double first = (7.0 * eps - gamma) * std::pow(gamma + eps, 4) / (4.0 * s2 * q);
    const double second = std::pow(gamma + eps, 3) / (12.0 * s2 * eps);
    return std::sqrt(std::max(first, second));
}

bool in_negativity_range(double gamma, double eps) {
    return eps > (5.0 + 2.0 * std::sqrt(3.0)) / 13.0 * gamma && eps < gamma;
}

CdfBoundCheck gauss_cdf_diff_lower_bound_check(double x, double y) {
    if (!(x <= y) || !(y < 0.0)) throw std::invalid_argument("gauss_cdf_diff_lower_bound_check: requires x <= y < 0");
    const double bound = normal::pdf(0.0) * (y - x + x * x * x / 6.0);
    const double actual = normal::interval_mass(x, y);
    return {bound, actual, bound <= actual};
}

void sample_population(const OneNeuronConfig& cfg, std::size_t n, std::uint64_t seed, Mat& xs, std::vector<int>& ys) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, cfg.sigma);
    std::bernoulli_distribution coin(0.5);
    const int d = cfg.d();
    xs.resize(d, static_cast<Eigen::Index>(n));
    ys.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = coin(rng) ? 1 : -1;
        ys[i] = y;
        const auto c = static_cast<Eigen::Index>(i);
        xs(0, c) = cfg.gamma * y;
        for (int k = 1; k < d; ++k) xs(k, c) = noise(rng);
    }
}

Separation one_step_separation(const OneNeuronConfig& cfg, std::size_t n_population, double learning_rate,
                               std::uint64_t seed) {
    cfg.validate();
    require_theta1(cfg);
    if (n_population == 0) throw std::invalid_argument("one_step_separation: empty population");
    Separation out;
    if (cfg.eps > 0.0 && cfg.gamma * cfg.gamma - 10.0 * cfg.gamma * cfg.eps + 13.0 * cfg.eps * cfg.eps > 0.0) {
        out.conditions_met = cfg.ratio() > r_star(cfg.gamma, cfg.sigma, cfg.eps) && cfg.gamma < 1.5 * cfg.eps;
    }
    Mat xs;
    std::vector<int> ys;
    sample_population(cfg, n_population, seed, xs, ys);
    double sum_at = 0.0;
    double sum_coap = 0.0;
    for (std::size_t i = 0; i < n_population; ++i) {
        const Vec x = xs.col(static_cast<Eigen::Index>(i));
        sum_at += at_gradient(cfg, x, ys[i]);
        sum_coap += coap_gradient(cfg, x, ys[i]);
    }
    const double inv = 1.0 / static_cast<double>(n_population);
    out.grad_at = sum_at * inv;
    out.grad_coap = sum_coap * inv;
    OneNeuronConfig after_at = cfg;
    OneNeuronConfig after_coap = cfg;
    after_at.theta(0) -= learning_rate * out.grad_at;
    after_coap.theta(0) -= learning_rate * out.grad_coap;
    out.theta1_at = after_at.theta(0);
    out.theta1_coap = after_coap.theta(0);
    out.risk_at = robust_risk(after_at);
    out.risk_coap = robust_risk(after_coap);
    out.separated = out.risk_coap > out.risk_at;
    return out;
}

namespace {

// Inner maximum over |beta| <= eps by scanning the segment ends and the kink.
double searched_at_loss(const OneNeuronConfig& cfg, const Vec& x, int y) {
    std::vector<double> betas{-cfg.eps, 0.0, cfg.eps};
    const double kink = -cfg.theta.dot(x) / cfg.theta(0);
    if (std::abs(kink) <= cfg.eps) betas.push_back(kink);
    double worst = -std::numeric_limits<double>::infinity();
    for (double beta : betas) {
        Vec shifted = x;
        shifted(0) += beta;
        worst = std::max(worst, softplus(-clean_objective(cfg, shifted, y)));
    }
    return worst;
}

template <class Loss>
double central_difference(OneNeuronConfig cfg, const Vec& x, int y, Loss&& loss) {
    const double h = 1e-6 * std::max(1.0, std::abs(cfg.theta(0)));
    const double t = cfg.theta(0);
    cfg.theta(0) = t + h;
    const double up = loss(cfg, x, y);
    cfg.theta(0) = t - h;
    const double down = loss(cfg, x, y);
    return (up - down) / (2.0 * h);
}

double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / scale;
}

OneNeuronConfig random_config(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g;
    OneNeuronConfig cfg;
    const int d = 2 + static_cast<int>(u(rng) * 9.0);
    cfg.theta.resize(d);
    for (int i = 0; i < d; ++i) cfg.theta(i) = g(rng);
    if (std::abs(cfg.theta(0)) < 0.05) cfg.theta(0) = 0.05;
    cfg.a = 0.2 + 1.8 * u(rng);
    cfg.b = -(0.1 + 1.9 * u(rng));
    cfg.gamma = 0.5 + 2.5 * u(rng);
    cfg.sigma = 0.3 + 1.7 * u(rng);
    cfg.eps = cfg.gamma * (0.05 + 0.9 * u(rng));
    return cfg;
}

bool away_from_kinks(const OneNeuronConfig& cfg, const Vec& x) {
    const PreActivationRange r = pre_activation_range(cfg, x);
    return std::abs(r.lower) > 1e-3 && std::abs(r.upper) > 1e-3 && std::abs(cfg.theta.dot(x)) > 1e-3;
}

Vec random_point(const OneNeuronConfig& cfg, int y, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, cfg.sigma);
    Vec x(cfg.d());
    x(0) = cfg.gamma * y;
    for (int k = 1; k < cfg.d(); ++k) x(k) = noise(rng);
    return x;
}

CheckReport check_gradients(const VerifyOptions& opts, bool loose_only) {
    std::mt19937_64 rng(derive_seed(opts.seed, loose_only ? 2 : 1));
    std::bernoulli_distribution coin(0.5);
    CheckReport rep{loose_only ? "coap_gradient vs finite differences" : "at_gradient vs finite differences", true, 0.0, ""};
    int done = 0;
    long tries = 0;
    while (done < opts.gradient_configs && tries < 1000L * opts.gradient_configs) {
        ++tries;
        const OneNeuronConfig cfg = random_config(rng);
        const int y = coin(rng) ? 1 : -1;
        const Vec x = random_point(cfg, y, rng);
        if (!away_from_kinks(cfg, x)) continue;
        if (loose_only && !in_loose_region(cfg, x, y)) continue;
        double err = 0.0;
        if (loose_only) {
            err = relative_error(coap_gradient(cfg, x, y), central_difference(cfg, x, y, coap_loss));
        } else {
            err = relative_error(at_gradient(cfg, x, y), central_difference(cfg, x, y, searched_at_loss));
        }
        rep.worst = std::max(rep.worst, err);
        ++done;
    }
    rep.passed = done == opts.gradient_configs && rep.worst <= 1e-5;
    rep.detail = std::to_string(done) + " configs, max relative error";
    return rep;
}

CheckReport check_risk(const VerifyOptions& opts) {
    std::mt19937_64 rng(derive_seed(opts.seed, 3));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    CheckReport rep{"robust_risk vs Monte Carlo", true, 0.0, ""};
    for (int c = 0; c < opts.risk_configs; ++c) {
        OneNeuronConfig cfg = random_config(rng);
        cfg.theta(0) = std::abs(cfg.theta(0));
        const double closed = robust_risk(cfg);
        Mat xs;
        std::vector<int> ys;
        sample_population(cfg, opts.risk_samples, derive_seed(opts.seed, 4, static_cast<std::uint64_t>(c)), xs, ys);
        std::size_t errors = 0;
        for (std::size_t i = 0; i < opts.risk_samples; ++i) {
            if (at_objective(cfg, xs.col(static_cast<Eigen::Index>(i)), ys[i]) <= 0.0) ++errors;
        }
        const double n = static_cast<double>(opts.risk_samples);
        const double mc = static_cast<double>(errors) / n;
        const double se = std::sqrt(std::max(closed * (1.0 - closed), 1e-300) / n);
        const double z = std::abs(mc - closed) / se;
        rep.worst = std::max(rep.worst, z);
    }
    rep.passed = rep.worst <= 3.0;
    rep.detail = std::to_string(opts.risk_configs) + " configs, max |closed - MC| in standard errors";
    return rep;
}

CheckReport check_f(const VerifyOptions& opts) {
    std::mt19937_64 rng(derive_seed(opts.seed, 5));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    CheckReport rep{"f(r) < 0 above r_star", true, -std::numeric_limits<double>::infinity(), ""};
    const double lo = std::max((5.0 + 2.0 * std::sqrt(3.0)) / 13.0, 2.0 / 3.0);
    for (int t = 0; t < opts.fr_triples; ++t) {
        const double gamma = 0.5 + 2.5 * u(rng);
        const double sigma = 0.5 + 1.5 * u(rng);
        const double eps = gamma * (lo + (0.99 - lo) * (0.02 + 0.96 * u(rng)));
        const double rs = r_star(gamma, sigma, eps);
        for (int i = 0; i < opts.fr_grid; ++i) {
            const double r = rs * (1.0 + 9.0 * i / (opts.fr_grid - 1));
            rep.worst = std::max(rep.worst, f_of_r(r, gamma, sigma, eps));
        }
    }
    rep.passed = rep.worst < 0.0;
    rep.detail = std::to_string(opts.fr_triples) + " triples, max f on grid";
    return rep;
}

CheckReport check_cdf(const VerifyOptions& opts) {
    CheckReport rep{"Gaussian CDF difference lower bound", true, -std::numeric_limits<double>::infinity(), ""};
    const int n = opts.cdf_grid;
    long points = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double x = -5.0 + 5.0 * (i + 0.5) / n;
            const double y = -5.0 + 5.0 * (j + 0.5) / n;
            if (!(x < y)) continue;
            const CdfBoundCheck c = gauss_cdf_diff_lower_bound_check(x, y);
            rep.worst = std::max(rep.worst, c.bound - c.actual);
            ++points;
        }
    }
    rep.passed = rep.worst <= 0.0;
    rep.detail = std::to_string(points) + " grid points, max (bound - actual)";
    return rep;
}

CheckReport check_separation(const VerifyOptions& opts) {
    std::mt19937_64 rng(derive_seed(opts.seed, 6));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g;
    CheckReport rep{"one-step separation", true, 0.0, ""};
    int failures = 0;
    int runs = 0;
    for (int c = 0; c < opts.separation_configs; ++c) {
        OneNeuronConfig cfg;
        cfg.gamma = 1.0;
        cfg.sigma = 0.5 + u(rng);
        cfg.eps = 0.7 + 0.25 * u(rng);
        cfg.a = 0.5 + u(rng);
        cfg.b = -(0.1 + u(rng));
        cfg.theta.resize(10);
        for (int k = 1; k < 10; ++k) cfg.theta(k) = g(rng);
        const double rs = r_star(cfg.gamma, cfg.sigma, cfg.eps);
        const double target = rs * (1.2 + 2.0 * u(rng));
        cfg.theta(0) = cfg.theta.tail(9).norm() / target;
        for (double lr : {0.01, 0.1, 1.0}) {
            const Separation s = one_step_separation(cfg, opts.separation_samples, lr,
                                                     derive_seed(opts.seed, 7, static_cast<std::uint64_t>(c)));
            ++runs;
            if (!s.conditions_met || !s.separated) {
                ++failures;
                rep.worst = std::max(rep.worst, s.risk_at - s.risk_coap);
            }
        }
    }
    rep.passed = failures == 0;
    std::ostringstream os;
    os << runs << " runs, " << failures << " not separated; max (risk_at - risk_coap) over failures";
    rep.detail = os.str();
    return rep;
}

}  // namespace

std::vector<CheckReport> theory_verify(const VerifyOptions& opts) {
    return {check_gradients(opts, false), check_gradients(opts, true), check_risk(opts), check_f(opts), check_cdf(opts),
            check_separation(opts)};
}

}  // namespace certgap::theory
