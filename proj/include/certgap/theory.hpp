#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "certgap/linalg.hpp"

// One-neuron network f(x) = a * relu(theta . x) + b on the linearly separable
// distribution x = [gamma * y; x_tilde], x_tilde ~ N(0, sigma^2 I), with the
// perturbation restricted to the first coordinate, |beta| <= eps. Labels are
// y in {-1, +1}; the loss is softplus(-y f(x)).
namespace certgap::theory {

struct OneNeuronConfig {
    Vec theta;
    double a = 1.0;
    double b = -0.5;
    double gamma = 1.0;
    double sigma = 1.0;
    double eps = 0.5;

    int d() const { return static_cast<int>(theta.size()); }
    /// ||theta_{2:d}|| / theta_1
    double ratio() const;
    /// a > 0, b < 0, 0 <= eps < gamma, sigma > 0, d >= 2.
    void validate() const;
};

double sigmoid(double z);
double softplus(double z);

struct PreActivationRange {
    double lower;  // theta . x - eps |theta_1|
    double upper;  // theta . x + eps |theta_1|
};
PreActivationRange pre_activation_range(const OneNeuronConfig& cfg, const Vec& x);

/// y f(x) at the clean input.
double clean_objective(const OneNeuronConfig& cfg, const Vec& x, int y);
/// Exact inner minimum of y f(x + beta e_1) over |beta| <= eps.
double at_objective(const OneNeuronConfig& cfg, const Vec& x, int y);
double at_loss(const OneNeuronConfig& cfg, const Vec& x, int y);
/// d/d theta_1 of the adversarial loss (away from the kinks l = 0, u = 0).
double at_gradient(const OneNeuronConfig& cfg, const Vec& x, int y);

/// Unstable neuron with a * y > 0: the only region where the relaxation is loose.
bool in_loose_region(const OneNeuronConfig& cfg, const Vec& x, int y);
/// Relaxed lower bound J~; equals the exact objective outside the loose region.
double coap_objective(const OneNeuronConfig& cfg, const Vec& x, int y);
double coap_loss(const OneNeuronConfig& cfg, const Vec& x, int y);
double coap_gradient(const OneNeuronConfig& cfg, const Vec& x, int y);

/// Population robust 0-1 risk of the AT objective in closed form.
double robust_risk(const OneNeuronConfig& cfg);

double f_of_r(double r, double gamma, double sigma, double eps);
double r_star(double gamma, double sigma, double eps);
/// Range of eps/gamma for which f(r) < 0 above r_star.
bool in_negativity_range(double gamma, double eps);

struct CdfBoundCheck {
    double bound;
    double actual;
    bool holds;
};
/// phi(0) (y - x + x^3 / 6) <= Phi(y) - Phi(x) for x <= y < 0.
CdfBoundCheck gauss_cdf_diff_lower_bound_check(double x, double y);

/// Draws (x, y) pairs from the distribution; labels are +-1.
void sample_population(const OneNeuronConfig& cfg, std::size_t n, std::uint64_t seed, Mat& xs, std::vector<int>& ys);

struct Separation {
    double grad_at = 0.0;
    double grad_coap = 0.0;
    double theta1_at = 0.0;
    double theta1_coap = 0.0;
    double risk_at = 0.0;
    double risk_coap = 0.0;
    bool separated = false;
    /// ratio above r_star and gamma < 1.5 eps
    bool conditions_met = false;
};

/// One gradient step on theta_1 for each objective from the same start, with
/// population gradients estimated on a shared Monte Carlo sample.
Separation one_step_separation(const OneNeuronConfig& cfg, std::size_t n_population, double learning_rate,
                               std::uint64_t seed);

struct CheckReport {
    std::string name;
    bool passed = false;
    double worst = 0.0;  // largest observed violation measure
    std::string detail;
};

struct VerifyOptions {
    int gradient_configs = 1000;
    int risk_configs = 50;
    std::size_t risk_samples = 1000000;
    int fr_triples = 20;
    int fr_grid = 1000;
    int cdf_grid = 100;  // per axis
    int separation_configs = 20;
    std::size_t separation_samples = 1000000;
    std::uint64_t seed = 2024;
};

/// Numerical checks of the one-neuron results with max observed violations.
std::vector<CheckReport> theory_verify(const VerifyOptions& opts);

}  // namespace certgap::theory
