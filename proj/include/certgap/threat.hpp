#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "certgap/dataset.hpp"
#include "certgap/linalg.hpp"

namespace certgap {

enum class ThreatKind { Linf, L2, Signal };

/// Perturbation set centred at the origin. For `Signal` the set is the union
/// of the segments {beta * directions.row(j) : |beta| <= eps}.
struct ThreatModel {
    ThreatKind kind = ThreatKind::L2;
    double eps = 0.0;
    Mat directions;  // k x d, orthonormal rows; only used by Signal

    static ThreatModel linf(double eps);
    static ThreatModel l2(double eps);
    static ThreatModel signal(Mat directions, double eps);

    ThreatModel with_eps(double e) const;
    int num_directions() const { return static_cast<int>(directions.rows()); }

    /// Throws std::invalid_argument on negative eps or non-orthonormal directions.
    void validate() const;
};

std::string to_string(ThreatKind kind);
ThreatKind threat_kind_from_string(const std::string& s);

/// Euclidean projection onto the threat set.
Vec project(const Vec& delta, const ThreatModel& tm);

/// True iff `delta` lies in the set up to `tol`.
bool contains(const ThreatModel& tm, const Vec& delta, double tol = 1e-9);

/// Gram-Schmidt on k seeded Gaussian draws; rows orthonormal.
Mat make_directions(int d, int k, std::uint64_t seed);

/// Unit direction towards the robust Bayes decision boundary for (x, y).
using SignalOracle = std::function<Vec(const Vec& x, int y)>;

/// Radial direction: outward for the inner class (label 0), inward for the outer class.
SignalOracle spheres_signal_oracle();
/// -sgn(y) e_1 with the {0 -> -1, 1 -> +1} label convention.
SignalOracle linsep_signal_oracle();

/// Empirical mean of sup over nonzero delta in the set of cos(s, delta).
double alignment(const ThreatModel& tm, const LabeledSet& data, const SignalOracle& oracle);

/// Minimum Euclidean distance between differently-labelled points (brute force).
double margin(const LabeledSet& data);

/// Serialised form used inside run configs.
struct ThreatSpec {
    ThreatKind kind = ThreatKind::L2;
    double eps = 0.0;
    int k = 1;
    std::uint64_t dir_seed = 0;

    ThreatModel build(int d) const;
    std::string to_json() const;
    static ThreatSpec from_json(const std::string& text);
};

}  // namespace certgap
