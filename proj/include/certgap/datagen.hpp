#pragma once

#include <cstddef>
#include <cstdint>

#include "certgap/dataset.hpp"

namespace certgap {

/// Concentric spheres: label 0 on radius r_inner, label 1 on radius r_outer.
struct SpheresParams {
    int d = 10;
    double r_inner = 10.0;
    double r_outer = 30.0;
    std::size_t n_train = 500;
    std::size_t n_test = 10000;
    std::uint64_t seed = 0;

    double gamma() const { return r_outer - r_inner; }
    void validate() const;
};

/// x = [gamma * sgn(y); x_tilde], x_tilde ~ N(0, sigma^2 I_{d-1}).
/// Labels are stored as class ids: 1 for y = +1, 0 for y = -1.
struct LinsepParams {
    int d = 10;
    double gamma = 1.0;
    double sigma = 1.0;
    std::size_t n = 500;
    std::uint64_t seed = 0;

    void validate() const;
};

LabeledSet sample_spheres(const SpheresParams& p, std::size_t n, std::uint64_t seed);
/// Training split (n_train points from the parameter seed).
LabeledSet sample_spheres(const SpheresParams& p);
/// Test split (n_test points from an independent stream derived from the seed).
LabeledSet sample_spheres_test(const SpheresParams& p);

LabeledSet sample_linsep(const LinsepParams& p);

}  // namespace certgap
