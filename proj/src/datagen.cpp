#include "certgap/datagen.hpp"

#include <random>
#include <stdexcept>

namespace certgap {

void SpheresParams::validate() const {
    if (d < 1) throw std::invalid_argument("SpheresParams: d must be positive");
    if (!(r_inner > 0.0) || !(r_inner < r_outer)) {
        throw std::invalid_argument("SpheresParams: need 0 < r_inner < r_outer");
    }
}

void LinsepParams::validate() const {
    if (d < 2) throw std::invalid_argument("LinsepParams: d must be >= 2");
    if (!(gamma > 0.0)) throw std::invalid_argument("LinsepParams: gamma must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("LinsepParams: sigma must be positive");
}

LabeledSet sample_spheres(const SpheresParams& p, std::size_t n, std::uint64_t seed) {
    p.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    LabeledSet out;
    out.num_classes = 2;
    out.inputs.resize(static_cast<Eigen::Index>(n), p.d);
    out.labels.resize(n);
    Vec z(p.d);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = coin(rng) ? 1 : 0;
        double norm = 0.0;
        do {
            for (int c = 0; c < p.d; ++c) z(c) = normal(rng);
            norm = z.norm();
        } while (norm == 0.0);
        const double radius = y == 0 ? p.r_inner : p.r_outer;
        out.inputs.row(static_cast<Eigen::Index>(i)) = (z * (radius / norm)).transpose();
        out.labels[i] = y;
    }
    return out;
}

LabeledSet sample_spheres(const SpheresParams& p) { return sample_spheres(p, p.n_train, p.seed); }

LabeledSet sample_spheres_test(const SpheresParams& p) {
    return sample_spheres(p, p.n_test, derive_seed(p.seed, 0x7e57u));
}

LabeledSet sample_linsep(const LinsepParams& p) {
    p.validate();
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> noise(0.0, p.sigma);
    std::bernoulli_distribution coin(0.5);
    LabeledSet out;
    out.num_classes = 2;
    out.inputs.resize(static_cast<Eigen::Index>(p.n), p.d);
    out.labels.resize(p.n);
    for (std::size_t i = 0; i < p.n; ++i) {
        const bool positive = coin(rng);
        const auto r = static_cast<Eigen::Index>(i);
        out.inputs(r, 0) = positive ? p.gamma : -p.gamma;
        for (int c = 1; c < p.d; ++c) out.inputs(r, c) = noise(rng);
        out.labels[i] = positive ? 1 : 0;
    }
    return out;
}

}  // namespace certgap
