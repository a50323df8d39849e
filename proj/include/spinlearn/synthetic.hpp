#pragma once

// Synthetic cluster generator for desk-scale ensembles: random 3-D
// geometries with a minimum-distance cutoff and chemical shifts drawn from a
// +/-5 ppm band. Calibrated so the unsuppressed pair-coupling histogram
// spans roughly 0.5-25 kHz at 23.5 T, mirroring strongly coupled proton
// clusters.

#include "spinlearn/nmr_model.hpp"

#include <random>

namespace spinlearn {

struct SyntheticEnsembleOptions {
    double field_tesla = 23.5;
    double shift_band_ppm = 5.0;     // shifts uniform in [-band, band]
    double min_distance_ang = 1.70;  // caps the strongest pair coupling near 24 kHz
    double radius_scale_ang = 1.35;  // ball radius = scale * N^(1/3), keeps density N-independent
    int max_packing_attempts = 400;
};

namespace detail {

inline Eigen::Vector3d sample_in_ball(std::mt19937_64& rng, double radius) {
    std::uniform_real_distribution<double> u(-radius, radius);
    for (;;) {
        Eigen::Vector3d p{u(rng), u(rng), u(rng)};
        if (p.norm() <= radius) return p;
    }
}

}  // namespace detail

inline SpinSystem synthesize_cluster(int n_spins, std::mt19937_64& rng,
                                     const SyntheticEnsembleOptions& options = {}) {
    if (n_spins < 2 || n_spins > kMaxSpins) throw CapacityError("synthesize_cluster: bad cluster size");
    const double radius = options.radius_scale_ang * std::cbrt(static_cast<double>(n_spins));

    std::vector<Eigen::Vector3d> points;
    for (int restarts = 0; restarts < 200 && static_cast<int>(points.size()) < n_spins; ++restarts) {
        points.clear();
        bool ok = true;
        for (int i = 0; i < n_spins && ok; ++i) {
            ok = false;
            for (int tries = 0; tries < options.max_packing_attempts; ++tries) {
                const Eigen::Vector3d p = detail::sample_in_ball(rng, radius);
                bool clear = true;
                for (const auto& q : points)
                    if ((p - q).norm() < options.min_distance_ang) {
                        clear = false;
                        break;
                    }
                if (clear) {
                    points.push_back(p);
                    ok = true;
                    break;
                }
            }
        }
        if (ok) break;
    }
    if (static_cast<int>(points.size()) < n_spins)
        throw Error("synthesize_cluster: packing failed; relax the density options");

    std::uniform_real_distribution<double> shift(-options.shift_band_ppm, options.shift_band_ppm);
    SpinSystem system;
    system.field_tesla = options.field_tesla;
    for (int i = 0; i < n_spins; ++i)
        system.sites.push_back(SpinSite{i, points[i], shift(rng), kGammaH1});
    system.validate();
    return system;
}

// Fixed-seed ensemble spanning [n_min, n_max] with `per_size` clusters each.
inline std::vector<ClusterInstance> synthesize_ensemble(int n_min, int n_max, int per_size, std::uint64_t seed,
                                                        const SyntheticEnsembleOptions& options = {}) {
    if (n_min > n_max) throw InvalidInputError("synthesize_ensemble: n_min > n_max");
    std::mt19937_64 rng(seed);
    std::vector<ClusterInstance> ensemble;
    for (int n = n_min; n <= n_max; ++n) {
        for (int k = 0; k < per_size; ++k) {
            ClusterInstance inst;
            inst.id = "syn_n" + std::to_string(n) + "_" + std::to_string(k);
            inst.system = synthesize_cluster(n, rng, options);
            ensemble.push_back(std::move(inst));
        }
    }
    return ensemble;
}

// A bundled 6-spin geometry for the learning demo: a well-separated backbone
// of strong pairs plus weak couplings in the 0.5-3 kHz range to learn.
inline SpinSystem demo_six_spin_system(double alpha = 10.0, double field_tesla = 23.5) {
    SpinSystem system;
    system.field_tesla = field_tesla;
    system.suppression_alpha = alpha;
    const double shifts[6] = {-3.1, -1.7, -0.4, 0.8, 2.1, 3.4};
    const Eigen::Vector3d pos[6] = {
        {0.0, 0.0, 0.0},   {1.05, 1.05, 0.55},  {2.6, 0.3, 1.9},
        {3.4, 1.55, 2.75}, {4.95, 0.75, 3.45},  {5.7, 2.0, 4.4},
    };
    for (int i = 0; i < 6; ++i) system.sites.push_back(SpinSite{i, pos[i], shifts[i], kGammaH1});
    system.validate();
    return system;
}

}  // namespace spinlearn
