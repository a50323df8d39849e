#pragma once

// NMR spin Hamiltonians from molecular geometry: dipolar couplings with the
// secular/full split, rotating-frame Zeeman offsets, and coupling-threshold
// cluster extraction.

#include "spinlearn/model.hpp"

#include <functional>
#include <map>
#include <numeric>
#include <optional>

namespace spinlearn {

// CODATA 2018.
inline constexpr double kMu0 = 1.25663706212e-6;      // T m / A
inline constexpr double kHbar = 1.054571817e-34;      // J s
inline constexpr double kGammaH1 = 2.6752218744e8;    // rad s^-1 T^-1

// Gyromagnetic ratios for the species the geometry table may name.
inline double gyromagnetic_ratio(const std::string& species) {
    static const std::map<std::string, double> table = {
        {"H1", kGammaH1},     {"H2", 4.10662791e7},  {"C13", 6.728284e7},
        {"N15", -2.71261804e7}, {"F19", 2.518148e8}, {"P31", 1.08394e8},
    };
    const auto it = table.find(species);
    if (it == table.end()) throw InvalidSpecError("unknown nuclear species: " + species);
    return it->second;
}

struct SpinSite {
    int id = 0;
    Eigen::Vector3d position_ang = Eigen::Vector3d::Zero();  // Angstrom
    double shift_ppm = 0.0;                                  // delta_i
    double gamma = kGammaH1;                                 // rad s^-1 T^-1

    // Shielded magnetogyric ratio chi_i = gamma_i * delta_i (delta in ppm).
    double chi() const { return gamma * shift_ppm * 1e-6; }
};

struct SpinSystem {
    std::vector<SpinSite> sites;
    double field_tesla = 23.5;
    Eigen::Vector3d field_direction = Eigen::Vector3d::UnitZ();
    double suppression_alpha = 1.0;                  // static dipolar divisor alpha >= 1
    std::map<std::pair<int, int>, double> j_couplings_khz;  // per unordered pair i<j

    void validate() const {
        for (std::size_t i = 0; i < sites.size(); ++i) {
            if (sites[i].id != static_cast<int>(i))
                throw InvalidSpecError("SpinSystem: site ids must be contiguous from 0");
            if (!sites[i].position_ang.allFinite())
                throw InvalidSpecError("SpinSystem: non-finite position");
        }
        if (suppression_alpha < 1.0) throw InvalidSpecError("SpinSystem: alpha must be >= 1");
        if (std::abs(field_direction.norm() - 1.0) > kUnitTol)
            throw InvalidSpecError("SpinSystem: field_direction must be a unit vector");
        for (const auto& [pair, j] : j_couplings_khz) {
            (void)j;
            if (pair.first >= pair.second || pair.first < 0 || pair.second >= static_cast<int>(sites.size()))
                throw InvalidSpecError("SpinSystem: bad j_coupling pair");
        }
    }

    double j_khz(int i, int j) const {
        const auto key = std::make_pair(std::min(i, j), std::max(i, j));
        const auto it = j_couplings_khz.find(key);
        return it == j_couplings_khz.end() ? 0.0 : it->second;
    }

    // Larmor frequency of site 0's species at this field, in Hz.
    double larmor_hz(double gamma) const { return gamma * field_tesla / kTwoPi; }
};

// Gamma_ij = mu0 gamma_i gamma_j hbar / (8 pi |r_ij|^3), in kHz. Note the
// 8 pi: the Hamiltonian sums over ordered pairs, so the per-pair coupling is
// 2*Gamma_ij (about 30-40 kHz for bonded proton pairs).
inline double dipolar_coupling(const SpinSite& a, const SpinSite& b) {
    const double r_ang = (a.position_ang - b.position_ang).norm();
    if (r_ang < 1e-9) throw SingularityError("dipolar_coupling: coincident positions");
    const double r_m = r_ang * 1e-10;
    const double rad_per_s = kMu0 * a.gamma * b.gamma * kHbar / (8.0 * kPi * r_m * r_m * r_m);
    return rad_per_s / (kTwoPi * 1e3);
}

// 3 cos^2(phi_ij) - 1, phi_ij the angle between B and r_ij.
inline double angle_factor(const SpinSite& a, const SpinSite& b, const Eigen::Vector3d& field_direction) {
    const Eigen::Vector3d r = a.position_ang - b.position_ang;
    const double rn = r.norm();
    if (rn < 1e-9) throw SingularityError("angle_factor: coincident positions");
    const double c = r.dot(field_direction) / (rn * field_direction.norm());
    return 3.0 * c * c - 1.0;
}

// ---------------------------------------------------------------------------
// Hamiltonian builders
// ---------------------------------------------------------------------------

struct BuildOptions {
    // Emit XX+YY and ZZ pair couplings as independent parameters (the
    // parametrization the learning demos use). When false, Heisenberg and
    // secular-dipolar terms are emitted unsplit.
    bool split_xxyy_zz = true;
};

namespace detail {

inline std::vector<int> resolve_subset(const SpinSystem& system, const std::vector<int>& subset) {
    std::vector<int> ids = subset;
    if (ids.empty()) {
        ids.resize(system.sites.size());
        std::iota(ids.begin(), ids.end(), 0);
    }
    for (int id : ids)
        if (id < 0 || id >= static_cast<int>(system.sites.size()))
            throw InvalidSpecError("unknown site id " + std::to_string(id));
    if (static_cast<int>(ids.size()) > kMaxSpins) throw CapacityError("subset larger than spin cap");
    return ids;
}

inline std::vector<PauliProduct> heisenberg_products(int a, int b) {
    // S_a . S_b = (XX + YY + ZZ)/4
    return {{{{a, 'X'}, {b, 'X'}}, 0.25}, {{{a, 'Y'}, {b, 'Y'}}, 0.25}, {{{a, 'Z'}, {b, 'Z'}}, 0.25}};
}

inline std::vector<PauliProduct> xxyy_products(int a, int b) {
    return {{{{a, 'X'}, {b, 'X'}}, 0.25}, {{{a, 'Y'}, {b, 'Y'}}, 0.25}};
}

inline std::vector<PauliProduct> zz_products(int a, int b) {
    return {{{{a, 'Z'}, {b, 'Z'}}, 0.25}};
}

// S_a . S_b - 3 Z_a Z_b  with S = sigma/2: (XX + YY - 2 ZZ)/4... kept as the
// literal combination (XX+YY+ZZ)/4 - 3 ZZ/4.
inline std::vector<PauliProduct> secular_dipolar_products(int a, int b) {
    return {{{{a, 'X'}, {b, 'X'}}, 0.25}, {{{a, 'Y'}, {b, 'Y'}}, 0.25}, {{{a, 'Z'}, {b, 'Z'}}, -0.5}};
}

}  // namespace detail

// Secular Hamiltonian (rotating frame):
//   H = B sum_i (chi_i - chi_mean) Z_i
//     + sum_{i<j} [ J_ij + g_ij ] (XX+YY)/4 + [ J_ij - 2 g_ij ] ZZ/4
// with g_ij = 2 Gamma_ij (3 cos^2 phi_ij - 1) / alpha (the factor 2 folds the
// ordered pair sum into unordered pairs). The mean shielded ratio chi_mean is
// subtracted because the uniform Larmor precession is unobservable in the
// correlators used; only chemical-shift offsets survive.
//
// Zeeman terms are frozen; pair couplings are free with flat priors. Callers
// adjust masks and priors for their learning problem.
inline HamiltonianModel build_secular_hamiltonian(const SpinSystem& system, const std::vector<int>& subset = {},
                                                  const BuildOptions& options = {}) {
    system.validate();
    const auto ids = detail::resolve_subset(system, subset);
    const int n = static_cast<int>(ids.size());

    double chi_mean = 0.0;
    for (int id : ids) chi_mean += system.sites[id].chi();
    chi_mean /= std::max(1, n);

    ModelBuilder mb(n);
    for (int a = 0; a < n; ++a) {
        const SpinSite& s = system.sites[ids[a]];
        const double offset_khz = system.field_tesla * (s.chi() - chi_mean) / (kTwoPi * 1e3);
        mb.add("zeeman_" + std::to_string(ids[a]), {{{{a, 'Z'}}, 1.0}}, offset_khz, /*free=*/false);
    }
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            const SpinSite& si = system.sites[ids[a]];
            const SpinSite& sj = system.sites[ids[b]];
            const double g_khz = 2.0 * dipolar_coupling(si, sj) * angle_factor(si, sj, system.field_direction) /
                                 system.suppression_alpha;
            const double j_khz = system.j_khz(ids[a], ids[b]);
            const std::string tag = std::to_string(ids[a]) + "_" + std::to_string(ids[b]);
            if (options.split_xxyy_zz) {
                mb.add("xxyy_" + tag, detail::xxyy_products(a, b), j_khz + g_khz, /*free=*/true);
                mb.add("zz_" + tag, detail::zz_products(a, b), j_khz - 2.0 * g_khz, /*free=*/true);
            } else {
                if (j_khz != 0.0) mb.add("heis_" + tag, detail::heisenberg_products(a, b), j_khz, /*free=*/false);
                mb.add("dip_" + tag, detail::secular_dipolar_products(a, b), g_khz, /*free=*/true);
            }
        }
    }
    return mb.build();
}

// Full (non-secular) Hamiltonian, literal Eq.-of-motion form:
//   H = sum_i chi_i S_i.B + sum_{i<j} 2 J_ij S_i.S_j
//     + sum_{i<j} 2 Gamma_ij [ S_i.S_j - 3 (S_i.r^)(S_j.r^) ]
// No rotating frame and no suppression; mainly used as a reference for
// secular-limit comparisons, so all parameters are frozen.
inline HamiltonianModel build_full_hamiltonian(const SpinSystem& system, const std::vector<int>& subset = {}) {
    system.validate();
    const auto ids = detail::resolve_subset(system, subset);
    const int n = static_cast<int>(ids.size());
    const Eigen::Vector3d bdir = system.field_direction;
    const char axes[3] = {'X', 'Y', 'Z'};

    ModelBuilder mb(n);
    for (int a = 0; a < n; ++a) {
        const SpinSite& s = system.sites[ids[a]];
        const double zee_khz = s.chi() * system.field_tesla / (kTwoPi * 1e3);
        std::vector<PauliProduct> prods;
        for (int c = 0; c < 3; ++c)
            if (bdir[c] != 0.0) prods.push_back({{{a, axes[c]}}, 0.5 * bdir[c]});
        if (!prods.empty())
            mb.add("zeeman_full_" + std::to_string(ids[a]), std::move(prods), zee_khz, /*free=*/false);
    }
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            const SpinSite& si = system.sites[ids[a]];
            const SpinSite& sj = system.sites[ids[b]];
            const std::string tag = std::to_string(ids[a]) + "_" + std::to_string(ids[b]);
            const double j_khz = system.j_khz(ids[a], ids[b]);
            if (j_khz != 0.0)
                mb.add("heis_full_" + tag, detail::heisenberg_products(a, b), 2.0 * j_khz, /*free=*/false);

            Eigen::Vector3d rhat = si.position_ang - sj.position_ang;
            const double rn = rhat.norm();
            if (rn < 1e-9) throw SingularityError("build_full_hamiltonian: coincident positions");
            rhat /= rn;
            // (1/4) sum_{uv} (delta_uv - 3 rhat_u rhat_v) sigma_u sigma_v
            std::vector<PauliProduct> prods;
            for (int u = 0; u < 3; ++u) {
                for (int v = 0; v < 3; ++v) {
                    const double c = 0.25 * ((u == v ? 1.0 : 0.0) - 3.0 * rhat[u] * rhat[v]);
                    if (c != 0.0) prods.push_back({{{a, axes[u]}, {b, axes[v]}}, c});
                }
            }
            mb.add("dip_full_" + tag, std::move(prods), 2.0 * dipolar_coupling(si, sj), /*free=*/false);
        }
    }
    return mb.build();
}

// ---------------------------------------------------------------------------
// Coupling graph and clusters
// ---------------------------------------------------------------------------

struct CouplingGraph {
    int n = 0;
    std::map<std::pair<int, int>, double> edges;  // (i<j) -> weight kHz, >= 0

    double weight(int i, int j) const {
        const auto it = edges.find({std::min(i, j), std::max(i, j)});
        return it == edges.end() ? 0.0 : it->second;
    }
};

enum class EdgeWeightMode {
    kBareCoupling,      // |2 Gamma_ij|
    kOrientationWeighted  // |2 Gamma_ij (3 cos^2 phi_ij - 1)|
};

inline CouplingGraph coupling_graph(const SpinSystem& system, EdgeWeightMode mode = EdgeWeightMode::kBareCoupling) {
    system.validate();
    CouplingGraph g;
    g.n = static_cast<int>(system.sites.size());
    for (int i = 0; i < g.n; ++i) {
        for (int j = i + 1; j < g.n; ++j) {
            double w = 2.0 * dipolar_coupling(system.sites[i], system.sites[j]);
            if (mode == EdgeWeightMode::kOrientationWeighted)
                w *= std::abs(angle_factor(system.sites[i], system.sites[j], system.field_direction));
            else
                w = std::abs(w);
            g.edges[{i, j}] = std::abs(w);
        }
    }
    return g;
}

struct WeightedEdge {
    int i = 0, j = 0;
    double weight_khz = 0.0;
};

struct Cluster {
    std::vector<int> member_ids;            // sorted
    std::vector<WeightedEdge> internal_edges;
    std::vector<WeightedEdge> boundary_edges;
};

// Connected components of the graph restricted to edges >= v_min. After a
// component is identified, every intra-member edge is reattached regardless
// of weight. Output is ordered by smallest member id; isolated spins become
// singleton clusters.
inline std::vector<Cluster> extract_clusters(const CouplingGraph& graph, double v_min_khz) {
    if (v_min_khz < 0) throw InvalidInputError("extract_clusters: v_min must be >= 0");
    std::vector<int> parent(graph.n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& [pair, w] : graph.edges)
        if (w >= v_min_khz) parent[find(pair.first)] = find(pair.second);

    std::map<int, std::vector<int>> groups;
    for (int v = 0; v < graph.n; ++v) groups[find(v)].push_back(v);

    std::vector<Cluster> clusters;
    for (auto& [root, members] : groups) {
        (void)root;
        std::sort(members.begin(), members.end());
        Cluster c;
        c.member_ids = members;
        clusters.push_back(std::move(c));
    }
    std::sort(clusters.begin(), clusters.end(),
              [](const Cluster& a, const Cluster& b) { return a.member_ids.front() < b.member_ids.front(); });

    std::vector<int> owner(graph.n, -1);
    for (std::size_t k = 0; k < clusters.size(); ++k)
        for (int v : clusters[k].member_ids) owner[v] = static_cast<int>(k);
    for (const auto& [pair, w] : graph.edges) {
        const auto [i, j] = pair;
        if (owner[i] == owner[j]) clusters[owner[i]].internal_edges.push_back({i, j, w});
        else {
            clusters[owner[i]].boundary_edges.push_back({i, j, w});
            clusters[owner[j]].boundary_edges.push_back({i, j, w});
        }
    }
    return clusters;
}

// A named spin system, e.g. one member of a cluster ensemble.
struct ClusterInstance {
    std::string id;
    SpinSystem system;
};

struct CouplingHistogram {
    std::vector<double> internal_weights_khz;
    std::vector<double> boundary_weights_khz;
};

inline CouplingHistogram coupling_histogram(const CouplingGraph& graph, const Cluster& cluster) {
    std::vector<std::uint8_t> member(graph.n, 0);
    for (int v : cluster.member_ids) {
        if (v < 0 || v >= graph.n) throw InvalidInputError("coupling_histogram: member outside graph");
        member[v] = 1;
    }
    CouplingHistogram h;
    for (const auto& [pair, w] : graph.edges) {
        const int in = member[pair.first] + member[pair.second];
        if (in == 2) h.internal_weights_khz.push_back(w);
        else if (in == 1) h.boundary_weights_khz.push_back(w);
    }
    std::sort(h.internal_weights_khz.begin(), h.internal_weights_khz.end());
    std::sort(h.boundary_weights_khz.begin(), h.boundary_weights_khz.end());
    return h;
}

}  // namespace spinlearn
