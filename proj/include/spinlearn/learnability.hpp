#pragma once

// Ergodicity and learnability diagnostics: participation entropy of
// mid-spectrum eigenstates, the multifractal dimension across a cluster
// ensemble, and the eigenstructure of the Gauss-Newton Hessian at the true
// parameters.

#include "spinlearn/fit.hpp"
#include "spinlearn/nmr_model.hpp"

#include <set>

namespace spinlearn {

// ---------------------------------------------------------------------------
// Participation entropy
// ---------------------------------------------------------------------------

// S1 = sum_a p_a ln p_a with p_a = |psi_a|^2 (0 ln 0 := 0); <= 0, natural log.
inline double participation_entropy(const VectorXc& state) {
    const double norm = state.norm();
    if (std::abs(norm - 1.0) > 1e-9) throw InvalidInputError("participation_entropy: state not normalized");
    double s = 0.0;
    for (Eigen::Index a = 0; a < state.size(); ++a) {
        const double p = std::norm(state[a]);
        if (p > 0.0) s += p * std::log(p);
    }
    return std::min(0.0, s);
}

inline double participation_entropy(const DenseState& state) {
    if (!state.is_pure()) throw InvalidInputError("participation_entropy: pure state required");
    return participation_entropy(state.vec());
}

// exp of the Shannon entropy of v_j^2; in [1, len(v)].
inline double hessian_participation(const VectorXd& eigvec) {
    const double nrm2 = eigvec.squaredNorm();
    if (nrm2 <= 0) throw InvalidInputError("hessian_participation: zero vector");
    double s = 0.0;
    for (Eigen::Index j = 0; j < eigvec.size(); ++j) {
        const double p = eigvec[j] * eigvec[j] / nrm2;
        if (p > 0.0) s += p * std::log(p);
    }
    return std::exp(-s);
}

// ---------------------------------------------------------------------------
// Sector diagonalization from the term list
// ---------------------------------------------------------------------------

namespace detail {

// Builds the fixed-magnetization block of H(h) directly from the Pauli
// products, never materializing the full 2^N matrix. Out-of-sector leakage
// is accumulated and asserted zero, which is the term-level statement of
// [H, sum Z] = 0.
inline MatrixXc sector_block_from_model(const HamiltonianModel& model, int n_up, std::vector<int>* basis_out = nullptr) {
    const int n = model.n_spins;
    const auto basis = sector_basis_indices(n, n_up);
    const int ds = static_cast<int>(basis.size());
    std::vector<int> pos(model.dim(), -1);
    for (int k = 0; k < ds; ++k) pos[basis[k]] = k;

    MatrixXc block = MatrixXc::Zero(ds, ds);
    double leak = 0.0;
    double scale = 1.0;
    for (int term = 0; term < model.n_params(); ++term) {
        const double h = kKhzToRadPerMs * model.params_khz[term];
        if (h == 0.0) continue;
        scale = std::max(scale, std::abs(h));
        for (const auto& prod : model.terms[term].products) {
            const auto action = pauli_action(prod.factors, n);
            for (int k = 0; k < ds; ++k) {
                const int src = basis[k];
                const int dst = static_cast<int>(src ^ action.flip_mask);
                const Complex amp = h * prod.coeff * pauli_phase(action, src, n);
                if (pos[dst] >= 0) block(pos[dst], k) += amp;
                else leak = std::max(leak, std::abs(amp));
            }
        }
    }
    // Per-product leakage must cancel between products (e.g. XX+YY); verify
    // by applying whole terms to each sector state.
    if (leak > 0.0) {
        std::map<int, Complex> out_amp;
        for (int k = 0; k < ds; ++k) {
            out_amp.clear();
            for (int term = 0; term < model.n_params(); ++term) {
                const double h = kKhzToRadPerMs * model.params_khz[term];
                if (h == 0.0) continue;
                for (const auto& prod : model.terms[term].products) {
                    const auto action = pauli_action(prod.factors, n);
                    const int dst = static_cast<int>(basis[k] ^ action.flip_mask);
                    if (pos[dst] < 0) out_amp[dst] += h * prod.coeff * pauli_phase(action, basis[k], n);
                }
            }
            for (const auto& [dst, amp] : out_amp) {
                (void)dst;
                if (std::abs(amp) > kSymmetryTol * scale)
                    throw InvalidInputError("sector_block_from_model: model does not conserve magnetization");
            }
        }
    }
    if (basis_out) *basis_out = basis;
    return block;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cluster-ensemble records
// ---------------------------------------------------------------------------

struct EntropyRecord {
    std::string cluster_id;
    int n_spins = 0;
    int filling = 0;       // P
    double alpha = 1.0;
    double mean_s1 = 0.0;  // natural-log units, <= 0
    int n_states_averaged = 0;
};

// Half filling P = N/2, or (N-1)/2 for odd N.
inline int half_filling(int n_spins) { return n_spins / 2; }

// Diagonalizes the P-filling sector and averages S1 over eigenstates whose
// sector-energy rank lies in [dim/4, 3 dim/4). Sector basis states are
// computational basis states, so S1 is evaluated on the sector coordinates.
inline EntropyRecord cluster_mean_entropy(const HamiltonianModel& model, double alpha_label = 1.0,
                                          const std::string& cluster_id = "") {
    const int p = half_filling(model.n_spins);
    const MatrixXc block = detail::sector_block_from_model(model, p);
    const int ds = static_cast<int>(block.rows());
    if (ds < 4) throw DegenerateInputError("cluster_mean_entropy: sector dimension < 4");

    Eigen::SelfAdjointEigenSolver<MatrixXc> es(block);
    if (es.info() != Eigen::Success) throw Error("cluster_mean_entropy: diagonalization failed");

    const int lo = ds / 4;
    const int hi = (3 * ds) / 4;
    double acc = 0.0;
    for (int k = lo; k < hi; ++k) {
        VectorXc v = es.eigenvectors().col(k);
        v /= v.norm();
        acc += participation_entropy(v);
    }
    EntropyRecord rec;
    rec.cluster_id = cluster_id;
    rec.n_spins = model.n_spins;
    rec.filling = p;
    rec.alpha = alpha_label;
    rec.n_states_averaged = hi - lo;
    rec.mean_s1 = acc / std::max(1, rec.n_states_averaged);
    return rec;
}

struct MultifractalFit {
    double alpha = 1.0;
    double slope = 0.0;          // d mean_S1 / dN over the ensemble
    double intercept = 0.0;
    double ergodic_slope = 0.0;  // d(-ln C(N, P(N)))/dN over the same N values
    double d1 = 0.0;             // slope / ergodic_slope, clamped to [0, 1.15]
    int n_clusters = 0;
    double residual = 0.0;
};

// Least-squares slope of mean_S1 against N, normalized by the exact ergodic
// reference slope of -ln C(N, P(N)) over the same N values.
inline MultifractalFit multifractal_dimension(const std::vector<EntropyRecord>& records, double alpha = 1.0) {
    std::set<int> distinct;
    for (const auto& r : records) distinct.insert(r.n_spins);
    if (distinct.size() < 4) throw InvalidInputError("multifractal_dimension: need >= 4 distinct cluster sizes");

    std::vector<double> xs, ys;
    for (const auto& r : records) {
        xs.push_back(static_cast<double>(r.n_spins));
        ys.push_back(r.mean_s1);
    }
    const LinearFit data_fit = linear_fit(xs, ys);

    std::vector<double> rx, ry;
    for (int n : distinct) {
        rx.push_back(static_cast<double>(n));
        ry.push_back(-std::log(static_cast<double>(binomial(n, half_filling(n)))));
    }
    const LinearFit ref_fit = linear_fit(rx, ry);

    MultifractalFit out;
    out.alpha = alpha;
    out.slope = data_fit.slope;
    out.intercept = data_fit.intercept;
    out.ergodic_slope = ref_fit.slope;
    out.d1 = std::clamp(data_fit.slope / ref_fit.slope, 0.0, 1.15);
    out.n_clusters = static_cast<int>(records.size());
    out.residual = data_fit.residual_rms;
    return out;
}

// ---------------------------------------------------------------------------
// Hessian eigenstructure scan
// ---------------------------------------------------------------------------

struct HessianSpectrumRecord {
    std::string cluster_id;
    double alpha = 1.0;
    int n_spins = 0;
    VectorXd eigenvalues;      // descending
    VectorXd participations;   // per eigenvector, in [1, n_params]
};

struct ScanDataset {
    double t_max_ms = 5.0;
    int n_times = 26;           // equally spaced on [0, t_max]
    std::string bases = "ZX";   // correlator families <B_i(t) B_j(0)>
    bool include_diagonal_pairs = true;
    int max_hessian_spins = 10;  // full-space Hessians get expensive beyond this
    int threads = 1;

    VectorXd times() const {
        VectorXd t(n_times);
        for (int k = 0; k < n_times; ++k)
            t[k] = t_max_ms * static_cast<double>(k) / static_cast<double>(std::max(1, n_times - 1));
        return t;
    }
};

// All-pairs correlator menu: rho = (I + B_j)/2^N, O = B_i for each unordered
// pair (j <= i) and each basis B in the dataset spec.
inline std::vector<ExperimentSpec> correlator_menu(int n_spins, const ScanDataset& ds) {
    std::vector<ExperimentSpec> xs;
    const VectorXd t = ds.times();
    for (char basis : ds.bases) {
        for (int j = 0; j < n_spins; ++j) {
            for (int i = j; i < n_spins; ++i) {
                if (i == j && !ds.include_diagonal_pairs) continue;
                ExperimentSpec x;
                x.id = std::string(1, basis) + std::to_string(i) + "_" + std::string(1, basis) + std::to_string(j);
                x.initial_state.kind = InitialState::Kind::kPolarized;
                x.initial_state.site = j;
                x.initial_state.axis = basis;
                x.observable = PauliProduct{{{i, basis}}, 1.0};
                x.times_ms = t;
                x.sigma = VectorXd::Ones(t.size());  // sigma == 1: Hessian units arbitrary
                xs.push_back(std::move(x));
            }
        }
    }
    return xs;
}

// Gauss-Newton Hessian (data block only, sigma = 1) of the model's free
// parameters at the current (true) values.
inline HessianSpectrumRecord hessian_spectrum(const HamiltonianModel& model, const ScanDataset& ds,
                                              double alpha_label = 1.0, const std::string& cluster_id = "") {
    if (model.n_spins > ds.max_hessian_spins)
        throw CapacityError("hessian_spectrum: cluster exceeds the Hessian spin cap");
    const auto experiments = correlator_menu(model.n_spins, ds);

    QuadratureRule quad;
    quad.fixed_l = 1 << 16;  // closed-form kernels make large L free
    detail::EvalContext ctx(model, model.params_khz);
    detail::BatchOptions bopts;
    bopts.threads = ds.threads;
    const auto batch = detail::evaluate_batch(ctx, experiments, quad, /*want_jacobian=*/true, bopts);

    const auto free_idx = model.free_indices();
    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    MatrixXd h = MatrixXd::Zero(nf, nf);
    for (std::size_t x = 0; x < experiments.size(); ++x)
        for (Eigen::Index k = 0; k < experiments[x].times_ms.size(); ++k)
            h.noalias() += batch.jtildes[x][k] * batch.jtildes[x][k].transpose();

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(h);
    HessianSpectrumRecord rec;
    rec.cluster_id = cluster_id;
    rec.alpha = alpha_label;
    rec.n_spins = model.n_spins;
    rec.eigenvalues = es.eigenvalues().reverse();
    rec.participations.resize(nf);
    for (Eigen::Index k = 0; k < nf; ++k)
        rec.participations[k] = hessian_participation(es.eigenvectors().col(nf - 1 - k));
    return rec;
}

// ---------------------------------------------------------------------------
// Ensemble scan
// ---------------------------------------------------------------------------

struct ScanWarnings {
    std::vector<std::string> skipped;  // clusters over the Hessian cap
};

struct LearnabilityScan {
    std::vector<EntropyRecord> entropy_records;
    std::vector<MultifractalFit> multifractal;       // one per alpha
    std::vector<HessianSpectrumRecord> hessian_records;
    ScanWarnings warnings;
};

inline double geometric_mean(const std::vector<double>& v) {
    if (v.empty()) throw InvalidInputError("geometric_mean: empty input");
    double acc = 0.0;
    for (double x : v) acc += std::log(std::max(x, 1e-300));
    return std::exp(acc / static_cast<double>(v.size()));
}

// Typical (geometric-mean) aggregates per (N, alpha).
struct TypicalAggregate {
    int n_spins = 0;
    double alpha = 1.0;
    double typical_lambda_max = 0.0;
    double typical_top_participation = 0.0;
    int n_clusters = 0;
};

inline std::vector<TypicalAggregate> aggregate_typicals(const std::vector<HessianSpectrumRecord>& records) {
    std::map<std::pair<int, long long>, std::vector<const HessianSpectrumRecord*>> groups;
    auto key_alpha = [](double a) { return static_cast<long long>(std::llround(a * 1e6)); };
    for (const auto& r : records) groups[{r.n_spins, key_alpha(r.alpha)}].push_back(&r);
    std::vector<TypicalAggregate> out;
    for (const auto& [key, rs] : groups) {
        TypicalAggregate agg;
        agg.n_spins = key.first;
        agg.alpha = static_cast<double>(key.second) / 1e6;
        std::vector<double> lams, parts;
        for (const auto* r : rs) {
            lams.push_back(r->eigenvalues[0]);
            parts.push_back(r->participations[0]);
        }
        agg.typical_lambda_max = geometric_mean(lams);
        agg.typical_top_participation = geometric_mean(parts);
        agg.n_clusters = static_cast<int>(rs.size());
        out.push_back(agg);
    }
    return out;
}

// Sweeps the ensemble over the alpha grid: per-cluster entropy records, a
// multifractal fit per alpha, and Hessian spectra for clusters at or below
// the cap (larger clusters are skipped with a warning).
inline LearnabilityScan learnability_scan(const std::vector<ClusterInstance>& ensemble,
                                          const std::vector<double>& alphas, const ScanDataset& dataset,
                                          bool with_hessians = true) {
    LearnabilityScan scan;
    struct Task {
        std::size_t cluster;
        double alpha;
    };
    std::vector<Task> tasks;
    for (double a : alphas)
        for (std::size_t c = 0; c < ensemble.size(); ++c) tasks.push_back({c, a});

    std::vector<EntropyRecord> entropy(tasks.size());
    std::vector<std::optional<HessianSpectrumRecord>> hessians(tasks.size());
    std::vector<std::string> skip_notes(tasks.size());

    parallel_for_indexed(tasks.size(), dataset.threads, [&](std::size_t ti) {
        const auto& task = tasks[ti];
        SpinSystem system = ensemble[task.cluster].system;
        system.suppression_alpha = task.alpha;
        const HamiltonianModel model = build_secular_hamiltonian(system);
        entropy[ti] = cluster_mean_entropy(model, task.alpha, ensemble[task.cluster].id);
        if (!with_hessians) return;
        if (model.n_spins > dataset.max_hessian_spins) {
            skip_notes[ti] = ensemble[task.cluster].id + ": skipped Hessian (over spin cap)";
            return;
        }
        ScanDataset serial = dataset;
        serial.threads = 1;  // parallelism lives at the task level
        hessians[ti] = hessian_spectrum(model, serial, task.alpha, ensemble[task.cluster].id);
    });

    scan.entropy_records = std::move(entropy);
    for (auto& h : hessians)
        if (h) scan.hessian_records.push_back(std::move(*h));
    for (auto& s : skip_notes)
        if (!s.empty()) scan.warnings.skipped.push_back(std::move(s));

    for (double a : alphas) {
        std::vector<EntropyRecord> at_alpha;
        for (const auto& r : scan.entropy_records)
            if (r.alpha == a) at_alpha.push_back(r);
        scan.multifractal.push_back(multifractal_dimension(at_alpha, a));
    }
    return scan;
}

}  // namespace spinlearn
