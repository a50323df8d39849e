#pragma once

// Dense exact simulation of spin-1/2 clusters: Pauli-product operators,
// states, eigendecomposition-backed propagators, expectation values and
// magnetization-sector block extraction. Everything is value-semantic and
// immutable after construction; callers may share objects across threads.
//
// Sign convention: U(t) = exp(+i H t) throughout (applied consistently to
// states and Heisenberg operators), with H in rad/ms and t in ms.

#include "spinlearn/common.hpp"

#include <algorithm>
#include <utility>
#include <variant>

namespace spinlearn {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct DenseOperator {
    MatrixXc mat;
    bool hermitian_hint = false;

    int dim() const { return static_cast<int>(mat.rows()); }

    void validate() const {
        if (mat.rows() != mat.cols()) throw DimensionError("DenseOperator: non-square matrix");
        if (!is_power_of_two(mat.rows())) throw InvalidInputError("DenseOperator: dim must be a power of two");
        if (mat.rows() > (1LL << kMaxSpins)) throw CapacityError("DenseOperator: exceeds spin cap");
        if (hermitian_hint) {
            const double scale = std::max(1e-300, max_abs(mat));
            if (max_abs(mat - mat.adjoint()) > kHermTol * scale)
                throw InvalidInputError("DenseOperator: hermitian_hint violated");
        }
    }
};

// Tagged pure state (vector) or density operator (matrix).
struct DenseState {
    std::variant<VectorXc, MatrixXc> data;

    bool is_pure() const { return std::holds_alternative<VectorXc>(data); }
    const VectorXc& vec() const { return std::get<VectorXc>(data); }
    const MatrixXc& rho() const { return std::get<MatrixXc>(data); }

    int dim() const {
        return is_pure() ? static_cast<int>(vec().size()) : static_cast<int>(rho().rows());
    }

    void validate() const {
        if (is_pure()) {
            if (std::abs(vec().norm() - 1.0) > 1e-9) throw InvalidInputError("DenseState: pure state not normalized");
        } else {
            const MatrixXc& r = rho();
            if (r.rows() != r.cols()) throw DimensionError("DenseState: non-square density matrix");
            if (std::abs(r.trace().real() - 1.0) > 1e-9 || std::abs(r.trace().imag()) > 1e-9)
                throw InvalidInputError("DenseState: trace != 1");
            if (max_abs(r - r.adjoint()) > 1e-9 * std::max(1.0, max_abs(r)))
                throw InvalidInputError("DenseState: density matrix not Hermitian");
        }
    }

    // Density-matrix view regardless of tag.
    MatrixXc as_density() const {
        if (is_pure()) return vec() * vec().adjoint();
        return rho();
    }
};

struct EigenDecomposition {
    VectorXd eigenvalues;  // ascending, rad/ms
    MatrixXc eigenvectors; // unitary, columns

    int dim() const { return static_cast<int>(eigenvalues.size()); }
};

// ---------------------------------------------------------------------------
// Pauli-product construction
// ---------------------------------------------------------------------------

// One factor per site: (site index, axis 'X'|'Y'|'Z').
using PauliSpec = std::vector<std::pair<int, char>>;

namespace detail {

// Site 0 occupies the most significant bit; basis index 0 is all-spins-up
// (every Z eigenvalue +1).
inline int bit_of(int basis_index, int site, int n_spins) {
    return (basis_index >> (n_spins - 1 - site)) & 1;
}

struct PauliAction {
    std::int64_t flip_mask = 0;                     // X/Y bit flips
    std::vector<std::pair<int, char>> phase_sites;  // sites with Y or Z phase factors
};

inline PauliAction pauli_action(const PauliSpec& spec, int n_spins) {
    PauliAction a;
    for (const auto& [site, axis] : spec) {
        if (axis == 'X' || axis == 'Y') a.flip_mask |= std::int64_t{1} << (n_spins - 1 - site);
        if (axis == 'Y' || axis == 'Z') a.phase_sites.emplace_back(site, axis);
    }
    return a;
}

// phase(c) such that P|c> = phase(c) |c ^ flip_mask>.
inline Complex pauli_phase(const PauliAction& a, int col, int n_spins) {
    Complex ph{1.0, 0.0};
    for (const auto& [site, axis] : a.phase_sites) {
        const double z = 1.0 - 2.0 * bit_of(col, site, n_spins);
        if (axis == 'Z') ph *= z;
        else ph *= Complex{0.0, z};  // Y|0> = i|1>, Y|1> = -i|0>
    }
    return ph;
}

inline void check_pauli_spec(const PauliSpec& spec, int n_spins) {
    if (n_spins < 1) throw InvalidSpecError("pauli_term: n_spins must be >= 1");
    if (n_spins > kMaxSpins) throw CapacityError("pauli_term: n_spins exceeds cap of " + std::to_string(kMaxSpins));
    std::vector<int> seen;
    for (const auto& [site, axis] : spec) {
        if (site < 0 || site >= n_spins) throw InvalidSpecError("pauli_term: site out of range");
        if (axis != 'X' && axis != 'Y' && axis != 'Z') throw InvalidSpecError("pauli_term: axis must be X, Y or Z");
        if (std::find(seen.begin(), seen.end(), site) != seen.end())
            throw InvalidSpecError("pauli_term: duplicate site");
        seen.push_back(site);
    }
}

}  // namespace detail

// coefficient x (tensor product of the named single-site Paulis, identity
// elsewhere). Built column-wise: a Pauli product has one entry per column.
inline DenseOperator pauli_term(const PauliSpec& spec, double coefficient, int n_spins) {
    detail::check_pauli_spec(spec, n_spins);
    const std::int64_t d = std::int64_t{1} << n_spins;
    const auto action = detail::pauli_action(spec, n_spins);
    DenseOperator op;
    op.mat = MatrixXc::Zero(d, d);
    op.hermitian_hint = true;
    for (std::int64_t c = 0; c < d; ++c) {
        const Complex ph = detail::pauli_phase(action, static_cast<int>(c), n_spins);
        op.mat(c ^ action.flip_mask, c) = coefficient * ph;
    }
    return op;
}

// ---------------------------------------------------------------------------
// Eigendecomposition and propagation
// ---------------------------------------------------------------------------

inline EigenDecomposition eigendecompose(const DenseOperator& h) {
    const double scale = std::max(1e-300, max_abs(h.mat));
    if (max_abs(h.mat - h.mat.adjoint()) > kHermTol * scale)
        throw InvalidInputError("eigendecompose: input not Hermitian");
    Eigen::SelfAdjointEigenSolver<MatrixXc> solver(h.mat);
    if (solver.info() != Eigen::Success) throw Error("eigendecompose: solver failed");
    EigenDecomposition eig;
    eig.eigenvalues = solver.eigenvalues();
    eig.eigenvectors = solver.eigenvectors();
    const MatrixXc rebuilt =
        eig.eigenvectors * eig.eigenvalues.asDiagonal().toDenseMatrix().cast<Complex>() * eig.eigenvectors.adjoint();
    if (max_abs(rebuilt - h.mat) > kReconTol * std::max(1.0, scale))
        throw Error("eigendecompose: reconstruction residual too large");
    return eig;
}

namespace detail {

inline VectorXc phase_vector(const EigenDecomposition& eig, double t) {
    VectorXc ph(eig.dim());
    for (int a = 0; a < eig.dim(); ++a) {
        const double th = eig.eigenvalues[a] * t;
        ph[a] = Complex{std::cos(th), std::sin(th)};  // e^{+i E t}
    }
    return ph;
}

inline MatrixXc propagator(const EigenDecomposition& eig, double t) {
    return eig.eigenvectors * phase_vector(eig, t).asDiagonal() * eig.eigenvectors.adjoint();
}

}  // namespace detail

// U(t) rho U(t)^dag with U(t) = Q e^{+i Lambda t} Q^dag.
inline DenseState evolve_state(const DenseState& state, const EigenDecomposition& eig, double t_ms) {
    if (state.dim() != eig.dim()) throw DimensionError("evolve_state: dimension mismatch");
    if (t_ms == 0.0) return state;
    const MatrixXc u = detail::propagator(eig, t_ms);
    DenseState out;
    if (state.is_pure()) out.data = VectorXc(u * state.vec());
    else out.data = MatrixXc(u * state.rho() * u.adjoint());
    return out;
}

// Heisenberg-picture operator U(dt) V U(dt)^dag; with dt = t - s this is the
// estimated V_n evolved forwards from s to t.
inline DenseOperator heisenberg_op(const DenseOperator& v, const EigenDecomposition& eig, double dt_ms) {
    if (v.dim() != eig.dim()) throw DimensionError("heisenberg_op: dimension mismatch");
    if (dt_ms == 0.0) return v;
    const MatrixXc u = detail::propagator(eig, dt_ms);
    DenseOperator out;
    out.mat = u * v.mat * u.adjoint();
    out.hermitian_hint = v.hermitian_hint;
    return out;
}

// Re Tr(O rho); the imaginary residue is asserted small for Hermitian inputs.
inline double expectation(const DenseOperator& o, const DenseState& state) {
    if (o.dim() != state.dim()) throw DimensionError("expectation: dimension mismatch");
    Complex tr;
    if (state.is_pure()) tr = state.vec().dot(o.mat * state.vec());  // <psi|O|psi>
    else tr = (o.mat * state.rho()).trace();
    if (std::abs(tr.imag()) > 1e-10 * std::max(1.0, std::abs(tr.real())))
        throw InvalidInputError("expectation: imaginary residue too large (non-Hermitian input?)");
    return tr.real();
}

// ---------------------------------------------------------------------------
// Magnetization sectors
// ---------------------------------------------------------------------------

struct SectorBlock {
    MatrixXc block;
    std::vector<int> basis_map;  // sector row -> full-space basis index
};

inline int spins_up(int basis_index, int n_spins) {
    int pc = 0;
    for (int s = 0; s < n_spins; ++s) pc += detail::bit_of(basis_index, s, n_spins);
    return n_spins - pc;  // bit 0 is Z=+1 ("up")
}

inline std::vector<int> sector_basis_indices(int n_spins, int n_up) {
    std::vector<int> idx;
    const int d = 1 << n_spins;
    for (int b = 0; b < d; ++b)
        if (spins_up(b, n_spins) == n_up) idx.push_back(b);
    return idx;
}

// Restriction of H to the fixed-magnetization subspace with exactly n_up
// spins up. Requires [H, sum_i Z_i] = 0; callers whose operators break the
// symmetry (e.g. X_i observables) must stay on the full-space path.
inline SectorBlock sector_project(const DenseOperator& h, int n_up) {
    const int d = h.dim();
    int n_spins = 0;
    while ((1 << n_spins) < d) ++n_spins;
    if (n_up < 0 || n_up > n_spins) throw InvalidInputError("sector_project: n_up out of range");

    // [H, sum Z] = 0 iff H couples no basis states of different magnetization.
    const double scale = std::max(1.0, max_abs(h.mat));
    for (int c = 0; c < d; ++c) {
        const int mc = spins_up(c, n_spins);
        for (int r = 0; r < d; ++r) {
            if (spins_up(r, n_spins) != mc && std::abs(h.mat(r, c)) > kSymmetryTol * scale)
                throw InvalidInputError("sector_project: operator does not commute with total Z");
        }
    }

    SectorBlock out;
    out.basis_map = sector_basis_indices(n_spins, n_up);
    const int ds = static_cast<int>(out.basis_map.size());
    out.block.resize(ds, ds);
    for (int j = 0; j < ds; ++j)
        for (int i = 0; i < ds; ++i) out.block(i, j) = h.mat(out.basis_map[i], out.basis_map[j]);
    return out;
}

}  // namespace spinlearn
