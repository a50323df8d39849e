#pragma once

// The inverse problem: maximum-likelihood cost over time-resolved correlator
// signals, analytic Jacobian/Hessian from discretized commutator integrals,
// and the covariance of the converged estimate.
//
// All derivative bookkeeping is real. For Hermitian O, V, rho the commutator
// trace Tr[O[V,rho]] is purely imaginary, so the implementation stores the
// i-folded integrand jt = i*Tr[O[V(t,s), rho(t)]] and Jacobian Jt = i*J,
// which equals dS/dh directly. The Gauss-Newton data block is then the
// positive Gram sum Jt_n Jt_m / sigma^2, and the second-derivative kernel
// enters the full Hessian as -(K_nm + K_mn) (fixed against finite
// differences of the cost).

#include "spinlearn/model.hpp"

#include <map>
#include <optional>
#include <random>

namespace spinlearn {

// ---------------------------------------------------------------------------
// Experiment descriptors and signals
// ---------------------------------------------------------------------------

struct InitialState {
    enum class Kind { kPolarized, kBasis, kDiagonal };
    Kind kind = Kind::kPolarized;
    int site = 0;              // kPolarized
    char axis = 'Z';           // kPolarized: Z or X
    std::uint64_t basis_bits = 0;  // kBasis: basis index, site 0 = MSB
    VectorXd diagonal_weights;     // kDiagonal: unnormalized populations

    DenseState make(int n_spins) const {
        const int d = 1 << n_spins;
        DenseState st;
        switch (kind) {
            case Kind::kPolarized: {
                if (site < 0 || site >= n_spins) throw InvalidSpecError("InitialState: site out of range");
                if (axis != 'Z' && axis != 'X') throw InvalidSpecError("InitialState: polarization axis must be Z or X");
                MatrixXc rho = MatrixXc::Identity(d, d);
                rho += pauli_term({{site, axis}}, 1.0, n_spins).mat;
                rho /= static_cast<double>(d);
                st.data = std::move(rho);
                break;
            }
            case Kind::kBasis: {
                if (basis_bits >= static_cast<std::uint64_t>(d)) throw InvalidSpecError("InitialState: basis index out of range");
                VectorXc v = VectorXc::Zero(d);
                v[static_cast<Eigen::Index>(basis_bits)] = 1.0;
                st.data = std::move(v);
                break;
            }
            case Kind::kDiagonal: {
                if (diagonal_weights.size() != d) throw DimensionError("InitialState: weight vector length != 2^N");
                if (diagonal_weights.minCoeff() < 0) throw InvalidSpecError("InitialState: negative population");
                const double tot = diagonal_weights.sum();
                if (tot <= 0) throw InvalidSpecError("InitialState: zero total population");
                MatrixXc rho = MatrixXc::Zero(d, d);
                for (int i = 0; i < d; ++i) rho(i, i) = diagonal_weights[i] / tot;
                st.data = std::move(rho);
                break;
            }
        }
        return st;
    }
};

struct ExperimentSpec {
    std::string id;
    InitialState initial_state;
    PauliProduct observable;  // O_x
    VectorXd times_ms;        // strictly increasing, >= 0
    VectorXd sigma;           // per-time noise std, > 0

    void validate(int n_spins) const {
        if (times_ms.size() == 0) throw InvalidSpecError("ExperimentSpec '" + id + "': empty time grid");
        if (times_ms.size() != sigma.size()) throw DimensionError("ExperimentSpec '" + id + "': sigma length mismatch");
        for (Eigen::Index k = 0; k < times_ms.size(); ++k) {
            if (times_ms[k] < 0) throw InvalidSpecError("ExperimentSpec '" + id + "': negative time");
            if (k > 0 && times_ms[k] <= times_ms[k - 1])
                throw InvalidSpecError("ExperimentSpec '" + id + "': times must be strictly increasing");
            if (!(sigma[k] > 0)) throw InvalidSpecError("ExperimentSpec '" + id + "': sigma must be > 0");
        }
        for (const auto& [site, axis] : observable.factors) {
            (void)axis;
            if (site < 0 || site >= n_spins) throw InvalidSpecError("ExperimentSpec '" + id + "': observable site out of range");
        }
    }

    double observable_norm() const { return std::abs(observable.coeff); }
};

struct SignalProvenance {
    enum class Mode { kSynthesized, kExternal };
    Mode mode = Mode::kExternal;
    std::uint64_t seed = 0;
    double sigma_inject = 0.0;
    bool per_dataset = true;  // false = per-query re-noising emulation during fits
};

struct SignalSet {
    std::vector<VectorXd> values;  // one vector per experiment, aligned with times
    SignalProvenance provenance;

    void validate(const std::vector<ExperimentSpec>& experiments) const {
        if (values.size() != experiments.size()) throw DataError("SignalSet: experiment count mismatch");
        for (std::size_t x = 0; x < values.size(); ++x) {
            if (values[x].size() != experiments[x].times_ms.size())
                throw DataError("SignalSet: length mismatch for experiment '" + experiments[x].id + "'");
            if (!values[x].allFinite()) throw DataError("SignalSet: non-finite value in experiment '" + experiments[x].id + "'");
        }
    }
};

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

// Uniform rules on [0, t]: left endpoints s_l = t l / L or midpoints
// s_l = t (l + 1/2) / L, both with weights z_l = t / L (sum z = t). When no
// fixed L is given, L is chosen per (t, term) from the first-order error
// bound  err <= t^2 ||O|| ||[H,V_n]|| / L  against `tolerance`.
struct QuadratureRule {
    enum class Scheme { kUniformLeft, kUniformMidpoint };
    Scheme scheme = Scheme::kUniformLeft;
    std::int64_t fixed_l = 0;     // 0 = auto from tolerance
    double tolerance = 1e-6;      // cost-units error budget per integral
    std::int64_t max_outer_l = 4096;  // cap for the pointwise outer loop of K integrals

    std::int64_t choose_l(double t, double o_norm, double comm_norm) const {
        if (fixed_l > 0) return fixed_l;
        const double want = t * t * o_norm * comm_norm / std::max(1e-300, tolerance);
        const auto l = static_cast<std::int64_t>(std::ceil(want));
        return std::clamp<std::int64_t>(std::max<std::int64_t>(64, l), 64, std::int64_t{1} << 26);
    }

    void validate() const {
        if (fixed_l < 0) throw InvalidSpecError("QuadratureRule: fixed_l must be >= 0");
        if (!(tolerance > 0)) throw InvalidSpecError("QuadratureRule: tolerance must be > 0");
        if (max_outer_l < 4) throw InvalidSpecError("QuadratureRule: max_outer_l too small");
    }
};

namespace detail {

// sum_{l=0}^{L-1} e^{-i theta l} (Dirichlet kernel), evaluated in closed form
// so the rule's cost is independent of L.
inline Complex dirichlet_sum(double theta, std::int64_t l_count) {
    const double tr = std::remainder(theta, kTwoPi);
    const double half = 0.5 * tr;
    const double s = std::sin(half);
    if (s == 0.0) return Complex{static_cast<double>(l_count), 0.0};
    const double ratio = std::sin(static_cast<double>(l_count) * half) / s;
    const double ph = -half * static_cast<double>(l_count - 1);
    return Complex{std::cos(ph), std::sin(ph)} * ratio;
}

// sum_l z_l e^{i omega (t - s_l)} over the rule's grid on [0, t].
inline Complex quad_kernel(double omega, double t, std::int64_t l_count, QuadratureRule::Scheme scheme) {
    if (t == 0.0) return Complex{0.0, 0.0};
    const double z = t / static_cast<double>(l_count);
    const double theta = omega * t / static_cast<double>(l_count);
    Complex sum = dirichlet_sum(theta, l_count);
    if (scheme == QuadratureRule::Scheme::kUniformMidpoint) {
        const double ph = -0.5 * theta;
        sum *= Complex{std::cos(ph), std::sin(ph)};
    }
    const double pt = omega * t;
    return z * Complex{std::cos(pt), std::sin(pt)} * sum;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evaluation engine (eigenbasis caches)
// ---------------------------------------------------------------------------

namespace detail {

struct ExperimentCache {
    MatrixXc rho_eig;   // Q^dag rho Q
    MatrixXc obs_eig;   // Q^dag O Q
    double o_norm = 1.0;
};

// Everything derived from one parameter vector: the eigendecomposition, the
// term operators rotated into the eigenbasis, and commutator-norm estimates
// for the quadrature policy. This is the dominant-cost cache; all (t, s, r)
// evolutions reduce to elementwise phases against these matrices.
struct EvalContext {
    const HamiltonianModel* model = nullptr;
    VectorXd params_khz;
    EigenDecomposition eig;
    std::vector<MatrixXc> v_eig;            // per term; built lazily per index
    std::vector<std::uint8_t> v_built;
    mutable std::vector<double> comm_norm;  // Frobenius estimate of ||[H,V_n]||, rad/ms
    mutable std::vector<std::uint8_t> comm_built;
    MatrixXc h_mat;

    EvalContext(const HamiltonianModel& m, const VectorXd& h_khz) : model(&m), params_khz(h_khz) {
        m.validate();
        DenseOperator h = m.materialize(h_khz);
        h_mat = h.mat;
        eig = eigendecompose(h);
        v_eig.resize(m.terms.size());
        v_built.assign(m.terms.size(), 0);
        comm_norm.assign(m.terms.size(), 0.0);
        comm_built.assign(m.terms.size(), 0);
    }

    int dim() const { return eig.dim(); }

    const MatrixXc& term_eig(int n) {
        if (!v_built[n]) {
            const DenseOperator v = model->term_operator(n);
            v_eig[n] = eig.eigenvectors.adjoint() * v.mat * eig.eigenvectors;
            v_built[n] = 1;
        }
        return v_eig[n];
    }

    double comm_norm_estimate(int n) {
        if (!comm_built[n]) {
            // ||[H, V_n]||_F as a cheap spectral-norm upper bound; the phases
            // of the rotation cancel so it can be done in the eigenbasis.
            const MatrixXc& v = term_eig(n);
            MatrixXc hv = eig.eigenvalues.asDiagonal() * v - v * eig.eigenvalues.asDiagonal();
            comm_norm[n] = hv.norm();
            comm_built[n] = 1;
        }
        return comm_norm[n];
    }

    ExperimentCache experiment_cache(const ExperimentSpec& x) const {
        x.validate(model->n_spins);
        ExperimentCache c;
        const DenseState rho = x.initial_state.make(model->n_spins);
        c.rho_eig = eig.eigenvectors.adjoint() * rho.as_density() * eig.eigenvectors;
        const DenseOperator o = pauli_term(x.observable.factors, x.observable.coeff, model->n_spins);
        c.obs_eig = eig.eigenvectors.adjoint() * o.mat * eig.eigenvectors;
        c.o_norm = x.observable_norm();
        return c;
    }

    // e^{+i E_a t} per eigenvalue.
    VectorXc phases(double t) const { return phase_vector(eig, t); }

    // rho(t) in the eigenbasis: rho_ab e^{i (E_a - E_b) t}.
    MatrixXc rho_at(const ExperimentCache& x, double t) const {
        const VectorXc u = phases(t);
        return u.asDiagonal() * x.rho_eig * u.conjugate().asDiagonal();
    }

    static double trace_product_real(const MatrixXc& a, const MatrixXc& b) {
        // Re Tr[a b] without forming the product.
        return a.transpose().cwiseProduct(b).sum().real();
    }

    double signal(const ExperimentCache& x, double t) const {
        const MatrixXc rt = rho_at(x, t);
        const Complex tr = x.obs_eig.transpose().cwiseProduct(rt).sum();
        return tr.real();
    }

    // Quadrature kernel matrix P_ab(t) = sum_l z_l e^{i (E_a - E_b)(t - s_l)}.
    MatrixXc kernel(double t, std::int64_t l_count, QuadratureRule::Scheme scheme) const {
        const int d = dim();
        MatrixXc p(d, d);
        for (int b = 0; b < d; ++b)
            for (int a = 0; a < d; ++a)
                p(a, b) = quad_kernel(eig.eigenvalues[a] - eig.eigenvalues[b], t, l_count, scheme);
        return p;
    }

    // Jt_n(t) = i * Tr[[rho(t), O] (V_n o P)] = dS/dh_n (per rad/ms); the
    // caller converts to per-kHz.
    double jtilde(const ExperimentCache& x, const MatrixXc& rho_t, const MatrixXc& p, int n) {
        const MatrixXc& v = term_eig(n);
        const MatrixXc comm = rho_t * x.obs_eig - x.obs_eig * rho_t;
        const Complex tr = comm.transpose().cwiseProduct(v.cwiseProduct(p)).sum();
        return (Complex{0.0, 1.0} * tr).real();
    }
};

// Shared |commutator| contraction used by gradient batches: given
// C = [rho(t), O] already formed, Jt for one term is i * Tr[C (V o P)].
inline double jtilde_from_comm(const MatrixXc& comm, const MatrixXc& v, const MatrixXc& p) {
    const Complex tr = comm.transpose().cwiseProduct(v.cwiseProduct(p)).sum();
    return (Complex{0.0, 1.0} * tr).real();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Signal synthesis
// ---------------------------------------------------------------------------

struct NoiseSpec {
    double sigma_inject = 0.0;
    std::uint64_t seed = 0;
};

// S_x(t_j) = Tr[U(t_j) rho_x U(t_j)^dag O_x], optionally with i.i.d. Gaussian
// noise applied once per point (seedable, reproducible).
inline SignalSet synthesize_signals(const HamiltonianModel& model, const std::vector<ExperimentSpec>& experiments,
                                    const std::optional<NoiseSpec>& noise = std::nullopt) {
    detail::EvalContext ctx(model, model.params_khz);
    SignalSet out;
    out.values.reserve(experiments.size());
    for (const auto& x : experiments) {
        const auto xc = ctx.experiment_cache(x);
        VectorXd v(x.times_ms.size());
        for (Eigen::Index k = 0; k < x.times_ms.size(); ++k) v[k] = ctx.signal(xc, x.times_ms[k]);
        out.values.push_back(std::move(v));
    }
    out.provenance.mode = SignalProvenance::Mode::kSynthesized;
    if (noise && noise->sigma_inject > 0) {
        std::mt19937_64 rng(noise->seed);
        std::normal_distribution<double> gauss(0.0, noise->sigma_inject);
        for (auto& v : out.values)
            for (Eigen::Index k = 0; k < v.size(); ++k) v[k] += gauss(rng);
        out.provenance.seed = noise->seed;
        out.provenance.sigma_inject = noise->sigma_inject;
    }
    return out;
}

inline SignalSet synthesize_signal(const HamiltonianModel& model, const ExperimentSpec& experiment,
                                   const std::optional<NoiseSpec>& noise = std::nullopt) {
    return synthesize_signals(model, {experiment}, noise);
}

// ---------------------------------------------------------------------------
// Integrands and integrals (per-operation surface)
// ---------------------------------------------------------------------------

// i * j_x^n(t,s) with j = Tr[O_x [V_n(t,s), rho_x(t)]]; real for Hermitian
// inputs, equal to the s-integrand of dS/dh_n (h in rad/ms).
inline double jacobian_integrand(const HamiltonianModel& model, const ExperimentSpec& experiment, int n, double t,
                                 double s) {
    if (s < 0 || s > t) throw InvalidInputError("jacobian_integrand: require 0 <= s <= t");
    detail::EvalContext ctx(model, model.params_khz);
    const auto xc = ctx.experiment_cache(experiment);
    const MatrixXc rho_t = ctx.rho_at(xc, t);
    const VectorXc u = ctx.phases(t - s);
    const MatrixXc v_ts = u.asDiagonal() * ctx.term_eig(n) * u.conjugate().asDiagonal();
    const Complex z = (xc.obs_eig * (v_ts * rho_t - rho_t * v_ts)).trace();
    return (Complex{0.0, 1.0} * z).real();
}

// Quadrature of the i-folded integrand over s in [0, t]; equals dS/dh_n per
// kHz of parameter up to the first-order discretization error.
inline double jacobian(const HamiltonianModel& model, const ExperimentSpec& experiment, int n, double t,
                       const QuadratureRule& quadrature) {
    if (t < 0) throw InvalidInputError("jacobian: t must be >= 0");
    quadrature.validate();
    if (t == 0.0) return 0.0;
    detail::EvalContext ctx(model, model.params_khz);
    const auto xc = ctx.experiment_cache(experiment);
    const std::int64_t l = quadrature.choose_l(t, xc.o_norm, ctx.comm_norm_estimate(n));
    const MatrixXc rho_t = ctx.rho_at(xc, t);
    const MatrixXc p = ctx.kernel(t, l, quadrature.scheme);
    return kKhzToRadPerMs * ctx.jtilde(xc, rho_t, p, n);
}

// Double-commutator integrand k_x^{n,m}(t,s,r) = Tr[O[V_n(t,s),[V_m(t,r),rho(t)]]].
inline double hessian_integrand(const HamiltonianModel& model, const ExperimentSpec& experiment, int n, int m,
                                double t, double s, double r) {
    if (!(0 <= r && r <= s && s <= t)) throw InvalidInputError("hessian_integrand: require 0 <= r <= s <= t");
    detail::EvalContext ctx(model, model.params_khz);
    const auto xc = ctx.experiment_cache(experiment);
    const MatrixXc rho_t = ctx.rho_at(xc, t);
    const VectorXc us = ctx.phases(t - s);
    const VectorXc ur = ctx.phases(t - r);
    const MatrixXc vn = us.asDiagonal() * ctx.term_eig(n) * us.conjugate().asDiagonal();
    const MatrixXc vm = ur.asDiagonal() * ctx.term_eig(m) * ur.conjugate().asDiagonal();
    const MatrixXc inner = vm * rho_t - rho_t * vm;
    const Complex z = (xc.obs_eig * (vn * inner - inner * vn)).trace();
    if (std::abs(z.imag()) > 1e-9 * std::max(1.0, std::abs(z.real())))
        throw InvalidInputError("hessian_integrand: imaginary residue too large");
    return z.real();
}

namespace detail {

// K_x^{n,m}(t) = int_0^t ds int_0^s dr k(t,s,r) on the triangle r <= s. The
// inner integral collapses to a closed-form kernel; the outer integral is
// evaluated pointwise on the rule's grid (capped at max_outer_l points).
inline double k_integral(EvalContext& ctx, const ExperimentCache& xc, int n, int m, double t,
                         const QuadratureRule& quadrature) {
    if (t == 0.0) return 0.0;
    const std::int64_t l_policy =
        quadrature.choose_l(t, xc.o_norm, std::max(ctx.comm_norm_estimate(n), ctx.comm_norm_estimate(m)));
    const std::int64_t l_out = std::min<std::int64_t>(l_policy, quadrature.max_outer_l);
    const std::int64_t l_in = l_policy;
    const MatrixXc rho_t = ctx.rho_at(xc, t);
    const MatrixXc& vn = ctx.term_eig(n);
    const MatrixXc& vm = ctx.term_eig(m);
    const int d = ctx.dim();
    const bool midpoint = quadrature.scheme == QuadratureRule::Scheme::kUniformMidpoint;

    const double z_out = t / static_cast<double>(l_out);
    double acc = 0.0;
    MatrixXc w(d, d), inner(d, d), g(d, d);
    for (std::int64_t i = 0; i < l_out; ++i) {
        const double s = midpoint ? t * (static_cast<double>(i) + 0.5) / static_cast<double>(l_out)
                                  : t * static_cast<double>(i) / static_cast<double>(l_out);
        if (s == 0.0) continue;
        // inner kernel over r in [0, s]: sum_l z_l e^{i omega (t - r_l)}
        for (int b = 0; b < d; ++b)
            for (int a = 0; a < d; ++a) {
                const double omega = ctx.eig.eigenvalues[a] - ctx.eig.eigenvalues[b];
                const double pt = omega * (t - s);
                const Complex shift{std::cos(pt), std::sin(pt)};
                w(a, b) = shift * quad_kernel(omega, s, l_in, quadrature.scheme);
            }
        w = vm.cwiseProduct(w);
        inner.noalias() = w * rho_t;
        inner.noalias() -= rho_t * w;
        g.noalias() = inner * xc.obs_eig;
        g.noalias() -= xc.obs_eig * inner;
        // f(s) = Tr[O [V_n(t,s), inner]] = Tr[[inner, O] V_n(t,s)]
        const VectorXc u = ctx.phases(t - s);
        const MatrixXc vns = u.asDiagonal() * vn * u.conjugate().asDiagonal();
        acc += z_out * g.transpose().cwiseProduct(vns).sum().real();
    }
    return acc;
}

}  // namespace detail

inline double hessian_K(const HamiltonianModel& model, const ExperimentSpec& experiment, int n, int m, double t,
                        const QuadratureRule& quadrature) {
    if (t < 0) throw InvalidInputError("hessian_K: t must be >= 0");
    quadrature.validate();
    detail::EvalContext ctx(model, model.params_khz);
    const auto xc = ctx.experiment_cache(experiment);
    return detail::k_integral(ctx, xc, n, m, t, quadrature);
}

// ---------------------------------------------------------------------------
// Cost, gradient, Hessians
// ---------------------------------------------------------------------------

namespace detail {

struct BatchOptions {
    int threads = 1;
    // Per-query re-noising: fresh Gaussian noise on each model signal
    // evaluation, emulating device sampling noise during a fit.
    double renoise_sigma = 0.0;
    std::mt19937_64* renoise_rng = nullptr;
};

struct SignalBatch {
    std::vector<VectorXd> model_signals;          // S-bar per (x, t)
    std::vector<std::vector<VectorXd>> jtildes;   // [x][t] -> per-free-param dS/dh (kHz)
};

// Evaluates model signals (and optionally Jacobians for the free parameters)
// for every (experiment, time). Parallel over experiments; every slot is
// written once so reductions downstream are order-fixed and bit-stable.
inline SignalBatch evaluate_batch(EvalContext& ctx, const std::vector<ExperimentSpec>& experiments,
                                  const QuadratureRule& quadrature, bool want_jacobian, const BatchOptions& opts) {
    const auto free_idx = ctx.model->free_indices();
    // Materialize lazy caches up front; worker threads only read them.
    if (want_jacobian)
        for (int n : free_idx) {
            ctx.term_eig(n);
            if (quadrature.fixed_l == 0) ctx.comm_norm_estimate(n);
        }

    SignalBatch batch;
    batch.model_signals.resize(experiments.size());
    if (want_jacobian) batch.jtildes.resize(experiments.size());

    std::vector<ExperimentCache> caches(experiments.size());
    for (std::size_t x = 0; x < experiments.size(); ++x) caches[x] = ctx.experiment_cache(experiments[x]);

    parallel_for_indexed(experiments.size(), opts.threads, [&](std::size_t x) {
        const auto& spec = experiments[x];
        const auto& xc = caches[x];
        const Eigen::Index nt = spec.times_ms.size();
        batch.model_signals[x].resize(nt);
        if (want_jacobian) batch.jtildes[x].assign(nt, VectorXd::Zero(static_cast<Eigen::Index>(free_idx.size())));
        for (Eigen::Index k = 0; k < nt; ++k) {
            const double t = spec.times_ms[k];
            const MatrixXc rho_t = ctx.rho_at(xc, t);
            batch.model_signals[x][k] = xc.obs_eig.transpose().cwiseProduct(rho_t).sum().real();
            if (!want_jacobian || t == 0.0) continue;
            const MatrixXc comm = rho_t * xc.obs_eig - xc.obs_eig * rho_t;
            // Group free params by their L so the kernel is built once per L.
            std::map<std::int64_t, MatrixXc> kernels;
            for (std::size_t fi = 0; fi < free_idx.size(); ++fi) {
                const int n = free_idx[fi];
                const std::int64_t l = quadrature.choose_l(t, xc.o_norm, ctx.comm_norm[n]);
                auto it = kernels.find(l);
                if (it == kernels.end()) it = kernels.emplace(l, ctx.kernel(t, l, quadrature.scheme)).first;
                batch.jtildes[x][k][static_cast<Eigen::Index>(fi)] =
                    kKhzToRadPerMs * jtilde_from_comm(comm, ctx.v_eig[n], it->second);
            }
        }
    });

    if (opts.renoise_sigma > 0 && opts.renoise_rng) {
        std::normal_distribution<double> gauss(0.0, opts.renoise_sigma);
        for (auto& v : batch.model_signals)
            for (Eigen::Index k = 0; k < v.size(); ++k) v[k] += gauss(*opts.renoise_rng);
    }
    return batch;
}

inline double prior_cost(const HamiltonianModel& model, const VectorXd& h_khz) {
    double c = 0.0;
    for (int n = 0; n < model.n_params(); ++n) {
        if (!model.free_mask[n]) continue;  // frozen parameters carry no prior term
        const double w = model.prior_widths_khz[n];
        if (!std::isfinite(w)) continue;
        const double dev = h_khz[n] - model.priors_khz[n];
        c += dev * dev / (2.0 * w * w);
    }
    return c;
}

inline double data_cost(const std::vector<ExperimentSpec>& experiments, const SignalSet& signals,
                        const SignalBatch& batch) {
    double c = 0.0;
    for (std::size_t x = 0; x < experiments.size(); ++x) {
        for (Eigen::Index k = 0; k < experiments[x].times_ms.size(); ++k) {
            const double resid = batch.model_signals[x][k] - signals.values[x][k];
            const double s = experiments[x].sigma[k];
            c += resid * resid / (2.0 * s * s);
        }
    }
    return c;
}

}  // namespace detail

// C = sum_n (h_n - h0_n)^2 / 2 w_n^2 + sum_{x,t} (S-bar - S)^2 / 2 sigma^2.
inline double cost(const HamiltonianModel& model, const std::vector<ExperimentSpec>& experiments,
                   const SignalSet& signals) {
    signals.validate(experiments);
    detail::EvalContext ctx(model, model.params_khz);
    const auto batch = detail::evaluate_batch(ctx, experiments, QuadratureRule{}, /*want_jacobian=*/false, {});
    return detail::prior_cost(model, model.params_khz) + detail::data_cost(experiments, signals, batch);
}

// dC/dh_n = (h_n - h0_n)/w_n^2 + sum_{x,t} (S-bar - S) Jt_n / sigma^2, with
// zeros at frozen entries. Units: cost per kHz.
inline VectorXd gradient(const HamiltonianModel& model, const std::vector<ExperimentSpec>& experiments,
                         const SignalSet& signals, const QuadratureRule& quadrature) {
    signals.validate(experiments);
    quadrature.validate();
    detail::EvalContext ctx(model, model.params_khz);
    const auto batch = detail::evaluate_batch(ctx, experiments, quadrature, /*want_jacobian=*/true, {});
    const auto free_idx = model.free_indices();

    VectorXd g = VectorXd::Zero(model.n_params());
    for (std::size_t fi = 0; fi < free_idx.size(); ++fi) {
        const int n = free_idx[fi];
        const double w = model.prior_widths_khz[n];
        if (std::isfinite(w)) g[n] = (model.params_khz[n] - model.priors_khz[n]) / (w * w);
    }
    for (std::size_t x = 0; x < experiments.size(); ++x) {
        for (Eigen::Index k = 0; k < experiments[x].times_ms.size(); ++k) {
            const double resid = batch.model_signals[x][k] - signals.values[x][k];
            const double s2 = experiments[x].sigma[k] * experiments[x].sigma[k];
            for (std::size_t fi = 0; fi < free_idx.size(); ++fi)
                g[free_idx[fi]] += resid * batch.jtildes[x][k][static_cast<Eigen::Index>(fi)] / s2;
        }
    }
    return g;
}

// Gauss-Newton Hessian delta_nm/w_n^2 + sum Jt_n Jt_m / sigma^2 (PSD by
// construction); rows/columns of frozen parameters are zero. Signals are
// only needed for shape checks and may be omitted.
inline MatrixXd hessian_gauss_newton(const HamiltonianModel& model, const std::vector<ExperimentSpec>& experiments,
                                     const SignalSet* signals, const QuadratureRule& quadrature) {
    if (signals) signals->validate(experiments);
    quadrature.validate();
    detail::EvalContext ctx(model, model.params_khz);
    const auto batch = detail::evaluate_batch(ctx, experiments, quadrature, /*want_jacobian=*/true, {});
    const auto free_idx = model.free_indices();
    const auto nf = static_cast<Eigen::Index>(free_idx.size());

    MatrixXd hf = MatrixXd::Zero(nf, nf);
    for (Eigen::Index fi = 0; fi < nf; ++fi) {
        const double w = model.prior_widths_khz[free_idx[fi]];
        if (std::isfinite(w)) hf(fi, fi) = 1.0 / (w * w);
    }
    for (std::size_t x = 0; x < experiments.size(); ++x) {
        for (Eigen::Index k = 0; k < experiments[x].times_ms.size(); ++k) {
            const double s2 = experiments[x].sigma[k] * experiments[x].sigma[k];
            const VectorXd& jt = batch.jtildes[x][k];
            hf.noalias() += jt * jt.transpose() / s2;
        }
    }
    MatrixXd h = MatrixXd::Zero(model.n_params(), model.n_params());
    for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b) h(free_idx[a], free_idx[b]) = hf(a, b);
    return h;
}

// Full Hessian of the cost: Gauss-Newton plus the residual-weighted
// second-derivative kernel, d2S/dh_n dh_m = -(K_nm + K_mn).
inline MatrixXd hessian_full(const HamiltonianModel& model, const std::vector<ExperimentSpec>& experiments,
                             const SignalSet& signals, const QuadratureRule& quadrature) {
    signals.validate(experiments);
    quadrature.validate();
    MatrixXd h = hessian_gauss_newton(model, experiments, &signals, quadrature);
    detail::EvalContext ctx(model, model.params_khz);
    const auto free_idx = model.free_indices();
    const double unit2 = kKhzToRadPerMs * kKhzToRadPerMs;  // K carries two rad/ms derivatives

    for (std::size_t x = 0; x < experiments.size(); ++x) {
        const auto xc = ctx.experiment_cache(experiments[x]);
        for (Eigen::Index k = 0; k < experiments[x].times_ms.size(); ++k) {
            const double t = experiments[x].times_ms[k];
            if (t == 0.0) continue;
            const double resid = ctx.signal(xc, t) - signals.values[x][k];
            const double s2 = experiments[x].sigma[k] * experiments[x].sigma[k];
            for (std::size_t a = 0; a < free_idx.size(); ++a) {
                for (std::size_t b = a; b < free_idx.size(); ++b) {
                    const int n = free_idx[a];
                    const int m = free_idx[b];
                    const double knm = detail::k_integral(ctx, xc, n, m, t, quadrature);
                    const double kmn = n == m ? knm : detail::k_integral(ctx, xc, m, n, t, quadrature);
                    const double contrib = -resid * unit2 * (knm + kmn) / s2;
                    h(n, m) += contrib;
                    if (n != m) h(m, n) += contrib;
                }
            }
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Covariance
// ---------------------------------------------------------------------------

struct CovarianceResult {
    MatrixXd matrix;          // full parameter size; frozen rows/cols zero
    bool near_singular = false;
    double condition = 0.0;
};

// Sigma = (Hessian restricted to free parameters)^-1, symmetrized. Condition
// numbers beyond 1e12 fall back to a pseudo-inverse and raise the
// near-singular flag (itself a learnability signal: floppy modes).
inline CovarianceResult covariance(const MatrixXd& hessian, const std::vector<std::uint8_t>& free_mask = {}) {
    const auto np = hessian.rows();
    if (hessian.cols() != np) throw DimensionError("covariance: non-square Hessian");
    std::vector<int> free_idx;
    for (Eigen::Index n = 0; n < np; ++n)
        if (free_mask.empty() || free_mask[static_cast<std::size_t>(n)]) free_idx.push_back(static_cast<int>(n));
    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    if (nf == 0) throw InvalidInputError("covariance: no free parameters");

    MatrixXd hf(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b) hf(a, b) = hessian(free_idx[a], free_idx[b]);
    hf = ((hf + hf.transpose()) / 2.0).eval();

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(hf);
    const VectorXd ev = es.eigenvalues();
    const double emax = ev.cwiseAbs().maxCoeff();
    const double emin = ev.minCoeff();

    CovarianceResult out;
    out.condition = emin > 0 ? emax / emin : std::numeric_limits<double>::infinity();
    out.near_singular = !(out.condition < 1e12);
    VectorXd inv_ev(nf);
    for (Eigen::Index i = 0; i < nf; ++i) {
        if (out.near_singular)
            inv_ev[i] = ev[i] > emax * 1e-12 ? 1.0 / ev[i] : 0.0;  // pseudo-inverse fallback
        else
            inv_ev[i] = 1.0 / ev[i];
    }
    MatrixXd cf = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
    cf = ((cf + cf.transpose()) / 2.0).eval();

    out.matrix = MatrixXd::Zero(np, np);
    for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b) out.matrix(free_idx[a], free_idx[b]) = cf(a, b);
    return out;
}

}  // namespace spinlearn
