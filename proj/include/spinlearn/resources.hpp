#pragma once

// Closed-form resource estimators for the NISQ and fault-tolerant readings
// of the learning algorithm: Hoeffding sample counts, optimized oracle-call
// totals, block-encoding normalizations, Trotter step counts and the
// discretization/truncation budgets. Every asymptotic formula is evaluated
// with constant factor 1; outputs are order-of-magnitude estimates with
// constants suppressed.

#include "spinlearn/model.hpp"

#include <map>
#include <variant>

namespace spinlearn {
namespace resources {

// ---------------------------------------------------------------------------
// Budgets
// ---------------------------------------------------------------------------

enum class Sampling { kSparseLog, kDense };

struct ExperimentBudget {
    double epsilon = 1e-2;      // target error of a derivative term
    double delta_fail = 0.05;   // failure probability
    double sigma = 1e-3;        // per-point signal noise
    int n_experiments = 1;      // N_x
    std::vector<double> times;  // sampled t list; empty = built from T and sampling mode
    double o_norm = 1.0;        // ||O_x||
    double t_max = 1.0;         // T

    void validate() const {
        if (!(epsilon > 0)) throw InvalidSpecError("ExperimentBudget: epsilon must be > 0");
        if (!(delta_fail > 0 && delta_fail < 1)) throw InvalidSpecError("ExperimentBudget: delta_fail in (0,1)");
        if (!(sigma > 0) || !(o_norm > 0) || !(t_max > 0) || n_experiments < 1)
            throw InvalidSpecError("ExperimentBudget: bad field");
    }

    std::vector<double> resolved_times(Sampling sampling) const {
        if (!times.empty()) return times;
        std::vector<double> ts;
        if (sampling == Sampling::kSparseLog) {
            for (double t = 1.0; t <= t_max; t *= 2.0) ts.push_back(t);
        } else {
            for (double t = 1.0; t <= t_max; t += 1.0) ts.push_back(t);
        }
        if (ts.empty()) ts.push_back(t_max);
        return ts;
    }
};

// One Fourier component of a measured signal S_x(t).
struct FourierComponent {
    int experiment = 0;  // x
    double amplitude = 0.0;   // a_{x,k} >= 0
    double omega = 0.0;       // w_{x,k}, rad per time unit
    double phase = 0.0;       // phi_x in {0, pi/2}
};

struct FTParameters {
    int n_sites = 1;          // N
    int n_datapoints = 1;     // N_d
    int n_fourier = 0;        // N_omega
    std::vector<FourierComponent> fourier;
    double lambda_ind = 1.0;  // Lambda_ind
    double lambda_total = 1.0;   // Lambda
    double lambda_int = 1.0;  // Lambda_int
    double trotter_exponent = 0.1;  // p, stand-in for the paper's o(1)

    void validate() const {
        if (lambda_int > lambda_total + 1e-12 || lambda_ind > lambda_total + 1e-12)
            throw InvalidSpecError("FTParameters: need Lambda_int <= Lambda and Lambda_ind <= Lambda");
        if (!(trotter_exponent > 0)) throw InvalidSpecError("FTParameters: trotter exponent must be > 0");
        for (const auto& f : fourier)
            if (f.amplitude < 0) throw InvalidSpecError("FTParameters: Fourier amplitudes must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Hoeffding sample counts
// ---------------------------------------------------------------------------

// Smallest M with 2 exp(-M eps^2 / (2 ||O||^2 t^2)) <= delta.
inline double hoeffding_samples_j_raw(double epsilon, double delta_fail, double o_norm, double t) {
    if (!(epsilon > 0) || !(delta_fail > 0 && delta_fail < 1) || !(o_norm > 0) || !(t > 0))
        throw InvalidInputError("hoeffding_samples_j: bad inputs");
    return 2.0 * o_norm * o_norm * t * t * std::log(2.0 / delta_fail) / (epsilon * epsilon);
}

inline std::int64_t hoeffding_samples_j(double epsilon, double delta_fail, double o_norm, double t) {
    return static_cast<std::int64_t>(std::ceil(hoeffding_samples_j_raw(epsilon, delta_fail, o_norm, t)));
}

// Smallest M with 2 exp(-M eps^2 / (||O||^2 t^4)) <= delta.
inline double hoeffding_samples_k_raw(double epsilon, double delta_fail, double o_norm, double t) {
    if (!(epsilon > 0) || !(delta_fail > 0 && delta_fail < 1) || !(o_norm > 0) || !(t > 0))
        throw InvalidInputError("hoeffding_samples_k: bad inputs");
    const double t2 = t * t;
    return o_norm * o_norm * t2 * t2 * std::log(2.0 / delta_fail) / (epsilon * epsilon);
}

inline std::int64_t hoeffding_samples_k(double epsilon, double delta_fail, double o_norm, double t) {
    return static_cast<std::int64_t>(std::ceil(hoeffding_samples_k_raw(epsilon, delta_fail, o_norm, t)));
}

// ---------------------------------------------------------------------------
// NISQ oracle totals
// ---------------------------------------------------------------------------

// Optimized total oracle-call count for one derivative term,
//   C = eps^-2 sigma^-4 { sum_t ( sqrt(sum_x a_J) + sqrt(sum_x a_S) ) t^{3/2} }^2,
// with the per-experiment constants set to 1 so sum_x a = N_x.
inline double nisq_query_total(const ExperimentBudget& budget, Sampling sampling = Sampling::kSparseLog) {
    budget.validate();
    const double root_nx = std::sqrt(static_cast<double>(budget.n_experiments));
    double sum = 0.0;
    for (double t : budget.resolved_times(sampling)) sum += 2.0 * root_nx * std::pow(t, 1.5);
    return sum * sum / (budget.epsilon * budget.epsilon * std::pow(budget.sigma, 4.0));
}

// ---------------------------------------------------------------------------
// Fault-tolerant block-encoding normalizations and query counts
// ---------------------------------------------------------------------------

struct Lambdas {
    double lambda0 = 0.0;  // sum_{x,t,l} |z_{l,t}| / sigma^2 = sum_{x,t} t / sigma^2
    double lambda1 = 0.0;  // sum_{x,t,l,k} |z a_{x,k}| / sigma^2
    double total() const { return lambda0 + lambda1; }
};

// The quadrature weights satisfy sum_l z_{l,t} = t, which collapses the l
// sums. Per-experiment Fourier amplitudes weight lambda1.
inline Lambdas ft_lambdas(const ExperimentBudget& budget, const std::vector<FourierComponent>& fourier,
                          Sampling sampling = Sampling::kSparseLog) {
    budget.validate();
    const auto ts = budget.resolved_times(sampling);
    std::map<int, double> amp_sum;  // x -> sum_k a_{x,k}
    for (const auto& f : fourier) amp_sum[f.experiment] += f.amplitude;
    Lambdas l;
    const double s2 = budget.sigma * budget.sigma;
    for (int x = 0; x < budget.n_experiments; ++x) {
        const auto it = amp_sum.find(x);
        const double ax = it == amp_sum.end() ? 0.0 : it->second;
        for (double t : ts) {
            l.lambda0 += t / s2;
            l.lambda1 += ax * t / s2;
        }
    }
    return l;
}

// Queries to PREP/SEL for the coherent gradient estimation:
// ln(1/delta) * (lambda0 + lambda1) / eps, constants suppressed.
inline double ft_query_total(const ExperimentBudget& budget, const Lambdas& lambdas) {
    budget.validate();
    return std::log(1.0 / budget.delta_fail) * lambdas.total() / budget.epsilon;
}

// Hamiltonian-oracle total in the linear-time simulation model: each SELECT
// costs O(T) oracle calls.
inline double ft_oracle_total(const ExperimentBudget& budget, const Lambdas& lambdas) {
    return ft_query_total(budget, lambdas) * budget.t_max;
}

// ---------------------------------------------------------------------------
// Trotter step counts
// ---------------------------------------------------------------------------

struct ChainTopology {
    int n_sites = 2;
};
struct ClusteredTopology {
    double lambda_ind = 1.0;
    double lambda_total = 1.0;
};
struct ClusteredPartialTopology {
    double lambda_ind = 1.0;
    double lambda_int = 1.0;
};
using TrotterTopology = std::variant<ChainTopology, ClusteredTopology, ClusteredPartialTopology>;

// R = X1 T (X2 T / eta)^p; chain: X1 ~ 1, X2 ~ N; clustered: X1 ~ Lambda_ind,
// X2 ~ Lambda; partial Trotter over clusters: X2 ~ Lambda_int.
inline double trotter_steps(double t_total, double eta, const TrotterTopology& topology, double p = 0.1) {
    if (!(t_total > 0) || !(eta > 0) || !(p >= 0)) throw InvalidInputError("trotter_steps: bad inputs");
    double x1 = 1.0, x2 = 1.0;
    if (const auto* chain = std::get_if<ChainTopology>(&topology)) {
        x1 = 1.0;
        x2 = static_cast<double>(chain->n_sites);
    } else if (const auto* cl = std::get_if<ClusteredTopology>(&topology)) {
        x1 = cl->lambda_ind;
        x2 = cl->lambda_total;
    } else {
        const auto& cp = std::get<ClusteredPartialTopology>(topology);
        x1 = cp.lambda_ind;
        x2 = cp.lambda_int;
    }
    return x1 * t_total * std::pow(x2 * t_total / eta, p);
}

// ---------------------------------------------------------------------------
// Discretization / truncation budgets
// ---------------------------------------------------------------------------

// L = ceil(lambda Lambda_ind T / eps): integration points per time interval.
inline std::int64_t discretization_budget(double lambda, double lambda_ind, double t_max, double epsilon) {
    if (!(lambda > 0) || !(lambda_ind > 0) || !(t_max > 0) || !(epsilon > 0))
        throw InvalidInputError("discretization_budget: bad inputs");
    return static_cast<std::int64_t>(std::ceil(lambda * lambda_ind * t_max / epsilon));
}

// K = ceil(lambda (N Lambda_ind + T + W) / eps), rounded up to a power of two.
inline std::int64_t truncation_budget(double lambda, int n_sites, double lambda_ind, double t_max, double w_max,
                                      double epsilon) {
    if (!(lambda > 0) || n_sites < 1 || !(lambda_ind > 0) || !(t_max > 0) || w_max < 0 || !(epsilon > 0))
        throw InvalidInputError("truncation_budget: bad inputs");
    const double raw = lambda * (n_sites * lambda_ind + t_max + w_max) / epsilon;
    std::int64_t k = static_cast<std::int64_t>(std::ceil(raw));
    std::int64_t p2 = 1;
    while (p2 < k) p2 <<= 1;
    return p2;
}

// ---------------------------------------------------------------------------
// Interaction-norm sums from a concrete model
// ---------------------------------------------------------------------------

// Lambda_ind / Lambda / Lambda_int from the model's two-site terms: each
// pair's 4x4 block is assembled from its Pauli products and its exact
// spectral norm taken, in kHz units. `cluster_of` assigns sites to clusters
// (empty = one cluster, making Lambda_int 0).
struct InteractionNorms {
    double lambda_ind = 0.0;
    double lambda_total = 0.0;
    double lambda_int = 0.0;
};

inline InteractionNorms interaction_norms(const HamiltonianModel& model, const std::vector<int>& cluster_of = {}) {
    model.validate();
    std::map<std::pair<int, int>, Eigen::Matrix4cd> blocks;
    for (int n = 0; n < model.n_params(); ++n) {
        const double h = model.params_khz[n];
        if (h == 0.0) continue;
        for (const auto& prod : model.terms[n].products) {
            if (prod.factors.size() != 2) continue;  // interaction sums cover two-site terms
            int i = prod.factors[0].first, j = prod.factors[1].first;
            char ai = prod.factors[0].second, aj = prod.factors[1].second;
            if (i > j) {
                std::swap(i, j);
                std::swap(ai, aj);
            }
            const Eigen::Matrix4cd m =
                pauli_term({{0, ai}, {1, aj}}, h * prod.coeff, 2).mat;
            auto [it, fresh] = blocks.try_emplace({i, j}, Eigen::Matrix4cd::Zero());
            (void)fresh;
            it->second += m;
        }
    }
    std::vector<double> row_sum(model.n_spins, 0.0);
    InteractionNorms out;
    for (const auto& [pair, m] : blocks) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(m, Eigen::EigenvaluesOnly);
        const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
        out.lambda_total += norm;
        row_sum[pair.first] += norm;
        row_sum[pair.second] += norm;
        if (!cluster_of.empty() && cluster_of.at(pair.first) != cluster_of.at(pair.second)) out.lambda_int += norm;
    }
    for (double r : row_sum) out.lambda_ind = std::max(out.lambda_ind, r);
    return out;
}

// ---------------------------------------------------------------------------
// Periodogram peak picking
// ---------------------------------------------------------------------------

// Extracts the dominant Fourier components of a uniformly sampled signal:
// peaks of the DFT power spectrum at >= 5% of the maximum power, strongest
// first, at most n_max components.
inline std::vector<FourierComponent> periodogram_peaks(const VectorXd& values, double dt, int n_max,
                                                       int experiment = 0) {
    const auto n = values.size();
    if (n < 4) throw InvalidInputError("periodogram_peaks: need >= 4 samples");
    if (!(dt > 0)) throw InvalidInputError("periodogram_peaks: dt must be > 0");
    const Eigen::Index half = n / 2;
    std::vector<double> power(static_cast<std::size_t>(half) + 1, 0.0);
    std::vector<Complex> coeff(static_cast<std::size_t>(half) + 1);
    for (Eigen::Index k = 0; k <= half; ++k) {
        Complex c{0.0, 0.0};
        for (Eigen::Index j = 0; j < n; ++j) {
            const double th = -kTwoPi * static_cast<double>(k) * static_cast<double>(j) / static_cast<double>(n);
            c += values[j] * Complex{std::cos(th), std::sin(th)};
        }
        coeff[static_cast<std::size_t>(k)] = c;
        power[static_cast<std::size_t>(k)] = std::norm(c);
    }
    double pmax = 0.0;
    for (std::size_t k = 1; k < power.size(); ++k) pmax = std::max(pmax, power[k]);
    if (pmax == 0.0) return {};

    std::vector<std::pair<double, Eigen::Index>> peaks;
    for (Eigen::Index k = 1; k < half; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        if (power[ku] >= 0.05 * pmax && power[ku] >= power[ku - 1] && power[ku] >= power[ku + 1])
            peaks.emplace_back(power[ku], k);
    }
    std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (static_cast<int>(peaks.size()) > n_max) peaks.resize(static_cast<std::size_t>(n_max));

    std::vector<FourierComponent> out;
    for (const auto& [pw, k] : peaks) {
        (void)pw;
        FourierComponent f;
        f.experiment = experiment;
        f.amplitude = 2.0 * std::abs(coeff[static_cast<std::size_t>(k)]) / static_cast<double>(n);
        f.omega = kTwoPi * static_cast<double>(k) / (static_cast<double>(n) * dt);
        f.phase = std::abs(coeff[static_cast<std::size_t>(k)].real()) >=
                          std::abs(coeff[static_cast<std::size_t>(k)].imag())
                      ? 0.0
                      : kPi / 2.0;
        out.push_back(f);
    }
    return out;
}

inline double max_fourier_frequency(const std::vector<FourierComponent>& fourier) {
    double w = 0.0;
    for (const auto& f : fourier) w = std::max(w, std::abs(f.omega));
    return w;
}

}  // namespace resources
}  // namespace spinlearn
