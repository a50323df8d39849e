#pragma once

// Optimizers for the learning problem: Levenberg-Marquardt on the
// Gauss-Newton Hessian (default) and nonlinear conjugate gradient, plus the
// robust time-window schedule that grows t_max geometrically as the
// parameter uncertainty shrinks.

#include "spinlearn/learner.hpp"

namespace spinlearn {

struct FitOptions {
    enum class Algorithm { kLevenbergMarquardt, kConjugateGradient };
    Algorithm algorithm = Algorithm::kLevenbergMarquardt;
    int max_iter = 100;
    double g_tol = 1e-8;   // sup-norm gradient threshold, cost units per kHz
    double f_tol = 1e-10;  // relative cost-decrease threshold
    QuadratureRule quadrature;
    int threads = 1;
    // Optional per-query re-noising (device-noise emulation); default off.
    double renoise_sigma = 0.0;
    std::uint64_t renoise_seed = 0;
};

struct FitReport {
    VectorXd params_hat;                 // kHz, full parameter vector
    MatrixXd covariance;                 // from the Gauss-Newton Hessian at the solution
    bool covariance_near_singular = false;
    double covariance_condition = 0.0;
    std::vector<double> cost_trace;      // cost after each accepted iteration (index 0 = start)
    std::vector<double> grad_norm_trace; // sup-norm at each iteration start
    std::vector<VectorXd> param_trace;   // params after each accepted iteration
    int iterations = 0;
    bool converged = false;
    std::string stop_reason;
    std::vector<std::pair<double, double>> schedule_trace;  // (t_max ms, delta kHz) per robust round
};

namespace detail {

struct FitEngine {
    const HamiltonianModel& model;
    const std::vector<ExperimentSpec>& experiments;
    const SignalSet& signals;
    const FitOptions& opts;
    std::vector<int> free_idx;
    std::mt19937_64 renoise_rng;

    FitEngine(const HamiltonianModel& m, const std::vector<ExperimentSpec>& x, const SignalSet& s,
              const FitOptions& o)
        : model(m), experiments(x), signals(s), opts(o), renoise_rng(o.renoise_seed) {
        free_idx = m.free_indices();
        if (free_idx.empty()) throw InvalidInputError("fit: no free parameters");
        signals.validate(experiments);
        opts.quadrature.validate();
    }

    BatchOptions batch_options() {
        BatchOptions b;
        b.threads = opts.threads;
        if (opts.renoise_sigma > 0) {
            b.renoise_sigma = opts.renoise_sigma;
            b.renoise_rng = &renoise_rng;
        }
        return b;
    }

    VectorXd expand(const VectorXd& p_free) const {
        VectorXd h = model.params_khz;
        for (std::size_t i = 0; i < free_idx.size(); ++i) h[free_idx[i]] = p_free[static_cast<Eigen::Index>(i)];
        return h;
    }

    double cost_at(const VectorXd& p_free) {
        const VectorXd h = expand(p_free);
        EvalContext ctx(model, h);
        const auto batch = evaluate_batch(ctx, experiments, opts.quadrature, /*want_jacobian=*/false, batch_options());
        return prior_cost(model, h) + data_cost(experiments, signals, batch);
    }

    // Cost, free-subspace gradient and (optionally) Gauss-Newton block.
    double derivatives_at(const VectorXd& p_free, VectorXd& grad_free, MatrixXd* gn_free) {
        const VectorXd h = expand(p_free);
        EvalContext ctx(model, h);
        const auto batch = evaluate_batch(ctx, experiments, opts.quadrature, /*want_jacobian=*/true, batch_options());
        const auto nf = static_cast<Eigen::Index>(free_idx.size());
        grad_free = VectorXd::Zero(nf);
        if (gn_free) *gn_free = MatrixXd::Zero(nf, nf);
        for (Eigen::Index i = 0; i < nf; ++i) {
            const int n = free_idx[i];
            const double w = model.prior_widths_khz[n];
            if (std::isfinite(w)) {
                grad_free[i] = (h[n] - model.priors_khz[n]) / (w * w);
                if (gn_free) (*gn_free)(i, i) = 1.0 / (w * w);
            }
        }
        for (std::size_t x = 0; x < experiments.size(); ++x) {
            for (Eigen::Index k = 0; k < experiments[x].times_ms.size(); ++k) {
                const double resid = batch.model_signals[x][k] - signals.values[x][k];
                const double s2 = experiments[x].sigma[k] * experiments[x].sigma[k];
                const VectorXd& jt = batch.jtildes[x][k];
                grad_free.noalias() += (resid / s2) * jt;
                if (gn_free) gn_free->noalias() += jt * jt.transpose() / s2;
            }
        }
        return prior_cost(model, h) + data_cost(experiments, signals, batch);
    }
};

inline void finish_report(FitEngine& eng, FitReport& report, const VectorXd& p_free) {
    report.params_hat = eng.expand(p_free);
    HamiltonianModel at_solution = eng.model;
    at_solution.params_khz = report.params_hat;
    const MatrixXd gn = hessian_gauss_newton(at_solution, eng.experiments, &eng.signals, eng.opts.quadrature);
    const CovarianceResult cov = covariance(gn, at_solution.free_mask);
    report.covariance = cov.matrix;
    report.covariance_near_singular = cov.near_singular;
    report.covariance_condition = cov.condition;
}

inline FitReport fit_lm(FitEngine& eng) {
    FitReport report;
    const auto nf = static_cast<Eigen::Index>(eng.free_idx.size());
    VectorXd p(nf);
    for (Eigen::Index i = 0; i < nf; ++i) p[i] = eng.model.params_khz[eng.free_idx[i]];

    double mu = 0.0;
    double c = eng.cost_at(p);
    if (!std::isfinite(c)) throw Error("fit: non-finite initial cost");
    report.cost_trace.push_back(c);
    report.param_trace.push_back(eng.expand(p));

    for (int iter = 0; iter < eng.opts.max_iter; ++iter) {
        VectorXd g;
        MatrixXd b;
        eng.derivatives_at(p, g, &b);
        const double gnorm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
        report.grad_norm_trace.push_back(gnorm);
        if (gnorm < eng.opts.g_tol) {
            report.converged = true;
            report.stop_reason = "gradient below g_tol";
            break;
        }

        bool accepted = false;
        VectorXd p_new;
        double c_new = c;
        for (int tries = 0; tries < 40 && !accepted; ++tries) {
            MatrixXd damped = b;
            damped.diagonal().array() += mu;
            Eigen::LDLT<MatrixXd> solver(damped);
            if (solver.info() == Eigen::Success) {
                const VectorXd step = solver.solve(-g);
                if (step.allFinite()) {
                    p_new = p + step;
                    c_new = eng.cost_at(p_new);
                    if (std::isfinite(c_new) && c_new <= c) accepted = true;
                }
            }
            if (!accepted) {
                const double scale = std::max(1e-12, b.diagonal().maxCoeff());
                mu = mu == 0.0 ? 1e-6 * scale : mu * 10.0;
                if (mu > 1e18 * scale) break;
            }
        }
        if (!accepted) {
            report.stop_reason = "no decreasing step found";
            break;
        }
        const double rel_decrease = (c - c_new) / std::max(1.0, std::abs(c));
        p = p_new;
        c = c_new;
        mu /= 3.0;
        report.iterations++;
        report.cost_trace.push_back(c);
        report.param_trace.push_back(eng.expand(p));
        if (rel_decrease < eng.opts.f_tol) {
            report.converged = true;
            report.stop_reason = "relative cost decrease below f_tol";
            break;
        }
    }
    if (report.stop_reason.empty()) report.stop_reason = "max iterations";
    finish_report(eng, report, p);
    return report;
}

inline FitReport fit_cg(FitEngine& eng) {
    FitReport report;
    const auto nf = static_cast<Eigen::Index>(eng.free_idx.size());
    VectorXd p(nf);
    for (Eigen::Index i = 0; i < nf; ++i) p[i] = eng.model.params_khz[eng.free_idx[i]];

    VectorXd g;
    double c = eng.derivatives_at(p, g, nullptr);
    if (!std::isfinite(c)) throw Error("fit: non-finite initial cost");
    report.cost_trace.push_back(c);
    report.param_trace.push_back(eng.expand(p));
    VectorXd dir = -g;
    double alpha = 1.0 / std::max(1.0, g.norm());

    for (int iter = 0; iter < eng.opts.max_iter; ++iter) {
        const double gnorm = g.cwiseAbs().maxCoeff();
        report.grad_norm_trace.push_back(gnorm);
        if (gnorm < eng.opts.g_tol) {
            report.converged = true;
            report.stop_reason = "gradient below g_tol";
            break;
        }
        double slope = g.dot(dir);
        if (slope >= 0) {  // restart on non-descent direction
            dir = -g;
            slope = g.dot(dir);
        }
        // Backtracking Armijo line search with one expansion attempt.
        bool accepted = false;
        double a = alpha * 2.0;
        double c_new = c;
        VectorXd p_new;
        for (int tries = 0; tries < 40; ++tries) {
            p_new = p + a * dir;
            c_new = eng.cost_at(p_new);
            if (std::isfinite(c_new) && c_new <= c + 1e-4 * a * slope) {
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if (!accepted) {
            report.stop_reason = "line search failed";
            break;
        }
        alpha = a;
        VectorXd g_new;
        eng.derivatives_at(p_new, g_new, nullptr);
        const double denom = g.squaredNorm();
        double beta = denom > 0 ? g_new.dot(g_new - g) / denom : 0.0;  // Polak-Ribiere+
        beta = std::max(0.0, beta);
        if ((iter + 1) % std::max<int>(1, static_cast<int>(nf)) == 0) beta = 0.0;
        dir = -g_new + beta * dir;
        const double rel_decrease = (c - c_new) / std::max(1.0, std::abs(c));
        p = p_new;
        c = c_new;
        g = g_new;
        report.iterations++;
        report.cost_trace.push_back(c);
        report.param_trace.push_back(eng.expand(p));
        if (rel_decrease < eng.opts.f_tol) {
            report.converged = true;
            report.stop_reason = "relative cost decrease below f_tol";
            break;
        }
    }
    if (report.stop_reason.empty()) report.stop_reason = "max iterations";
    finish_report(eng, report, p);
    return report;
}

}  // namespace detail

// Minimizes the cost from the model's current parameters. The returned
// report carries the full iteration trace and the covariance at the
// solution.
inline FitReport fit(const HamiltonianModel& model, const std::vector<ExperimentSpec>& experiments,
                     const SignalSet& signals, const FitOptions& options = {}) {
    detail::FitEngine engine(model, experiments, signals, options);
    return options.algorithm == FitOptions::Algorithm::kLevenbergMarquardt ? detail::fit_lm(engine)
                                                                           : detail::fit_cg(engine);
}

// ---------------------------------------------------------------------------
// Robust time-window schedule
// ---------------------------------------------------------------------------

// t_max = pi / (4 delta max_n ||V_n||), with delta the l1 bound on the
// parameter error in rad/ms. After each fit round delta shrinks by the
// contraction factor c, so t_max grows geometrically by 1/c and the final
// error epsilon is reached in O(log(1/epsilon)) rounds.
class RobustSchedule {
  public:
    RobustSchedule(double delta_prior_khz, double v_norm_max, double c)
        : delta_rad_ms_(delta_prior_khz * kKhzToRadPerMs), v_norm_max_(v_norm_max), c_(c) {
        if (!(delta_prior_khz > 0)) throw InvalidInputError("RobustSchedule: delta_prior must be > 0");
        if (!(v_norm_max > 0)) throw InvalidInputError("RobustSchedule: v_norm_max must be > 0");
        if (!(c > 0 && c < 1)) throw InvalidInputError("RobustSchedule: need 0 < c < 1");
    }

    double t_max_ms() const { return kPi / (4.0 * delta_rad_ms_ * v_norm_max_); }
    double delta_khz() const { return delta_rad_ms_ / kKhzToRadPerMs; }

    // Contract the error bound after a converged round: delta <- c * pi /
    // (4 ||V|| t_max), which is c * delta at the current window.
    void advance() { delta_rad_ms_ *= c_; }

  private:
    double delta_rad_ms_;
    double v_norm_max_;
    double c_;
};

// max_n ||V_n|| over the free terms (exact spectral norms).
inline double max_free_term_norm(const HamiltonianModel& model) {
    double vmax = 0.0;
    for (int n : model.free_indices()) {
        const DenseOperator v = model.term_operator(n);
        Eigen::SelfAdjointEigenSolver<MatrixXc> es(v.mat, Eigen::EigenvaluesOnly);
        vmax = std::max(vmax, es.eigenvalues().cwiseAbs().maxCoeff());
    }
    if (vmax <= 0) throw InvalidInputError("max_free_term_norm: no free terms with nonzero norm");
    return vmax;
}

struct ScheduleOptions {
    double delta_prior_khz = 1.0;  // l1 bound sum |h_n - h0_n| at the start
    double contraction = 0.5;      // c < 1
    int max_rounds = 12;
};

// Staged fit: each round keeps only times <= t_max, fits, then widens the
// window. The final round always sees the full dataset.
inline FitReport fit_scheduled(const HamiltonianModel& model, const std::vector<ExperimentSpec>& experiments,
                               const SignalSet& signals, const FitOptions& options,
                               const ScheduleOptions& schedule_options) {
    signals.validate(experiments);
    double t_full = 0.0;
    for (const auto& x : experiments) t_full = std::max(t_full, x.times_ms.maxCoeff());

    RobustSchedule schedule(schedule_options.delta_prior_khz, max_free_term_norm(model), schedule_options.contraction);
    HamiltonianModel current = model;
    FitReport last;
    std::vector<std::pair<double, double>> trace;

    for (int round = 0; round < schedule_options.max_rounds; ++round) {
        const double t_max = schedule.t_max_ms();
        const bool final_round = t_max >= t_full || round == schedule_options.max_rounds - 1;

        std::vector<ExperimentSpec> trimmed;
        std::vector<VectorXd> trimmed_values;
        for (std::size_t x = 0; x < experiments.size(); ++x) {
            const auto& spec = experiments[x];
            std::vector<double> ts, sg, vals;
            for (Eigen::Index k = 0; k < spec.times_ms.size(); ++k) {
                if (final_round || spec.times_ms[k] <= t_max) {
                    ts.push_back(spec.times_ms[k]);
                    sg.push_back(spec.sigma[k]);
                    vals.push_back(signals.values[x][k]);
                }
            }
            if (ts.empty()) continue;
            ExperimentSpec e = spec;
            e.times_ms = Eigen::Map<VectorXd>(ts.data(), static_cast<Eigen::Index>(ts.size()));
            e.sigma = Eigen::Map<VectorXd>(sg.data(), static_cast<Eigen::Index>(sg.size()));
            trimmed.push_back(std::move(e));
            trimmed_values.push_back(Eigen::Map<VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
        }
        trace.emplace_back(t_max, schedule.delta_khz());
        if (!trimmed.empty()) {
            SignalSet sub;
            sub.values = std::move(trimmed_values);
            sub.provenance = signals.provenance;
            last = fit(current, trimmed, sub, options);
            current.params_khz = last.params_hat;
        }
        if (final_round) break;
        schedule.advance();
    }
    last.schedule_trace = trace;
    return last;
}

}  // namespace spinlearn
