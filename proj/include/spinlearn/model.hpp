#pragma once

// Parameterized Hamiltonian H(h) = sum_n h_n V_n over a fixed Hermitian term
// basis. Parameters are quoted in kHz; materialized matrices are in rad/ms.

#include "spinlearn/spinsim.hpp"

#include <limits>
#include <string>

namespace spinlearn {

// One Pauli product with a fixed structural coefficient.
struct PauliProduct {
    PauliSpec factors;
    double coeff = 1.0;
};

// Basis term V_n: a fixed linear combination of Pauli products. The
// learnable coupling h_n scales the whole combination.
struct ModelTerm {
    std::string label;
    std::vector<PauliProduct> products;
};

struct HamiltonianModel {
    int n_spins = 0;
    std::vector<ModelTerm> terms;
    VectorXd params_khz;
    std::vector<std::uint8_t> free_mask;  // 1 = optimized, 0 = frozen
    VectorXd priors_khz;
    VectorXd prior_widths_khz;  // +inf disables the prior term

    int n_params() const { return static_cast<int>(terms.size()); }
    int dim() const { return 1 << n_spins; }

    void validate() const {
        const auto n = terms.size();
        if (params_khz.size() != static_cast<Eigen::Index>(n) || free_mask.size() != n ||
            priors_khz.size() != static_cast<Eigen::Index>(n) ||
            prior_widths_khz.size() != static_cast<Eigen::Index>(n))
            throw InvalidSpecError("HamiltonianModel: field lengths disagree");
        if (n_spins < 1 || n_spins > kMaxSpins)
            throw CapacityError("HamiltonianModel: n_spins outside [1, " + std::to_string(kMaxSpins) + "]");
        for (Eigen::Index i = 0; i < prior_widths_khz.size(); ++i)
            if (!(prior_widths_khz[i] > 0)) throw InvalidSpecError("HamiltonianModel: prior width must be > 0");
    }

    // Dimensionless V_n.
    DenseOperator term_operator(int n) const {
        MatrixXc m = MatrixXc::Zero(dim(), dim());
        for (const auto& p : terms.at(n).products) m += pauli_term(p.factors, p.coeff, n_spins).mat;
        DenseOperator op;
        op.mat = std::move(m);
        op.hermitian_hint = true;
        return op;
    }

    // H(h) in rad/ms for the given kHz parameter vector.
    DenseOperator materialize(const VectorXd& h_khz) const {
        if (h_khz.size() != static_cast<Eigen::Index>(terms.size()))
            throw DimensionError("HamiltonianModel: parameter vector length mismatch");
        MatrixXc m = MatrixXc::Zero(dim(), dim());
        for (std::size_t n = 0; n < terms.size(); ++n) {
            if (h_khz[n] == 0.0) continue;
            const double w = kKhzToRadPerMs * h_khz[n];
            for (const auto& p : terms[n].products) m += pauli_term(p.factors, w * p.coeff, n_spins).mat;
        }
        DenseOperator op;
        op.mat = std::move(m);
        op.hermitian_hint = true;
        return op;
    }

    DenseOperator materialize() const { return materialize(params_khz); }

    std::vector<int> free_indices() const {
        std::vector<int> idx;
        for (std::size_t n = 0; n < free_mask.size(); ++n)
            if (free_mask[n]) idx.push_back(static_cast<int>(n));
        return idx;
    }

    int find_term(const std::string& label) const {
        for (std::size_t n = 0; n < terms.size(); ++n)
            if (terms[n].label == label) return static_cast<int>(n);
        return -1;
    }
};

inline double infinite_width() { return std::numeric_limits<double>::infinity(); }

// Uniform builder for models assembled term by term.
class ModelBuilder {
  public:
    explicit ModelBuilder(int n_spins) { model_.n_spins = n_spins; }

    ModelBuilder& add(const std::string& label, std::vector<PauliProduct> products, double value_khz,
                      bool free_param = false, double prior_khz = 0.0, double prior_width_khz = infinite_width()) {
        model_.terms.push_back(ModelTerm{label, std::move(products)});
        values_.push_back(value_khz);
        free_.push_back(free_param ? 1 : 0);
        priors_.push_back(prior_khz);
        widths_.push_back(prior_width_khz);
        return *this;
    }

    HamiltonianModel build() {
        const auto n = static_cast<Eigen::Index>(values_.size());
        model_.params_khz = Eigen::Map<VectorXd>(values_.data(), n);
        model_.priors_khz = Eigen::Map<VectorXd>(priors_.data(), n);
        model_.prior_widths_khz = Eigen::Map<VectorXd>(widths_.data(), n);
        model_.free_mask = free_;
        model_.validate();
        return model_;
    }

  private:
    HamiltonianModel model_;
    std::vector<double> values_, priors_, widths_;
    std::vector<std::uint8_t> free_;
};

}  // namespace spinlearn
