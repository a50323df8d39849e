#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace spinlearn {

using Complex = std::complex<double>;
using MatrixXc = Eigen::MatrixXcd;
using VectorXc = Eigen::VectorXcd;
using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// Internal units: angular frequency in rad/ms, time in ms.
// All I/O quotes couplings and offsets in kHz; 1 kHz = 2*pi rad/ms.
inline constexpr double kKhzToRadPerMs = kTwoPi;

// Hard cap on cluster size. Dense matrices are 4^N complex entries; beyond
// 12 spins a single operator no longer fits in desk-scale memory.
inline constexpr int kMaxSpins = 12;

// Fixed internal assertion tolerances (library constants, not user knobs).
inline constexpr double kHermTol = 1e-12;
inline constexpr double kUnitTol = 1e-12;
inline constexpr double kReconTol = 1e-10;
inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kPsdTol = 1e-10;

// ---------------------------------------------------------------------------
// Error taxonomy
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed operator/term/experiment descriptors.
struct InvalidSpecError : Error {
    using Error::Error;
};

// Requests exceeding the dense-simulation cap.
struct CapacityError : Error {
    using Error::Error;
};

// Violated numerical preconditions (non-Hermitian input, broken symmetry, ...).
struct InvalidInputError : Error {
    using Error::Error;
};

struct DimensionError : Error {
    using Error::Error;
};

// NaNs or shape mismatches in measured data.
struct DataError : Error {
    using Error::Error;
};

struct SingularityError : Error {
    using Error::Error;
};

// Input too small for the requested statistic (e.g. sector dim < 4).
struct DegenerateInputError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Small shared utilities
// ---------------------------------------------------------------------------

inline double max_abs(const MatrixXc& m) { return m.cwiseAbs().maxCoeff(); }

inline bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

inline std::int64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    std::int64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual_rms = 0.0;  // RMS of fit residuals
};

// Ordinary least squares y = a*x + b.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw InvalidInputError("linear_fit: need >= 2 matched points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw InvalidInputError("linear_fit: degenerate abscissae");
    LinearFit f;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    double ss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.slope * x[i] + f.intercept);
        ss += r * r;
    }
    f.residual_rms = std::sqrt(ss / n);
    return f;
}

// FNV-1a 64-bit; used for manifest/input hashing (provenance, not security).
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Deterministic parallel map
// ---------------------------------------------------------------------------

// Applies fn(i) for i in [0, n) on up to `threads` workers with static
// partitioning. Each index writes only its own slot, so the result (and any
// subsequent fixed-order reduction) is bit-identical for every thread count.
template <typename Fn>
void parallel_for_indexed(std::size_t n, int threads, Fn&& fn) {
    if (n == 0) return;
    int nw = threads <= 0 ? static_cast<int>(std::thread::hardware_concurrency()) : threads;
    nw = std::max(1, std::min<int>(nw, static_cast<int>(n)));
    if (nw == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nw);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (int w = 0; w < nw; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(nw)) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace spinlearn
