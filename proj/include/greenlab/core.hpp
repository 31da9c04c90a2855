#pragma once
// Shared vocabulary: points, errors, deterministic parallel loops.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace greenlab {

/// Spatial dimension of every problem in this library.
inline constexpr int kDim = 3;

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }

enum class ErrorKind {
    InvalidCoefficient,
    DimensionMismatch,
    InvalidArgument,
    InvalidGrid,
    EmptyDomain,
    DisconnectedDomain,
    OutsideDomain,
    NotOnBoundary,
    IterationLimit,
    Precondition,
    DegenerateData,
    ConditionSViolated,
    NotApplicable,
    Config,
    Budget,
    Io,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidCoefficient: return "invalid-coefficient";
        case ErrorKind::DimensionMismatch: return "dimension-mismatch";
        case ErrorKind::InvalidArgument: return "invalid-argument";
        case ErrorKind::InvalidGrid: return "invalid-grid";
        case ErrorKind::EmptyDomain: return "empty-domain";
        case ErrorKind::DisconnectedDomain: return "disconnected-domain";
        case ErrorKind::OutsideDomain: return "outside-domain";
        case ErrorKind::NotOnBoundary: return "not-on-boundary";
        case ErrorKind::IterationLimit: return "iteration-limit";
        case ErrorKind::Precondition: return "precondition";
        case ErrorKind::DegenerateData: return "degenerate-data";
        case ErrorKind::ConditionSViolated: return "condition-s-violated";
        case ErrorKind::NotApplicable: return "not-applicable";
        case ErrorKind::Config: return "config";
        case ErrorKind::Budget: return "budget";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Thrown when a Krylov solve does not reach its tolerance; carries the residual history.
class IterationLimitError : public Error {
public:
    IterationLimitError(const std::string& what, std::vector<double> history)
        : Error(ErrorKind::IterationLimit, what), history_(std::move(history)) {}
    const std::vector<double>& residual_history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) throw Error(kind, what);
}

inline int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_thread_count(int k) {
#ifdef _OPENMP
    if (k > 0) omp_set_num_threads(k);
#else
    (void)k;
#endif
}

/// Static-schedule parallel loop; each index is handled by exactly one thread.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
}

/// Sum of f(i) over [0, n) whose rounding does not depend on the thread count:
/// partial sums over fixed-size blocks, combined serially in block order.
template <class F>
double deterministic_sum(std::size_t n, F&& f) {
    constexpr std::size_t kBlock = 4096;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(blocks, 0.0);
    parallel_for(blocks, [&](std::size_t b) {
        const std::size_t lo = b * kBlock;
        const std::size_t hi = std::min(n, lo + kBlock);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += f(i);
        partial[b] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

/// SplitMix64: seeds independent streams from (seed, stream index).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Small portable generator (xoshiro256**); output is identical on every platform,
/// unlike the distributions in <random>.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) {
            s = splitmix64(s);
            w = s;
        }
    }
    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (one value per call, the partner is cached).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace greenlab
