#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace factorcf {

// Error categories; the CLI maps them to exit codes 2/3/4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Vec = std::vector<double>;

/// Normalizes v in place to sum 1. Throws NumericError naming `what`
/// if the mass is zero, negative or non-finite.
inline void normalize(std::span<double> v, const std::string& what) {
    double s = 0.0;
    for (double x : v) s += x;
    if (!(s > 0.0) || !std::isfinite(s))
        throw NumericError("degenerate normalizer (" + what + ")");
    for (double& x : v) x /= s;
}

inline bool is_distribution(std::span<const double> v, double tol) {
    double s = 0.0;
    for (double x : v) {
        if (!(x >= 0.0) || x > 1.0 + tol) return false;
        s += x;
    }
    return std::fabs(s - 1.0) <= tol;
}

inline double linf_diff(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(a[i] - b[i]));
    return d;
}

/// argmax with ties broken toward the smallest index
inline int argmax_index(std::span<const double> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace factorcf
