#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "factorcf/common.hpp"

namespace factorcf {

struct BoundParams {
    int user_groups = 0;       // g_u
    int movie_groups = 0;      // g_v
    long long num_users = 0;   // N
    long long num_movies = 0;  // M
    long long num_observed = 0;  // |O|
    double delta = 0.0;
};

inline void check_bound_params(const BoundParams& p) {
    if (p.user_groups < 1 || p.movie_groups < 1) throw ConfigError("group counts must be >= 1");
    if (p.num_users <= 2 || p.num_movies <= 2) throw ConfigError("bound requires N, M > 2");
    if (p.num_observed < 1) throw ConfigError("bound requires |O| >= 1");
    if (!(p.delta > 0.0 && p.delta < 1.0)) throw ConfigError("bound requires delta in (0,1)");
}

/// h(g_u, g_v, N, M, |O|): high-probability bound on |D - D_O| for the
/// tri-factorized sign-prediction class. Natural logarithms.
inline double generalization_bound(const BoundParams& p) {
    check_bound_params(p);
    double complexity = static_cast<double>(p.num_users) * p.user_groups +
                        static_cast<double>(p.num_movies) * p.movie_groups +
                        static_cast<double>(p.user_groups) * p.movie_groups;
    double log_term =
        std::log(12.0 * std::exp(1.0) * static_cast<double>(p.num_movies) /
                 std::min(p.user_groups, p.movie_groups));
    return std::sqrt((complexity * log_term - std::log(p.delta)) / (2.0 * static_cast<double>(p.num_observed)));
}

/// Zero-one sign agreement distortion: 1 iff x*y <= 0 (so x = 0 disagrees).
inline int sign_distortion(double x, int y) {
    if (y != 1 && y != -1) throw ConfigError("sign_distortion: y must be +1 or -1");
    return x * y <= 0.0 ? 1 : 0;
}

/// Maps a rating to +-1 by sign(r - threshold); r == threshold maps to -1.
inline int rating_to_sign(double rating, double threshold) {
    return rating > threshold ? 1 : -1;
}

struct DistortionPair {
    double full = 0.0;      // D, averaged over all N*M entries
    double observed = 0.0;  // D_O, averaged over O
};

/// D and D_O between a real prediction matrix X and a +-1 matrix Y, both
/// row-major N x M.
inline DistortionPair average_distortions(const std::vector<double>& predictions,
                                          const std::vector<int>& truth, long long num_users,
                                          long long num_movies,
                                          const std::vector<std::pair<int, int>>& observed) {
    const std::size_t total = static_cast<std::size_t>(num_users) * num_movies;
    if (predictions.size() != total || truth.size() != total)
        throw ConfigError("distortion matrices must be N x M");
    if (observed.empty()) throw ConfigError("D_O undefined for empty O");
    long long full = 0;
    for (std::size_t i = 0; i < total; ++i) full += sign_distortion(predictions[i], truth[i]);
    long long obs = 0;
    for (auto [n, m] : observed) {
        if (n < 0 || n >= num_users || m < 0 || m >= num_movies)
            throw ConfigError("observed pair outside matrix");
        std::size_t i = static_cast<std::size_t>(n) * num_movies + m;
        obs += sign_distortion(predictions[i], truth[i]);
    }
    return {static_cast<double>(full) / static_cast<double>(total),
            static_cast<double>(obs) / static_cast<double>(observed.size())};
}

struct BoundReport {
    double full_distortion;      // D
    double observed_distortion;  // D_O
    double gap;                  // |D - D_O|
    double bound;                // h
};

/// Side-by-side report of the empirical generalization gap and the bound h.
inline BoundReport bound_report(const std::vector<double>& predictions, const std::vector<int>& truth,
                                const std::vector<std::pair<int, int>>& observed, const BoundParams& p) {
    auto d = average_distortions(predictions, truth, p.num_users, p.num_movies, observed);
    return {d.full, d.observed, std::fabs(d.full - d.observed), generalization_bound(p)};
}

}  // namespace factorcf
