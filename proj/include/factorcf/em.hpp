#pragma once

#include <cmath>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "factorcf/imp.hpp"
#include "factorcf/model.hpp"
#include "factorcf/parallel.hpp"

namespace factorcf {

// Per-node belief state for the variational EM learner: f_n over user groups,
// h_m over movie groups, plus the current kernel estimate.
struct EmState {
    int user_groups = 0;
    int movie_groups = 0;
    std::vector<int> rating_alphabet;
    Vec f;  // N x g_u
    Vec h;  // M x g_v
    Vec w;  // kernel, [u][v][r]
    int iteration = 0;

    std::span<double> f_n(int n) { return {f.data() + static_cast<std::size_t>(n) * user_groups, static_cast<std::size_t>(user_groups)}; }
    std::span<const double> f_n(int n) const {
        return {f.data() + static_cast<std::size_t>(n) * user_groups, static_cast<std::size_t>(user_groups)};
    }
    std::span<double> h_m(int m) { return {h.data() + static_cast<std::size_t>(m) * movie_groups, static_cast<std::size_t>(movie_groups)}; }
    std::span<const double> h_m(int m) const {
        return {h.data() + static_cast<std::size_t>(m) * movie_groups, static_cast<std::size_t>(movie_groups)};
    }
    double kernel_at(int u, int v, int r) const {
        return w[(static_cast<std::size_t>(u) * movie_groups + v) * rating_alphabet.size() + r];
    }

    GroupModel as_model() const {
        GroupModel m;
        m.num_user_groups = user_groups;
        m.num_movie_groups = movie_groups;
        m.rating_alphabet = rating_alphabet;
        m.user_prior.assign(user_groups, 0.0);
        m.movie_prior.assign(movie_groups, 0.0);
        const std::size_t num_users = f.size() / user_groups;
        const std::size_t num_movies = h.size() / movie_groups;
        for (std::size_t n = 0; n < num_users; ++n)
            for (int u = 0; u < user_groups; ++u) m.user_prior[u] += f[n * user_groups + u];
        for (std::size_t mm = 0; mm < num_movies; ++mm)
            for (int v = 0; v < movie_groups; ++v) m.movie_prior[v] += h[mm * movie_groups + v];
        normalize(m.user_prior, "averaged f");
        normalize(m.movie_prior, "averaged h");
        m.kernel = w;
        return m;
    }
};

/// Node beliefs start at the model priors, the kernel at the model kernel.
inline EmState em_init(const GroupModel& model, const ObservationSet& obs) {
    require_valid(model);
    EmState s;
    s.user_groups = model.num_user_groups;
    s.movie_groups = model.num_movie_groups;
    s.rating_alphabet = model.rating_alphabet;
    s.f.resize(static_cast<std::size_t>(obs.num_users()) * s.user_groups);
    s.h.resize(static_cast<std::size_t>(obs.num_movies()) * s.movie_groups);
    for (int n = 0; n < obs.num_users(); ++n)
        for (int u = 0; u < s.user_groups; ++u) s.f[static_cast<std::size_t>(n) * s.user_groups + u] = model.user_prior[u];
    for (int m = 0; m < obs.num_movies(); ++m)
        for (int v = 0; v < s.movie_groups; ++v) s.h[static_cast<std::size_t>(m) * s.movie_groups + v] = model.movie_prior[v];
    s.w = model.kernel;
    return s;
}

/// Initialization from per-node beliefs (the VDVQ path).
inline EmState em_init(const std::vector<Vec>& user_beliefs, const std::vector<Vec>& movie_beliefs,
                       const GroupModel& model_with_kernel) {
    require_valid(model_with_kernel);
    EmState s;
    s.user_groups = model_with_kernel.num_user_groups;
    s.movie_groups = model_with_kernel.num_movie_groups;
    s.rating_alphabet = model_with_kernel.rating_alphabet;
    s.f.resize(user_beliefs.size() * s.user_groups);
    s.h.resize(movie_beliefs.size() * s.movie_groups);
    for (std::size_t n = 0; n < user_beliefs.size(); ++n) {
        if (static_cast<int>(user_beliefs[n].size()) != s.user_groups)
            throw ConfigError("user belief length mismatch");
        std::copy(user_beliefs[n].begin(), user_beliefs[n].end(), s.f.begin() + n * s.user_groups);
    }
    for (std::size_t m = 0; m < movie_beliefs.size(); ++m) {
        if (static_cast<int>(movie_beliefs[m].size()) != s.movie_groups)
            throw ConfigError("movie belief length mismatch");
        std::copy(movie_beliefs[m].begin(), movie_beliefs[m].end(), s.h.begin() + m * s.movie_groups);
    }
    s.w = model_with_kernel.kernel;
    return s;
}

/// Observed-data negative log-likelihood -sum log sum_{u,v} w f h.
inline double em_nll(const EmState& s, const ObservationSet& obs) {
    GroupModel probe;  // alphabet lookup only
    probe.rating_alphabet = s.rating_alphabet;
    double total = 0.0;
    for (std::size_t e = 0; e < obs.size(); ++e) {
        const Triple& t = obs.triple(e);
        int r = probe.rating_index(t.rating);
        if (r < 0) throw DataError("rating " + std::to_string(t.rating) + " not in the state alphabet");
        auto fn = s.f_n(t.user);
        auto hm = s.h_m(t.movie);
        double z = 0.0;
        for (int u = 0; u < s.user_groups; ++u) {
            double a = fn[u];
            for (int v = 0; v < s.movie_groups; ++v) z += a * hm[v] * s.kernel_at(u, v, r);
        }
        if (!(z > 0.0))
            throw NumericError("observed rating has zero probability at edge (" + std::to_string(t.user) +
                               "," + std::to_string(t.movie) + ")");
        total -= std::log(z);
    }
    return total;
}

/// One combined E/M sweep. f and h are re-estimated from the iteration-i
/// state via the per-edge posterior of (u,v); w is then re-estimated from the
/// iteration-(i+1) beliefs with a fresh per-edge normalizer. Nodes and kernel
/// rows with no mass hold their previous values.
inline EmState em_iterate(const EmState& state, const ObservationSet& obs) {
    const int gu = state.user_groups, gv = state.movie_groups;
    const int num_r = static_cast<int>(state.rating_alphabet.size());
    GroupModel probe;
    probe.rating_alphabet = state.rating_alphabet;
    std::vector<int> ridx(obs.size());
    for (std::size_t e = 0; e < obs.size(); ++e) {
        ridx[e] = probe.rating_index(obs.triple(e).rating);
        if (ridx[e] < 0)
            throw DataError("rating " + std::to_string(obs.triple(e).rating) + " not in the state alphabet");
    }

    EmState next;
    next.user_groups = gu;
    next.movie_groups = gv;
    next.rating_alphabet = state.rating_alphabet;
    next.iteration = state.iteration + 1;
    next.f.assign(state.f.size(), 0.0);
    next.h.assign(state.h.size(), 0.0);

    auto edge_normalizer = [&](const EmState& s, std::size_t e) {
        const Triple& t = obs.triple(e);
        auto fn = s.f_n(t.user);
        auto hm = s.h_m(t.movie);
        double z = 0.0;
        for (int u = 0; u < gu; ++u) {
            double a = fn[u];
            for (int v = 0; v < gv; ++v) z += a * hm[v] * s.kernel_at(u, v, ridx[e]);
        }
        return z;
    };

    parallel_for(obs.num_users(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t n = lo; n < hi; ++n) {
            auto edges = obs.edges_of_user(static_cast<int>(n));
            auto out = next.f_n(static_cast<int>(n));
            auto fn = state.f_n(static_cast<int>(n));
            if (edges.empty()) {  // empty sum: hold previous belief
                std::copy(fn.begin(), fn.end(), out.begin());
                continue;
            }
            for (int e : edges) {
                auto hm = state.h_m(obs.triple(e).movie);
                double z = edge_normalizer(state, e);
                if (!(z > 0.0))
                    throw NumericError("zero normalizer at edge (" + std::to_string(n) + "," +
                                       std::to_string(obs.triple(e).movie) + ")");
                for (int u = 0; u < gu; ++u) {
                    double s = 0.0;
                    for (int v = 0; v < gv; ++v) s += hm[v] * state.kernel_at(u, v, ridx[e]);
                    out[u] += fn[u] * s / z;
                }
            }
            normalize(out, "f update for user " + std::to_string(n));
        }
    });

    parallel_for(obs.num_movies(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t m = lo; m < hi; ++m) {
            auto edges = obs.edges_of_movie(static_cast<int>(m));
            auto out = next.h_m(static_cast<int>(m));
            auto hm = state.h_m(static_cast<int>(m));
            if (edges.empty()) {
                std::copy(hm.begin(), hm.end(), out.begin());
                continue;
            }
            for (int e : edges) {
                auto fn = state.f_n(obs.triple(e).user);
                double z = edge_normalizer(state, e);
                if (!(z > 0.0))
                    throw NumericError("zero normalizer at edge (" + std::to_string(obs.triple(e).user) +
                                       "," + std::to_string(m) + ")");
                for (int v = 0; v < gv; ++v) {
                    double s = 0.0;
                    for (int u = 0; u < gu; ++u) s += fn[u] * state.kernel_at(u, v, ridx[e]);
                    out[v] += hm[v] * s / z;
                }
            }
            normalize(out, "h update for movie " + std::to_string(m));
        }
    });

    // w update: soft co-occurrence counts under the new beliefs, one kernel
    // row per (u,v) normalized over ratings.
    next.w.assign(state.w.size(), 0.0);
    const std::size_t cell_count = next.w.size();
    blocked_reduce<Vec>(
        obs.size(),
        [&](std::size_t lo, std::size_t hi, Vec& partial) {
            for (std::size_t e = lo; e < hi; ++e) {
                const Triple& t = obs.triple(e);
                auto fn = next.f_n(t.user);
                auto hm = next.h_m(t.movie);
                double z = 0.0;
                for (int u = 0; u < gu; ++u) {
                    double a = fn[u];
                    for (int v = 0; v < gv; ++v) z += a * hm[v] * state.kernel_at(u, v, ridx[e]);
                }
                if (!(z > 0.0))
                    throw NumericError("zero normalizer at edge (" + std::to_string(t.user) + "," +
                                       std::to_string(t.movie) + ")");
                for (int u = 0; u < gu; ++u) {
                    double a = fn[u];
                    for (int v = 0; v < gv; ++v)
                        partial[(static_cast<std::size_t>(u) * gv + v) * num_r + ridx[e]] +=
                            a * hm[v] * state.kernel_at(u, v, ridx[e]) / z;
                }
            }
        },
        [&](Vec& partial) {
            for (std::size_t i = 0; i < cell_count; ++i) next.w[i] += partial[i];
        },
        [&] { return Vec(cell_count, 0.0); });
    for (int u = 0; u < gu; ++u)
        for (int v = 0; v < gv; ++v) {
            double* row = next.w.data() + (static_cast<std::size_t>(u) * gv + v) * num_r;
            double s = 0.0;
            for (int r = 0; r < num_r; ++r) s += row[r];
            if (s > 0.0) {
                for (int r = 0; r < num_r; ++r) row[r] /= s;
            } else {  // unreachable (u,v) cell: hold previous row
                const double* old = state.w.data() + (static_cast<std::size_t>(u) * gv + v) * num_r;
                std::copy(old, old + num_r, row);
            }
        }
    return next;
}

/// Rating posteriors sum f h w; node posteriors are the beliefs themselves.
inline PosteriorEstimates em_posteriors(const EmState& state, const ObservationSet& obs,
                                        const std::vector<std::pair<int, int>>& query_pairs) {
    const int gu = state.user_groups, gv = state.movie_groups;
    const int num_r = static_cast<int>(state.rating_alphabet.size());
    PosteriorEstimates post;
    post.rating_alphabet = state.rating_alphabet;
    post.user_groups = gu;
    post.movie_groups = gv;
    post.pairs = query_pairs;
    post.user_posteriors = state.f;
    post.movie_posteriors = state.h;
    post.rating_posteriors.resize(query_pairs.size() * num_r);
    for (std::size_t q = 0; q < query_pairs.size(); ++q) {
        auto [n, m] = query_pairs[q];
        if (n < 0 || n >= obs.num_users() || m < 0 || m >= obs.num_movies())
            throw ConfigError("query pair (" + std::to_string(n) + "," + std::to_string(m) + ") out of range");
        auto fn = state.f_n(n);
        auto hm = state.h_m(m);
        double* out = post.rating_posteriors.data() + q * num_r;
        for (int r = 0; r < num_r; ++r) {
            double s = 0.0;
            for (int u = 0; u < gu; ++u) {
                double a = fn[u];
                for (int v = 0; v < gv; ++v) s += a * hm[v] * state.kernel_at(u, v, r);
            }
            out[r] = s;
        }
        normalize({out, static_cast<std::size_t>(num_r)},
                  "rating posterior (" + std::to_string(n) + "," + std::to_string(m) + ")");
    }
    return post;
}

struct EmOptions {
    int max_iters = 500;
    double tol = 1e-8;  // on |delta NLL|
};

struct EmTrace {
    std::vector<double> nll;  // value after each iteration, nll[0] = initial
    bool converged = false;
    int iterations = 0;
};

inline std::tuple<EmState, PosteriorEstimates, EmTrace> em_run(
    const EmState& init, const ObservationSet& obs, const EmOptions& opts = {},
    const std::vector<std::pair<int, int>>& query_pairs = {}) {
    if (opts.max_iters < 1) throw ConfigError("em_run: max_iters must be >= 1");
    EmState state = init;
    EmTrace trace;
    trace.nll.push_back(em_nll(state, obs));
    for (int it = 0; it < opts.max_iters; ++it) {
        state = em_iterate(state, obs);
        trace.nll.push_back(em_nll(state, obs));
        double delta = std::fabs(trace.nll[trace.nll.size() - 2] - trace.nll.back());
        if (delta < opts.tol) {
            trace.converged = true;
            break;
        }
    }
    trace.iterations = state.iteration;
    PosteriorEstimates post = em_posteriors(state, obs, query_pairs);
    return {std::move(state), std::move(post), std::move(trace)};
}

inline std::tuple<EmState, PosteriorEstimates, EmTrace> em_run(
    const GroupModel& model, const ObservationSet& obs, const EmOptions& opts = {},
    const std::vector<std::pair<int, int>>& query_pairs = {}) {
    return em_run(em_init(model, obs), obs, opts, query_pairs);
}

}  // namespace factorcf
