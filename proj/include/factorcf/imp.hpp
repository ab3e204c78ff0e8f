#pragma once

#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "factorcf/kernel_ops.hpp"
#include "factorcf/model.hpp"
#include "factorcf/parallel.hpp"

namespace factorcf {

// Per-directed-edge beliefs for the sum-product learner: y carries the user
// group belief user->movie, x the movie group belief movie->user. Edge order
// follows the observation set's triple order.
struct MessageState {
    int user_groups = 0;
    int movie_groups = 0;
    std::size_t num_edges = 0;
    int iteration = 0;
    Vec y;  // num_edges x g_u
    Vec x;  // num_edges x g_v

    std::span<double> y_msg(std::size_t e) { return {y.data() + e * user_groups, static_cast<std::size_t>(user_groups)}; }
    std::span<const double> y_msg(std::size_t e) const {
        return {y.data() + e * user_groups, static_cast<std::size_t>(user_groups)};
    }
    std::span<double> x_msg(std::size_t e) { return {x.data() + e * movie_groups, static_cast<std::size_t>(movie_groups)}; }
    std::span<const double> x_msg(std::size_t e) const {
        return {x.data() + e * movie_groups, static_cast<std::size_t>(movie_groups)};
    }
};

struct PosteriorEstimates {
    std::vector<int> rating_alphabet;
    std::vector<std::pair<int, int>> pairs;
    Vec rating_posteriors;  // pairs.size() x |R|
    Vec user_posteriors;    // N x g_u
    Vec movie_posteriors;   // M x g_v
    int user_groups = 0;
    int movie_groups = 0;

    std::span<const double> rating_posterior(std::size_t i) const {
        return {rating_posteriors.data() + i * rating_alphabet.size(), rating_alphabet.size()};
    }
    std::span<const double> user_posterior(int n) const {
        return {user_posteriors.data() + static_cast<std::size_t>(n) * user_groups,
                static_cast<std::size_t>(user_groups)};
    }
    std::span<const double> movie_posterior(int m) const {
        return {movie_posteriors.data() + static_cast<std::size_t>(m) * movie_groups,
                static_cast<std::size_t>(movie_groups)};
    }
};

/// All messages start at the node priors; the kernel comes from the
/// initializer (VDVQ or uniform) inside `model`.
inline MessageState imp_init(const GroupModel& model, const ObservationSet& obs) {
    require_valid(model);
    MessageState s;
    s.user_groups = model.num_user_groups;
    s.movie_groups = model.num_movie_groups;
    s.num_edges = obs.size();
    s.y.resize(s.num_edges * s.user_groups);
    s.x.resize(s.num_edges * s.movie_groups);
    for (std::size_t e = 0; e < s.num_edges; ++e) {
        for (int u = 0; u < s.user_groups; ++u) s.y[e * s.user_groups + u] = model.user_prior[u];
        for (int v = 0; v < s.movie_groups; ++v) s.x[e * s.movie_groups + v] = model.movie_prior[v];
    }
    return s;
}

namespace detail {

// Extrinsic products via renormalized prefix/suffix arrays: message excluding
// edge j is prefix[j] * suffix[j+1], where prefix[0] is the anchor prior.
// Renormalizing every partial product keeps any degree away from underflow.
struct ExtrinsicScratch {
    Vec factors;   // degree x g
    Vec prefix;    // (degree+1) x g
    Vec suffix;    // (degree+1) x g
};

inline void extrinsic_products(std::span<const double> anchor, int g, int degree, ExtrinsicScratch& s,
                               const std::string& who) {
    s.prefix.resize(static_cast<std::size_t>(degree + 1) * g);
    s.suffix.resize(static_cast<std::size_t>(degree + 1) * g);
    for (int i = 0; i < g; ++i) s.prefix[i] = anchor[i];
    for (int j = 0; j < degree; ++j) {
        double* prev = s.prefix.data() + static_cast<std::size_t>(j) * g;
        double* next = prev + g;
        const double* f = s.factors.data() + static_cast<std::size_t>(j) * g;
        for (int i = 0; i < g; ++i) next[i] = prev[i] * f[i];
        normalize({next, static_cast<std::size_t>(g)}, who);
    }
    double* last = s.suffix.data() + static_cast<std::size_t>(degree) * g;
    for (int i = 0; i < g; ++i) last[i] = 1.0;
    for (int j = degree - 1; j >= 0; --j) {
        double* cur = s.suffix.data() + static_cast<std::size_t>(j) * g;
        const double* nxt = cur + g;
        const double* f = s.factors.data() + static_cast<std::size_t>(j) * g;
        for (int i = 0; i < g; ++i) cur[i] = nxt[i] * f[i];
        normalize({cur, static_cast<std::size_t>(g)}, who);
    }
}

}  // namespace detail

/// One flooding (Jacobi) sweep: every outgoing message is recomputed from the
/// iteration-i state only. Optional uniform damping mixes in the old message.
inline MessageState imp_iterate(const MessageState& state, const GroupModel& model,
                                const ObservationSet& obs, double damping = 0.0) {
    if (state.num_edges != obs.size()) throw ConfigError("message state does not match observation set");
    const FlooredKernel kern(model);
    const std::vector<int> ridx = edge_rating_indices(model, obs);
    const int gu = state.user_groups, gv = state.movie_groups;

    MessageState next;
    next.user_groups = gu;
    next.movie_groups = gv;
    next.num_edges = state.num_edges;
    next.iteration = state.iteration + 1;
    next.y.resize(state.y.size());
    next.x.resize(state.x.size());

    parallel_for(obs.num_users(), [&](std::size_t lo, std::size_t hi) {
        detail::ExtrinsicScratch scratch;
        for (std::size_t n = lo; n < hi; ++n) {
            auto edges = obs.edges_of_user(static_cast<int>(n));
            int d = static_cast<int>(edges.size());
            if (d == 0) continue;
            scratch.factors.resize(static_cast<std::size_t>(d) * gu);
            for (int j = 0; j < d; ++j)
                kern.fold_movie_belief(ridx[edges[j]], state.x_msg(edges[j]),
                                       {scratch.factors.data() + static_cast<std::size_t>(j) * gu,
                                        static_cast<std::size_t>(gu)});
            detail::extrinsic_products(model.user_prior, gu, d, scratch, "user " + std::to_string(n));
            for (int j = 0; j < d; ++j) {
                auto out = next.y_msg(edges[j]);
                const double* pre = scratch.prefix.data() + static_cast<std::size_t>(j) * gu;
                const double* suf = scratch.suffix.data() + static_cast<std::size_t>(j + 1) * gu;
                for (int u = 0; u < gu; ++u) out[u] = pre[u] * suf[u];
                normalize(out, "edge (" + std::to_string(n) + "," + std::to_string(obs.triple(edges[j]).movie) + ")");
                if (damping > 0.0) {
                    auto old = state.y_msg(edges[j]);
                    for (int u = 0; u < gu; ++u) out[u] = (1.0 - damping) * out[u] + damping * old[u];
                }
            }
        }
    });

    parallel_for(obs.num_movies(), [&](std::size_t lo, std::size_t hi) {
        detail::ExtrinsicScratch scratch;
        for (std::size_t m = lo; m < hi; ++m) {
            auto edges = obs.edges_of_movie(static_cast<int>(m));
            int d = static_cast<int>(edges.size());
            if (d == 0) continue;
            scratch.factors.resize(static_cast<std::size_t>(d) * gv);
            for (int j = 0; j < d; ++j)
                kern.fold_user_belief(ridx[edges[j]], state.y_msg(edges[j]),
                                      {scratch.factors.data() + static_cast<std::size_t>(j) * gv,
                                       static_cast<std::size_t>(gv)});
            detail::extrinsic_products(model.movie_prior, gv, d, scratch, "movie " + std::to_string(m));
            for (int j = 0; j < d; ++j) {
                auto out = next.x_msg(edges[j]);
                const double* pre = scratch.prefix.data() + static_cast<std::size_t>(j) * gv;
                const double* suf = scratch.suffix.data() + static_cast<std::size_t>(j + 1) * gv;
                for (int v = 0; v < gv; ++v) out[v] = pre[v] * suf[v];
                normalize(out, "edge (" + std::to_string(obs.triple(edges[j]).user) + "," + std::to_string(m) + ")");
                if (damping > 0.0) {
                    auto old = state.x_msg(edges[j]);
                    for (int v = 0; v < gv; ++v) out[v] = (1.0 - damping) * out[v] + damping * old[v];
                }
            }
        }
    });
    return next;
}

/// Node and rating posteriors from the current messages. Node posteriors use
/// the full incoming product; rating posteriors on observed pairs combine the
/// two extrinsic edge messages, and unobserved pairs fall back to the full
/// node beliefs (a zero-information edge).
inline PosteriorEstimates imp_posteriors(const MessageState& state, const GroupModel& model,
                                         const ObservationSet& obs,
                                         const std::vector<std::pair<int, int>>& query_pairs) {
    if (state.num_edges != obs.size()) throw ConfigError("message state does not match observation set");
    const FlooredKernel kern(model);
    const std::vector<int> ridx = edge_rating_indices(model, obs);
    const int gu = state.user_groups, gv = state.movie_groups;
    const int num_r = model.num_ratings();

    PosteriorEstimates post;
    post.rating_alphabet = model.rating_alphabet;
    post.user_groups = gu;
    post.movie_groups = gv;
    post.pairs = query_pairs;
    post.user_posteriors.resize(static_cast<std::size_t>(obs.num_users()) * gu);
    post.movie_posteriors.resize(static_cast<std::size_t>(obs.num_movies()) * gv);
    post.rating_posteriors.resize(query_pairs.size() * num_r);

    parallel_for(obs.num_users(), [&](std::size_t lo, std::size_t hi) {
        Vec factor(gu);
        for (std::size_t n = lo; n < hi; ++n) {
            double* out = post.user_posteriors.data() + n * gu;
            for (int u = 0; u < gu; ++u) out[u] = model.user_prior[u];
            for (int e : obs.edges_of_user(static_cast<int>(n))) {
                kern.fold_movie_belief(ridx[e], state.x_msg(e), factor);
                for (int u = 0; u < gu; ++u) out[u] *= factor[u];
                normalize({out, static_cast<std::size_t>(gu)}, "user " + std::to_string(n));
            }
            normalize({out, static_cast<std::size_t>(gu)}, "user " + std::to_string(n));
        }
    });
    parallel_for(obs.num_movies(), [&](std::size_t lo, std::size_t hi) {
        Vec factor(gv);
        for (std::size_t m = lo; m < hi; ++m) {
            double* out = post.movie_posteriors.data() + m * gv;
            for (int v = 0; v < gv; ++v) out[v] = model.movie_prior[v];
            for (int e : obs.edges_of_movie(static_cast<int>(m))) {
                kern.fold_user_belief(ridx[e], state.y_msg(e), factor);
                for (int v = 0; v < gv; ++v) out[v] *= factor[v];
                normalize({out, static_cast<std::size_t>(gv)}, "movie " + std::to_string(m));
            }
            normalize({out, static_cast<std::size_t>(gv)}, "movie " + std::to_string(m));
        }
    });

    parallel_for(query_pairs.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t q = lo; q < hi; ++q) {
            auto [n, m] = query_pairs[q];
            if (n < 0 || n >= obs.num_users() || m < 0 || m >= obs.num_movies())
                throw ConfigError("query pair (" + std::to_string(n) + "," + std::to_string(m) +
                                  ") out of range");
            int e = obs.find_edge(n, m);
            std::span<const double> ub = e >= 0 ? state.y_msg(e) : post.user_posterior(n);
            std::span<const double> vb = e >= 0 ? state.x_msg(e) : post.movie_posterior(m);
            double* out = post.rating_posteriors.data() + q * num_r;
            for (int r = 0; r < num_r; ++r) {
                double s = 0.0;
                for (int u = 0; u < gu; ++u)
                    for (int v = 0; v < gv; ++v) s += ub[u] * vb[v] * kern.w(u, v, r);
                out[r] = s;
            }
            normalize({out, static_cast<std::size_t>(num_r)},
                      "rating posterior (" + std::to_string(n) + "," + std::to_string(m) + ")");
        }
    });
    return post;
}

struct ConvergenceReport {
    std::vector<double> max_change;  // per-iteration L-inf message change
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> notes;
};

struct ImpOptions {
    int max_iters = 200;
    double tol = 1e-8;
    double damping = 0.0;  // 0 disables
};

/// Runs flooding iterations until the max L-inf message change drops below
/// tol or max_iters is hit.
inline std::tuple<MessageState, PosteriorEstimates, ConvergenceReport> imp_run(
    const GroupModel& model, const ObservationSet& obs, const ImpOptions& opts = {},
    const std::vector<std::pair<int, int>>& query_pairs = {}) {
    if (opts.max_iters < 1) throw ConfigError("imp_run: max_iters must be >= 1");
    if (!(opts.tol > 0.0)) throw ConfigError("imp_run: tol must be positive");
    MessageState state = imp_init(model, obs);
    ConvergenceReport report;
    report.notes.push_back("unobserved_pairs_use_node_beliefs");
    for (int it = 0; it < opts.max_iters; ++it) {
        MessageState next = imp_iterate(state, model, obs, opts.damping);
        double change = std::max(linf_diff(next.y, state.y), linf_diff(next.x, state.x));
        report.max_change.push_back(change);
        state = std::move(next);
        if (change < opts.tol) {
            report.converged = true;
            break;
        }
    }
    report.iterations = state.iteration;
    PosteriorEstimates post = imp_posteriors(state, model, obs, query_pairs);
    return {std::move(state), std::move(post), std::move(report)};
}

}  // namespace factorcf
