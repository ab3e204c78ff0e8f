#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "factorcf/model.hpp"
#include "factorcf/parallel.hpp"
#include "factorcf/rng.hpp"

namespace factorcf {

// One side of the clustering problem as a ragged item/coordinate view:
// users over movie coordinates, or movies over user coordinates.
struct RaggedRatings {
    int num_items = 0;
    int dim = 0;
    std::vector<int> offsets;  // num_items + 1
    std::vector<int> coords;
    std::vector<double> values;

    std::span<const int> coords_of(int i) const {
        return {coords.data() + offsets[i], static_cast<std::size_t>(offsets[i + 1] - offsets[i])};
    }
    std::span<const double> values_of(int i) const {
        return {values.data() + offsets[i], static_cast<std::size_t>(offsets[i + 1] - offsets[i])};
    }
};

inline RaggedRatings user_view(const ObservationSet& obs) {
    RaggedRatings r;
    r.num_items = obs.num_users();
    r.dim = obs.num_movies();
    r.offsets.resize(r.num_items + 1, 0);
    r.coords.reserve(obs.size());
    r.values.reserve(obs.size());
    for (int n = 0; n < r.num_items; ++n) {
        r.offsets[n + 1] = r.offsets[n] + obs.user_degree(n);
        for (int e : obs.edges_of_user(n)) {
            r.coords.push_back(obs.triple(e).movie);
            r.values.push_back(obs.triple(e).rating);
        }
    }
    return r;
}

inline RaggedRatings movie_view(const ObservationSet& obs) {
    RaggedRatings r;
    r.num_items = obs.num_movies();
    r.dim = obs.num_users();
    r.offsets.resize(r.num_items + 1, 0);
    r.coords.reserve(obs.size());
    r.values.reserve(obs.size());
    for (int m = 0; m < r.num_items; ++m) {
        r.offsets[m + 1] = r.offsets[m] + obs.movie_degree(m);
        for (int e : obs.edges_of_movie(m)) {
            r.coords.push_back(obs.triple(e).user);
            r.values.push_back(obs.triple(e).rating);
        }
    }
    return r;
}

// Codebook of critics: synthetic raters with a value for every coordinate.
struct Codebook {
    int dim = 0;
    int stage = 0;  // splitting stage i
    int sweep = 0;  // k-means sweep j within the stage
    std::vector<Vec> critics;

    int size() const { return static_cast<int>(critics.size()); }
};

struct SoftAssignment {
    double beta = 1.0;
    std::vector<Vec> pi;  // per item, over critics

    int num_critics() const { return pi.empty() ? 0 : static_cast<int>(pi[0].size()); }
};

/// Step I: the single starting critic is the per-coordinate average value;
/// coordinates nobody rated get the global mean.
inline Codebook vdvq_init(const RaggedRatings& data) {
    if (data.values.empty()) throw DataError("vdvq_init: empty observation set");
    Codebook cb;
    cb.dim = data.dim;
    Vec sums(data.dim, 0.0);
    std::vector<int> counts(data.dim, 0);
    double global_sum = 0.0;
    for (std::size_t k = 0; k < data.values.size(); ++k) {
        sums[data.coords[k]] += data.values[k];
        ++counts[data.coords[k]];
        global_sum += data.values[k];
    }
    double global_mean = global_sum / static_cast<double>(data.values.size());
    Vec critic(data.dim);
    for (int c = 0; c < data.dim; ++c)
        critic[c] = counts[c] > 0 ? sums[c] / counts[c] : global_mean;
    cb.critics.push_back(std::move(critic));
    return cb;
}

/// Step II: duplicate every critic; copies get i.i.d. gaussian perturbations
/// of the given scale, originals are preserved exactly.
inline Codebook gla_split(const Codebook& cb, double noise_sd, Rng& rng) {
    if (noise_sd < 0) throw ConfigError("gla_split: negative noise scale");
    Codebook out = cb;
    out.stage = cb.stage + 1;
    out.sweep = 0;
    for (const Vec& c : cb.critics) {
        Vec copy = c;
        if (noise_sd > 0)
            for (double& x : copy) x += noise_sd * rng.gaussian();
        out.critics.push_back(std::move(copy));
    }
    return out;
}

inline Codebook gla_split(const Codebook& cb, double noise_sd, std::uint64_t seed) {
    Rng rng = Rng::substream(seed, "split-noise");
    return gla_split(cb, noise_sd, rng);
}

namespace detail {

/// RMS distance between an item and a critic over the item's observed
/// coordinates only.
inline double item_critic_distance(const RaggedRatings& data, int item, const Vec& critic) {
    auto cs = data.coords_of(item);
    auto vs = data.values_of(item);
    if (cs.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < cs.size(); ++k) {
        double d = critic[cs[k]] - vs[k];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(cs.size()));
}

}  // namespace detail

/// Step III: one soft k-means sweep. Assignments pi(u) follow a softmax of
/// -beta * distance; critics move to the assignment-weighted mean of the
/// ratings on each coordinate (centroid rule on shared elements). A critic
/// that collects zero total mass is re-seeded next to the heaviest one.
inline std::pair<Codebook, SoftAssignment> soft_kmeans_sweep(const Codebook& cb, const RaggedRatings& data,
                                                             double beta) {
    if (!(beta > 0)) throw ConfigError("soft_kmeans_sweep: beta must be positive");
    bool any = false;
    for (int i = 0; i < data.num_items; ++i) any |= data.offsets[i + 1] > data.offsets[i];
    if (!any) throw DataError("soft_kmeans_sweep: no item has observations");

    const int g = cb.size();
    SoftAssignment assign;
    assign.beta = beta;
    assign.pi.assign(data.num_items, Vec(g, 0.0));

    parallel_for(data.num_items, [&](std::size_t lo, std::size_t hi) {
        Vec dist(g);
        for (std::size_t i = lo; i < hi; ++i) {
            if (data.offsets[i + 1] == data.offsets[i]) {
                for (int u = 0; u < g; ++u) assign.pi[i][u] = 1.0 / g;  // nothing shared: uniform
                continue;
            }
            double dmin = 0.0;
            for (int u = 0; u < g; ++u) {
                dist[u] = detail::item_critic_distance(data, static_cast<int>(i), cb.critics[u]);
                if (u == 0 || dist[u] < dmin) dmin = dist[u];
            }
            double total = 0.0;
            for (int u = 0; u < g; ++u) {
                assign.pi[i][u] = std::exp(-beta * (dist[u] - dmin));
                total += assign.pi[i][u];
            }
            for (int u = 0; u < g; ++u) assign.pi[i][u] /= total;
        }
    });

    Codebook next = cb;
    next.sweep = cb.sweep + 1;
    Vec mass(g, 0.0);
    for (int i = 0; i < data.num_items; ++i)
        for (int u = 0; u < g; ++u) mass[u] += assign.pi[i][u];

    parallel_for(g, [&](std::size_t lo, std::size_t hi) {
        Vec wsum(data.dim), wtot(data.dim);
        for (std::size_t u = lo; u < hi; ++u) {
            std::fill(wsum.begin(), wsum.end(), 0.0);
            std::fill(wtot.begin(), wtot.end(), 0.0);
            for (int i = 0; i < data.num_items; ++i) {
                double p = assign.pi[i][u];
                if (p == 0.0) continue;
                auto cs = data.coords_of(i);
                auto vs = data.values_of(i);
                for (std::size_t k = 0; k < cs.size(); ++k) {
                    wsum[cs[k]] += p * vs[k];
                    wtot[cs[k]] += p;
                }
            }
            for (int c = 0; c < data.dim; ++c)
                if (wtot[c] > 0.0) next.critics[u][c] = wsum[c] / wtot[c];
            // else: keep the previous critic value on unrated coordinates
        }
    });

    // re-seed starved critics by splitting the heaviest one (deterministic
    // alternating offset, scaled to the data spread)
    int heaviest = argmax_index(mass);
    double lo_v = *std::min_element(data.values.begin(), data.values.end());
    double hi_v = *std::max_element(data.values.begin(), data.values.end());
    double offset = 1e-6 * std::max(1.0, hi_v - lo_v);
    for (int u = 0; u < g; ++u) {
        if (mass[u] > 0.0) continue;
        next.critics[u] = next.critics[heaviest];
        for (int c = 0; c < data.dim; ++c) next.critics[u][c] += (c % 2 == 0 ? offset : -offset);
    }
    return {std::move(next), std::move(assign)};
}

/// Step V: soft co-occurrence frequencies of ratings per group pair. Cells
/// with zero mass become uniform rows and are reported.
struct KernelEstimate {
    Vec kernel;  // [u][v][r]
    std::vector<std::pair<int, int>> empty_cells;
};

inline KernelEstimate estimate_w(const SoftAssignment& users, const SoftAssignment& movies,
                                 const ObservationSet& obs, const std::vector<int>& alphabet) {
    const int gu = users.num_critics();
    const int gv = movies.num_critics();
    const int num_r = static_cast<int>(alphabet.size());
    if (static_cast<int>(users.pi.size()) != obs.num_users() ||
        static_cast<int>(movies.pi.size()) != obs.num_movies())
        throw ConfigError("estimate_w: assignments do not cover the observation set");
    GroupModel probe;
    probe.rating_alphabet = alphabet;
    KernelEstimate est;
    est.kernel.assign(static_cast<std::size_t>(gu) * gv * num_r, 0.0);
    for (const Triple& t : obs.triples()) {
        int r = probe.rating_index(t.rating);
        if (r < 0) throw DataError("rating " + std::to_string(t.rating) + " outside the alphabet");
        for (int u = 0; u < gu; ++u) {
            double pu = users.pi[t.user][u];
            for (int v = 0; v < gv; ++v)
                est.kernel[(static_cast<std::size_t>(u) * gv + v) * num_r + r] += pu * movies.pi[t.movie][v];
        }
    }
    for (int u = 0; u < gu; ++u)
        for (int v = 0; v < gv; ++v) {
            double* row = est.kernel.data() + (static_cast<std::size_t>(u) * gv + v) * num_r;
            double s = 0.0;
            for (int r = 0; r < num_r; ++r) s += row[r];
            if (s > 0.0) {
                for (int r = 0; r < num_r; ++r) row[r] /= s;
            } else {
                for (int r = 0; r < num_r; ++r) row[r] = 1.0 / num_r;
                est.empty_cells.emplace_back(u, v);
            }
        }
    return est;
}

struct InitBeliefs {
    std::vector<Vec> node_beliefs;
    Vec prior;  // normalized average of the beliefs
};

/// Per-node belief puts epsilon on the MAP critic and spreads the rest
/// uniformly; the global prior averages the beliefs.
inline InitBeliefs priors_from_assignment(const SoftAssignment& assign, double epsilon) {
    const int g = assign.num_critics();
    if (g < 1) throw ConfigError("priors_from_assignment: empty assignment");
    if (g > 1 && !(epsilon > 1.0 / g && epsilon <= 1.0))
        throw ConfigError("priors_from_assignment: epsilon must lie in (1/g, 1]");
    InitBeliefs out;
    out.node_beliefs.resize(assign.pi.size());
    out.prior.assign(g, 0.0);
    for (std::size_t i = 0; i < assign.pi.size(); ++i) {
        Vec belief(g, g > 1 ? (1.0 - epsilon) / (g - 1) : 0.0);
        belief[argmax_index(assign.pi[i])] = g > 1 ? epsilon : 1.0;
        for (int u = 0; u < g; ++u) out.prior[u] += belief[u];
        out.node_beliefs[i] = std::move(belief);
    }
    normalize(out.prior, "averaged VDVQ beliefs");
    return out;
}

struct VdvqOptions {
    double beta = 8.0;
    int sweeps = 10;  // J
    double noise_sd = 0.01;
    double epsilon = 0.9;
};

struct VdvqReport {
    std::vector<std::pair<int, int>> empty_kernel_cells;
    int merged_users = 0;
    int merged_movies = 0;
};

struct VdvqResult {
    GroupModel model;
    SoftAssignment user_assignment;
    SoftAssignment movie_assignment;
    std::vector<Vec> user_beliefs;
    std::vector<Vec> movie_beliefs;
    VdvqReport report;
};

namespace detail {

/// Merges the two lightest critics (mass-weighted average) until `target`
/// remain, then runs one refresh sweep.
inline std::pair<Codebook, SoftAssignment> trim_codebook(Codebook cb, SoftAssignment assign,
                                                         const RaggedRatings& data, double beta,
                                                         int target, int& merges) {
    while (cb.size() > target) {
        Vec mass(cb.size(), 0.0);
        for (const Vec& pi : assign.pi)
            for (int u = 0; u < cb.size(); ++u) mass[u] += pi[u];
        int a = 0, b = 1;
        if (mass[b] < mass[a]) std::swap(a, b);
        for (int u = 2; u < cb.size(); ++u) {
            if (mass[u] < mass[a]) {
                b = a;
                a = u;
            } else if (mass[u] < mass[b]) {
                b = u;
            }
        }
        if (b < a) std::swap(a, b);  // keep the smaller index
        double wa = mass[a], wb = mass[b];
        double tot = wa + wb > 0 ? wa + wb : 1.0;
        for (int c = 0; c < cb.dim; ++c)
            cb.critics[a][c] = (wa * cb.critics[a][c] + wb * cb.critics[b][c]) / tot;
        cb.critics.erase(cb.critics.begin() + b);
        ++merges;
        std::tie(cb, assign) = soft_kmeans_sweep(cb, data, beta);
    }
    return {std::move(cb), std::move(assign)};
}

inline std::pair<Codebook, SoftAssignment> vdvq_side(const RaggedRatings& data, int groups,
                                                     const VdvqOptions& opts, std::uint64_t seed,
                                                     int& merges) {
    Codebook cb = vdvq_init(data);
    Rng noise = Rng::substream(seed, "split-noise");
    SoftAssignment assign;
    std::tie(cb, assign) = soft_kmeans_sweep(cb, data, opts.beta);
    while (cb.size() < groups) {
        cb = gla_split(cb, opts.noise_sd, noise);
        for (int j = 0; j < opts.sweeps; ++j) std::tie(cb, assign) = soft_kmeans_sweep(cb, data, opts.beta);
    }
    return trim_codebook(std::move(cb), std::move(assign), data, opts.beta, groups, merges);
}

}  // namespace detail

/// Full Algorithm: GLA splitting with soft k-means on both sides, kernel and
/// prior estimation. Deterministic given the seed.
inline VdvqResult vdvq_pipeline(const ObservationSet& obs, int user_groups, int movie_groups,
                                const std::vector<int>& alphabet, const VdvqOptions& opts,
                                std::uint64_t seed) {
    if (user_groups < 1 || movie_groups < 1) throw ConfigError("vdvq_pipeline: group counts must be >= 1");
    VdvqResult res;
    RaggedRatings users = user_view(obs);
    RaggedRatings movies = movie_view(obs);
    Codebook ucb, mcb;
    std::tie(ucb, res.user_assignment) =
        detail::vdvq_side(users, user_groups, opts, mix_seed(seed, 1), res.report.merged_users);
    std::tie(mcb, res.movie_assignment) =
        detail::vdvq_side(movies, movie_groups, opts, mix_seed(seed, 2), res.report.merged_movies);

    KernelEstimate kernel = estimate_w(res.user_assignment, res.movie_assignment, obs, alphabet);
    res.report.empty_kernel_cells = std::move(kernel.empty_cells);

    InitBeliefs ub = priors_from_assignment(res.user_assignment, opts.epsilon);
    InitBeliefs mb = priors_from_assignment(res.movie_assignment, opts.epsilon);
    res.user_beliefs = std::move(ub.node_beliefs);
    res.movie_beliefs = std::move(mb.node_beliefs);

    res.model.num_user_groups = user_groups;
    res.model.num_movie_groups = movie_groups;
    res.model.rating_alphabet = alphabet;
    res.model.user_prior = std::move(ub.prior);
    res.model.movie_prior = std::move(mb.prior);
    res.model.kernel = std::move(kernel.kernel);
    require_valid(res.model);
    return res;
}

}  // namespace factorcf
