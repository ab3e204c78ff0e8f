#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "factorcf/kernel_ops.hpp"
#include "factorcf/model.hpp"
#include "factorcf/parallel.hpp"
#include "factorcf/rng.hpp"

namespace factorcf {

// Node- and edge-perspective degree laws for one side of the bipartite graph.
struct DegreeDistribution {
    std::map<int, double> node;  // degree j -> Lambda_j (or Gamma_j)
    std::map<int, double> edge;  // degree j -> lambda_j = Lambda_j j / sum_k Lambda_k k

    double mean_node_degree() const {
        double s = 0.0;
        for (auto [j, p] : node) s += p * j;
        return s;
    }
};

/// Derives the edge-perspective law from a node-perspective one. Degree-0
/// mass carries no edges and is excluded.
inline std::map<int, double> edge_degree(const std::map<int, double>& node_dist) {
    double total = 0.0, mean = 0.0;
    for (auto [j, p] : node_dist) {
        if (j < 0) throw ConfigError("negative degree in distribution");
        if (!(p >= 0.0)) throw ConfigError("negative mass in degree distribution");
        total += p;
        mean += p * j;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("degree distribution does not sum to 1");
    if (!(mean > 0.0)) throw ConfigError("degree distribution has zero mean");
    std::map<int, double> edge;
    for (auto [j, p] : node_dist)
        if (j > 0 && p > 0.0) edge[j] = p * j / mean;
    return edge;
}

inline DegreeDistribution make_degree_distribution(std::map<int, double> node_dist) {
    DegreeDistribution d;
    d.edge = edge_degree(node_dist);
    d.node = std::move(node_dist);
    return d;
}

inline DegreeDistribution empirical_user_degrees(const ObservationSet& obs) {
    std::map<int, double> node;
    for (int n = 0; n < obs.num_users(); ++n) node[obs.user_degree(n)] += 1.0 / obs.num_users();
    return make_degree_distribution(std::move(node));
}

inline DegreeDistribution empirical_movie_degrees(const ObservationSet& obs) {
    std::map<int, double> node;
    for (int m = 0; m < obs.num_movies(); ++m) node[obs.movie_degree(m)] += 1.0 / obs.num_movies();
    return make_degree_distribution(std::move(node));
}

// Empirical measure of (true group, belief) message pairs on both sides.
struct MessagePopulation {
    int user_groups = 0;
    int movie_groups = 0;
    std::size_t size = 0;
    int iteration = 0;
    std::vector<int> user_true_groups;   // S
    Vec user_beliefs;                    // S x g_u
    std::vector<int> movie_true_groups;  // S
    Vec movie_beliefs;                   // S x g_v

    std::span<const double> user_belief(std::size_t s) const {
        return {user_beliefs.data() + s * user_groups, static_cast<std::size_t>(user_groups)};
    }
    std::span<const double> movie_belief(std::size_t s) const {
        return {movie_beliefs.data() + s * movie_groups, static_cast<std::size_t>(movie_groups)};
    }
};

/// Initial populations: beliefs at the priors, true groups sampled i.i.d.
inline MessagePopulation de_init(const GroupModel& model, std::size_t population_size, std::uint64_t seed) {
    require_valid(model);
    if (population_size < 1) throw ConfigError("de_init: population size must be >= 1");
    MessagePopulation pop;
    pop.user_groups = model.num_user_groups;
    pop.movie_groups = model.num_movie_groups;
    pop.size = population_size;
    pop.user_true_groups.resize(population_size);
    pop.movie_true_groups.resize(population_size);
    pop.user_beliefs.resize(population_size * pop.user_groups);
    pop.movie_beliefs.resize(population_size * pop.movie_groups);
    Rng rng = Rng::substream(seed, "de");
    for (std::size_t s = 0; s < population_size; ++s) {
        pop.user_true_groups[s] = rng.discrete(model.user_prior);
        pop.movie_true_groups[s] = rng.discrete(model.movie_prior);
        for (int u = 0; u < pop.user_groups; ++u) pop.user_beliefs[s * pop.user_groups + u] = model.user_prior[u];
        for (int v = 0; v < pop.movie_groups; ++v) pop.movie_beliefs[s * pop.movie_groups + v] = model.movie_prior[v];
    }
    return pop;
}

struct DeOptions {
    // Edge messages from a degree-d node combine d-1 incoming draws (the
    // extrinsic convention); set literal_degree to combine all d instead.
    bool literal_degree = false;
    // Ratings are drawn from generation_model's kernel when set (model
    // mismatch analysis); inference always combines with `model`.
    const GroupModel* generation_model = nullptr;
};

namespace detail {

/// Draws a degree from an edge- or node-perspective law by inverse CDF.
inline int draw_degree(const std::map<int, double>& dist, Rng& rng) {
    double u = rng.uniform01();
    double acc = 0.0;
    int last = 0;
    for (auto [j, p] : dist) {
        acc += p;
        last = j;
        if (u < acc) return j;
    }
    return last;
}

/// One combined belief: anchor * prod_j fold(belief_j, r_j), renormalizing
/// after every factor.
template <class FoldFn>
void combine_belief(std::span<const double> anchor, int g, int incoming, FoldFn&& fold,
                    std::span<double> out, Vec& scratch) {
    for (int i = 0; i < g; ++i) out[i] = anchor[i];
    for (int j = 0; j < incoming; ++j) {
        fold(j, scratch);
        for (int i = 0; i < g; ++i) out[i] *= scratch[i];
        normalize(out, "population belief");
    }
}

}  // namespace detail

/// One population-dynamics sweep of the DE recursion: each new sample draws a
/// true group from the prior, an edge degree from the opposite side's traffic,
/// incoming samples from the iteration-i population, ratings from the
/// (generation) kernel, and combines them through the (inference) kernel.
inline MessagePopulation de_iterate(const MessagePopulation& pop, const GroupModel& model,
                                    const DegreeDistribution& user_degrees,
                                    const DegreeDistribution& movie_degrees, std::uint64_t seed,
                                    const DeOptions& opts = {}) {
    const FlooredKernel infer(model);
    const GroupModel& gen = opts.generation_model ? *opts.generation_model : model;
    if (gen.num_user_groups != model.num_user_groups || gen.num_movie_groups != model.num_movie_groups ||
        gen.rating_alphabet != model.rating_alphabet)
        throw ConfigError("generation model shape does not match inference model");
    const int gu = pop.user_groups, gv = pop.movie_groups;

    MessagePopulation next;
    next.user_groups = gu;
    next.movie_groups = gv;
    next.size = pop.size;
    next.iteration = pop.iteration + 1;
    next.user_true_groups.resize(pop.size);
    next.movie_true_groups.resize(pop.size);
    next.user_beliefs.resize(pop.size * gu);
    next.movie_beliefs.resize(pop.size * gv);

    const std::uint64_t iter_tag = static_cast<std::uint64_t>(next.iteration);

    // user side: combine movie-side draws through G
    parallel_for(pop.size, [&](std::size_t lo, std::size_t hi) {
        Vec scratch(gu);
        for (std::size_t s = lo; s < hi; ++s) {
            Rng rng(mix_seed(seed, iter_tag * 2, s));
            int u = rng.discrete(model.user_prior);
            next.user_true_groups[s] = u;
            int d = detail::draw_degree(user_degrees.edge, rng);
            int incoming = opts.literal_degree ? d : d - 1;
            std::span<double> out{next.user_beliefs.data() + s * gu, static_cast<std::size_t>(gu)};
            detail::combine_belief(
                model.user_prior, gu, incoming,
                [&](int, Vec& factor) {
                    std::size_t k = rng.uniform_int(pop.size);
                    int v_true = pop.movie_true_groups[k];
                    int r = rng.discrete(gen.kernel_row(u, v_true));
                    infer.fold_movie_belief(r, pop.movie_belief(k), factor);
                },
                out, scratch);
        }
    });

    // movie side: combine user-side draws through F
    parallel_for(pop.size, [&](std::size_t lo, std::size_t hi) {
        Vec scratch(gv);
        for (std::size_t s = lo; s < hi; ++s) {
            Rng rng(mix_seed(seed, iter_tag * 2 + 1, s));
            int v = rng.discrete(model.movie_prior);
            next.movie_true_groups[s] = v;
            int d = detail::draw_degree(movie_degrees.edge, rng);
            int incoming = opts.literal_degree ? d : d - 1;
            std::span<double> out{next.movie_beliefs.data() + s * gv, static_cast<std::size_t>(gv)};
            detail::combine_belief(
                model.movie_prior, gv, incoming,
                [&](int, Vec& factor) {
                    std::size_t k = rng.uniform_int(pop.size);
                    int u_true = pop.user_true_groups[k];
                    int r = rng.discrete(gen.kernel_row(u_true, v));
                    infer.fold_user_belief(r, pop.user_belief(k), factor);
                },
                out, scratch);
        }
    });
    return next;
}

struct SideMetrics {
    double mean_true_belief = 0.0;
    double map_error = 0.0;
    std::vector<double> entropy_histogram;  // 20 bins over [0, log g]
};

struct DeMetrics {
    SideMetrics user;
    SideMetrics movie;
    int iteration = 0;
};

namespace detail {

inline SideMetrics side_metrics(const std::vector<int>& truth, const Vec& beliefs, int g,
                                std::size_t count) {
    SideMetrics m;
    m.entropy_histogram.assign(20, 0.0);
    double max_h = g > 1 ? std::log(static_cast<double>(g)) : 1.0;
    for (std::size_t s = 0; s < count; ++s) {
        std::span<const double> b{beliefs.data() + s * g, static_cast<std::size_t>(g)};
        m.mean_true_belief += b[truth[s]];
        if (argmax_index(b) != truth[s]) m.map_error += 1.0;
        double h = entropy(b);
        int bin = std::min(19, static_cast<int>(h / max_h * 20.0));
        m.entropy_histogram[bin] += 1.0;
    }
    m.mean_true_belief /= static_cast<double>(count);
    m.map_error /= static_cast<double>(count);
    return m;
}

}  // namespace detail

inline DeMetrics de_metrics(const MessagePopulation& pop) {
    DeMetrics m;
    m.iteration = pop.iteration;
    m.user = detail::side_metrics(pop.user_true_groups, pop.user_beliefs, pop.user_groups, pop.size);
    m.movie = detail::side_metrics(pop.movie_true_groups, pop.movie_beliefs, pop.movie_groups, pop.size);
    return m;
}

struct NodeBeliefStats {
    double mean_true_belief = 0.0;
    double std_error = 0.0;
};

/// Node-posterior statistic: a fresh node draws its degree from the
/// node-perspective law and combines that many incoming messages (no
/// exclusion). Predicts the mean true-group belief of full node posteriors.
inline std::pair<NodeBeliefStats, NodeBeliefStats> de_node_statistics(
    const MessagePopulation& pop, const GroupModel& model, const DegreeDistribution& user_degrees,
    const DegreeDistribution& movie_degrees, std::size_t samples, std::uint64_t seed,
    const DeOptions& opts = {}) {
    const FlooredKernel infer(model);
    const GroupModel& gen = opts.generation_model ? *opts.generation_model : model;
    const int gu = pop.user_groups, gv = pop.movie_groups;

    Vec user_vals(samples), movie_vals(samples);
    parallel_for(samples, [&](std::size_t lo, std::size_t hi) {
        Vec belief(std::max(gu, gv)), scratch(std::max(gu, gv));
        for (std::size_t s = lo; s < hi; ++s) {
            {
                Rng rng(mix_seed(seed, 101, s));
                int u = rng.discrete(model.user_prior);
                int d = detail::draw_degree(user_degrees.node, rng);
                std::span<double> out{belief.data(), static_cast<std::size_t>(gu)};
                detail::combine_belief(
                    model.user_prior, gu, d,
                    [&](int, Vec& factor) {
                        std::size_t k = rng.uniform_int(pop.size);
                        int r = rng.discrete(gen.kernel_row(u, pop.movie_true_groups[k]));
                        infer.fold_movie_belief(r, pop.movie_belief(k), factor);
                    },
                    out, scratch);
                user_vals[s] = out[u];
            }
            {
                Rng rng(mix_seed(seed, 102, s));
                int v = rng.discrete(model.movie_prior);
                int d = detail::draw_degree(movie_degrees.node, rng);
                std::span<double> out{belief.data(), static_cast<std::size_t>(gv)};
                detail::combine_belief(
                    model.movie_prior, gv, d,
                    [&](int, Vec& factor) {
                        std::size_t k = rng.uniform_int(pop.size);
                        int r = rng.discrete(gen.kernel_row(pop.user_true_groups[k], v));
                        infer.fold_user_belief(r, pop.user_belief(k), factor);
                    },
                    out, scratch);
                movie_vals[s] = out[v];
            }
        }
    });
    auto stats = [&](const Vec& vals) {
        NodeBeliefStats st;
        for (double x : vals) st.mean_true_belief += x;
        st.mean_true_belief /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double x : vals) var += (x - st.mean_true_belief) * (x - st.mean_true_belief);
        var /= static_cast<double>(vals.size() > 1 ? vals.size() - 1 : 1);
        st.std_error = std::sqrt(var / static_cast<double>(vals.size()));
        return st;
    };
    return {stats(user_vals), stats(movie_vals)};
}

struct TreeCondition {
    double lhs = 0.0;
    bool holds = false;
    double beta = 0.0;  // M / N
};

/// Tree-neighborhood check: (2l+1) log d / log N < 1 - delta.
inline TreeCondition tree_condition(double num_users, double num_movies, int max_degree, int depth,
                                    double delta) {
    if (!(num_users > 1)) throw ConfigError("tree_condition: N must exceed 1");
    if (max_degree < 2) throw ConfigError("tree_condition: d must be >= 2");
    if (depth < 0) throw ConfigError("tree_condition: l must be >= 0");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("tree_condition: delta must lie in (0,1)");
    TreeCondition out;
    out.lhs = (2.0 * depth + 1.0) * std::log(static_cast<double>(max_degree)) / std::log(num_users);
    out.holds = out.lhs < 1.0 - delta;
    out.beta = num_movies / num_users;
    return out;
}

}  // namespace factorcf
