#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "factorcf/em.hpp"
#include "factorcf/imp.hpp"
#include "factorcf/init.hpp"
#include "factorcf/model.hpp"
#include "factorcf/rng.hpp"

namespace factorcf {

struct Prediction {
    int user;
    int movie;
    double value;
};

struct PredictionSet {
    std::string estimator;  // r1 | r2 | map | avg
    std::vector<Prediction> entries;
};

/// Conditional-mean estimate: r1 = sum_r r * p(r).
inline PredictionSet predict_r1(const PosteriorEstimates& post) {
    if (post.rating_posteriors.size() != post.pairs.size() * post.rating_alphabet.size())
        throw ConfigError("predict_r1: posterior table does not cover the queried pairs");
    PredictionSet out;
    out.estimator = "r1";
    out.entries.reserve(post.pairs.size());
    for (std::size_t i = 0; i < post.pairs.size(); ++i) {
        auto p = post.rating_posterior(i);
        double mean = 0.0;
        for (std::size_t r = 0; r < post.rating_alphabet.size(); ++r)
            mean += post.rating_alphabet[r] * p[r];
        out.entries.push_back({post.pairs[i].first, post.pairs[i].second, mean});
    }
    return out;
}

/// MAP group estimates; ties break toward the smallest index.
inline std::pair<std::vector<int>, std::vector<int>> map_groups(const PosteriorEstimates& post) {
    std::vector<int> users(post.user_posteriors.size() / post.user_groups);
    std::vector<int> movies(post.movie_posteriors.size() / post.movie_groups);
    for (std::size_t n = 0; n < users.size(); ++n) users[n] = argmax_index(post.user_posterior(static_cast<int>(n)));
    for (std::size_t m = 0; m < movies.size(); ++m) movies[m] = argmax_index(post.movie_posterior(static_cast<int>(m)));
    return {std::move(users), std::move(movies)};
}

/// Hard-decision estimate: r2 = sum_r r * w(r | MAP user group, MAP movie group).
inline PredictionSet predict_r2(const std::vector<int>& user_groups, const std::vector<int>& movie_groups,
                                const GroupModel& model, const std::vector<std::pair<int, int>>& pairs) {
    PredictionSet out;
    out.estimator = "r2";
    out.entries.reserve(pairs.size());
    for (auto [n, m] : pairs) {
        if (n < 0 || n >= static_cast<int>(user_groups.size()) || m < 0 ||
            m >= static_cast<int>(movie_groups.size()))
            throw ConfigError("predict_r2: pair out of range");
        auto row = model.kernel_row(user_groups[n], movie_groups[m]);
        double mean = 0.0;
        for (int r = 0; r < model.num_ratings(); ++r) mean += model.rating_alphabet[r] * row[r];
        out.entries.push_back({n, m, mean});
    }
    return out;
}

/// Root mean squared prediction error against the ratings in `truth`. Every
/// predicted pair must be present there.
inline double rmse(const PredictionSet& pred, const ObservationSet& truth) {
    if (pred.entries.empty()) throw ConfigError("rmse: no predictions");
    double s = 0.0;
    for (const Prediction& p : pred.entries) {
        int e = truth.find_edge(p.user, p.movie);
        if (e < 0)
            throw ConfigError("rmse: pair (" + std::to_string(p.user) + "," + std::to_string(p.movie) +
                              ") has no true rating");
        double d = p.value - truth.triple(e).rating;
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.entries.size()));
}

/// Per-movie training mean as the prediction; unrated movies fall back to the
/// global training mean.
inline PredictionSet movie_average_baseline(const ObservationSet& train,
                                            const std::vector<std::pair<int, int>>& pairs) {
    if (train.size() == 0) throw DataError("movie_average_baseline: empty training set");
    Vec sums(train.num_movies(), 0.0);
    std::vector<int> counts(train.num_movies(), 0);
    double global = 0.0;
    for (const Triple& t : train.triples()) {
        sums[t.movie] += t.rating;
        ++counts[t.movie];
        global += t.rating;
    }
    global /= static_cast<double>(train.size());
    PredictionSet out;
    out.estimator = "avg";
    out.entries.reserve(pairs.size());
    for (auto [n, m] : pairs) {
        double v = (m >= 0 && m < train.num_movies() && counts[m] > 0) ? sums[m] / counts[m] : global;
        out.entries.push_back({n, m, v});
    }
    return out;
}

/// Conditional-mean prediction with the true groups revealed: the analytic
/// floor for synthetic sweeps.
inline PredictionSet known_group_predictions(const GroupModel& truth_model, const SyntheticTruth& truth,
                                             const std::vector<std::pair<int, int>>& pairs) {
    PredictionSet out;
    out.estimator = "r1";
    out.entries.reserve(pairs.size());
    for (auto [n, m] : pairs) {
        auto row = truth_model.kernel_row(truth.user_groups[n], truth.movie_groups[m]);
        double mean = 0.0;
        for (int r = 0; r < truth_model.num_ratings(); ++r) mean += truth_model.rating_alphabet[r] * row[r];
        out.entries.push_back({n, m, mean});
    }
    return out;
}

/// Splits off `count` observations into a validation set, uniformly at
/// random; deterministic per seed.
inline std::pair<ObservationSet, ObservationSet> hide_validation(const ObservationSet& obs,
                                                                 std::size_t count, std::uint64_t seed) {
    if (count >= obs.size())
        throw ConfigError("hide_validation: cannot hide " + std::to_string(count) + " of " +
                          std::to_string(obs.size()) + " observations");
    std::vector<std::size_t> order(obs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::substream(seed, "validation");
    rng.shuffle(order);
    std::vector<bool> hidden(obs.size(), false);
    for (std::size_t i = 0; i < count; ++i) hidden[order[i]] = true;
    std::vector<Triple> train, val;
    train.reserve(obs.size() - count);
    val.reserve(count);
    for (std::size_t e = 0; e < obs.size(); ++e)
        (hidden[e] ? val : train).push_back(obs.triple(e));
    return {ObservationSet(obs.num_users(), obs.num_movies(), std::move(train)),
            ObservationSet(obs.num_users(), obs.num_movies(), std::move(val))};
}

/// Thins a training set to an average of `avg_per_user` observations per user
/// by uniform random removal.
inline ObservationSet subsample_to_density(const ObservationSet& train, double avg_per_user,
                                           std::uint64_t seed) {
    std::size_t keep = static_cast<std::size_t>(std::llround(avg_per_user * train.num_users()));
    if (keep > train.size())
        throw ConfigError("subsample: target density " + std::to_string(avg_per_user) +
                          " needs " + std::to_string(keep) + " observations, have " +
                          std::to_string(train.size()));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::substream(seed, "subsample");
    rng.shuffle(order);
    order.resize(keep);
    std::sort(order.begin(), order.end());
    std::vector<Triple> kept;
    kept.reserve(keep);
    for (std::size_t e : order) kept.push_back(train.triple(e));
    return ObservationSet(train.num_users(), train.num_movies(), std::move(kept));
}

// ---------------------------------------------------------------------------
// training drivers
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string algorithm = "imp";  // imp | em
    std::string init = "vdvq";      // uniform | vdvq
    int user_groups = 2;
    int movie_groups = 2;
    std::vector<int> alphabet = {1, 2, 3, 4, 5};
    ImpOptions imp;
    EmOptions em;
    VdvqOptions vdvq;
    std::uint64_t seed = 1;
};

struct TrainOutput {
    GroupModel model;  // the init model for imp, the learned parameters for em
    PosteriorEstimates posteriors;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;  // max message change (imp) or NLL (em)
    std::string trace_kind;
};

inline TrainOutput train(const ObservationSet& obs, const TrainOptions& opts,
                         const std::vector<std::pair<int, int>>& query_pairs) {
    GroupModel init_model;
    std::vector<Vec> user_beliefs, movie_beliefs;
    if (opts.init == "vdvq") {
        VdvqResult vdvq = vdvq_pipeline(obs, opts.user_groups, opts.movie_groups, opts.alphabet,
                                        opts.vdvq, substream_seed(opts.seed, "init"));
        init_model = std::move(vdvq.model);
        user_beliefs = std::move(vdvq.user_beliefs);
        movie_beliefs = std::move(vdvq.movie_beliefs);
    } else if (opts.init == "uniform") {
        init_model = GroupModel::uniform(opts.user_groups, opts.movie_groups, opts.alphabet);
    } else {
        throw ConfigError("unknown init method '" + opts.init + "'");
    }

    TrainOutput out;
    if (opts.algorithm == "imp") {
        auto [state, post, report] = imp_run(init_model, obs, opts.imp, query_pairs);
        out.model = std::move(init_model);
        out.posteriors = std::move(post);
        out.iterations = report.iterations;
        out.converged = report.converged;
        out.trace = std::move(report.max_change);
        out.trace_kind = "max_change";
    } else if (opts.algorithm == "em") {
        EmState st = user_beliefs.empty() ? em_init(init_model, obs)
                                          : em_init(user_beliefs, movie_beliefs, init_model);
        auto [state, post, trace] = em_run(st, obs, opts.em, query_pairs);
        out.model = state.as_model();
        out.posteriors = std::move(post);
        out.iterations = trace.iterations;
        out.converged = trace.converged;
        out.trace = std::move(trace.nll);
        out.trace_kind = "nll";
    } else {
        throw ConfigError("unknown algorithm '" + opts.algorithm + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// cold-start sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    double density;
    std::string alg;
    std::string estimator;
    std::uint64_t seed;
    double rmse_value;
    int iterations;
    std::size_t cold_pairs;  // validation pairs with an unseen user or movie
};

struct SweepResult {
    std::vector<SweepCell> rows;
    std::map<std::string, std::string> metadata;
};

struct SweepOptions {
    std::vector<double> densities;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> algorithms;  // imp, em, movie_avg
    std::size_t validation_count = 1000;
    TrainOptions train;
    // when both set, a known_groups floor row is added per cell
    const GroupModel* truth_model = nullptr;
    const SyntheticTruth* truth = nullptr;
};

/// The cold-start protocol: per seed, hide a fixed validation set, thin the
/// training data to each target density, train every learner and score RMSE
/// on the same validation pairs.
inline SweepResult cold_start_sweep(const ObservationSet& full, const SweepOptions& opts) {
    SweepResult result;
    result.metadata["subsampling"] = "uniform_without_replacement";
    result.metadata["validation_count"] = std::to_string(opts.validation_count);
    result.metadata["g_u"] = std::to_string(opts.train.user_groups);
    result.metadata["g_v"] = std::to_string(opts.train.movie_groups);
    result.metadata["init"] = opts.train.init;

    for (std::uint64_t seed : opts.seeds) {
        auto [train_full, validation] = hide_validation(full, opts.validation_count, seed);
        std::vector<std::pair<int, int>> val_pairs;
        val_pairs.reserve(validation.size());
        for (const Triple& t : validation.triples()) val_pairs.emplace_back(t.user, t.movie);

        for (double density : opts.densities) {
            ObservationSet train_set = subsample_to_density(train_full, density, mix_seed(seed, static_cast<std::uint64_t>(density * 1000)));
            std::size_t cold = 0;
            for (auto [n, m] : val_pairs)
                if (train_set.user_degree(n) == 0 || train_set.movie_degree(m) == 0) ++cold;

            for (const std::string& alg : opts.algorithms) {
                SweepCell cell{density, alg, "r1", seed, 0.0, 0, cold};
                if (alg == "movie_avg") {
                    cell.estimator = "avg";
                    cell.rmse_value = rmse(movie_average_baseline(train_set, val_pairs), validation);
                } else {
                    TrainOptions topts = opts.train;
                    topts.algorithm = alg;
                    topts.seed = mix_seed(seed, 7, static_cast<std::uint64_t>(density * 1000));
                    TrainOutput learned = train(train_set, topts, val_pairs);
                    cell.rmse_value = rmse(predict_r1(learned.posteriors), validation);
                    cell.iterations = learned.iterations;
                }
                result.rows.push_back(std::move(cell));
            }
            if (opts.truth_model && opts.truth) {
                SweepCell cell{density, "known_groups", "r1", seed, 0.0, 0, cold};
                cell.rmse_value =
                    rmse(known_group_predictions(*opts.truth_model, *opts.truth, val_pairs), validation);
                result.rows.push_back(std::move(cell));
            }
        }
    }
    return result;
}

}  // namespace factorcf
