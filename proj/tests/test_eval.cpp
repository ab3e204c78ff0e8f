#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "factorcf/eval.hpp"
#include "oracles.hpp"

using namespace factorcf;

namespace {

PosteriorEstimates make_posteriors(std::vector<std::pair<int, int>> pairs, std::vector<Vec> rating_rows,
                                   std::vector<int> alphabet) {
    PosteriorEstimates post;
    post.rating_alphabet = std::move(alphabet);
    post.pairs = std::move(pairs);
    for (const Vec& row : rating_rows)
        post.rating_posteriors.insert(post.rating_posteriors.end(), row.begin(), row.end());
    return post;
}

}  // namespace

TEST_CASE("r1 is the posterior mean") {
    auto post = make_posteriors({{0, 0}, {0, 1}}, {{0, 0, 0, 0, 1}, {0.5, 0, 0, 0, 0.5}}, {1, 2, 3, 4, 5});
    PredictionSet pred = predict_r1(post);
    CHECK(pred.entries[0].value == Catch::Approx(5.0));
    CHECK(pred.entries[1].value == Catch::Approx(3.0));
    CHECK(pred.estimator == "r1");
}

TEST_CASE("r1 matches a direct dot product on random posteriors") {
    Rng rng(31);
    Vec row = oracles::random_distribution(5, rng);
    auto post = make_posteriors({{2, 3}}, {row}, {1, 2, 3, 4, 5});
    double direct = 0.0;
    for (int r = 0; r < 5; ++r) direct += (r + 1) * row[r];
    CHECK(predict_r1(post).entries[0].value == Catch::Approx(direct).epsilon(1e-14));
    // always inside the alphabet's convex hull
    CHECK(predict_r1(post).entries[0].value >= 1.0);
    CHECK(predict_r1(post).entries[0].value <= 5.0);
}

TEST_CASE("map groups break ties toward the smallest index") {
    PosteriorEstimates post;
    post.user_groups = 3;
    post.movie_groups = 2;
    post.user_posteriors = {0.2, 0.5, 0.3, /*n1*/ 1.0 / 3, 1.0 / 3, 1.0 / 3};
    post.movie_posteriors = {0.5, 0.5};
    auto [users, movies] = map_groups(post);
    CHECK(users[0] == 1);
    CHECK(users[1] == 0);  // uniform tie -> group 0
    CHECK(movies[0] == 0);

    // random posteriors match a naive argmax scan
    Rng rng(32);
    PosteriorEstimates rnd;
    rnd.user_groups = 4;
    rnd.movie_groups = 3;
    for (int n = 0; n < 20; ++n) {
        Vec p = oracles::random_distribution(4, rng);
        rnd.user_posteriors.insert(rnd.user_posteriors.end(), p.begin(), p.end());
    }
    rnd.movie_posteriors.assign(3, 1.0 / 3);
    auto [us, ms] = map_groups(rnd);
    for (int n = 0; n < 20; ++n) {
        int best = 0;
        for (int u = 1; u < 4; ++u)
            if (rnd.user_posteriors[n * 4 + u] > rnd.user_posteriors[n * 4 + best]) best = u;
        CHECK(us[n] == best);
    }
}

TEST_CASE("r2 reads the kernel row of the hard decisions") {
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3, 4, 5});
    for (int r = 0; r < 5; ++r) m.w(1, 0, r) = r == 4 ? 1.0 : 0.0;  // deterministic row
    PredictionSet pred = predict_r2({1, 0}, {0, 1}, m, {{0, 0}, {1, 1}});
    CHECK(pred.entries[0].value == Catch::Approx(5.0));
    CHECK(pred.entries[1].value == Catch::Approx(3.0));  // uniform row over 1..5
    CHECK(pred.estimator == "r2");

    // random kernels match the direct dot product
    Rng rng(35);
    GroupModel rnd = oracles::random_model(3, 3, {1, 2, 3, 4, 5}, rng);
    std::vector<int> ug = {2, 0, 1}, mg = {1, 2, 0};
    PredictionSet rp = predict_r2(ug, mg, rnd, {{0, 1}, {2, 2}});
    for (const Prediction& p : rp.entries) {
        double direct = 0.0;
        for (int r = 0; r < 5; ++r) direct += (r + 1) * rnd.w(ug[p.user], mg[p.movie], r);
        CHECK(p.value == Catch::Approx(direct).epsilon(1e-14));
    }
}

TEST_CASE("rmse: exact values and the naive loop") {
    ObservationSet truth(3, 3, {{0, 0, 3}, {1, 1, 4}, {2, 2, 2}});
    PredictionSet perfect;
    perfect.entries = {{0, 0, 3.0}, {1, 1, 4.0}, {2, 2, 2.0}};
    CHECK(rmse(perfect, truth) == 0.0);

    PredictionSet off;
    off.entries = {{0, 0, 4.0}, {1, 1, 5.0}, {2, 2, 3.0}};
    CHECK(rmse(off, truth) == Catch::Approx(1.0));

    Rng rng(33);
    PredictionSet random;
    double sq = 0.0;
    std::vector<Triple> triples;
    for (int i = 0; i < 10; ++i) {
        int r = 1 + static_cast<int>(rng.uniform_int(5));
        triples.push_back({i, i, r});
        double guess = 1 + 4 * rng.uniform01();
        random.entries.push_back({i, i, guess});
        sq += (guess - r) * (guess - r);
    }
    ObservationSet truth10(10, 10, std::move(triples));
    CHECK(rmse(random, truth10) == Catch::Approx(std::sqrt(sq / 10)).epsilon(1e-12));

    PredictionSet missing;
    missing.entries = {{0, 1, 3.0}};
    CHECK_THROWS_AS(rmse(missing, truth), ConfigError);
    PredictionSet empty;
    CHECK_THROWS_AS(rmse(empty, truth), ConfigError);
}

TEST_CASE("movie average baseline with global-mean fallback") {
    ObservationSet train(3, 3, {{0, 0, 2}, {1, 0, 4}, {2, 1, 5}});
    PredictionSet pred = movie_average_baseline(train, {{0, 0}, {0, 1}, {0, 2}});
    CHECK(pred.entries[0].value == Catch::Approx(3.0));          // mean of {2,4}
    CHECK(pred.entries[1].value == Catch::Approx(5.0));
    CHECK(pred.entries[2].value == Catch::Approx(11.0 / 3.0));   // unrated: global mean

    // naive recount on random data
    Rng rng(34);
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3, 4, 5});
    auto [obs, truth] = sample_synthetic(m, 40, 20, EdgeSpec::from_density(4.0), 3);
    PredictionSet p = movie_average_baseline(obs, {{0, 7}});
    double s = 0;
    int c = 0;
    for (const Triple& t : obs.triples())
        if (t.movie == 7) {
            s += t.rating;
            ++c;
        }
    if (c > 0) CHECK(p.entries[0].value == Catch::Approx(s / c));
}

TEST_CASE("hide_validation partitions exactly and deterministically") {
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3});
    auto [obs, truth] = sample_synthetic(m, 50, 30, EdgeSpec::from_density(5.0), 12);
    auto [train, val] = hide_validation(obs, 40, 9);
    CHECK(train.size() + val.size() == obs.size());
    CHECK(val.size() == 40);
    std::set<std::pair<int, int>> all, seen;
    for (const Triple& t : obs.triples()) all.insert({t.user, t.movie});
    for (const Triple& t : train.triples()) CHECK(seen.insert({t.user, t.movie}).second);
    for (const Triple& t : val.triples()) CHECK(seen.insert({t.user, t.movie}).second);
    CHECK(all == seen);

    auto [train2, val2] = hide_validation(obs, 40, 9);
    CHECK(train.triples() == train2.triples());
    auto [train3, val3] = hide_validation(obs, 40, 10);
    CHECK(train.triples() != train3.triples());

    // count = 0 keeps everything; count >= |O| is an error
    auto [tr0, va0] = hide_validation(obs, 0, 1);
    CHECK(va0.size() == 0);
    CHECK(tr0.size() == obs.size());
    auto [tr1, va1] = hide_validation(obs, obs.size() - 1, 1);
    CHECK(tr1.size() == 1);
    CHECK_THROWS_AS(hide_validation(obs, obs.size(), 1), ConfigError);
}

TEST_CASE("subsampling hits the target density") {
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3});
    auto [obs, truth] = sample_synthetic(m, 100, 80, EdgeSpec::from_density(10.0), 4);
    ObservationSet thin = subsample_to_density(obs, 3.0, 5);
    CHECK(thin.size() == 300);
    CHECK_THROWS_AS(subsample_to_density(obs, 50.0, 5), ConfigError);
    // subset of the original
    std::set<std::pair<int, int>> orig;
    for (const Triple& t : obs.triples()) orig.insert({t.user, t.movie});
    for (const Triple& t : thin.triples()) CHECK(orig.count({t.user, t.movie}) == 1);
}

TEST_CASE("known-group floor is zero for a deterministic kernel") {
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3, 4, 5});
    for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v)
            for (int r = 0; r < 5; ++r) m.w(u, v, r) = (r == u + v) ? 1.0 : 0.0;
    auto [obs, truth] = sample_synthetic(m, 20, 20, EdgeSpec::from_density(3.0), 6);
    std::vector<std::pair<int, int>> pairs;
    for (const Triple& t : obs.triples()) pairs.emplace_back(t.user, t.movie);
    PredictionSet pred = known_group_predictions(m, truth, pairs);
    CHECK(rmse(pred, obs) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("single-cell sweep with the baseline produces one row per seed") {
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3, 4, 5});
    auto [obs, truth] = sample_synthetic(m, 200, 100, EdgeSpec::from_density(6.0), 8);
    SweepOptions opts;
    opts.densities = {1.0};
    opts.seeds = {3};
    opts.algorithms = {"movie_avg"};
    opts.validation_count = 50;
    SweepResult res = cold_start_sweep(obs, opts);
    REQUIRE(res.rows.size() == 1);
    CHECK(res.rows[0].alg == "movie_avg");
    CHECK(res.rows[0].rmse_value >= 0.0);
    CHECK(res.rows[0].density == 1.0);

    SweepResult res2 = cold_start_sweep(obs, opts);
    CHECK(res.rows[0].rmse_value == res2.rows[0].rmse_value);  // deterministic replay
}

TEST_CASE("sweep grid cardinality and floor ordering on synthetic data") {
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3, 4, 5});
    // asymmetric informative kernel
    m.kernel = {
        0.70, 0.15, 0.05, 0.05, 0.05,  // u0 v0: low ratings
        0.05, 0.10, 0.70, 0.10, 0.05,  // u0 v1: middle
        0.05, 0.05, 0.10, 0.20, 0.60,  // u1 v0: high
        0.25, 0.25, 0.25, 0.20, 0.05,  // u1 v1: spread
    };
    auto [obs, truth] = sample_synthetic(m, 300, 200, EdgeSpec::from_density(12.0), 77);
    SweepOptions opts;
    opts.densities = {2.0, 6.0};
    opts.seeds = {1, 2};
    opts.algorithms = {"imp", "em", "movie_avg"};
    opts.validation_count = 200;
    opts.train.user_groups = 2;
    opts.train.movie_groups = 2;
    opts.train.init = "vdvq";
    opts.train.imp.max_iters = 60;
    opts.train.em.max_iters = 100;
    opts.truth_model = &m;
    opts.truth = &truth;
    SweepResult res = cold_start_sweep(obs, opts);
    // 2 densities x 2 seeds x (3 algs + floor)
    REQUIRE(res.rows.size() == 16);
    for (const SweepCell& cell : res.rows) CHECK(cell.rmse_value >= 0.0);
    // the known-group floor is below every learner at matched (density, seed)
    for (const SweepCell& floor_cell : res.rows) {
        if (floor_cell.alg != "known_groups") continue;
        for (const SweepCell& other : res.rows)
            if (other.seed == floor_cell.seed && other.density == floor_cell.density &&
                other.alg != "known_groups")
                CHECK(floor_cell.rmse_value <= other.rmse_value + 1e-9);
    }
}
