// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Heavier than the unit tests; expected wall time is a few minutes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "factorcf/bound.hpp"
#include "factorcf/de.hpp"
#include "factorcf/em.hpp"
#include "factorcf/eval.hpp"
#include "factorcf/imp.hpp"
#include "factorcf/init.hpp"
#include "factorcf/io.hpp"
#include "factorcf/model.hpp"
#include "oracles.hpp"

using namespace factorcf;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s - %s (%s)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!pass) ++failures;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
    double m = mean_of(v);
    double var = 0;
    for (double x : v) var += (x - m) * (x - m);
    var /= static_cast<double>(v.size() - 1);
    return std::sqrt(var / static_cast<double>(v.size()));
}

// --------------------------------------------------------------------------
// 1. tree exactness: 200 random acyclic instances vs enumeration, < 30 s
// --------------------------------------------------------------------------
void criterion_tree_exactness() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(20250801);
    double worst = 0.0;
    int done = 0;
    while (done < 200) {
        int num_users = 2 + static_cast<int>(rng.uniform_int(4));
        int num_movies = 2 + static_cast<int>(rng.uniform_int(4));
        while (num_users + num_movies > 8) --num_movies;
        int gu = 2 + static_cast<int>(rng.uniform_int(2));
        int gv = 2 + static_cast<int>(rng.uniform_int(2));
        std::vector<int> alphabet =
            rng.uniform01() < 0.5 ? std::vector<int>{1, 2} : std::vector<int>{1, 2, 3, 4, 5};
        GroupModel model = oracles::random_model(gu, gv, alphabet, rng);
        ObservationSet obs = oracles::random_tree(num_users, num_movies, alphabet, rng);
        if (obs.size() == 0) continue;
        ImpOptions opts;
        opts.tol = 1e-13;
        opts.max_iters = 60;
        auto [state, post, rep] = imp_run(model, obs, opts, {});
        auto exact = oracles::exact_node_marginals(model, obs);
        for (int n = 0; n < num_users; ++n)
            for (int u = 0; u < gu; ++u)
                worst = std::max(worst, std::fabs(post.user_posterior(n)[u] - exact.user[n][u]));
        for (int m = 0; m < num_movies; ++m)
            for (int v = 0; v < gv; ++v)
                worst = std::max(worst, std::fabs(post.movie_posterior(m)[v] - exact.movie[m][v]));
        std::vector<std::pair<int, int>> pairs;
        for (const Triple& t : obs.triples()) pairs.emplace_back(t.user, t.movie);
        PosteriorEstimates rp = imp_posteriors(state, model, obs, pairs);
        for (std::size_t e = 0; e < obs.size(); ++e) {
            Vec expect = oracles::exact_rating_posterior_loo(model, obs, static_cast<int>(e));
            for (int r = 0; r < model.num_ratings(); ++r)
                worst = std::max(worst, std::fabs(rp.rating_posterior(e)[r] - expect[r]));
        }
        ++done;
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char detail[128];
    std::snprintf(detail, sizeof detail, "200 instances, max |err| = %.3e, %.1f s", worst, secs);
    report("tree exactness 1e-10", worst < 1e-10 && secs < 30.0, detail);
}

// --------------------------------------------------------------------------
// 2. EM monotonicity: 100 random instances, 50 iterations, slack 1e-9
// --------------------------------------------------------------------------
void criterion_em_monotone() {
    Rng rng(20250802);
    double worst_rise = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<Triple> triples;
        for (int n = 0; n < 20; ++n)
            for (int m = 0; m < 20; ++m)
                if (rng.uniform01() < 0.2)
                    triples.push_back({n, m, 1 + static_cast<int>(rng.uniform_int(5))});
        if (triples.empty()) triples.push_back({0, 0, 1});
        ObservationSet obs(20, 20, std::move(triples));
        GroupModel model = oracles::random_model(3, 3, {1, 2, 3, 4, 5}, rng);
        EmState state = em_init(model, obs);
        for (int n = 0; n < 20; ++n) {
            Vec p = oracles::random_distribution(3, rng);
            std::copy(p.begin(), p.end(), state.f_n(n).begin());
        }
        for (int m = 0; m < 20; ++m) {
            Vec p = oracles::random_distribution(3, rng);
            std::copy(p.begin(), p.end(), state.h_m(m).begin());
        }
        double prev = em_nll(state, obs);
        for (int it = 0; it < 50; ++it) {
            state = em_iterate(state, obs);
            double cur = em_nll(state, obs);
            worst_rise = std::max(worst_rise, cur - prev);
            prev = cur;
        }
    }
    char detail[128];
    std::snprintf(detail, sizeof detail, "100 instances x 50 iters, max NLL rise = %.3e", worst_rise);
    report("EM NLL monotone (slack 1e-9)", worst_rise <= 1e-9, detail);
}

// --------------------------------------------------------------------------
// 3. VDVQ against the naive reference on 50 random instances
// --------------------------------------------------------------------------
void criterion_vdvq_oracle() {
    Rng rng(20250803);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        GroupModel model = oracles::random_model(2, 2, {1, 2, 3, 4, 5}, rng);
        int num_movies = 3 + static_cast<int>(rng.uniform_int(6));
        double density = std::min(2.0 + 2.0 * rng.uniform01(), static_cast<double>(num_movies));
        auto [obs, truth] = sample_synthetic(model, 5 + static_cast<int>(rng.uniform_int(8)), num_movies,
                                             EdgeSpec::from_density(density), 9000 + rep);
        if (obs.size() == 0) continue;
        RaggedRatings users = user_view(obs);
        RaggedRatings movies = movie_view(obs);
        Rng noise(rep);
        Codebook ucb = gla_split(vdvq_init(users), 0.05, noise);
        Codebook mcb = gla_split(vdvq_init(movies), 0.05, noise);
        double beta = 0.5 + rng.uniform01();
        auto [unext, uassign] = soft_kmeans_sweep(ucb, users, beta);
        auto [mnext, massign] = soft_kmeans_sweep(mcb, movies, beta);

        std::vector<std::vector<std::pair<int, double>>> uitems(users.num_items);
        for (int i = 0; i < users.num_items; ++i) {
            auto cs = users.coords_of(i);
            auto vs = users.values_of(i);
            for (std::size_t k = 0; k < cs.size(); ++k) uitems[i].emplace_back(cs[k], vs[k]);
        }
        auto unaive = oracles::naive_soft_kmeans_sweep(ucb.critics, uitems, users.dim, beta);
        for (int i = 0; i < users.num_items; ++i)
            for (int u = 0; u < 2; ++u)
                worst = std::max(worst, std::fabs(uassign.pi[i][u] - unaive.pi[i][u]));
        for (int u = 0; u < 2; ++u)
            for (int c = 0; c < users.dim; ++c)
                worst = std::max(worst, std::fabs(unext.critics[u][c] - unaive.critics[u][c]));

        KernelEstimate est = estimate_w(uassign, massign, obs, model.rating_alphabet);
        Vec naive_w = oracles::naive_estimate_w(uassign.pi, massign.pi, obs, model.rating_alphabet);
        for (std::size_t i = 0; i < est.kernel.size(); ++i)
            worst = std::max(worst, std::fabs(est.kernel[i] - naive_w[i]));
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "50 instances, max |err| = %.3e", worst);
    report("VDVQ matches naive reference 1e-10", worst < 1e-10, detail);
}

// --------------------------------------------------------------------------
// 4. bound: independent evaluation on a 100-point grid, scaling identities
// --------------------------------------------------------------------------
void criterion_bound() {
    // independent route: long double arithmetic, separately written formula
    auto reference = [](long long gu, long long gv, long long n, long long m, long long o,
                        long double delta) {
        long double q = static_cast<long double>(n) * gu + static_cast<long double>(m) * gv +
                        static_cast<long double>(gu) * gv;
        long double lw = logl(12.0L * expl(1.0L) * static_cast<long double>(m) /
                              static_cast<long double>(std::min(gu, gv)));
        return sqrtl((q * lw - logl(delta)) / (2.0L * static_cast<long double>(o)));
    };
    Rng rng(20250804);
    double worst_rel = 0.0;
    bool monotone = true, exact_half = true;
    for (int i = 0; i < 100; ++i) {
        int gu = 1 + static_cast<int>(rng.uniform_int(6));
        int gv = 1 + static_cast<int>(rng.uniform_int(6));
        long long n = 3 + static_cast<long long>(rng.uniform_int(5000));
        long long m = 3 + static_cast<long long>(rng.uniform_int(5000));
        long long o = 1 + static_cast<long long>(rng.uniform_int(100000));
        double delta = 0.01 + 0.95 * rng.uniform01();
        double got = generalization_bound({gu, gv, n, m, o, delta});
        double want = static_cast<double>(reference(gu, gv, n, m, o, delta));
        worst_rel = std::max(worst_rel, std::fabs(got - want) / want);
        monotone &= generalization_bound({gu, gv, n, m, 2 * o, delta}) <= got;
        exact_half &= generalization_bound({gu, gv, n, m, 4 * o, delta}) == got / 2.0;
    }
    // frozen 50-digit anchor
    double anchor = generalization_bound({2, 2, 100, 100, 1000, 0.1});
    double anchor_err = std::fabs(anchor - 1.222837308434837781855) / 1.222837308434837781855;
    char detail[160];
    std::snprintf(detail, sizeof detail, "grid max rel err = %.3e, anchor rel err = %.3e%s%s", worst_rel,
                  anchor_err, monotone ? "" : ", monotonicity violated",
                  exact_half ? "" : ", halving not exact");
    report("bound closed form 1e-12 + monotone + exact halving",
           worst_rel < 1e-12 && anchor_err < 1e-14 && monotone && exact_half, detail);
}

// --------------------------------------------------------------------------
// 5. cold-start sweep shape on synthetic data (Fig. 3 style)
// --------------------------------------------------------------------------
GroupModel cold_start_model() {
    GroupModel m = GroupModel::uniform(4, 4, {1, 2, 3, 4, 5});
    const double sigma2 = 2.0 * 0.8 * 0.8;
    for (int u = 0; u < 4; ++u)
        for (int v = 0; v < 4; ++v) {
            double center = 1.0 + ((2 * u + 3 * v) % 5);
            double total = 0.0;
            for (int r = 0; r < 5; ++r) {
                double x = std::exp(-(r + 1 - center) * (r + 1 - center) / sigma2);
                m.w(u, v, r) = x;
                total += x;
            }
            for (int r = 0; r < 5; ++r) m.w(u, v, r) /= total;
        }
    return m;
}

void criterion_cold_start() {
    auto t0 = std::chrono::steady_clock::now();
    GroupModel truth_model = cold_start_model();
    auto [full, truth] = sample_synthetic(truth_model, 2000, 2000, EdgeSpec::from_density(35.0), 424242);

    SweepOptions opts;
    opts.densities = {1, 3, 5, 10, 20, 30};
    opts.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    opts.algorithms = {"imp", "em", "movie_avg"};
    opts.validation_count = 1000;
    opts.train.user_groups = 4;
    opts.train.movie_groups = 4;
    opts.train.init = "vdvq";
    opts.train.vdvq.beta = 8.0;
    opts.truth_model = &truth_model;
    opts.truth = &truth;
    SweepResult res = cold_start_sweep(full, opts);

    auto cells = [&](double density, const std::string& alg) {
        std::vector<double> out;
        for (const SweepCell& c : res.rows)
            if (c.density == density && c.alg == alg) out.push_back(c.rmse_value);
        return out;
    };

    // (a) IMP beats the movie-average baseline by >= 2 SE at density >= 5
    bool beats_baseline = true;
    std::string detail_a;
    for (double d : {5.0, 10.0, 20.0, 30.0}) {
        std::vector<double> imp = cells(d, "imp"), base = cells(d, "movie_avg");
        std::vector<double> diff(imp.size());
        for (std::size_t i = 0; i < imp.size(); ++i) diff[i] = base[i] - imp[i];
        double margin = mean_of(diff) - 2.0 * stderr_of(diff);
        beats_baseline &= margin > 0.0;
        if (d == 5.0) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "at d=5: baseline-imp = %.4f +- %.4f", mean_of(diff),
                          stderr_of(diff));
            detail_a = buf;
        }
    }

    // (b) IMP RMSE nonincreasing in density within 2 SE
    bool nonincreasing = true;
    for (std::size_t i = 1; i < opts.densities.size(); ++i) {
        std::vector<double> lo = cells(opts.densities[i - 1], "imp");
        std::vector<double> hi = cells(opts.densities[i], "imp");
        std::vector<double> diff(lo.size());
        for (std::size_t s = 0; s < lo.size(); ++s) diff[s] = hi[s] - lo[s];  // should be <= 0
        nonincreasing &= mean_of(diff) <= 2.0 * stderr_of(diff);
    }

    // (c) known-group floor below every learner at every density
    bool floor_ok = true;
    for (double d : opts.densities) {
        double floor_mean = mean_of(cells(d, "known_groups"));
        for (const std::string& alg : opts.algorithms)
            floor_ok &= floor_mean <= mean_of(cells(d, alg)) + 1e-12;
    }

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char detail[224];
    std::snprintf(detail, sizeof detail, "%s; monotone=%s; floor=%s; %.0f s", detail_a.c_str(),
                  nonincreasing ? "yes" : "NO", floor_ok ? "yes" : "NO", secs);
    report("cold-start shape (baseline, monotone, floor)",
           beats_baseline && nonincreasing && floor_ok && secs < 600.0, detail);
}

// --------------------------------------------------------------------------
// 6. DE agreement with IMP node posteriors on a matched graph, 3 kernels
// --------------------------------------------------------------------------
GroupModel de_kernel(int which) {
    if (which == 0) {
        GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3});
        m.kernel = {0.8, 0.15, 0.05, /*u0v1*/ 0.1, 0.3, 0.6, /*u1v0*/ 0.4, 0.5, 0.1,
                    /*u1v1*/ 0.05, 0.25, 0.7};
        return m;
    }
    if (which == 1) {
        GroupModel m = GroupModel::uniform(3, 3, {1, 2, 3, 4, 5});
        m.user_prior = {0.5, 0.3, 0.2};
        m.movie_prior = {0.4, 0.4, 0.2};
        const double sigma2 = 2.0 * 1.0;
        for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
                double center = 1.0 + ((u + 2 * v) % 5);
                double total = 0;
                for (int r = 0; r < 5; ++r) {
                    double x = std::exp(-(r + 1 - center) * (r + 1 - center) / sigma2);
                    m.w(u, v, r) = x;
                    total += x;
                }
                for (int r = 0; r < 5; ++r) m.w(u, v, r) /= total;
            }
        return m;
    }
    GroupModel m = GroupModel::uniform(2, 2, {1, 2, 3, 4, 5});  // weak, noisy
    m.kernel = {0.3, 0.25, 0.2, 0.15, 0.1, /*u0v1*/ 0.1, 0.15, 0.2, 0.25, 0.3,
                /*u1v0*/ 0.15, 0.2, 0.3, 0.2, 0.15, /*u1v1*/ 0.24, 0.22, 0.2, 0.18, 0.16};
    return m;
}

void criterion_de_agreement() {
    bool all_ok = true;
    std::ostringstream detail;
    for (int k = 0; k < 3; ++k) {
        GroupModel model = de_kernel(k);
        auto [obs, truth] =
            sample_synthetic(model, 10000, 8000, EdgeSpec::from_density(3.0), 5000 + k);

        // IMP: exactly 5 flooding iterations from the true model
        MessageState state = imp_init(model, obs);
        for (int it = 0; it < 5; ++it) state = imp_iterate(state, model, obs);
        PosteriorEstimates post = imp_posteriors(state, model, obs, {});
        std::vector<double> user_vals(obs.num_users());
        for (int n = 0; n < obs.num_users(); ++n)
            user_vals[n] = post.user_posterior(n)[truth.user_groups[n]];
        double imp_mean = mean_of(user_vals);
        double imp_se = stderr_of(user_vals);

        // DE: population dynamics with the instance's empirical degrees
        DegreeDistribution udeg = empirical_user_degrees(obs);
        DegreeDistribution mdeg = empirical_movie_degrees(obs);
        MessagePopulation pop = de_init(model, 100000, 6000 + k);
        for (int it = 0; it < 5; ++it) pop = de_iterate(pop, model, udeg, mdeg, 6100 + k);
        auto [ustats, mstats] = de_node_statistics(pop, model, udeg, mdeg, 100000, 6200 + k);

        double combined = std::sqrt(imp_se * imp_se + ustats.std_error * ustats.std_error);
        double gap = std::fabs(imp_mean - ustats.mean_true_belief);
        bool ok = gap <= 3.0 * combined;
        all_ok &= ok;
        detail << (k ? "; " : "") << "k" << k << ": |" << std::setprecision(4) << imp_mean << "-"
               << ustats.mean_true_belief << "|=" << std::setprecision(2) << gap << " vs 3se="
               << 3.0 * combined;
    }
    report("DE predicts IMP node posteriors (3 kernels, 3 combined SE)", all_ok, detail.str());
}

// --------------------------------------------------------------------------
// 7. tree-condition checker against 10 recorded tuples
// --------------------------------------------------------------------------
void criterion_tree_condition_tuples() {
    struct Case {
        int d, l;
        double n, lhs;
    };
    const Case cases[] = {
        {3, 2, 1e6, 0.3976010455997186977459},   {3, 0, 1e6, 0.07952020911994373954917},
        {2, 1, 1e4, 0.2257724967479858964103},   {5, 3, 1e8, 0.611598753794016454188},
        {4, 2, 1e6, 0.5017166594399686586896},   {10, 1, 1e5, 0.6},
        {2, 5, 1e9, 0.3679255502559770163723},   {7, 2, 1e7, 0.6036414571530405933659},
        {3, 3, 1e6, 0.5566414638396061768442},   {6, 4, 1e10, 0.7003361253452792692579},
    };
    double worst = 0.0;
    for (const Case& c : cases) {
        TreeCondition tc = tree_condition(c.n, c.n / 2, c.d, c.l, 0.1);
        worst = std::max(worst, std::fabs(tc.lhs - c.lhs) / c.lhs);
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "10 tuples, max rel err = %.3e", worst);
    report("tree condition matches recorded values 1e-12", worst < 1e-12, detail);
}

// --------------------------------------------------------------------------
// 8. end-to-end determinism: replay manifests byte-identically across threads
// --------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void criterion_determinism() {
    fs::path box = fs::temp_directory_path() / "factorcf_acceptance_determinism";
    fs::remove_all(box);
    fs::create_directories(box);
    auto cli = [&](const std::string& args) {
        std::string cmd = std::string(FACTORCF_BIN) + " " + args + " > /dev/null 2>&1";
        return WEXITSTATUS(std::system(cmd.c_str()));
    };
    GroupModel model = cold_start_model();
    save_model(model, (box / "m.json").string());
    bool ok = cli("sample --model " + (box / "m.json").string() +
                  " --users 400 --movies 300 --density 8 --seed 21 --out " + (box / "s").string()) == 0;
    std::string data = (box / "s" / "data.csv").string();

    ok = ok && cli("--threads 4 sweep --data " + data +
                   " --algs imp,em,movie_avg --densities 2,5 --seeds 1,2 --validation 200 --gu 4 --gv 4 "
                   "--max-iters 40 --seed 13 --out " +
                   (box / "a").string()) == 0;
    ok = ok && cli("--threads 1 replay --manifest " + (box / "a" / "manifest.json").string() + " --out " +
                   (box / "b").string()) == 0;
    ok = ok && cli("--threads 3 replay --manifest " + (box / "a" / "manifest.json").string() + " --out " +
                   (box / "c").string()) == 0;
    int identical = 0, files = 0;
    for (const char* name : {"sweep.csv", "sweep_pivot.csv", "cold_pairs.csv"}) {
        ++files;
        std::string a = slurp(box / "a" / name);
        if (!a.empty() && a == slurp(box / "b" / name) && a == slurp(box / "c" / name)) ++identical;
    }

    ok = ok && cli("--threads 4 train --data " + data + " --alg em --gu 4 --gv 4 --max-iters 30 "
                   "--seed 5 --out " + (box / "t1").string()) == 0;
    ok = ok && cli("--threads 1 replay --manifest " + (box / "t1" / "manifest.json").string() + " --out " +
                   (box / "t2").string()) == 0;
    for (const char* name : {"user_posteriors.csv", "movie_posteriors.csv", "trace.csv"}) {
        ++files;
        std::string a = slurp(box / "t1" / name);
        if (!a.empty() && a == slurp(box / "t2" / name)) ++identical;
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "%d/%d CSVs byte-identical across thread counts", identical,
                  files);
    report("manifest replay determinism under --threads", ok && identical == files, detail);
    fs::remove_all(box);
}

}  // namespace

int main() {
    criterion_tree_exactness();
    criterion_em_monotone();
    criterion_vdvq_oracle();
    criterion_bound();
    criterion_tree_condition_tuples();
    criterion_de_agreement();
    criterion_determinism();
    criterion_cold_start();
    if (failures == 0)
        std::printf("acceptance: all criteria passed\n");
    else
        std::printf("acceptance: %d criterion(s) FAILED\n", failures);
    return failures == 0 ? 0 : 1;
}
