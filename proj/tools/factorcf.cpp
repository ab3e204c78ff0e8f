// factorcf: factor-graph collaborative filtering toolkit.
//
// Subcommands: ingest, sample, init, train, predict, bound, de, sweep,
// replay. Every run writes a manifest.json from which `replay` reproduces
// the outputs byte for byte. Exit codes: 2 config, 3 data, 4 numeric.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
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
#include "factorcf/parallel.hpp"

namespace fs = std::filesystem;
using namespace factorcf;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string default_out_dir() {
    const char* env = std::getenv("FACTORCF_OUT_DIR");
    return env ? env : "factorcf_out";
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    return out;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (out.empty()) throw ConfigError("empty list: " + text);
    return out;
}

std::vector<std::string> parse_string_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

std::vector<std::pair<int, int>> read_pairs_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    ++lineno;
    if (detail::split_csv_line(line) != std::vector<std::string>{"user", "movie"})
        throw DataError(path + ":1: expected header 'user,movie'");
    std::vector<std::pair<int, int>> pairs;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2) throw DataError(path + ":" + std::to_string(lineno) + ": expected 2 fields");
        pairs.emplace_back(detail::parse_int_field(fields[0], path, lineno),
                           detail::parse_int_field(fields[1], path, lineno));
    }
    return pairs;
}

void write_truth_csv(const SyntheticTruth& truth, const fs::path& path) {
    auto out = open_out(path);
    out << "kind,index,group\n";
    for (std::size_t n = 0; n < truth.user_groups.size(); ++n)
        out << "user," << n << ',' << truth.user_groups[n] << "\n";
    for (std::size_t m = 0; m < truth.movie_groups.size(); ++m)
        out << "movie," << m << ',' << truth.movie_groups[m] << "\n";
}

SyntheticTruth read_truth_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    ++lineno;
    if (detail::split_csv_line(line) != std::vector<std::string>{"kind", "index", "group"})
        throw DataError(path + ":1: expected header 'kind,index,group'");
    SyntheticTruth truth;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3) throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
        int index = detail::parse_int_field(fields[1], path, lineno);
        int group = detail::parse_int_field(fields[2], path, lineno);
        if (fields[0] != "user" && fields[0] != "movie")
            throw DataError(path + ":" + std::to_string(lineno) + ": kind must be user or movie");
        auto& vec = fields[0] == "user" ? truth.user_groups : truth.movie_groups;
        if (static_cast<int>(vec.size()) <= index) vec.resize(index + 1, -1);
        vec[index] = group;
    }
    return truth;
}

void write_node_posteriors(const Vec& table, int groups, const std::string& col0, const fs::path& path) {
    auto out = open_out(path);
    out << col0;
    for (int g = 0; g < groups; ++g) out << ",p" << g;
    out << "\n";
    std::size_t rows = table.size() / groups;
    for (std::size_t i = 0; i < rows; ++i) {
        out << i;
        for (int g = 0; g < groups; ++g) out << ',' << format_double(table[i * groups + g]);
        out << "\n";
    }
}

void write_trace(const std::vector<double>& trace, const std::string& kind, bool from_zero,
                 const fs::path& path) {
    auto out = open_out(path);
    out << "iteration," << kind << "\n";
    for (std::size_t i = 0; i < trace.size(); ++i)
        out << (from_zero ? i : i + 1) << ',' << format_double(trace[i]) << "\n";
}

void write_predictions(const PredictionSet& pred, const fs::path& path) {
    auto out = open_out(path);
    out << "user,movie,prediction,estimator\n";
    for (const Prediction& p : pred.entries)
        out << p.user << ',' << p.movie << ',' << format_double(p.value) << ',' << pred.estimator << "\n";
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const json& options,
                    const std::vector<std::string>& outputs) {
    json m;
    m["tool"] = "factorcf";
    m["version"] = kVersion;
    m["subcommand"] = subcommand;
    m["options"] = options;
    m["outputs"] = outputs;
    auto out = open_out(dir / "manifest.json");
    out << m.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// subcommand option structs; these are what manifests carry
// ---------------------------------------------------------------------------

struct IngestCmd {
    std::string input;
    std::string output = "data.csv";
    std::string idmap = "idmap.json";
    std::string ratings = "1:5";
    std::string out_dir = default_out_dir();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(IngestCmd, input, output, idmap, ratings, out_dir)

struct SampleCmd {
    std::string model;
    int users = 100;
    int movies = 100;
    double density = 3.0;
    std::uint64_t seed = 1;
    std::string output = "data.csv";
    std::string truth = "truth.csv";
    std::string out_dir = default_out_dir();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SampleCmd, model, users, movies, density, seed, output, truth, out_dir)

struct InitCmd {
    std::string data;
    int gu = 2;
    int gv = 2;
    double beta = 8.0;
    int sweeps = 10;
    double noise_sd = 0.01;
    double epsilon = 0.9;
    std::string ratings = "1:5";
    std::uint64_t seed = 1;
    std::string output = "model0.json";
    std::string out_dir = default_out_dir();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(InitCmd, data, gu, gv, beta, sweeps, noise_sd, epsilon, ratings, seed,
                                   output, out_dir)

struct TrainCmd {
    std::string data;
    std::string alg = "imp";
    std::string init = "vdvq";
    int gu = 2;
    int gv = 2;
    std::string ratings = "1:5";
    double tol = 1e-8;
    int max_iters = 0;  // 0 = per-algorithm default
    double damping = 0.0;
    double beta = 8.0;
    int sweeps = 10;
    double noise_sd = 0.01;
    double epsilon = 0.9;
    std::uint64_t seed = 1;
    std::string out_dir = default_out_dir();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainCmd, data, alg, init, gu, gv, ratings, tol, max_iters, damping,
                                   beta, sweeps, noise_sd, epsilon, seed, out_dir)

struct PredictCmd {
    std::string data;
    std::string pairs;
    std::string estimator = "r1";  // r1 | r2 | avg
    TrainCmd train;
    std::string out_dir = default_out_dir();
};
void to_json(json& j, const PredictCmd& c) {
    j = json{{"data", c.data},
             {"pairs", c.pairs},
             {"estimator", c.estimator},
             {"train", c.train},
             {"out_dir", c.out_dir}};
}
void from_json(const json& j, PredictCmd& c) {
    j.at("data").get_to(c.data);
    j.at("pairs").get_to(c.pairs);
    j.at("estimator").get_to(c.estimator);
    j.at("train").get_to(c.train);
    j.at("out_dir").get_to(c.out_dir);
}

struct BoundCmd {
    int gu = 2;
    int gv = 2;
    long long users = 0;
    long long movies = 0;
    long long observed = 1;
    double delta = 0.1;
    std::string sweep_observed;  // lo,hi,step for a CSV sweep
    std::string csv = "bound.csv";
    std::string out_dir = default_out_dir();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BoundCmd, gu, gv, users, movies, observed, delta, sweep_observed, csv,
                                   out_dir)

struct DeCmd {
    std::string model;
    std::string degrees;
    std::string data;
    std::string gen_model;
    int iters = 5;
    std::size_t population = 100000;
    bool literal_d = false;
    std::uint64_t seed = 1;
    std::string out_dir = default_out_dir();
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DeCmd, model, degrees, data, gen_model, iters, population, literal_d,
                                   seed, out_dir)

struct SweepCmd {
    std::string data;
    std::string algs = "imp,em,movie_avg";
    std::string densities = "1,3,5,10,20,30";
    std::string seeds = "1,2,3,4,5,6,7,8,9,10";
    std::size_t validation = 1000;
    std::string truth_model;
    std::string truth;
    TrainCmd train;
    std::string out_dir = default_out_dir();
};
void to_json(json& j, const SweepCmd& c) {
    j = json{{"data", c.data},
             {"algs", c.algs},
             {"densities", c.densities},
             {"seeds", c.seeds},
             {"validation", c.validation},
             {"truth_model", c.truth_model},
             {"truth", c.truth},
             {"train", c.train},
             {"out_dir", c.out_dir}};
}
void from_json(const json& j, SweepCmd& c) {
    j.at("data").get_to(c.data);
    j.at("algs").get_to(c.algs);
    j.at("densities").get_to(c.densities);
    j.at("seeds").get_to(c.seeds);
    j.at("validation").get_to(c.validation);
    j.at("truth_model").get_to(c.truth_model);
    j.at("truth").get_to(c.truth);
    j.at("train").get_to(c.train);
    j.at("out_dir").get_to(c.out_dir);
}

// ---------------------------------------------------------------------------
// subcommand implementations
// ---------------------------------------------------------------------------

TrainOptions to_train_options(const TrainCmd& c) {
    TrainOptions opts;
    opts.algorithm = c.alg;
    opts.init = c.init;
    opts.user_groups = c.gu;
    opts.movie_groups = c.gv;
    opts.alphabet = parse_alphabet(c.ratings);
    opts.imp.tol = c.tol;
    opts.imp.damping = c.damping;
    if (c.max_iters > 0) opts.imp.max_iters = c.max_iters;
    opts.em.tol = c.tol;
    if (c.max_iters > 0) opts.em.max_iters = c.max_iters;
    opts.vdvq.beta = c.beta;
    opts.vdvq.sweeps = c.sweeps;
    opts.vdvq.noise_sd = c.noise_sd;
    opts.vdvq.epsilon = c.epsilon;
    opts.seed = c.seed;
    return opts;
}

void run_ingest(const IngestCmd& c) {
    fs::create_directories(c.out_dir);
    IngestResult res = ingest(c.input, parse_alphabet(c.ratings));
    write_dataset(res.observations, (fs::path(c.out_dir) / c.output).string());
    save_id_map(res.id_map, (fs::path(c.out_dir) / c.idmap).string());
    write_manifest(c.out_dir, "ingest", json(c), {c.output, c.idmap});
    std::cout << "ingested " << res.observations.size() << " observations, " << res.observations.num_users()
              << " users, " << res.observations.num_movies() << " movies\n";
}

void run_sample(const SampleCmd& c) {
    fs::create_directories(c.out_dir);
    GroupModel model = load_model(c.model);
    auto [obs, truth] =
        sample_synthetic(model, c.users, c.movies, EdgeSpec::from_density(c.density), c.seed);
    write_dataset(obs, (fs::path(c.out_dir) / c.output).string());
    write_truth_csv(truth, fs::path(c.out_dir) / c.truth);
    json options(c);
    options["degree_profile"] = "poisson_truncated";  // extra keys are ignored on replay
    write_manifest(c.out_dir, "sample", options, {c.output, c.truth});
    std::cout << "sampled " << obs.size() << " observations\n";
}

void run_init(const InitCmd& c) {
    fs::create_directories(c.out_dir);
    ObservationSet obs = read_dataset(c.data);
    VdvqOptions opts{c.beta, c.sweeps, c.noise_sd, c.epsilon};
    VdvqResult res =
        vdvq_pipeline(obs, c.gu, c.gv, parse_alphabet(c.ratings), opts, substream_seed(c.seed, "init"));
    save_model(res.model, (fs::path(c.out_dir) / c.output).string());
    json report;
    report["empty_kernel_cells"] = res.report.empty_kernel_cells;
    report["merged_users"] = res.report.merged_users;
    report["merged_movies"] = res.report.merged_movies;
    auto rep = open_out(fs::path(c.out_dir) / "init_report.json");
    rep << report.dump(2) << "\n";
    write_manifest(c.out_dir, "init", json(c), {c.output, "init_report.json"});
    std::cout << "wrote " << c.output << "\n";
}

void run_train(const TrainCmd& c) {
    fs::create_directories(c.out_dir);
    ObservationSet obs = read_dataset(c.data);
    TrainOutput res = train(obs, to_train_options(c), {});
    fs::path dir(c.out_dir);
    save_model(res.model, (dir / "model.json").string());
    write_node_posteriors(res.posteriors.user_posteriors, res.posteriors.user_groups, "user",
                          dir / "user_posteriors.csv");
    write_node_posteriors(res.posteriors.movie_posteriors, res.posteriors.movie_groups, "movie",
                          dir / "movie_posteriors.csv");
    write_trace(res.trace, res.trace_kind, res.trace_kind == "nll", dir / "trace.csv");
    write_manifest(c.out_dir, "train", json(c),
                   {"model.json", "user_posteriors.csv", "movie_posteriors.csv", "trace.csv"});
    std::cout << c.alg << ": " << res.iterations << " iterations, "
              << (res.converged ? "converged" : "max_iters reached") << "\n";
}

void run_predict(const PredictCmd& c) {
    fs::create_directories(c.out_dir);
    ObservationSet obs = read_dataset(c.data);
    std::vector<std::pair<int, int>> pairs = read_pairs_csv(c.pairs);
    fs::path dir(c.out_dir);
    PredictionSet pred;
    if (c.estimator == "avg") {
        pred = movie_average_baseline(obs, pairs);
    } else {
        TrainOutput res = train(obs, to_train_options(c.train), pairs);
        if (c.estimator == "r1") {
            pred = predict_r1(res.posteriors);
        } else if (c.estimator == "r2") {
            auto [ug, mg] = map_groups(res.posteriors);
            pred = predict_r2(ug, mg, res.model, pairs);
        } else {
            throw ConfigError("unknown estimator '" + c.estimator + "'");
        }
    }
    write_predictions(pred, dir / "predictions.csv");
    write_manifest(c.out_dir, "predict", json(c), {"predictions.csv"});
    std::cout << "wrote predictions.csv (" << pred.entries.size() << " rows)\n";
}

void run_bound(const BoundCmd& c) {
    BoundParams p{c.gu, c.gv, c.users, c.movies, c.observed, c.delta};
    if (c.sweep_observed.empty()) {
        std::cout << format_double(generalization_bound(p)) << "\n";
        return;
    }
    auto parts = parse_string_list(c.sweep_observed);
    if (parts.size() != 3) throw ConfigError("--sweep-observed expects lo,hi,step");
    long long lo = std::stoll(parts[0]), hi = std::stoll(parts[1]), step = std::stoll(parts[2]);
    if (step <= 0 || lo > hi) throw ConfigError("bad sweep range");
    fs::create_directories(c.out_dir);
    auto out = open_out(fs::path(c.out_dir) / c.csv);
    out << "observed,h\n";
    for (long long o = lo; o <= hi; o += step) {
        p.num_observed = o;
        out << o << ',' << format_double(generalization_bound(p)) << "\n";
    }
    write_manifest(c.out_dir, "bound", json(c), {c.csv});
    std::cout << "wrote " << c.csv << "\n";
}

std::map<int, double> degrees_from_json(const json& j) {
    std::map<int, double> dist;
    for (auto it = j.begin(); it != j.end(); ++it) dist[std::stoi(it.key())] = it.value().get<double>();
    return dist;
}

void run_de(const DeCmd& c) {
    fs::create_directories(c.out_dir);
    GroupModel model = load_model(c.model);
    DegreeDistribution user_deg, movie_deg;
    if (!c.degrees.empty()) {
        std::ifstream in(c.degrees, std::ios::binary);
        if (!in) throw DataError("cannot open " + c.degrees);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw DataError("parse error in " + c.degrees + ": " + e.what());
        }
        user_deg = make_degree_distribution(degrees_from_json(j.at("user")));
        movie_deg = make_degree_distribution(degrees_from_json(j.at("movie")));
    } else if (!c.data.empty()) {
        ObservationSet obs = read_dataset(c.data);
        user_deg = empirical_user_degrees(obs);
        movie_deg = empirical_movie_degrees(obs);
    } else {
        throw ConfigError("de requires --degrees or --data");
    }
    GroupModel gen;
    DeOptions opts;
    opts.literal_degree = c.literal_d;
    if (!c.gen_model.empty()) {
        gen = load_model(c.gen_model);
        opts.generation_model = &gen;
    }

    MessagePopulation pop = de_init(model, c.population, c.seed);
    fs::path dir(c.out_dir);
    auto metrics_csv = open_out(dir / "metrics.csv");
    metrics_csv << "iteration,user_mean_true_belief,user_map_error,movie_mean_true_belief,movie_map_error,"
                   "user_node_mean_true_belief,movie_node_mean_true_belief\n";
    auto entropy_csv = open_out(dir / "entropy.csv");
    entropy_csv << "iteration,side,bin,count\n";
    auto emit = [&](const MessagePopulation& p) {
        DeMetrics m = de_metrics(p);
        auto [ustats, mstats] = de_node_statistics(p, model, user_deg, movie_deg, c.population,
                                                   mix_seed(c.seed, 900 + p.iteration), opts);
        metrics_csv << p.iteration << ',' << format_double(m.user.mean_true_belief) << ','
                    << format_double(m.user.map_error) << ',' << format_double(m.movie.mean_true_belief)
                    << ',' << format_double(m.movie.map_error) << ','
                    << format_double(ustats.mean_true_belief) << ','
                    << format_double(mstats.mean_true_belief) << "\n";
        for (int b = 0; b < 20; ++b)
            entropy_csv << p.iteration << ",user," << b << ','
                        << format_double(m.user.entropy_histogram[b]) << "\n";
        for (int b = 0; b < 20; ++b)
            entropy_csv << p.iteration << ",movie," << b << ','
                        << format_double(m.movie.entropy_histogram[b]) << "\n";
    };
    emit(pop);
    for (int it = 0; it < c.iters; ++it) {
        pop = de_iterate(pop, model, user_deg, movie_deg, c.seed, opts);
        emit(pop);
    }
    write_manifest(c.out_dir, "de", json(c), {"metrics.csv", "entropy.csv"});
    std::cout << "wrote metrics.csv\n";
}

void run_sweep(const SweepCmd& c) {
    fs::create_directories(c.out_dir);
    ObservationSet obs = read_dataset(c.data);
    SweepOptions opts;
    opts.densities = parse_double_list(c.densities);
    for (const std::string& s : parse_string_list(c.seeds)) opts.seeds.push_back(std::stoull(s));
    opts.algorithms = parse_string_list(c.algs);
    opts.validation_count = c.validation;
    opts.train = to_train_options(c.train);
    GroupModel truth_model;
    SyntheticTruth truth;
    if (!c.truth_model.empty() && !c.truth.empty()) {
        truth_model = load_model(c.truth_model);
        truth = read_truth_csv(c.truth);
        opts.truth_model = &truth_model;
        opts.truth = &truth;
    }
    SweepResult res = cold_start_sweep(obs, opts);

    fs::path dir(c.out_dir);
    auto sweep_csv = open_out(dir / "sweep.csv");
    sweep_csv << "density,alg,estimator,seed,rmse,iters\n";
    for (const SweepCell& cell : res.rows)
        sweep_csv << format_double(cell.density) << ',' << cell.alg << ',' << cell.estimator << ','
                  << cell.seed << ',' << format_double(cell.rmse_value) << ',' << cell.iterations << "\n";

    auto cold_csv = open_out(dir / "cold_pairs.csv");
    cold_csv << "density,seed,cold_pairs\n";
    std::map<std::pair<double, std::uint64_t>, std::size_t> cold;
    for (const SweepCell& cell : res.rows) cold[{cell.density, cell.seed}] = cell.cold_pairs;
    for (const auto& [key, count] : cold)
        cold_csv << format_double(key.first) << ',' << key.second << ',' << count << "\n";

    // plot-ready pivot: mean rmse per algorithm, one row per density
    std::vector<std::string> algs = opts.algorithms;
    if (opts.truth_model) algs.push_back("known_groups");
    auto pivot_csv = open_out(dir / "sweep_pivot.csv");
    pivot_csv << "density";
    for (const std::string& a : algs) pivot_csv << ',' << a;
    pivot_csv << "\n";
    for (double d : opts.densities) {
        pivot_csv << format_double(d);
        for (const std::string& a : algs) {
            double sum = 0.0;
            int count = 0;
            for (const SweepCell& cell : res.rows)
                if (cell.density == d && cell.alg == a) {
                    sum += cell.rmse_value;
                    ++count;
                }
            pivot_csv << ',' << format_double(count > 0 ? sum / count : 0.0);
        }
        pivot_csv << "\n";
    }

    json meta(res.metadata);
    auto meta_out = open_out(dir / "sweep_meta.json");
    meta_out << meta.dump(2) << "\n";
    write_manifest(c.out_dir, "sweep", json(c),
                   {"sweep.csv", "cold_pairs.csv", "sweep_pivot.csv", "sweep_meta.json"});
    std::cout << "wrote sweep.csv (" << res.rows.size() << " rows)\n";
}

void dispatch(const std::string& subcommand, const json& options) {
    if (subcommand == "ingest")
        run_ingest(options.get<IngestCmd>());
    else if (subcommand == "sample")
        run_sample(options.get<SampleCmd>());
    else if (subcommand == "init")
        run_init(options.get<InitCmd>());
    else if (subcommand == "train")
        run_train(options.get<TrainCmd>());
    else if (subcommand == "predict")
        run_predict(options.get<PredictCmd>());
    else if (subcommand == "bound")
        run_bound(options.get<BoundCmd>());
    else if (subcommand == "de")
        run_de(options.get<DeCmd>());
    else if (subcommand == "sweep")
        run_sweep(options.get<SweepCmd>());
    else
        throw ConfigError("manifest names unknown subcommand '" + subcommand + "'");
}

void run_replay(const std::string& manifest_path, const std::string& out_dir) {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw DataError("cannot open " + manifest_path);
    json m;
    try {
        m = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("parse error in " + manifest_path + ": " + e.what());
    }
    json options = m.at("options");
    if (!out_dir.empty()) options["out_dir"] = out_dir;
    dispatch(m.at("subcommand").get<std::string>(), options);
}

void add_train_flags(CLI::App* cmd, TrainCmd& c) {
    cmd->add_option("--alg", c.alg, "imp | em");
    cmd->add_option("--init", c.init, "uniform | vdvq");
    cmd->add_option("--gu", c.gu, "user group count");
    cmd->add_option("--gv", c.gv, "movie group count");
    cmd->add_option("--ratings", c.ratings, "alphabet, lo:hi or comma list");
    cmd->add_option("--tol", c.tol, "convergence tolerance");
    cmd->add_option("--max-iters", c.max_iters, "iteration cap (0 = default)");
    cmd->add_option("--damping", c.damping, "message damping, 0 disables");
    cmd->add_option("--beta", c.beta, "VDVQ soft-assignment temperature");
    cmd->add_option("--sweeps", c.sweeps, "VDVQ k-means sweeps per stage");
    cmd->add_option("--noise-sd", c.noise_sd, "VDVQ split perturbation scale");
    cmd->add_option("--epsilon", c.epsilon, "VDVQ belief confidence");
    cmd->add_option("--seed", c.seed, "master seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"factor-graph collaborative filtering toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file; flags win");
    int threads = 0;
    app.add_option("--threads", threads, "worker thread cap (0 = hardware)");

    IngestCmd ingest_cmd;
    auto* ingest_app = app.add_subcommand("ingest", "normalize a raw triple CSV to dense ids");
    ingest_app->add_option("--input", ingest_cmd.input, "raw user,movie,rating CSV")->required();
    ingest_app->add_option("--output", ingest_cmd.output, "normalized dataset name");
    ingest_app->add_option("--idmap", ingest_cmd.idmap, "id map output name");
    ingest_app->add_option("--ratings", ingest_cmd.ratings, "declared alphabet");
    ingest_app->add_option("--out", ingest_cmd.out_dir, "output directory");

    SampleCmd sample_cmd;
    auto* sample_app = app.add_subcommand("sample", "draw a synthetic dataset from a model");
    sample_app->add_option("--model", sample_cmd.model, "model JSON")->required();
    sample_app->add_option("--users", sample_cmd.users, "user count");
    sample_app->add_option("--movies", sample_cmd.movies, "movie count");
    sample_app->add_option("--density", sample_cmd.density, "average observations per user");
    sample_app->add_option("--seed", sample_cmd.seed, "master seed");
    sample_app->add_option("--output", sample_cmd.output, "dataset output name");
    sample_app->add_option("--truth", sample_cmd.truth, "hidden group output name");
    sample_app->add_option("--out", sample_cmd.out_dir, "output directory");

    InitCmd init_cmd;
    int init_groups = 0;
    auto* init_app = app.add_subcommand("init", "VDVQ initialization to a model JSON");
    init_app->add_option("--data", init_cmd.data, "dataset CSV")->required();
    init_app->add_option("--groups", init_groups, "set both group counts");
    init_app->add_option("--gu", init_cmd.gu, "user group count");
    init_app->add_option("--gv", init_cmd.gv, "movie group count");
    init_app->add_option("--beta", init_cmd.beta, "soft-assignment temperature");
    init_app->add_option("--sweeps", init_cmd.sweeps, "k-means sweeps per stage");
    init_app->add_option("--noise-sd", init_cmd.noise_sd, "split perturbation scale");
    init_app->add_option("--epsilon", init_cmd.epsilon, "belief confidence");
    init_app->add_option("--ratings", init_cmd.ratings, "alphabet");
    init_app->add_option("--seed", init_cmd.seed, "master seed");
    init_app->add_option("--output", init_cmd.output, "model output name");
    init_app->add_option("--out", init_cmd.out_dir, "output directory");

    TrainCmd train_cmd;
    auto* train_app = app.add_subcommand("train", "run a learner and write posteriors");
    train_app->add_option("--data", train_cmd.data, "training dataset CSV")->required();
    add_train_flags(train_app, train_cmd);
    train_app->add_option("--out", train_cmd.out_dir, "output directory");

    PredictCmd predict_cmd;
    auto* predict_app = app.add_subcommand("predict", "train and predict ratings for pairs");
    predict_app->add_option("--data", predict_cmd.data, "training dataset CSV")->required();
    predict_app->add_option("--pairs", predict_cmd.pairs, "user,movie pair CSV")->required();
    predict_app->add_option("--estimator", predict_cmd.estimator, "r1 | r2 | avg");
    add_train_flags(predict_app, predict_cmd.train);
    predict_app->add_option("--out", predict_cmd.out_dir, "output directory");

    BoundCmd bound_cmd;
    auto* bound_app = app.add_subcommand("bound", "evaluate the generalization bound");
    bound_app->add_option("--gu", bound_cmd.gu)->required();
    bound_app->add_option("--gv", bound_cmd.gv)->required();
    bound_app->add_option("--users", bound_cmd.users)->required();
    bound_app->add_option("--movies", bound_cmd.movies)->required();
    bound_app->add_option("--observed", bound_cmd.observed, "|O|");
    bound_app->add_option("--delta", bound_cmd.delta);
    bound_app->add_option("--sweep-observed", bound_cmd.sweep_observed, "lo,hi,step CSV sweep over |O|");
    bound_app->add_option("--csv", bound_cmd.csv, "sweep output name");
    bound_app->add_option("--out", bound_cmd.out_dir, "output directory");

    DeCmd de_cmd;
    auto* de_app = app.add_subcommand("de", "density evolution by population dynamics");
    de_app->add_option("--model", de_cmd.model, "model JSON")->required();
    de_app->add_option("--degrees", de_cmd.degrees, "degree distribution JSON");
    de_app->add_option("--data", de_cmd.data, "dataset CSV for empirical degrees");
    de_app->add_option("--gen-model", de_cmd.gen_model, "mismatched generation model JSON");
    de_app->add_option("--iters", de_cmd.iters, "iterations");
    de_app->add_option("--pop", de_cmd.population, "population size");
    de_app->add_flag("--literal-d", de_cmd.literal_d, "combine d (not d-1) incoming messages");
    de_app->add_option("--seed", de_cmd.seed, "master seed");
    de_app->add_option("--out", de_cmd.out_dir, "output directory");

    SweepCmd sweep_cmd;
    auto* sweep_app = app.add_subcommand("sweep", "cold-start RMSE sweep");
    sweep_app->add_option("--data", sweep_cmd.data, "dataset CSV")->required();
    sweep_app->add_option("--algs", sweep_cmd.algs, "comma list: imp,em,movie_avg");
    sweep_app->add_option("--densities", sweep_cmd.densities, "comma list of avg obs per user");
    sweep_app->add_option("--seeds", sweep_cmd.seeds, "comma list of seeds");
    sweep_app->add_option("--validation", sweep_cmd.validation, "validation set size");
    sweep_app->add_option("--truth-model", sweep_cmd.truth_model, "true model JSON for the floor");
    sweep_app->add_option("--truth", sweep_cmd.truth, "true groups CSV for the floor");
    add_train_flags(sweep_app, sweep_cmd.train);
    sweep_app->add_option("--out", sweep_cmd.out_dir, "output directory");

    std::string replay_manifest, replay_out;
    auto* replay_app = app.add_subcommand("replay", "re-run a command from its manifest");
    replay_app->add_option("--manifest", replay_manifest, "manifest.json path")->required();
    replay_app->add_option("--out", replay_out, "override output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (threads > 0) set_max_threads(threads);
        if (init_groups > 0) {
            init_cmd.gu = init_groups;
            init_cmd.gv = init_groups;
        }
        if (ingest_app->parsed()) run_ingest(ingest_cmd);
        if (sample_app->parsed()) run_sample(sample_cmd);
        if (init_app->parsed()) run_init(init_cmd);
        if (train_app->parsed()) run_train(train_cmd);
        if (predict_app->parsed()) run_predict(predict_cmd);
        if (bound_app->parsed()) run_bound(bound_cmd);
        if (de_app->parsed()) run_de(de_cmd);
        if (sweep_app->parsed()) run_sweep(sweep_cmd);
        if (replay_app->parsed()) run_replay(replay_manifest, replay_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
