#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "factorcf/model.hpp"

namespace factorcf {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// number formatting: shortest round-trip representation, locale independent
// ---------------------------------------------------------------------------

inline std::string format_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// model file: JSON with g_u, g_v, ratings, p_u, p_v, w as nested [u][v][r]
// ---------------------------------------------------------------------------

inline json model_to_json(const GroupModel& m) {
    json j;
    j["g_u"] = m.num_user_groups;
    j["g_v"] = m.num_movie_groups;
    j["ratings"] = m.rating_alphabet;
    j["p_u"] = m.user_prior;
    j["p_v"] = m.movie_prior;
    json w = json::array();
    for (int u = 0; u < m.num_user_groups; ++u) {
        json row_u = json::array();
        for (int v = 0; v < m.num_movie_groups; ++v) {
            json row_v = json::array();
            for (int r = 0; r < m.num_ratings(); ++r) row_v.push_back(m.w(u, v, r));
            row_u.push_back(std::move(row_v));
        }
        w.push_back(std::move(row_u));
    }
    j["w"] = std::move(w);
    return j;
}

inline void save_model(const GroupModel& m, const std::string& path) {
    require_valid(m);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << model_to_json(m).dump(2) << "\n";
}

inline GroupModel model_from_json(const json& j) {
    GroupModel m;
    try {
        m.num_user_groups = j.at("g_u").get<int>();
        m.num_movie_groups = j.at("g_v").get<int>();
        m.rating_alphabet = j.at("ratings").get<std::vector<int>>();
        m.user_prior = j.at("p_u").get<Vec>();
        m.movie_prior = j.at("p_v").get<Vec>();
        const json& w = j.at("w");
        if (static_cast<int>(w.size()) != m.num_user_groups)
            throw DataError("model field w: expected " + std::to_string(m.num_user_groups) + " user rows");
        m.kernel.reserve(static_cast<std::size_t>(m.num_user_groups) * m.num_movie_groups *
                         m.rating_alphabet.size());
        for (const auto& row_u : w) {
            if (static_cast<int>(row_u.size()) != m.num_movie_groups)
                throw DataError("model field w: ragged movie dimension");
            for (const auto& row_v : row_u) {
                if (row_v.size() != m.rating_alphabet.size())
                    throw DataError("model field w: ragged rating dimension");
                for (const auto& x : row_v) m.kernel.push_back(x.get<double>());
            }
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model file: ") + e.what());
    }
    auto report = validate_model(m);
    if (!report.ok) throw DataError("model file fails validation: " + report.message);
    return m;
}

inline GroupModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("parse error in " + path + ": " + e.what());
    }
    return model_from_json(j);
}

// ---------------------------------------------------------------------------
// dataset file: CSV `user,movie,rating`, 0-based dense indices
// ---------------------------------------------------------------------------

inline void write_dataset(const ObservationSet& obs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << "user,movie,rating\n";
    for (const Triple& t : obs.triples())
        out << t.user << ',' << t.movie << ',' << t.rating << "\n";
}

namespace detail {

inline int parse_int_field(const std::string& field, const std::string& path, std::size_t line) {
    int value = 0;
    const char* b = field.data();
    const char* e = b + field.size();
    auto res = std::from_chars(b, e, value);
    if (res.ec != std::errc() || res.ptr != e)
        throw DataError(path + ":" + std::to_string(line) + ": expected integer, got '" + field + "'");
    return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

/// Reads a dense 0-based dataset CSV. Dimensions default to 1 + max index
/// unless larger values are given.
inline ObservationSet read_dataset(const std::string& path, int num_users = 0, int num_movies = 0) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    ++lineno;
    if (detail::split_csv_line(line) != std::vector<std::string>{"user", "movie", "rating"})
        throw DataError(path + ":1: expected header 'user,movie,rating'");
    std::vector<Triple> triples;
    int max_user = -1, max_movie = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 fields, got " +
                            std::to_string(fields.size()));
        Triple t{detail::parse_int_field(fields[0], path, lineno),
                 detail::parse_int_field(fields[1], path, lineno),
                 detail::parse_int_field(fields[2], path, lineno)};
        if (t.user < 0 || t.movie < 0)
            throw DataError(path + ":" + std::to_string(lineno) + ": negative index");
        max_user = std::max(max_user, t.user);
        max_movie = std::max(max_movie, t.movie);
        triples.push_back(t);
    }
    return ObservationSet(std::max(num_users, max_user + 1), std::max(num_movies, max_movie + 1),
                          std::move(triples));
}

// ---------------------------------------------------------------------------
// ingestion: raw triples with arbitrary integer ids -> dense 0-based ids
// ---------------------------------------------------------------------------

struct IdMap {
    std::vector<long long> users;   // dense index -> original id
    std::vector<long long> movies;
};

struct IngestResult {
    ObservationSet observations;
    IdMap id_map;
};

/// Reads a raw `user,movie,rating` CSV, compacting sparse ids in first-appearance
/// order. Ratings must lie in `alphabet`; duplicate pairs are an error.
inline IngestResult ingest(const std::string& path, const std::vector<int>& alphabet) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    ++lineno;
    if (detail::split_csv_line(line) != std::vector<std::string>{"user", "movie", "rating"})
        throw DataError(path + ":1: expected header 'user,movie,rating'");

    IdMap ids;
    std::unordered_map<long long, int> user_index, movie_index;
    std::unordered_set<std::uint64_t> seen;
    std::vector<Triple> triples;
    auto intern = [](std::unordered_map<long long, int>& index, std::vector<long long>& order,
                     long long id) {
        auto [it, inserted] = index.try_emplace(id, static_cast<int>(order.size()));
        if (inserted) order.push_back(id);
        return it->second;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 fields, got " +
                            std::to_string(fields.size()));
        long long raw_user, raw_movie;
        {
            auto parse_ll = [&](const std::string& f) {
                long long v = 0;
                auto res = std::from_chars(f.data(), f.data() + f.size(), v);
                if (res.ec != std::errc() || res.ptr != f.data() + f.size())
                    throw DataError(path + ":" + std::to_string(lineno) + ": expected integer, got '" + f +
                                    "'");
                return v;
            };
            raw_user = parse_ll(fields[0]);
            raw_movie = parse_ll(fields[1]);
        }
        int rating = detail::parse_int_field(fields[2], path, lineno);
        bool in_alphabet = false;
        for (int a : alphabet) in_alphabet |= (a == rating);
        if (!in_alphabet)
            throw DataError(path + ":" + std::to_string(lineno) + ": rating " + std::to_string(rating) +
                            " outside declared alphabet");
        int n = intern(user_index, ids.users, raw_user);
        int m = intern(movie_index, ids.movies, raw_movie);
        std::uint64_t key = (static_cast<std::uint64_t>(n) << 32) | static_cast<std::uint32_t>(m);
        if (!seen.insert(key).second)
            throw DataError(path + ":" + std::to_string(lineno) + ": duplicate (user,movie) pair");
        triples.push_back({n, m, rating});
    }
    return {ObservationSet(static_cast<int>(ids.users.size()), static_cast<int>(ids.movies.size()),
                           std::move(triples)),
            std::move(ids)};
}

inline void save_id_map(const IdMap& ids, const std::string& path) {
    json j;
    j["users"] = ids.users;
    j["movies"] = ids.movies;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

inline IdMap load_id_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("parse error in " + path + ": " + e.what());
    }
    IdMap ids;
    ids.users = j.at("users").get<std::vector<long long>>();
    ids.movies = j.at("movies").get<std::vector<long long>>();
    return ids;
}

/// Parses an alphabet flag: either "lo:hi" or a comma list "1,2,3".
inline std::vector<int> parse_alphabet(const std::string& text) {
    std::vector<int> out;
    if (auto colon = text.find(':'); colon != std::string::npos) {
        int lo = detail::parse_int_field(text.substr(0, colon), "<ratings>", 0);
        int hi = detail::parse_int_field(text.substr(colon + 1), "<ratings>", 0);
        if (hi < lo) throw ConfigError("rating range is empty: " + text);
        for (int r = lo; r <= hi; ++r) out.push_back(r);
    } else {
        for (const std::string& f : detail::split_csv_line(text))
            out.push_back(detail::parse_int_field(f, "<ratings>", 0));
    }
    if (out.empty()) throw ConfigError("empty rating alphabet");
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i] <= out[i - 1]) throw ConfigError("rating alphabet must be strictly increasing");
    return out;
}

}  // namespace factorcf
