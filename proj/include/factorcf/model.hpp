#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "factorcf/common.hpp"
#include "factorcf/rng.hpp"

namespace factorcf {

// Generative model: hidden user/movie groups with priors p_U, p_V and a
// conditional rating kernel w(r|u,v). Group indices are 0-based.
struct GroupModel {
    int num_user_groups = 1;   // g_u
    int num_movie_groups = 1;  // g_v
    std::vector<int> rating_alphabet;
    Vec user_prior;   // p_U, length g_u
    Vec movie_prior;  // p_V, length g_v
    Vec kernel;       // w(r|u,v), row-major [u][v][r]

    int num_ratings() const { return static_cast<int>(rating_alphabet.size()); }

    double w(int u, int v, int r_idx) const {
        return kernel[(static_cast<std::size_t>(u) * num_movie_groups + v) * rating_alphabet.size() + r_idx];
    }
    double& w(int u, int v, int r_idx) {
        return kernel[(static_cast<std::size_t>(u) * num_movie_groups + v) * rating_alphabet.size() + r_idx];
    }
    std::span<const double> kernel_row(int u, int v) const {
        return {kernel.data() + (static_cast<std::size_t>(u) * num_movie_groups + v) * rating_alphabet.size(),
                rating_alphabet.size()};
    }

    /// Index of a rating value in the alphabet, -1 if absent.
    int rating_index(int rating) const {
        for (int i = 0; i < num_ratings(); ++i)
            if (rating_alphabet[i] == rating) return i;
        return -1;
    }

    static GroupModel uniform(int gu, int gv, std::vector<int> alphabet) {
        GroupModel m;
        m.num_user_groups = gu;
        m.num_movie_groups = gv;
        m.rating_alphabet = std::move(alphabet);
        m.user_prior.assign(gu, 1.0 / gu);
        m.movie_prior.assign(gv, 1.0 / gv);
        m.kernel.assign(static_cast<std::size_t>(gu) * gv * m.rating_alphabet.size(),
                        1.0 / m.rating_alphabet.size());
        return m;
    }
};

struct ValidationReport {
    bool ok = true;
    std::string message;  // first violated invariant, with indices
};

inline ValidationReport fail(std::string msg) { return {false, std::move(msg)}; }

/// Report-style model check; returns the first violated invariant.
inline ValidationReport validate_model(const GroupModel& m) {
    if (m.num_user_groups < 1) return fail("g_u must be >= 1, got " + std::to_string(m.num_user_groups));
    if (m.num_movie_groups < 1) return fail("g_v must be >= 1, got " + std::to_string(m.num_movie_groups));
    if (m.rating_alphabet.empty()) return fail("rating alphabet is empty");
    for (std::size_t i = 1; i < m.rating_alphabet.size(); ++i)
        if (m.rating_alphabet[i] <= m.rating_alphabet[i - 1])
            return fail("rating alphabet not strictly increasing at position " + std::to_string(i));
    const double tol = 1e-12;
    auto check_prior = [&](const Vec& p, int g, const char* name) -> ValidationReport {
        if (static_cast<int>(p.size()) != g)
            return fail(std::string(name) + " has length " + std::to_string(p.size()) +
                        ", expected " + std::to_string(g));
        double s = 0.0;
        for (int i = 0; i < g; ++i) {
            if (!(p[i] >= 0.0) || p[i] > 1.0 + tol)
                return fail(std::string(name) + "[" + std::to_string(i) + "] = " +
                            std::to_string(p[i]) + " outside [0,1]");
            s += p[i];
        }
        if (std::fabs(s - 1.0) > tol)
            return fail(std::string(name) + " sums to " + std::to_string(s));
        return {};
    };
    if (auto r = check_prior(m.user_prior, m.num_user_groups, "p_U"); !r.ok) return r;
    if (auto r = check_prior(m.movie_prior, m.num_movie_groups, "p_V"); !r.ok) return r;
    if (m.kernel.size() !=
        static_cast<std::size_t>(m.num_user_groups) * m.num_movie_groups * m.rating_alphabet.size())
        return fail("kernel has " + std::to_string(m.kernel.size()) + " entries, expected " +
                    std::to_string(static_cast<std::size_t>(m.num_user_groups) * m.num_movie_groups *
                                   m.rating_alphabet.size()));
    for (int u = 0; u < m.num_user_groups; ++u)
        for (int v = 0; v < m.num_movie_groups; ++v) {
            double s = 0.0;
            for (int r = 0; r < m.num_ratings(); ++r) {
                double x = m.w(u, v, r);
                if (!(x >= 0.0) || x > 1.0 + tol)
                    return fail("w(r=" + std::to_string(m.rating_alphabet[r]) + "|u=" + std::to_string(u) +
                                ",v=" + std::to_string(v) + ") = " + std::to_string(x) + " outside [0,1]");
                s += x;
            }
            if (std::fabs(s - 1.0) > tol)
                return fail("kernel row (u=" + std::to_string(u) + ",v=" + std::to_string(v) +
                            ") sums to " + std::to_string(s));
        }
    return {};
}

inline void require_valid(const GroupModel& m) {
    auto r = validate_model(m);
    if (!r.ok) throw ConfigError("invalid model: " + r.message);
}

struct Triple {
    int user;
    int movie;
    int rating;
    bool operator==(const Triple&) const = default;
};

// Sparse observation set with CSR adjacency on both sides. Adjacency entries
// are edge ids, i.e. indices into `triples`. Immutable after construction.
class ObservationSet {
  public:
    ObservationSet() = default;

    ObservationSet(int num_users, int num_movies, std::vector<Triple> triples)
        : num_users_(num_users), num_movies_(num_movies), triples_(std::move(triples)) {
        if (num_users_ < 0 || num_movies_ < 0) throw DataError("negative matrix dimensions");
        build_adjacency();
        check_consistent();
    }

    int num_users() const { return num_users_; }
    int num_movies() const { return num_movies_; }
    std::size_t size() const { return triples_.size(); }
    const std::vector<Triple>& triples() const { return triples_; }
    const Triple& triple(std::size_t e) const { return triples_[e]; }

    std::span<const int> edges_of_user(int n) const {
        return {user_edges_.data() + user_offsets_[n],
                static_cast<std::size_t>(user_offsets_[n + 1] - user_offsets_[n])};
    }
    std::span<const int> edges_of_movie(int m) const {
        return {movie_edges_.data() + movie_offsets_[m],
                static_cast<std::size_t>(movie_offsets_[m + 1] - movie_offsets_[m])};
    }
    int user_degree(int n) const { return user_offsets_[n + 1] - user_offsets_[n]; }
    int movie_degree(int m) const { return movie_offsets_[m + 1] - movie_offsets_[m]; }

    /// Edge id of pair (n, m), or -1 when unobserved.
    int find_edge(int n, int m) const {
        if (n < 0 || n >= num_users_ || m < 0 || m >= num_movies_) return -1;
        for (int e : edges_of_user(n))
            if (triples_[e].movie == m) return e;
        return -1;
    }

    /// Re-derives the pair relation from both adjacency sides and the triple
    /// list; throws if they disagree.
    void check_consistent() const {
        std::size_t from_users = 0, from_movies = 0;
        for (int n = 0; n < num_users_; ++n)
            for (int e : edges_of_user(n)) {
                if (triples_[e].user != n) throw DataError("user adjacency disagrees with triple list");
                ++from_users;
            }
        for (int m = 0; m < num_movies_; ++m)
            for (int e : edges_of_movie(m)) {
                if (triples_[e].movie != m) throw DataError("movie adjacency disagrees with triple list");
                ++from_movies;
            }
        if (from_users != triples_.size() || from_movies != triples_.size())
            throw DataError("adjacency does not cover the triple list");
    }

  private:
    void build_adjacency() {
        user_offsets_.assign(num_users_ + 1, 0);
        movie_offsets_.assign(num_movies_ + 1, 0);
        for (std::size_t e = 0; e < triples_.size(); ++e) {
            const Triple& t = triples_[e];
            if (t.user < 0 || t.user >= num_users_)
                throw DataError("user index " + std::to_string(t.user) + " out of range at triple " +
                                std::to_string(e));
            if (t.movie < 0 || t.movie >= num_movies_)
                throw DataError("movie index " + std::to_string(t.movie) + " out of range at triple " +
                                std::to_string(e));
            ++user_offsets_[t.user + 1];
            ++movie_offsets_[t.movie + 1];
        }
        for (int n = 0; n < num_users_; ++n) user_offsets_[n + 1] += user_offsets_[n];
        for (int m = 0; m < num_movies_; ++m) movie_offsets_[m + 1] += movie_offsets_[m];
        user_edges_.resize(triples_.size());
        movie_edges_.resize(triples_.size());
        std::vector<int> ucur(user_offsets_.begin(), user_offsets_.end() - 1);
        std::vector<int> mcur(movie_offsets_.begin(), movie_offsets_.end() - 1);
        for (std::size_t e = 0; e < triples_.size(); ++e) {
            user_edges_[ucur[triples_[e].user]++] = static_cast<int>(e);
            movie_edges_[mcur[triples_[e].movie]++] = static_cast<int>(e);
        }
        // duplicate (n,m) detection
        std::unordered_set<std::uint64_t> seen;
        seen.reserve(triples_.size() * 2);
        for (const Triple& t : triples_) {
            std::uint64_t key = (static_cast<std::uint64_t>(t.user) << 32) | static_cast<std::uint32_t>(t.movie);
            if (!seen.insert(key).second)
                throw DataError("duplicate observation for user " + std::to_string(t.user) + ", movie " +
                                std::to_string(t.movie));
        }
    }

    int num_users_ = 0;
    int num_movies_ = 0;
    std::vector<Triple> triples_;
    std::vector<int> user_offsets_, user_edges_;
    std::vector<int> movie_offsets_, movie_edges_;
};

struct SyntheticTruth {
    std::vector<int> user_groups;   // length N, entries in [0, g_u)
    std::vector<int> movie_groups;  // length M, entries in [0, g_v)
};

// Edge attachment: either an explicit pair set or a target average number of
// observations per user.
struct EdgeSpec {
    bool explicit_pairs = false;
    std::vector<std::pair<int, int>> pairs;
    double avg_obs_per_user = 0.0;

    static EdgeSpec from_pairs(std::vector<std::pair<int, int>> p) {
        EdgeSpec s;
        s.explicit_pairs = true;
        s.pairs = std::move(p);
        return s;
    }
    static EdgeSpec from_density(double avg_per_user) {
        EdgeSpec s;
        s.avg_obs_per_user = avg_per_user;
        return s;
    }
};

namespace detail {

// Configuration-model attachment: per-user Poisson(avg) degrees truncated to
// [0, M] emit user sockets; movies fill slots round-robin and a random
// permutation matches the two. Colliding sockets are redrawn uniformly,
// at most 100 times each.
inline std::vector<std::pair<int, int>> attach_edges(int num_users, int num_movies, double avg_per_user,
                                                     Rng& rng) {
    std::vector<int> sockets;
    for (int n = 0; n < num_users; ++n) {
        int d = rng.poisson(avg_per_user);
        d = std::min(d, num_movies);
        for (int k = 0; k < d; ++k) sockets.push_back(n);
    }
    rng.shuffle(sockets);
    std::vector<std::pair<int, int>> edges;
    edges.reserve(sockets.size());
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(sockets.size() * 2);
    auto key = [](int n, int m) {
        return (static_cast<std::uint64_t>(n) << 32) | static_cast<std::uint32_t>(m);
    };
    for (std::size_t t = 0; t < sockets.size(); ++t) {
        int n = sockets[t];
        int m = static_cast<int>(t % num_movies);
        int tries = 0;
        while (seen.count(key(n, m))) {
            if (++tries > 100)
                throw NumericError("edge attachment failed for user " + std::to_string(n) +
                                   " after 100 redraws");
            m = static_cast<int>(rng.uniform_int(num_movies));
        }
        seen.insert(key(n, m));
        edges.emplace_back(n, m);
    }
    return edges;
}

}  // namespace detail

/// Samples hidden groups and observed ratings from the model. Pure function
/// of (model, N, M, edge_spec, seed).
inline std::pair<ObservationSet, SyntheticTruth> sample_synthetic(const GroupModel& model, int num_users,
                                                                  int num_movies, const EdgeSpec& spec,
                                                                  std::uint64_t seed) {
    require_valid(model);
    if (num_users < 1 || num_movies < 1) throw ConfigError("sample_synthetic: N, M must be >= 1");
    if (!spec.explicit_pairs && spec.avg_obs_per_user > num_movies)
        throw ConfigError("target density " + std::to_string(spec.avg_obs_per_user) +
                          " exceeds movie count " + std::to_string(num_movies));

    Rng group_rng = Rng::substream(seed, "groups");
    SyntheticTruth truth;
    truth.user_groups.resize(num_users);
    truth.movie_groups.resize(num_movies);
    for (int n = 0; n < num_users; ++n) truth.user_groups[n] = group_rng.discrete(model.user_prior);
    for (int m = 0; m < num_movies; ++m) truth.movie_groups[m] = group_rng.discrete(model.movie_prior);

    std::vector<std::pair<int, int>> pairs;
    if (spec.explicit_pairs) {
        pairs = spec.pairs;
    } else {
        Rng edge_rng = Rng::substream(seed, "edges");
        pairs = detail::attach_edges(num_users, num_movies, spec.avg_obs_per_user, edge_rng);
    }

    Rng rating_rng = Rng::substream(seed, "ratings");
    std::vector<Triple> triples;
    triples.reserve(pairs.size());
    for (auto [n, m] : pairs) {
        int r_idx = rating_rng.discrete(model.kernel_row(truth.user_groups[n], truth.movie_groups[m]));
        triples.push_back({n, m, model.rating_alphabet[r_idx]});
    }
    return {ObservationSet(num_users, num_movies, std::move(triples)), std::move(truth)};
}

}  // namespace factorcf
