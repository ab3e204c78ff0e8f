#pragma once

#include <span>
#include <vector>

#include "factorcf/model.hpp"

namespace factorcf {

// Shared numeric floor: kernel entries are clamped to >= 1e-12 before use in
// message updates so exact zeros cannot produce zero normalizers.
inline constexpr double kKernelFloor = 1e-12;

struct FlooredKernel {
    int user_groups;
    int movie_groups;
    int num_ratings;
    Vec values;  // [u][v][r], clamped

    explicit FlooredKernel(const GroupModel& m)
        : user_groups(m.num_user_groups),
          movie_groups(m.num_movie_groups),
          num_ratings(m.num_ratings()),
          values(m.kernel) {
        for (double& x : values)
            if (x < kKernelFloor) x = kKernelFloor;
    }

    double w(int u, int v, int r) const {
        return values[(static_cast<std::size_t>(u) * movie_groups + v) * num_ratings + r];
    }

    /// factor(u) = sum_v w(r|u,v) * belief(v): one incoming movie message
    /// folded through the kernel.
    void fold_movie_belief(int r, std::span<const double> movie_belief, std::span<double> out) const {
        for (int u = 0; u < user_groups; ++u) {
            const double* row = values.data() +
                                (static_cast<std::size_t>(u) * movie_groups) * num_ratings + r;
            double s = 0.0;
            for (int v = 0; v < movie_groups; ++v) s += row[static_cast<std::size_t>(v) * num_ratings] * movie_belief[v];
            out[u] = s;
        }
    }

    /// factor(v) = sum_u w(r|u,v) * belief(u)
    void fold_user_belief(int r, std::span<const double> user_belief, std::span<double> out) const {
        for (int v = 0; v < movie_groups; ++v) out[v] = 0.0;
        for (int u = 0; u < user_groups; ++u) {
            const double* row = values.data() +
                                (static_cast<std::size_t>(u) * movie_groups) * num_ratings + r;
            double a = user_belief[u];
            for (int v = 0; v < movie_groups; ++v) out[v] += row[static_cast<std::size_t>(v) * num_ratings] * a;
        }
    }
};

/// Per-edge rating indices into the model alphabet; rejects ratings the model
/// does not know.
inline std::vector<int> edge_rating_indices(const GroupModel& model, const ObservationSet& obs) {
    std::vector<int> idx(obs.size());
    for (std::size_t e = 0; e < obs.size(); ++e) {
        int r = model.rating_index(obs.triple(e).rating);
        if (r < 0)
            throw DataError("rating " + std::to_string(obs.triple(e).rating) +
                            " not in the model alphabet (edge " + std::to_string(e) + ")");
        idx[e] = r;
    }
    return idx;
}

}  // namespace factorcf
