#pragma once

#include "tierank/optimizer.hpp"
#include "tierank/types.hpp"

namespace tierank {

/// Three-way split of the stacked personalization matrix [P_s | P_lambda]
/// (U x (n+1)): rows on the Gamma support, off-support entries larger than
/// the noise scale, and the rest. The parts have disjoint supports, so they
/// add back to the original exactly and are mutually orthogonal.
struct Decomposition {
    std::vector<bool> support_mask;
    Eigen::MatrixXd abnormal;      // P restricted to supported users
    Eigen::MatrixXd personalized;  // off-support entries with |value| > noise_scale
    Eigen::MatrixXd noise;         // remaining entries
    double noise_scale = 0.0;      // 3 x 1.4826 x MAD of off-support entries
};

/// Users whose [Gamma_s row, Gamma_lambda] group is nonzero.
std::vector<bool> support_set(const ModelState& state);

Decomposition decompose(const ModelState& state);

/// Per-user L2 distance between the individualized and common ranking,
/// ||s^u - c_s|| = ||P_s row u||.
Eigen::VectorXd user_deviation(const ModelState& state);

/// Users ordered by support-entry iteration, earliest (most abnormal) first.
/// Users that never entered come last, by user id.
std::vector<int> rank_users_by_abnormality(const PathRecord& path);

/// First (respectively last) round(q * size) users of a ranking.
std::vector<int> top_fraction(const std::vector<int>& ranking, double q);
std::vector<int> bottom_fraction(const std::vector<int>& ranking, double q);

}  // namespace tierank
