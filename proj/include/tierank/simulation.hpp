#pragma once

#include "tierank/types.hpp"

namespace tierank {

struct SimulationConfig {
    int n_items = 20;
    int n_users = 50;
    double score_sd = 5.0;        // common and abnormal scores ~ N(0, sd^2)
    double p_abnormal = 0.2;      // chance of a nonzero personal block
    double c_lambda_true = 1.5;
    int samples_min = 200;        // N^u ~ uniform integer in [min, max]
    int samples_max = 400;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GroundTruth {
    Eigen::VectorXd c_s_true;
    double c_lambda_true = 0.0;
    Eigen::MatrixXd P_s_true;
    Eigen::VectorXd P_lambda_true;
    std::vector<bool> abnormal_mask;
};

struct SimulatedData {
    ComparisonDataset dataset;
    GroundTruth truth;
};

/// Draws common scores, flips each user's abnormality coin (abnormal users
/// get N(0, sd^2) score offsets and a c_lambda * U(-0.5, 0.5) threshold
/// offset), then samples N^u unordered item pairs per user with replacement
/// and labels them from the model probabilities. Deterministic given seed.
SimulatedData generate(const SimulationConfig& config);

}  // namespace tierank
