#include "tierank/simulation.hpp"

#include "tierank/model.hpp"
#include "tierank/rng.hpp"

namespace tierank {

void SimulationConfig::validate() const {
    if (n_items < 2) throw ContractError("simulation needs at least 2 items");
    if (n_users < 1) throw ContractError("simulation needs at least 1 user");
    if (!(p_abnormal >= 0.0 && p_abnormal <= 1.0))
        throw ContractError("p_abnormal must be in [0, 1]");
    if (!(score_sd > 0.0)) throw ContractError("score_sd must be positive");
    if (!(c_lambda_true > 0.0)) throw ContractError("c_lambda_true must be positive");
    if (samples_min < 0 || samples_min > samples_max)
        throw ContractError("need 0 <= samples_min <= samples_max");
}

SimulatedData generate(const SimulationConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const int n = config.n_items;
    const int n_users = config.n_users;

    GroundTruth truth;
    truth.c_s_true = Eigen::VectorXd(n);
    for (int i = 0; i < n; ++i) truth.c_s_true[i] = rng.normal(0.0, config.score_sd);
    truth.c_lambda_true = config.c_lambda_true;
    truth.P_s_true = Eigen::MatrixXd::Zero(n_users, n);
    truth.P_lambda_true = Eigen::VectorXd::Zero(n_users);
    truth.abnormal_mask.assign(static_cast<std::size_t>(n_users), false);

    std::vector<Observation> observations;
    for (int u = 0; u < n_users; ++u) {
        if (rng.uniform() < config.p_abnormal) {
            truth.abnormal_mask[static_cast<std::size_t>(u)] = true;
            for (int i = 0; i < n; ++i) truth.P_s_true(u, i) = rng.normal(0.0, config.score_sd);
            // |p_lambda| <= c_lambda / 2, so lambda^u stays positive without clamping.
            truth.P_lambda_true[u] = config.c_lambda_true * rng.uniform(-0.5, 0.5);
        }
        const int n_samples = rng.uniform_int(config.samples_min, config.samples_max);
        const double lambda_u = config.c_lambda_true + truth.P_lambda_true[u];
        for (int s = 0; s < n_samples; ++s) {
            // Unordered pair, uniform with replacement across samples.
            int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
            if (b >= a) ++b;
            const int i = std::min(a, b);
            const int j = std::max(a, b);
            const double d =
                (truth.c_s_true[i] + truth.P_s_true(u, i)) - (truth.c_s_true[j] + truth.P_s_true(u, j));
            const ClassProbabilities p = class_probabilities(d, lambda_u);
            const double r = rng.uniform();
            const int label = r < p.p_win ? 1 : (r < p.p_win + p.p_tie ? 0 : -1);
            observations.push_back(Observation{u, i, j, label});
        }
    }

    return SimulatedData{ComparisonDataset(n, n_users, std::move(observations)),
                         std::move(truth)};
}

}  // namespace tierank
