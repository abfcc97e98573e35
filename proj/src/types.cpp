#include "tierank/types.hpp"

#include <string>

namespace tierank {

ComparisonDataset::ComparisonDataset(int n_items, int n_users,
                                     std::vector<Observation> observations)
    : n_items_(n_items), n_users_(n_users), observations_(std::move(observations)) {
    if (n_items_ < 0 || n_users_ < 0)
        throw ContractError("item and user counts must be non-negative");
    by_user_.resize(static_cast<std::size_t>(n_users_));
    for (std::size_t k = 0; k < observations_.size(); ++k) {
        const Observation& o = observations_[k];
        if (o.user < 0 || o.user >= n_users_)
            throw ContractError("user index out of range at observation " + std::to_string(k));
        if (o.item_i < 0 || o.item_i >= n_items_ || o.item_j < 0 || o.item_j >= n_items_)
            throw ContractError("item index out of range at observation " + std::to_string(k));
        if (o.item_i == o.item_j)
            throw ContractError("self-comparison at observation " + std::to_string(k));
        if (o.label != -1 && o.label != 0 && o.label != 1)
            throw ContractError("label outside {-1,0,1} at observation " + std::to_string(k));
        by_user_[static_cast<std::size_t>(o.user)].push_back(k);
    }
}

ComparisonDataset ComparisonDataset::subset(const std::vector<std::size_t>& indices) const {
    std::vector<Observation> picked;
    picked.reserve(indices.size());
    for (std::size_t k : indices) picked.push_back(observations_.at(k));
    return ComparisonDataset(n_items_, n_users_, std::move(picked));
}

ModelState ModelState::zero_initialized(int n_items, int n_users) {
    ModelState s;
    s.c_s = Eigen::VectorXd::Zero(n_items);
    s.c_lambda = 1.0;
    s.P_s = Eigen::MatrixXd::Zero(n_users, n_items);
    s.P_lambda = Eigen::VectorXd::Zero(n_users);
    s.Gamma_s = Eigen::MatrixXd::Zero(n_users, n_items);
    s.Gamma_lambda = Eigen::VectorXd::Zero(n_users);
    s.Z_s = Eigen::MatrixXd::Zero(n_users, n_items);
    s.Z_lambda = Eigen::VectorXd::Zero(n_users);
    return s;
}

void HyperParams::validate() const {
    if (kappa <= 0.0) throw ContractError("kappa must be positive");
    if (nu <= 0.0) throw ContractError("nu must be positive");
    if (delta <= 0.0) throw ContractError("delta must be positive");
    if (max_iters < 0) throw ContractError("max_iters must be non-negative");
    if (checkpoint_every < 1) throw ContractError("checkpoint_every must be at least 1");
    if (step_policy == StepPolicy::fixed && fixed_alpha <= 0.0)
        throw ContractError("fixed step size must be positive");
    if (step_exponent < 1) throw ContractError("step exponent must be at least 1");
}

}  // namespace tierank
