#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tierank {

// Error taxonomy surfaced by the CLI as machine-parsable categories.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, long line) : std::runtime_error(what), line(line) {}
    long line;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One ternary comparison: `user` judged item_i vs item_j as win (+1),
/// tie (0) or loss (-1) for item_i.
struct Observation {
    int user;
    int item_i;
    int item_j;
    int label;
};

/// A collection of comparisons over `n_items` items by `n_users` users,
/// with an index grouping observations by user. Validates index ranges,
/// label domain and i != j at construction.
class ComparisonDataset {
  public:
    ComparisonDataset(int n_items, int n_users, std::vector<Observation> observations);

    int n_items() const { return n_items_; }
    int n_users() const { return n_users_; }
    const std::vector<Observation>& observations() const { return observations_; }
    std::size_t size() const { return observations_.size(); }
    bool empty() const { return observations_.empty(); }

    /// Observation indices of each user, in original file/generation order.
    /// Every user in 0..n_users-1 has an entry (possibly empty).
    const std::vector<std::vector<std::size_t>>& by_user() const { return by_user_; }

    ComparisonDataset subset(const std::vector<std::size_t>& indices) const;

  private:
    int n_items_;
    int n_users_;
    std::vector<Observation> observations_;
    std::vector<std::vector<std::size_t>> by_user_;
};

/// All parameters of one path point. Scores are full-length per user;
/// items a user never compared simply receive zero likelihood gradient.
struct ModelState {
    Eigen::VectorXd c_s;          // common scores, length n
    double c_lambda = 1.0;        // common tie threshold
    Eigen::MatrixXd P_s;          // dense personal score offsets, U x n
    Eigen::VectorXd P_lambda;     // dense personal threshold offsets, length U
    Eigen::MatrixXd Gamma_s;      // sparse strong signals, U x n
    Eigen::VectorXd Gamma_lambda; // length U
    Eigen::MatrixXd Z_s;          // dual variables, U x n
    Eigen::VectorXd Z_lambda;     // length U

    /// c_lambda = 1, everything else zero.
    static ModelState zero_initialized(int n_items, int n_users);

    int n_items() const { return static_cast<int>(c_s.size()); }
    int n_users() const { return static_cast<int>(P_lambda.size()); }

    /// s^u_i - s^u_j with s^u = c_s + P_s row u.
    double score_diff(int user, int item_i, int item_j) const {
        return (c_s[item_i] + P_s(user, item_i)) - (c_s[item_j] + P_s(user, item_j));
    }
    /// lambda^u = c_lambda + P_lambda[u].
    double threshold(int user) const { return c_lambda + P_lambda[user]; }
};

enum class StepPolicy { auto_bound, fixed };

struct HyperParams {
    double kappa = 120.0;
    double nu = 0.05;
    double delta = 0.01;
    StepPolicy step_policy = StepPolicy::auto_bound;
    double fixed_alpha = 0.0;  // used when step_policy == fixed
    int step_exponent = 1;     // e in alpha = 1/(kappa * B^e)
    int max_iters = 40000;
    int checkpoint_every = 250;
    int cv_folds = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

}  // namespace tierank
