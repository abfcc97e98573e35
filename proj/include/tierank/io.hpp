#pragma once

#include <filesystem>
#include <map>

#include "tierank/evaluation.hpp"
#include "tierank/optimizer.hpp"
#include "tierank/simulation.hpp"
#include "tierank/types.hpp"

namespace tierank {

/// Original string ids, indexed by the contiguous internal index.
struct IdMaps {
    std::vector<std::string> users;
    std::vector<std::string> items;
};

IdMaps default_ids(int n_users, int n_items);  // "u0", "u1", ... / "i0", "i1", ...

struct LoadedDataset {
    ComparisonDataset dataset;
    IdMaps ids;
};

/// Comparison CSV: header `user,item_i,item_j,label`, one observation per
/// line, label in {-1,0,1}. String ids are mapped to contiguous indices in
/// first-appearance order. Parse errors carry the 1-based line number.
/// A header-only file needs `n_items_hint` to determine the item count.
LoadedDataset read_comparisons(const std::filesystem::path& path,
                               std::optional<int> n_items_hint = std::nullopt);

void write_comparisons(const std::filesystem::path& path, const ComparisonDataset& data,
                       const IdMaps& ids);

/// Ground-truth sidecar JSON: keys c_s, c_lambda, P_s, P_lambda, abnormal_mask.
void write_ground_truth(const std::filesystem::path& path, const GroundTruth& truth);
GroundTruth read_ground_truth(const std::filesystem::path& path);

/// A fitted model: full state, the id maps and the hyperparameters used.
struct SavedModel {
    ModelState state;
    IdMaps ids;
    HyperParams hp;
    double selected_tau = 0.0;
};

void write_model(const std::filesystem::path& path, const SavedModel& model);
SavedModel read_model(const std::filesystem::path& path);

/// Plot-ready path summary: per checkpoint tau, support size and data NLL,
/// plus per-user support entry iterations.
struct PathSummary {
    double alpha = 0.0;
    struct Checkpoint {
        int iteration;
        double tau;
        int support_size;
        double nll;
    };
    std::vector<Checkpoint> checkpoints;
    std::vector<std::optional<int>> support_entry;
    std::vector<std::string> users;
};

PathSummary summarize_path(const PathRecord& path, const ComparisonDataset& data,
                           const IdMaps& ids);
void write_path_summary(const std::filesystem::path& path, const PathSummary& summary);
PathSummary read_path_summary(const std::filesystem::path& path);
void write_path_csv(const std::filesystem::path& path, const PathSummary& summary);

void write_report(const std::filesystem::path& path, const ExperimentReport& report);

/// Flat key=value config file; unknown keys are rejected. Blank lines and
/// lines starting with '#' are skipped.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

}  // namespace tierank
