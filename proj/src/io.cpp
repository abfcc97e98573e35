#include "tierank/io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "tierank/analysis.hpp"

namespace tierank {

using nlohmann::json;

namespace {

constexpr const char* kComparisonHeader = "user,item_i,item_j,label";

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    return in;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::VectorXd vector_from_json(const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
    if (rows.empty()) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw ParseError("ragged matrix in JSON input", 0);
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    }
    return m;
}

json parse_json_file(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid JSON in ") + path.string() + ": " + e.what(), 0);
    }
}

json hyperparams_to_json(const HyperParams& hp) {
    return json{{"kappa", hp.kappa},
                {"nu", hp.nu},
                {"delta", hp.delta},
                {"step_policy", hp.step_policy == StepPolicy::fixed ? "fixed" : "auto"},
                {"fixed_alpha", hp.fixed_alpha},
                {"step_exponent", hp.step_exponent},
                {"max_iters", hp.max_iters},
                {"checkpoint_every", hp.checkpoint_every},
                {"cv_folds", hp.cv_folds},
                {"seed", hp.seed}};
}

HyperParams hyperparams_from_json(const json& j) {
    HyperParams hp;
    hp.kappa = j.at("kappa").get<double>();
    hp.nu = j.at("nu").get<double>();
    hp.delta = j.at("delta").get<double>();
    hp.step_policy =
        j.at("step_policy").get<std::string>() == "fixed" ? StepPolicy::fixed : StepPolicy::auto_bound;
    hp.fixed_alpha = j.at("fixed_alpha").get<double>();
    hp.step_exponent = j.at("step_exponent").get<int>();
    hp.max_iters = j.at("max_iters").get<int>();
    hp.checkpoint_every = j.at("checkpoint_every").get<int>();
    hp.cv_folds = j.at("cv_folds").get<int>();
    hp.seed = j.at("seed").get<std::uint64_t>();
    return hp;
}

json summary_to_json(const SummaryStats& s) {
    return json{{"values", s.values},
                {"min", s.min},
                {"median", s.median},
                {"max", s.max},
                {"std", s.std_dev}};
}

void dump_to(const std::filesystem::path& path, const json& j) {
    std::ofstream out = open_output(path);
    out << j.dump(2) << '\n';
}

}  // namespace

IdMaps default_ids(int n_users, int n_items) {
    IdMaps ids;
    ids.users.reserve(static_cast<std::size_t>(n_users));
    for (int u = 0; u < n_users; ++u) ids.users.push_back("u" + std::to_string(u));
    ids.items.reserve(static_cast<std::size_t>(n_items));
    for (int i = 0; i < n_items; ++i) ids.items.push_back("i" + std::to_string(i));
    return ids;
}

LoadedDataset read_comparisons(const std::filesystem::path& path,
                               std::optional<int> n_items_hint) {
    std::ifstream in = open_input(path);
    std::string line;
    long line_no = 0;

    if (!std::getline(in, line)) throw ParseError("empty file, expected header", 1);
    ++line_no;
    if (strip_cr(line) != kComparisonHeader)
        throw ParseError(std::string("expected header '") + kComparisonHeader + "'", line_no);

    IdMaps ids;
    std::unordered_map<std::string, int> user_index, item_index;
    const auto intern = [](std::unordered_map<std::string, int>& index,
                           std::vector<std::string>& names, const std::string& id) {
        auto [it, inserted] = index.emplace(id, static_cast<int>(names.size()));
        if (inserted) names.push_back(id);
        return it->second;
    };

    std::vector<Observation> observations;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv(line);
        if (fields.size() != 4)
            throw ParseError("expected 4 comma-separated fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        if (fields[0].empty() || fields[1].empty() || fields[2].empty())
            throw ParseError("empty id field", line_no);
        if (fields[1] == fields[2]) throw ParseError("item compared against itself", line_no);
        int label;
        if (fields[3] == "1")
            label = 1;
        else if (fields[3] == "0")
            label = 0;
        else if (fields[3] == "-1")
            label = -1;
        else
            throw ParseError("label outside {-1,0,1}: '" + fields[3] + "'", line_no);
        const int u = intern(user_index, ids.users, fields[0]);
        const int i = intern(item_index, ids.items, fields[1]);
        const int j = intern(item_index, ids.items, fields[2]);
        observations.push_back(Observation{u, i, j, label});
    }

    int n_items = static_cast<int>(ids.items.size());
    if (n_items_hint) {
        if (*n_items_hint < n_items)
            throw ConfigError("n_items is smaller than the number of distinct items in the file");
        for (int i = n_items; i < *n_items_hint; ++i) ids.items.push_back("i" + std::to_string(i));
        n_items = *n_items_hint;
    }
    if (n_items == 0 && observations.empty())
        throw ConfigError("cannot infer the item count from a header-only file; supply n_items");

    return LoadedDataset{
        ComparisonDataset(n_items, static_cast<int>(ids.users.size()), std::move(observations)),
        std::move(ids)};
}

void write_comparisons(const std::filesystem::path& path, const ComparisonDataset& data,
                       const IdMaps& ids) {
    if (static_cast<int>(ids.users.size()) < data.n_users() ||
        static_cast<int>(ids.items.size()) < data.n_items())
        throw ContractError("id maps smaller than the dataset");
    std::ofstream out = open_output(path);
    out << kComparisonHeader << '\n';
    for (const Observation& o : data.observations())
        out << ids.users[static_cast<std::size_t>(o.user)] << ','
            << ids.items[static_cast<std::size_t>(o.item_i)] << ','
            << ids.items[static_cast<std::size_t>(o.item_j)] << ',' << o.label << '\n';
}

void write_ground_truth(const std::filesystem::path& path, const GroundTruth& truth) {
    json j;
    j["c_s"] = vector_to_json(truth.c_s_true);
    j["c_lambda"] = truth.c_lambda_true;
    j["P_s"] = matrix_to_json(truth.P_s_true);
    j["P_lambda"] = vector_to_json(truth.P_lambda_true);
    j["abnormal_mask"] = truth.abnormal_mask;
    dump_to(path, j);
}

GroundTruth read_ground_truth(const std::filesystem::path& path) {
    const json j = parse_json_file(path);
    GroundTruth truth;
    try {
        truth.c_s_true = vector_from_json(j.at("c_s"));
        truth.c_lambda_true = j.at("c_lambda").get<double>();
        truth.P_s_true = matrix_from_json(j.at("P_s"));
        truth.P_lambda_true = vector_from_json(j.at("P_lambda"));
        truth.abnormal_mask = j.at("abnormal_mask").get<std::vector<bool>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("ground truth file ") + path.string() + ": " + e.what(), 0);
    }
    return truth;
}

void write_model(const std::filesystem::path& path, const SavedModel& model) {
    json j;
    j["format"] = "tierank.model/1";
    j["n_items"] = model.state.n_items();
    j["n_users"] = model.state.n_users();
    j["users"] = model.ids.users;
    j["items"] = model.ids.items;
    j["hyperparams"] = hyperparams_to_json(model.hp);
    j["selected_tau"] = model.selected_tau;
    j["state"] = json{{"c_s", vector_to_json(model.state.c_s)},
                      {"c_lambda", model.state.c_lambda},
                      {"P_s", matrix_to_json(model.state.P_s)},
                      {"P_lambda", vector_to_json(model.state.P_lambda)},
                      {"Gamma_s", matrix_to_json(model.state.Gamma_s)},
                      {"Gamma_lambda", vector_to_json(model.state.Gamma_lambda)},
                      {"Z_s", matrix_to_json(model.state.Z_s)},
                      {"Z_lambda", vector_to_json(model.state.Z_lambda)}};
    dump_to(path, j);
}

SavedModel read_model(const std::filesystem::path& path) {
    const json j = parse_json_file(path);
    SavedModel model;
    try {
        if (j.at("format").get<std::string>() != "tierank.model/1")
            throw ParseError("unrecognized model format", 0);
        model.ids.users = j.at("users").get<std::vector<std::string>>();
        model.ids.items = j.at("items").get<std::vector<std::string>>();
        model.hp = hyperparams_from_json(j.at("hyperparams"));
        model.selected_tau = j.at("selected_tau").get<double>();
        const json& s = j.at("state");
        model.state.c_s = vector_from_json(s.at("c_s"));
        model.state.c_lambda = s.at("c_lambda").get<double>();
        model.state.P_s = matrix_from_json(s.at("P_s"));
        model.state.P_lambda = vector_from_json(s.at("P_lambda"));
        model.state.Gamma_s = matrix_from_json(s.at("Gamma_s"));
        model.state.Gamma_lambda = vector_from_json(s.at("Gamma_lambda"));
        model.state.Z_s = matrix_from_json(s.at("Z_s"));
        model.state.Z_lambda = vector_from_json(s.at("Z_lambda"));
    } catch (const json::exception& e) {
        throw ParseError(std::string("model file ") + path.string() + ": " + e.what(), 0);
    }
    const int n = model.state.n_items();
    const int u = model.state.n_users();
    if (j.at("n_items").get<int>() != n || j.at("n_users").get<int>() != u ||
        model.state.P_s.rows() != u || model.state.P_s.cols() != n)
        throw ParseError("inconsistent dimensions in model file", 0);
    return model;
}

PathSummary summarize_path(const PathRecord& path, const ComparisonDataset& data,
                           const IdMaps& ids) {
    PathSummary summary;
    summary.alpha = path.alpha;
    summary.support_entry = path.support_entry;
    summary.users = ids.users;
    summary.checkpoints.reserve(path.checkpoints.size());
    for (const PathCheckpoint& cp : path.checkpoints) {
        const std::vector<bool> mask = support_set(cp.state);
        const int support = static_cast<int>(std::count(mask.begin(), mask.end(), true));
        summary.checkpoints.push_back(PathSummary::Checkpoint{
            cp.iteration, cp.tau, support, negative_log_likelihood(data, cp.state)});
    }
    return summary;
}

void write_path_summary(const std::filesystem::path& path, const PathSummary& summary) {
    json cps = json::array();
    for (const auto& cp : summary.checkpoints)
        cps.push_back(json{{"iteration", cp.iteration},
                           {"tau", cp.tau},
                           {"support_size", cp.support_size},
                           {"nll", cp.nll}});
    json entries = json::array();
    for (const auto& e : summary.support_entry)
        entries.push_back(e ? json(*e) : json(nullptr));
    json j;
    j["format"] = "tierank.path/1";
    j["alpha"] = summary.alpha;
    j["checkpoints"] = std::move(cps);
    j["support_entry"] = std::move(entries);
    j["users"] = summary.users;
    dump_to(path, j);
}

PathSummary read_path_summary(const std::filesystem::path& path) {
    const json j = parse_json_file(path);
    PathSummary summary;
    try {
        if (j.at("format").get<std::string>() != "tierank.path/1")
            throw ParseError("unrecognized path format", 0);
        summary.alpha = j.at("alpha").get<double>();
        for (const json& cp : j.at("checkpoints"))
            summary.checkpoints.push_back(PathSummary::Checkpoint{
                cp.at("iteration").get<int>(), cp.at("tau").get<double>(),
                cp.at("support_size").get<int>(), cp.at("nll").get<double>()});
        for (const json& e : j.at("support_entry"))
            summary.support_entry.push_back(e.is_null() ? std::nullopt
                                                        : std::optional<int>(e.get<int>()));
        summary.users = j.at("users").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("path file ") + path.string() + ": " + e.what(), 0);
    }
    return summary;
}

void write_path_csv(const std::filesystem::path& path, const PathSummary& summary) {
    std::ofstream out = open_output(path);
    out << "iteration,tau,support_size,nll\n";
    char buffer[128];
    for (const auto& cp : summary.checkpoints) {
        std::snprintf(buffer, sizeof(buffer), "%d,%.17g,%d,%.17g\n", cp.iteration, cp.tau,
                      cp.support_size, cp.nll);
        out << buffer;
    }
}

void write_report(const std::filesystem::path& path, const ExperimentReport& report) {
    json j;
    j["format"] = "tierank.report/1";
    j["repeats"] = report.repeats;
    j["fraction"] = report.fraction;
    j["seed"] = report.seed;
    j["micro_f1"] = summary_to_json(report.micro_summary());
    j["macro_f1"] = summary_to_json(report.macro_summary());

    json precision = json::array(), recall = json::array();
    for (const RepeatOutcome& o : report.outcomes) {
        precision.push_back(o.precision_by_class);
        recall.push_back(o.recall_by_class);
    }
    std::array<std::vector<double>, 3> p_cols, r_cols;
    for (const RepeatOutcome& o : report.outcomes)
        for (std::size_t c = 0; c < 3; ++c) {
            p_cols[c].push_back(o.precision_by_class[c]);
            r_cols[c].push_back(o.recall_by_class[c]);
        }
    j["precision_by_class"] =
        json{{"classes", {-1, 0, 1}},
             {"values", std::move(precision)},
             {"median", {median_of(p_cols[0]), median_of(p_cols[1]), median_of(p_cols[2])}}};
    j["recall_by_class"] =
        json{{"classes", {-1, 0, 1}},
             {"values", std::move(recall)},
             {"median", {median_of(r_cols[0]), median_of(r_cols[1]), median_of(r_cols[2])}}};

    if (!report.outcomes.empty() && report.outcomes.front().has_baseline) {
        std::array<std::vector<double>, 3> bp_cols, br_cols;
        for (const RepeatOutcome& o : report.outcomes)
            for (std::size_t c = 0; c < 3; ++c) {
                bp_cols[c].push_back(o.baseline_precision_by_class[c]);
                br_cols[c].push_back(o.baseline_recall_by_class[c]);
            }
        j["baseline_common_only"] =
            json{{"micro_f1", summary_to_json(report.baseline_micro_summary())},
                 {"macro_f1", summary_to_json(report.baseline_macro_summary())},
                 {"precision_by_class_median",
                  {median_of(bp_cols[0]), median_of(bp_cols[1]), median_of(bp_cols[2])}},
                 {"recall_by_class_median",
                  {median_of(br_cols[0]), median_of(br_cols[1]), median_of(br_cols[2])}}};
    }

    if (!report.outcomes.empty() && report.outcomes.front().has_detection) {
        std::vector<double> sp, sr, auc, dev_f, dev_u;
        for (const RepeatOutcome& o : report.outcomes) {
            sp.push_back(o.support_precision);
            sr.push_back(o.support_recall);
            auc.push_back(o.ranking_auc);
            dev_f.push_back(o.deviation_flagged_mean);
            dev_u.push_back(o.deviation_unflagged_mean);
        }
        j["detection"] = json{{"support_precision", summary_to_json(SummaryStats::from(sp))},
                              {"support_recall", summary_to_json(SummaryStats::from(sr))},
                              {"ranking_auc", summary_to_json(SummaryStats::from(auc))},
                              {"deviation_flagged_mean", dev_f},
                              {"deviation_unflagged_mean", dev_u}};
    }

    std::vector<double> taus, cv_max, cv_final, support;
    for (const RepeatOutcome& o : report.outcomes) {
        taus.push_back(o.selected_tau);
        cv_max.push_back(o.cv_max_f1);
        cv_final.push_back(o.cv_final_f1);
        support.push_back(o.support_size);
    }
    j["cv"] = json{{"selected_tau", taus}, {"max_f1", cv_max}, {"final_f1", cv_final}};
    j["support_size"] = support;
    dump_to(path, j);
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    std::map<std::string, std::string> values;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected key=value", line_no);
        const auto trim = [](std::string s) {
            const auto is_space = [](char c) { return c == ' ' || c == '\t'; };
            while (!s.empty() && is_space(s.front())) s.erase(s.begin());
            while (!s.empty() && is_space(s.back())) s.pop_back();
            return s;
        };
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ParseError("empty key", line_no);
        values[key] = trim(line.substr(eq + 1));
    }
    return values;
}

}  // namespace tierank
