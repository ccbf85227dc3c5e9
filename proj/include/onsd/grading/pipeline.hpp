#pragma once

// Feature fusion, per-fold preprocessing, model training, prediction and
// stratified patient-level cross-validation.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "onsd/error.hpp"
#include "onsd/grading/classifiers.hpp"
#include "onsd/grading/grades.hpp"
#include "onsd/grading/lasso.hpp"
#include "onsd/grading/metrics.hpp"
#include "onsd/grading/threshold.hpp"
#include "onsd/ingest.hpp"
#include "onsd/phantom.hpp"
#include "onsd/stats.hpp"

namespace onsd {

inline constexpr const char* kOnsdFeatureName = "mean_onsd_mm";
inline constexpr std::size_t kFusedFeatureCount = kClinicalFeatureCount + 1;
inline constexpr std::size_t kLassoTargetCount = 14;
inline constexpr int kGradingModelFormat = 1;

/// Patients sharing the text before '#' in their id are one patient (visits).
inline std::string patient_group(const std::string& id) { return id.substr(0, id.find('#')); }

// ---------------------------------------------------------------------------
// Fused feature table

struct GradingDataset {
    std::vector<std::string> ids;
    std::vector<std::string> groups;
    std::vector<std::string> feature_names;                 // 49 clinical + ONSD, ONSD last
    std::vector<std::vector<std::optional<double>>> rows;   // one per sample
    std::vector<std::optional<double>> icp_mmH2O;

    std::size_t size() const { return ids.size(); }
    std::size_t onsd_column() const { return feature_names.size() - 1; }
};

struct AssemblyReport {
    std::vector<std::string> excluded;       // mannitol / shunt
    std::vector<std::string> missing_onsd;   // no bilateral ONSD available
};

/// Joins clinical records to bilateral-mean ONSD by patient id. Excluded
/// records and records without ONSD are dropped and listed in `report`.
inline GradingDataset assemble_dataset(const ClinicalTable& table, const std::map<std::string, double>& mean_onsd,
                                       AssemblyReport* report = nullptr) {
    if (table.schema.size() != kClinicalFeatureCount) throw Error("schema mismatch");
    GradingDataset d;
    d.feature_names = table.schema;
    d.feature_names.emplace_back(kOnsdFeatureName);
    for (const auto& r : table.records) {
        if (r.excluded_mannitol || r.excluded_shunt) {
            if (report) report->excluded.push_back(r.patient_id);
            continue;
        }
        const auto it = mean_onsd.find(r.patient_id);
        if (it == mean_onsd.end()) {
            if (report) report->missing_onsd.push_back(r.patient_id);
            continue;
        }
        if (r.features.size() != kClinicalFeatureCount) throw Error("schema mismatch");
        d.ids.push_back(r.patient_id);
        d.groups.push_back(patient_group(r.patient_id));
        auto row = r.features;
        row.emplace_back(it->second);
        d.rows.push_back(std::move(row));
        d.icp_mmH2O.push_back(r.icp_mmH2O);
    }
    return d;
}

inline std::vector<int> dataset_grades(const GradingDataset& d) {
    std::vector<int> y;
    y.reserve(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!d.icp_mmH2O[i]) throw Error("missing ICP for sample '" + d.ids[i] + "'");
        y.push_back(static_cast<int>(icp_grade(*d.icp_mmH2O[i]).tier));
    }
    return y;
}

// ---------------------------------------------------------------------------
// Model

using ClassifierState = std::variant<LogisticModel, DecisionTree, RandomForest, KnnModel, NaiveBayesModel, ThresholdModel>;

struct TrainOptions {
    ClassifierKind kind = ClassifierKind::random_forest;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    std::size_t target_count = kLassoTargetCount;
    std::size_t forest_trees = 200;
    std::size_t knn_k = 5;
};

struct GradingModel {
    ClassifierKind kind = ClassifierKind::random_forest;
    std::uint64_t seed = 0;
    nlohmann::json params = nlohmann::json::object();
    std::vector<std::string> feature_names;
    std::vector<double> medians;
    std::vector<double> means;
    std::vector<double> stds;
    std::vector<bool> feature_mask;
    std::optional<double> lasso_lambda;
    bool lasso_converged = true;
    ClassifierState classifier;
    std::vector<std::string> warnings;

    std::vector<std::size_t> selected_columns() const {
        std::vector<std::size_t> cols;
        for (std::size_t j = 0; j < feature_mask.size(); ++j)
            if (feature_mask[j]) cols.push_back(j);
        return cols;
    }
};

namespace detail {

inline Eigen::MatrixXd imputed_matrix(const GradingDataset& d, std::span<const std::size_t> rows,
                                      const std::vector<double>& medians) {
    const auto p = d.feature_names.size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < p; ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d.rows[rows[i]][j].value_or(medians[j]);
    return x;
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(cols[k]));
    return out;
}

}  // namespace detail

/// Fits imputation, standardization, Lasso selection and the classifier on
/// the given training rows only.
inline GradingModel train_grading_model(const GradingDataset& d, std::span<const std::size_t> rows, const TrainOptions& opt) {
    if (rows.empty()) throw Error("no training samples");
    const auto p = d.feature_names.size();
    GradingModel m;
    m.kind = opt.kind;
    m.seed = opt.seed;
    m.feature_names = d.feature_names;

    std::vector<int> y;
    Eigen::VectorXd icp(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& v = d.icp_mmH2O[rows[i]];
        if (!v) throw Error("missing ICP for sample '" + d.ids[rows[i]] + "'");
        icp[static_cast<Eigen::Index>(i)] = *v;
        y.push_back(static_cast<int>(icp_grade(*v).tier));
    }

    m.medians.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        std::vector<double> seen;
        for (auto r : rows)
            if (d.rows[r][j]) seen.push_back(*d.rows[r][j]);
        if (seen.empty()) throw Error("feature '" + d.feature_names[j] + "' has no observed values in training data");
        m.medians[j] = stats::median(std::move(seen));
    }
    const Eigen::MatrixXd x = detail::imputed_matrix(d, rows, m.medians);
    m.means.resize(p);
    m.stds.resize(p);
    Eigen::MatrixXd z = x;
    for (std::size_t j = 0; j < p; ++j) {
        const auto col = x.col(static_cast<Eigen::Index>(j));
        m.means[j] = col.mean();
        const double sd = std::sqrt((col.array() - m.means[j]).square().mean());
        m.stds[j] = sd > 0.0 ? sd : 1.0;
        z.col(static_cast<Eigen::Index>(j)) = (col.array() - m.means[j]) / m.stds[j];
    }

    m.feature_mask.assign(p, false);
    if (opt.kind == ClassifierKind::threshold_baseline) {
        const auto onsd_col = d.onsd_column();
        m.feature_mask[onsd_col] = true;
        std::vector<double> onsd(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) onsd[i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(onsd_col));
        auto t = train_threshold_baseline(onsd, y);
        if (t.degenerate_labels) m.warnings.emplace_back("threshold search saw fewer than two tiers");
        m.classifier = t;
        return m;
    }

    const auto sel = lasso_select(z, icp, std::min(opt.target_count, p));
    m.lasso_lambda = sel.model.lambda;
    m.lasso_converged = sel.model.converged;
    if (!sel.model.converged) m.warnings.emplace_back("lasso did not converge");
    if (sel.achieved_count != sel.target_count)
        m.warnings.push_back("lasso kept " + std::to_string(sel.achieved_count) + " features (target " +
                             std::to_string(sel.target_count) + ")");
    m.feature_mask = sel.model.selected;
    if (sel.achieved_count == 0) throw Error("lasso selected no features");
    const Eigen::MatrixXd zs = detail::select_columns(z, m.selected_columns());

    switch (opt.kind) {
        case ClassifierKind::logistic:
            m.params = {{"l2", LogisticParams{}.l2}, {"learning_rate", LogisticParams{}.learning_rate}, {"iterations", LogisticParams{}.iterations}};
            m.classifier = fit_logistic(zs, y);
            break;
        case ClassifierKind::decision_tree:
            m.params = {{"criterion", "gini"}};
            m.classifier = fit_decision_tree(zs, y);
            break;
        case ClassifierKind::random_forest:
            m.params = {{"trees", opt.forest_trees}, {"criterion", "gini"}, {"max_features", "sqrt"}, {"min_leaf", 1}};
            m.classifier = fit_random_forest(zs, y, {opt.forest_trees, opt.seed, opt.jobs});
            break;
        case ClassifierKind::knn:
            m.params = {{"k", opt.knn_k}};
            m.classifier = fit_knn(zs, y, opt.knn_k);
            break;
        case ClassifierKind::naive_bayes:
            m.params = {{"variance_floor", kNaiveBayesVarianceFloor}};
            m.classifier = fit_naive_bayes(zs, y);
            break;
        case ClassifierKind::threshold_baseline: break;
    }
    return m;
}

inline GradingModel train_grading_model(const GradingDataset& d, const TrainOptions& opt) {
    std::vector<std::size_t> rows(d.size());
    std::iota(rows.begin(), rows.end(), 0);
    return train_grading_model(d, rows, opt);
}

struct GradePrediction {
    IcpTier tier = IcpTier::normal;
    ClassScores scores{};
};

/// `row` holds raw fused features in the model's column order.
inline GradePrediction predict_grade(const GradingModel& m, const std::vector<std::optional<double>>& row) {
    if (row.size() != m.feature_names.size()) throw Error("schema mismatch with model");
    std::vector<double> z(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        const double v = row[j].value_or(m.medians[j]);
        if (!std::isfinite(v)) throw Error("non-finite feature '" + m.feature_names[j] + "'");
        z[j] = (v - m.means[j]) / m.stds[j];
    }
    GradePrediction out;
    if (const auto* t = std::get_if<ThresholdModel>(&m.classifier)) {
        const auto col = m.selected_columns().at(0);
        out.scores = t->predict_proba(row[col].value_or(m.medians[col]));
    } else {
        std::vector<double> zs;
        for (auto j : m.selected_columns()) zs.push_back(z[j]);
        out.scores = std::visit([&](const auto& c) -> ClassScores {
            if constexpr (std::is_same_v<std::decay_t<decltype(c)>, ThresholdModel>)
                throw Error(ErrorKind::internal, "unreachable");
            else
                return c.predict_proba(zs);
        }, m.classifier);
    }
    out.tier = static_cast<IcpTier>(argmax_class(out.scores));
    return out;
}

/// Prediction from a clinical record whose schema must match the model.
inline GradePrediction predict_grade(const GradingModel& m, const std::vector<std::string>& schema,
                                     const ClinicalRecord& record, double mean_onsd_mm) {
    if (schema.size() + 1 != m.feature_names.size() || !std::equal(schema.begin(), schema.end(), m.feature_names.begin()))
        throw Error("schema mismatch with model");
    if (record.features.size() != schema.size()) throw Error("schema mismatch with model");
    auto row = record.features;
    row.emplace_back(mean_onsd_mm);
    return predict_grade(m, row);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json grading_model_to_json(const GradingModel& m) {
    nlohmann::json j;
    j["format"] = kGradingModelFormat;
    j["kind"] = to_string(m.kind);
    j["seed"] = m.seed;
    j["params"] = m.params;
    j["feature_names"] = m.feature_names;
    j["feature_mask"] = m.feature_mask;
    j["medians"] = m.medians;
    j["means"] = m.means;
    j["stds"] = m.stds;
    j["lasso_lambda"] = m.lasso_lambda ? nlohmann::json(*m.lasso_lambda) : nlohmann::json(nullptr);
    j["classifier"] = std::visit([](const auto& c) { return c.to_json(); }, m.classifier);
    return j;
}

inline GradingModel grading_model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<int>() != kGradingModelFormat) throw Error("unsupported grading model format");
        GradingModel m;
        m.kind = classifier_from_string(j.at("kind").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.params = j.value("params", nlohmann::json::object());
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.feature_mask = j.at("feature_mask").get<std::vector<bool>>();
        m.medians = j.at("medians").get<std::vector<double>>();
        m.means = j.at("means").get<std::vector<double>>();
        m.stds = j.at("stds").get<std::vector<double>>();
        const auto p = m.feature_names.size();
        if (m.feature_mask.size() != p || m.medians.size() != p || m.means.size() != p || m.stds.size() != p)
            throw Error("grading model arrays disagree in length");
        if (!j.at("lasso_lambda").is_null()) m.lasso_lambda = j.at("lasso_lambda").get<double>();
        const auto& c = j.at("classifier");
        switch (m.kind) {
            case ClassifierKind::logistic: m.classifier = LogisticModel::from_json(c); break;
            case ClassifierKind::decision_tree: m.classifier = DecisionTree::from_json(c); break;
            case ClassifierKind::random_forest: m.classifier = RandomForest::from_json(c); break;
            case ClassifierKind::knn: m.classifier = KnnModel::from_json(c); break;
            case ClassifierKind::naive_bayes: m.classifier = NaiveBayesModel::from_json(c); break;
            case ClassifierKind::threshold_baseline: m.classifier = ThresholdModel::from_json(c); break;
        }
        if (m.selected_columns().empty()) throw Error("grading model selects no features");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed grading model: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Fold index per sample. Patients (groups) are labelled by the tier of their
/// first sample, shuffled within each tier, concatenated tier by tier and dealt
/// round-robin, so all samples of a patient share a fold.
inline std::vector<int> stratified_patient_folds(const std::vector<std::string>& groups, std::span<const int> grades,
                                                 int folds, std::uint64_t seed) {
    if (groups.size() != grades.size()) throw Error("folds: length mismatch");
    if (folds < 2) throw Error("cross-validation needs at least 2 folds");
    std::map<std::string, int> group_tier;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (group_tier.emplace(groups[i], grades[i]).second) order.push_back(groups[i]);
    if (group_tier.size() < static_cast<std::size_t>(folds)) throw Error("fewer patients than folds");

    constexpr std::uint64_t kFoldStream = 0x666f6c6473ULL;
    Rng rng(derive_seed(seed, kFoldStream));
    std::map<std::string, int> group_fold;
    std::size_t dealt = 0;
    for (int tier = 0; tier < kTierCount; ++tier) {
        std::vector<std::string> members;
        for (const auto& [g, t] : group_tier)
            if (t == tier) members.push_back(g);
        for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
        for (const auto& g : members) group_fold[g] = static_cast<int>(dealt++ % static_cast<std::size_t>(folds));
    }
    std::vector<int> out(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) out[i] = group_fold.at(groups[i]);
    return out;
}

struct FoldResult {
    int fold = 0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    ConfusionMatrix confusion;
    ClassificationMetrics metrics;
    std::size_t selected_count = 0;
    std::optional<std::pair<double, double>> thresholds;
    std::vector<std::string> warnings;
};

struct CvReport {
    ClassifierKind kind = ClassifierKind::random_forest;
    std::vector<FoldResult> folds;
    ClassificationMetrics mean;
    ClassificationMetrics stddev;  // population std across folds
    std::vector<std::pair<std::string, ClassScores>> predictions;  // out-of-fold, in dataset order
};

inline CvReport cross_validate(const GradingDataset& d, const TrainOptions& opt, int folds = 5) {
    const auto y = dataset_grades(d);
    const auto assignment = stratified_patient_folds(d.groups, y, folds, opt.seed);
    CvReport rep;
    rep.kind = opt.kind;
    rep.predictions.resize(d.size());
    for (int f = 0; f < folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < d.size(); ++i) (assignment[i] == f ? test : train).push_back(i);
        FoldResult fr;
        fr.fold = f + 1;
        fr.train_size = train.size();
        fr.test_size = test.size();
        TrainOptions fo = opt;
        fo.seed = derive_seed(opt.seed, 0x63765f666f6c64ULL, static_cast<std::uint64_t>(f));
        const GradingModel m = train_grading_model(d, train, fo);
        fr.selected_count = m.selected_columns().size();
        fr.warnings = m.warnings;
        if (const auto* t = std::get_if<ThresholdModel>(&m.classifier)) fr.thresholds = std::make_pair(t->t1, t->t2);
        for (auto i : test) {
            const auto pred = predict_grade(m, d.rows[i]);
            fr.confusion.add(y[i], static_cast<int>(pred.tier));
            rep.predictions[i] = {d.ids[i], pred.scores};
        }
        fr.metrics = classification_metrics(fr.confusion);
        rep.folds.push_back(std::move(fr));
    }
    auto summarize = [&](double ClassificationMetrics::*field, double& mean, double& sd) {
        std::vector<double> v;
        for (const auto& f : rep.folds) v.push_back(f.metrics.*field);
        mean = stats::mean(v);
        sd = stats::stddev(v);
    };
    summarize(&ClassificationMetrics::accuracy, rep.mean.accuracy, rep.stddev.accuracy);
    summarize(&ClassificationMetrics::precision, rep.mean.precision, rep.stddev.precision);
    summarize(&ClassificationMetrics::recall, rep.mean.recall, rep.stddev.recall);
    summarize(&ClassificationMetrics::f1, rep.mean.f1, rep.stddev.f1);
    return rep;
}

}  // namespace onsd
