#pragma once

// Three-class classifiers over a dense feature matrix (rows are samples).
// Labels are tier indices 0..2.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "onsd/error.hpp"
#include "onsd/grading/grades.hpp"
#include "onsd/parallel.hpp"
#include "onsd/phantom.hpp"

namespace onsd {

using ClassScores = std::array<double, kTierCount>;

enum class ClassifierKind { logistic, decision_tree, random_forest, knn, naive_bayes, threshold_baseline };

inline std::string to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::logistic: return "logistic";
        case ClassifierKind::decision_tree: return "decision_tree";
        case ClassifierKind::random_forest: return "random_forest";
        case ClassifierKind::knn: return "knn";
        case ClassifierKind::naive_bayes: return "naive_bayes";
        case ClassifierKind::threshold_baseline: return "threshold_baseline";
    }
    throw Error(ErrorKind::internal, "bad classifier kind");
}

inline ClassifierKind classifier_from_string(const std::string& s) {
    for (auto k : {ClassifierKind::logistic, ClassifierKind::decision_tree, ClassifierKind::random_forest,
                   ClassifierKind::knn, ClassifierKind::naive_bayes, ClassifierKind::threshold_baseline})
        if (to_string(k) == s) return k;
    throw Error("unknown classifier '" + s + "'");
}

/// Highest score wins; ties go to the lower tier.
inline int argmax_class(const ClassScores& s) {
    return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

namespace detail {

inline void check_training_data(const Eigen::MatrixXd& x, std::span<const int> y) {
    if (x.rows() != static_cast<Eigen::Index>(y.size())) throw Error("training rows and labels differ in length");
    if (x.rows() == 0 || x.cols() == 0) throw Error("empty training data");
    if (!x.allFinite()) throw Error("non-finite training feature");
    std::array<bool, kTierCount> seen{};
    for (int v : y) {
        if (v < 0 || v >= kTierCount) throw Error("label out of range");
        seen[static_cast<std::size_t>(v)] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2) throw Error("degenerate labels: fewer than two classes");
}

inline ClassScores class_frequencies(std::span<const int> y, std::span<const std::size_t> idx) {
    ClassScores f{};
    for (auto i : idx) f[static_cast<std::size_t>(y[i])] += 1.0;
    for (auto& v : f) v /= static_cast<double>(idx.size());
    return f;
}

inline Eigen::VectorXd row_vector(std::span<const double> x) {
    return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j.at(r).size()) != cols) throw Error("ragged matrix in model file");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    }
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Multinomial logistic regression

struct LogisticParams {
    double l2 = 1e-4;
    double learning_rate = 0.5;
    int iterations = 1000;
};

struct LogisticModel {
    Eigen::MatrixXd weights;  // kTierCount x d
    Eigen::VectorXd bias;     // kTierCount

    ClassScores predict_proba(std::span<const double> x) const {
        const Eigen::VectorXd z = weights * detail::row_vector(x) + bias;
        const double top = z.maxCoeff();
        ClassScores p{};
        double sum = 0.0;
        for (int c = 0; c < kTierCount; ++c) sum += (p[c] = std::exp(z[c] - top));
        for (auto& v : p) v /= sum;
        return p;
    }

    nlohmann::json to_json() const { return {{"weights", detail::matrix_to_json(weights)}, {"bias", std::vector<double>(bias.data(), bias.data() + bias.size())}}; }
    static LogisticModel from_json(const nlohmann::json& j) {
        LogisticModel m;
        m.weights = detail::matrix_from_json(j.at("weights"));
        const auto b = j.at("bias").get<std::vector<double>>();
        if (m.weights.rows() != kTierCount || b.size() != kTierCount) throw Error("logistic model has wrong class count");
        m.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), kTierCount);
        return m;
    }
};

/// Full-batch gradient descent on mean cross-entropy + (l2/2)||W||^2.
inline LogisticModel fit_logistic(const Eigen::MatrixXd& x, std::span<const int> y, const LogisticParams& p = {}) {
    detail::check_training_data(x, y);
    const auto n = x.rows();
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, kTierCount);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
    LogisticModel m;
    m.weights = Eigen::MatrixXd::Zero(kTierCount, x.cols());
    m.bias = Eigen::VectorXd::Zero(kTierCount);
    for (int it = 0; it < p.iterations; ++it) {
        Eigen::MatrixXd z = (x * m.weights.transpose()).rowwise() + m.bias.transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double top = z.row(i).maxCoeff();
            z.row(i) = (z.row(i).array() - top).exp();
            z.row(i) /= z.row(i).sum();
        }
        const Eigen::MatrixXd err = z - onehot;
        const Eigen::MatrixXd grad_w = err.transpose() * x / static_cast<double>(n) + p.l2 * m.weights;
        const Eigen::VectorXd grad_b = err.colwise().sum().transpose() / static_cast<double>(n);
        m.weights -= p.learning_rate * grad_w;
        m.bias -= p.learning_rate * grad_b;
    }
    return m;
}

// ---------------------------------------------------------------------------
// CART tree (Gini)

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    ClassScores distribution{};
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    ClassScores predict_proba(std::span<const double> x) const {
        if (nodes.empty()) throw Error(ErrorKind::internal, "empty tree");
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].distribution;
    }

    std::size_t leaf_count() const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
    }

    nlohmann::json to_json() const {
        auto arr = nlohmann::json::array();
        for (const auto& n : nodes) {
            if (n.feature < 0)
                arr.push_back({{"leaf", std::vector<double>(n.distribution.begin(), n.distribution.end())}});
            else
                arr.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
        }
        return arr;
    }
    static DecisionTree from_json(const nlohmann::json& j) {
        DecisionTree t;
        for (const auto& e : j) {
            TreeNode n;
            if (e.contains("leaf")) {
                const auto d = e.at("leaf").get<std::vector<double>>();
                if (d.size() != kTierCount) throw Error("tree leaf has wrong class count");
                std::copy(d.begin(), d.end(), n.distribution.begin());
            } else {
                n.feature = e.at("feature").get<int>();
                n.threshold = e.at("threshold").get<double>();
                n.left = e.at("left").get<int>();
                n.right = e.at("right").get<int>();
            }
            t.nodes.push_back(n);
        }
        const auto size = static_cast<int>(t.nodes.size());
        for (const auto& n : t.nodes)
            if (n.feature >= 0 && (n.left <= 0 || n.left >= size || n.right <= 0 || n.right >= size))
                throw Error("tree node points outside the tree");
        if (t.nodes.empty()) throw Error("empty tree in model file");
        return t;
    }
};

namespace detail {

inline double gini(const std::array<double, kTierCount>& counts, double total) {
    double g = 1.0;
    for (double c : counts) g -= (c / total) * (c / total);
    return g;
}

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;  // weighted child impurity
};

/// Best Gini split on one feature; feature == -1 when the feature is constant.
inline SplitChoice best_split_on(const Eigen::MatrixXd& x, std::span<const int> y, std::vector<std::size_t>& idx, int feature) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double va = x(static_cast<Eigen::Index>(a), feature), vb = x(static_cast<Eigen::Index>(b), feature);
        return va < vb || (va == vb && a < b);
    });
    std::array<double, kTierCount> left{}, right{};
    for (auto i : idx) right[static_cast<std::size_t>(y[i])] += 1.0;
    const double n = static_cast<double>(idx.size());
    SplitChoice best;
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
        const int c = y[idx[k]];
        left[static_cast<std::size_t>(c)] += 1.0;
        right[static_cast<std::size_t>(c)] -= 1.0;
        const double a = x(static_cast<Eigen::Index>(idx[k]), feature);
        const double b = x(static_cast<Eigen::Index>(idx[k + 1]), feature);
        if (!(a < b)) continue;
        const double nl = static_cast<double>(k + 1), nr = n - nl;
        const double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
        if (best.feature < 0 || imp < best.impurity) {
            double thr = 0.5 * (a + b);
            if (!(thr < b)) thr = a;  // midpoint rounded up to b
            best = {feature, thr, imp};
        }
    }
    return best;
}

/// Grows a tree to purity (min leaf 1). With `max_features` < d each node
/// draws features in random order and examines them in chunks of
/// `max_features` until a chunk contains a non-constant feature.
inline DecisionTree grow_tree(const Eigen::MatrixXd& x, std::span<const int> y, std::vector<std::size_t> root,
                              std::size_t max_features, Rng* rng) {
    DecisionTree tree;
    const auto d = static_cast<std::size_t>(x.cols());
    struct Pending {
        std::vector<std::size_t> idx;
        int node;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({std::move(root), 0});
    std::vector<int> order(d);
    while (!stack.empty()) {
        Pending cur = std::move(stack.back());
        stack.pop_back();
        const ClassScores dist = class_frequencies(y, cur.idx);
        tree.nodes[static_cast<std::size_t>(cur.node)].distribution = dist;
        if (std::count_if(dist.begin(), dist.end(), [](double v) { return v > 0.0; }) < 2) continue;

        std::iota(order.begin(), order.end(), 0);
        if (rng) {
            for (std::size_t i = d; i > 1; --i) std::swap(order[i - 1], order[rng->below(i)]);
        }
        const std::size_t chunk = rng ? std::max<std::size_t>(1, std::min(max_features, d)) : d;
        SplitChoice best;
        for (std::size_t start = 0; start < d && best.feature < 0; start += chunk) {
            for (std::size_t k = start; k < std::min(d, start + chunk); ++k) {
                const SplitChoice s = best_split_on(x, y, cur.idx, order[k]);
                if (s.feature >= 0 && (best.feature < 0 || s.impurity < best.impurity)) best = s;
            }
        }
        if (best.feature < 0) continue;  // all features constant on this node

        std::vector<std::size_t> li, ri;
        for (auto i : cur.idx) (x(static_cast<Eigen::Index>(i), best.feature) <= best.threshold ? li : ri).push_back(i);
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[static_cast<std::size_t>(cur.node)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = l;
        node.right = l + 1;
        stack.push_back({std::move(ri), l + 1});
        stack.push_back({std::move(li), l});
    }
    return tree;
}

}  // namespace detail

inline DecisionTree fit_decision_tree(const Eigen::MatrixXd& x, std::span<const int> y) {
    detail::check_training_data(x, y);
    std::vector<std::size_t> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    return detail::grow_tree(x, y, std::move(idx), static_cast<std::size_t>(x.cols()), nullptr);
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestParams {
    std::size_t trees = 200;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

struct RandomForest {
    std::vector<DecisionTree> trees;

    ClassScores predict_proba(std::span<const double> x) const {
        if (trees.empty()) throw Error(ErrorKind::internal, "empty forest");
        ClassScores s{};
        for (const auto& t : trees) {
            const auto p = t.predict_proba(x);
            for (int c = 0; c < kTierCount; ++c) s[c] += p[c];
        }
        for (auto& v : s) v /= static_cast<double>(trees.size());
        return s;
    }

    nlohmann::json to_json() const {
        auto arr = nlohmann::json::array();
        for (const auto& t : trees) arr.push_back(t.to_json());
        return {{"trees", arr}};
    }
    static RandomForest from_json(const nlohmann::json& j) {
        RandomForest f;
        for (const auto& t : j.at("trees")) f.trees.push_back(DecisionTree::from_json(t));
        return f;
    }
};

/// Bootstrap samples, sqrt(d) candidate features per node, trees grown to
/// purity. Tree t draws from derive_seed(seed, "tree", t), so the forest does
/// not depend on the number of worker threads.
inline RandomForest fit_random_forest(const Eigen::MatrixXd& x, std::span<const int> y, const ForestParams& p = {}) {
    detail::check_training_data(x, y);
    if (p.trees == 0) throw Error("forest needs at least one tree");
    const auto n = static_cast<std::size_t>(x.rows());
    const auto mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(x.cols())))));
    constexpr std::uint64_t kTreeStream = 0x7472656500ULL;
    RandomForest f;
    f.trees = parallel_map(p.trees, p.jobs, [&](std::size_t t) {
        Rng rng(derive_seed(p.seed, kTreeStream, t));
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = rng.below(n);
        return detail::grow_tree(x, y, std::move(idx), mtry, &rng);
    });
    return f;
}

// ---------------------------------------------------------------------------
// k nearest neighbours

struct KnnModel {
    std::size_t k = 5;
    Eigen::MatrixXd points;
    std::vector<int> labels;

    ClassScores predict_proba(std::span<const double> x) const {
        const Eigen::RowVectorXd q = detail::row_vector(x).transpose();
        std::vector<std::pair<double, std::size_t>> dist(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            dist[i] = {(points.row(static_cast<Eigen::Index>(i)) - q).squaredNorm(), i};
        const std::size_t kk = std::min(k, dist.size());
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
        ClassScores s{};
        for (std::size_t i = 0; i < kk; ++i) s[static_cast<std::size_t>(labels[dist[i].second])] += 1.0 / static_cast<double>(kk);
        return s;
    }

    nlohmann::json to_json() const { return {{"k", k}, {"points", detail::matrix_to_json(points)}, {"labels", labels}}; }
    static KnnModel from_json(const nlohmann::json& j) {
        KnnModel m;
        m.k = j.at("k").get<std::size_t>();
        m.points = detail::matrix_from_json(j.at("points"));
        m.labels = j.at("labels").get<std::vector<int>>();
        if (static_cast<Eigen::Index>(m.labels.size()) != m.points.rows()) throw Error("knn model size mismatch");
        return m;
    }
};

inline KnnModel fit_knn(const Eigen::MatrixXd& x, std::span<const int> y, std::size_t k = 5) {
    detail::check_training_data(x, y);
    if (k == 0) throw Error("knn needs k >= 1");
    return {k, x, std::vector<int>(y.begin(), y.end())};
}

// ---------------------------------------------------------------------------
// Gaussian naive Bayes

inline constexpr double kNaiveBayesVarianceFloor = 1e-9;

struct NaiveBayesModel {
    ClassScores prior{};
    Eigen::MatrixXd mean;      // kTierCount x d
    Eigen::MatrixXd variance;  // kTierCount x d

    ClassScores predict_proba(std::span<const double> x) const {
        const Eigen::RowVectorXd q = detail::row_vector(x).transpose();
        std::array<double, kTierCount> logp{};
        double top = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < kTierCount; ++c) {
            if (prior[c] <= 0.0) {
                logp[c] = -std::numeric_limits<double>::infinity();
                continue;
            }
            double l = std::log(prior[c]);
            for (Eigen::Index j = 0; j < q.size(); ++j) {
                const double v = variance(c, j), diff = q[j] - mean(c, j);
                l -= 0.5 * (std::log(2.0 * std::numbers::pi * v) + diff * diff / v);
            }
            logp[c] = l;
            top = std::max(top, l);
        }
        ClassScores p{};
        double sum = 0.0;
        for (int c = 0; c < kTierCount; ++c) sum += (p[c] = std::isinf(logp[c]) ? 0.0 : std::exp(logp[c] - top));
        for (auto& v : p) v /= sum;
        return p;
    }

    nlohmann::json to_json() const {
        return {{"prior", std::vector<double>(prior.begin(), prior.end())},
                {"mean", detail::matrix_to_json(mean)},
                {"variance", detail::matrix_to_json(variance)}};
    }
    static NaiveBayesModel from_json(const nlohmann::json& j) {
        NaiveBayesModel m;
        const auto pr = j.at("prior").get<std::vector<double>>();
        if (pr.size() != kTierCount) throw Error("naive Bayes prior has wrong class count");
        std::copy(pr.begin(), pr.end(), m.prior.begin());
        m.mean = detail::matrix_from_json(j.at("mean"));
        m.variance = detail::matrix_from_json(j.at("variance"));
        return m;
    }
};

inline NaiveBayesModel fit_naive_bayes(const Eigen::MatrixXd& x, std::span<const int> y) {
    detail::check_training_data(x, y);
    NaiveBayesModel m;
    m.mean = Eigen::MatrixXd::Zero(kTierCount, x.cols());
    m.variance = Eigen::MatrixXd::Constant(kTierCount, x.cols(), 1.0);
    std::array<double, kTierCount> count{};
    for (std::size_t i = 0; i < y.size(); ++i) {
        count[static_cast<std::size_t>(y[i])] += 1.0;
        m.mean.row(y[i]) += x.row(static_cast<Eigen::Index>(i));
    }
    for (int c = 0; c < kTierCount; ++c) {
        m.prior[c] = count[c] / static_cast<double>(y.size());
        if (count[c] > 0) m.mean.row(c) /= count[c];
    }
    Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(kTierCount, x.cols());
    for (std::size_t i = 0; i < y.size(); ++i)
        ss.row(y[i]) += (x.row(static_cast<Eigen::Index>(i)) - m.mean.row(y[i])).array().square().matrix();
    for (int c = 0; c < kTierCount; ++c)
        if (count[c] > 0) m.variance.row(c) = (ss.row(c) / count[c]).array().max(kNaiveBayesVarianceFloor).matrix();
    return m;
}

}  // namespace onsd
