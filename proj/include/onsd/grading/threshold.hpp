#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include <json.hpp>

#include "onsd/error.hpp"
#include "onsd/grading/classifiers.hpp"
#include "onsd/grading/grades.hpp"

namespace onsd {

/// onsd <= t1 -> normal, t1 < onsd <= t2 -> mild, onsd > t2 -> severe.
struct ThresholdModel {
    double t1 = 0.0;
    double t2 = 0.0;
    double training_accuracy = 0.0;
    bool degenerate_labels = false;  // training data held fewer than two tiers

    int classify(double onsd_mm) const {
        if (onsd_mm <= t1) return 0;
        if (onsd_mm <= t2) return 1;
        return 2;
    }
    ClassScores predict_proba(double onsd_mm) const {
        ClassScores s{};
        s[static_cast<std::size_t>(classify(onsd_mm))] = 1.0;
        return s;
    }

    nlohmann::json to_json() const { return {{"t1", t1}, {"t2", t2}, {"training_accuracy", training_accuracy}}; }
    static ThresholdModel from_json(const nlohmann::json& j) {
        ThresholdModel m;
        m.t1 = j.at("t1").get<double>();
        m.t2 = j.at("t2").get<double>();
        m.training_accuracy = j.value("training_accuracy", 0.0);
        if (!(m.t1 < m.t2)) throw Error("threshold model requires t1 < t2");
        return m;
    }
};

/// Exhaustive search over t1 < t2 on a 0.01 mm grid covering
/// [min - 0.02, max + 0.01], so both thresholds can sit below every sample.
/// Ties resolve to the lexicographically smallest pair.
inline ThresholdModel train_threshold_baseline(std::span<const double> onsd, std::span<const int> grades) {
    if (onsd.size() != grades.size()) throw Error("threshold search: length mismatch");
    if (onsd.size() < 3) throw Error("threshold search needs at least 3 samples");
    std::set<double> distinct;
    std::array<bool, kTierCount> present{};
    for (std::size_t i = 0; i < onsd.size(); ++i) {
        if (!std::isfinite(onsd[i])) throw Error("threshold search: non-finite ONSD");
        if (grades[i] < 0 || grades[i] >= kTierCount) throw Error("label out of range");
        distinct.insert(onsd[i]);
        present[static_cast<std::size_t>(grades[i])] = true;
    }
    if (distinct.size() < 2) throw Error("degenerate threshold search");

    const auto lo = static_cast<std::int64_t>(std::floor(*distinct.begin() * 100.0)) - 2;
    const auto hi = static_cast<std::int64_t>(std::ceil(*distinct.rbegin() * 100.0)) + 1;
    const auto g = static_cast<std::size_t>(hi - lo + 1);
    std::vector<double> grid(g);
    for (std::size_t k = 0; k < g; ++k) grid[k] = static_cast<double>(lo + static_cast<std::int64_t>(k)) / 100.0;

    // below[c][k] = number of class-c samples with onsd <= grid[k]
    std::array<std::vector<std::int64_t>, kTierCount> below;
    std::array<std::int64_t, kTierCount> total{};
    for (auto& b : below) b.assign(g, 0);
    std::vector<std::pair<double, int>> sorted;
    for (std::size_t i = 0; i < onsd.size(); ++i) sorted.emplace_back(onsd[i], grades[i]);
    std::sort(sorted.begin(), sorted.end());
    std::array<std::int64_t, kTierCount> running{};
    std::size_t s = 0;
    for (std::size_t k = 0; k < g; ++k) {
        while (s < sorted.size() && sorted[s].first <= grid[k]) ++running[static_cast<std::size_t>(sorted[s++].second)];
        for (int c = 0; c < kTierCount; ++c) below[c][k] = running[c];
    }
    for (const auto& [v, c] : sorted) ++total[static_cast<std::size_t>(c)];

    std::int64_t best = -1;
    std::size_t b1 = 0, b2 = 1;
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = i + 1; j < g; ++j) {
            const std::int64_t correct = below[0][i] + (below[1][j] - below[1][i]) + (total[2] - below[2][j]);
            if (correct > best) {
                best = correct;
                b1 = i;
                b2 = j;
            }
        }
    }
    ThresholdModel m;
    m.t1 = grid[b1];
    m.t2 = grid[b2];
    m.training_accuracy = static_cast<double>(best) / static_cast<double>(onsd.size());
    m.degenerate_labels = std::count(present.begin(), present.end(), true) < 2;
    return m;
}

}  // namespace onsd
