#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "onsd/error.hpp"
#include "onsd/grading/grades.hpp"

namespace onsd {

/// counts[truth][predicted]
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kTierCount>, kTierCount> counts{};

    void add(int truth, int predicted) { counts.at(truth).at(predicted) += 1; }

    std::uint64_t total() const noexcept {
        std::uint64_t n = 0;
        for (const auto& row : counts)
            for (auto v : row) n += v;
        return n;
    }
    std::uint64_t true_positive(int c) const noexcept { return counts[c][c]; }
    std::uint64_t false_positive(int c) const noexcept {
        std::uint64_t n = 0;
        for (int r = 0; r < kTierCount; ++r)
            if (r != c) n += counts[r][c];
        return n;
    }
    std::uint64_t false_negative(int c) const noexcept {
        std::uint64_t n = 0;
        for (int p = 0; p < kTierCount; ++p)
            if (p != c) n += counts[c][p];
        return n;
    }
    std::uint64_t true_negative(int c) const noexcept {
        return total() - true_positive(c) - false_positive(c) - false_negative(c);
    }
    std::uint64_t support(int c) const noexcept { return true_positive(c) + false_negative(c); }

    bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw Error("length mismatch");
    ConfusionMatrix m;
    for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
    return m;
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// One-vs-rest per class, then support-weighted averages. A class that is never
/// predicted has precision 0.
inline ClassificationMetrics classification_metrics(const ConfusionMatrix& m) {
    const std::uint64_t total = m.total();
    if (total == 0) throw Error("empty confusion matrix");
    const double n = static_cast<double>(total);
    std::uint64_t correct = 0;
    double precision = 0.0;
    double f1 = 0.0;
    for (int c = 0; c < kTierCount; ++c) {
        const auto tp = m.true_positive(c);
        const auto fp = m.false_positive(c);
        const auto fn = m.false_negative(c);
        const double support = static_cast<double>(tp + fn);
        correct += tp;
        if (tp + fp > 0) precision += support * static_cast<double>(tp) / static_cast<double>(tp + fp);
        if (2 * tp + fp + fn > 0) f1 += support * 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
    ClassificationMetrics out;
    out.accuracy = static_cast<double>(correct) / n;
    // support_c * TP_c / support_c == TP_c, so the weighted recall reduces to the accuracy.
    out.recall = static_cast<double>(correct) / n;
    out.precision = precision / n;
    out.f1 = f1 / n;
    return out;
}

}  // namespace onsd
