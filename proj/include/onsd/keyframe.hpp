#pragma once

// Frame quality rules, the linear scoring model and keyframe ranking.
//
//   s1  intensity sum inside the eyeball eroded by 1.5 mm (lens / anterior chamber, lower is better)
//   s2  mean(outer 0.1 mm band) - mean(inner 0.1 mm band) around the sheath (edge clarity)
//   s3  peak/valley salience of the cross-sheath profile 3-5 mm below the globe
//   s4  tan of the centerline angle to the image vertical (lower is better)
//
// total = sum_i w_i * (s_i - mu_i) / sigma_i

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "onsd/error.hpp"
#include "onsd/imaging.hpp"
#include "onsd/ingest.hpp"
#include "onsd/measurement.hpp"
#include "onsd/parallel.hpp"
#include "onsd/stats.hpp"

namespace onsd {

inline constexpr double kLensErosionMm = 1.5;
inline constexpr double kEdgeBandMm = 0.1;
inline constexpr double kSalienceWindowStartMm = 3.0;
inline constexpr double kSalienceWindowEndMm = 5.0;
inline constexpr double kSalienceSmoothingMm = 0.3;
inline constexpr double kMaxVerticalityAngleDeg = 89.0;
inline constexpr std::size_t kKeyframeSetSize = 5;

using RuleVector = std::array<double, 4>;

struct RuleScores {
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;
    double s4 = 0.0;

    RuleVector as_array() const noexcept { return {s1, s2, s3, s4}; }
    static RuleScores from_array(const RuleVector& a) noexcept { return {a[0], a[1], a[2], a[3]}; }
    bool operator==(const RuleScores&) const = default;
};

// ---------------------------------------------------------------------------
// Rules

inline std::optional<double> rule1_lens_anterior(const Raster& frame, const LabelMask& labels) {
    const BinaryMask eyeball = labels.select(Label::eyeball);
    if (eyeball.empty()) return std::nullopt;
    return masked_sum(frame, morphology(eyeball, MorphOp::erode, kLensErosionMm, frame));
}

inline std::optional<double> rule2_edge_clarity(const Raster& frame, const BinaryMask& sheath) {
    if (sheath.count() < 4) return std::nullopt;
    require_same_dims(frame, sheath);
    const BandMasks bands = band_masks(sheath, kEdgeBandMm, frame.spacing());
    if (bands.inner.empty() || bands.outer.empty()) return std::nullopt;
    return masked_mean(frame, bands.outer) - masked_mean(frame, bands.inner);
}

inline std::optional<double> rule2_edge_clarity(const Raster& frame, const LabelMask& labels) {
    return rule2_edge_clarity(frame, largest_component(labels.select(Label::sheath)));
}

/// Centered moving average; the window shrinks at the ends.
inline std::vector<double> moving_average(std::span<const double> v, std::size_t window) {
    std::vector<double> out(v.size());
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
    const auto n = static_cast<std::ptrdiff_t>(v.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - half);
        const auto hi = std::min<std::ptrdiff_t>(n - 1, i + half);
        double s = 0.0;
        for (auto j = lo; j <= hi; ++j) s += v[j];
        out[i] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

/// Sum of |peak - valley| over adjacent alternating strict extrema. Runs of
/// equal samples collapse to one sample first, so a flat-topped band still
/// counts. End samples count as extrema when they differ strictly from their
/// single neighbour; runs of same-type extrema keep the most extreme member.
inline double peak_valley_salience(std::span<const double> samples) {
    std::vector<double> v;
    for (double x : samples)
        if (v.empty() || x != v.back()) v.push_back(x);
    if (v.size() < 2) return 0.0;
    struct Extremum {
        double value;
        bool peak;
    };
    std::vector<Extremum> ext;
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n; ++i) {
        const bool has_l = i > 0;
        const bool has_r = i + 1 < n;
        const bool above_l = !has_l || v[i] > v[i - 1];
        const bool above_r = !has_r || v[i] > v[i + 1];
        const bool below_l = !has_l || v[i] < v[i - 1];
        const bool below_r = !has_r || v[i] < v[i + 1];
        bool peak = above_l && above_r;
        bool valley = below_l && below_r;
        if (peak == valley) continue;  // neither, or isolated sample
        if (!ext.empty() && ext.back().peak == peak) {
            auto& last = ext.back();
            if (peak ? v[i] > last.value : v[i] < last.value) last.value = v[i];
            continue;
        }
        ext.push_back({v[i], peak});
    }
    double s = 0.0;
    for (std::size_t i = 1; i < ext.size(); ++i) s += std::abs(ext[i].value - ext[i - 1].value);
    return s;
}

/// Cross-sheath intensity profile over the 3-5 mm window below the globe exit.
/// Each profile sample sums the in-mask intensities along the window at a fixed
/// perpendicular offset, rescaled to full window support.
inline std::optional<std::vector<double>> salience_profile(const Raster& frame, const BinaryMask& sheath,
                                                           const Line2D& centerline, Point2 globe_exit) {
    const Spacing sp = frame.spacing();
    const double step = sp.min();
    std::vector<Point2> centers;
    for (double t = kSalienceWindowStartMm; t <= kSalienceWindowEndMm + 1e-9; t += step)
        centers.push_back(globe_exit + centerline.direction * t);
    for (const auto& c : centers) {
        const auto px = mm_to_pixel(c, sp);
        if (!frame.in_bounds(px.col, px.row)) return std::nullopt;
    }

    const Point2 normal = centerline.normal();
    const std::size_t full = centers.size();
    auto sample = [&](double u, double& sum) {
        std::size_t count = 0;
        sum = 0.0;
        for (const auto& c : centers) {
            const auto px = mm_to_pixel(c + normal * u, sp);
            if (sheath.contains(px.col, px.row)) {
                sum += frame.at(px.col, px.row);
                ++count;
            }
        }
        return count;
    };

    std::vector<double> neg, pos;
    double sum = 0.0;
    if (std::size_t c = sample(0.0, sum); c > 0) pos.push_back(sum * full / c);
    else return std::nullopt;
    for (int side = -1; side <= 1; side += 2) {
        auto& out = side < 0 ? neg : pos;
        for (double u = step; u <= kMaxChordMm; u += step) {
            const std::size_t c = sample(side * u, sum);
            if (c == 0) break;
            out.push_back(sum * full / c);
        }
    }
    std::vector<double> profile(neg.rbegin(), neg.rend());
    profile.insert(profile.end(), pos.begin(), pos.end());
    if (profile.size() < 5) return std::nullopt;
    return profile;
}

inline std::optional<double> rule3_two_bright_three_dark(const Raster& frame, const BinaryMask& sheath,
                                                         const Line2D& centerline, Point2 globe_exit) {
    const auto profile = salience_profile(frame, sheath, centerline, globe_exit);
    if (!profile) return std::nullopt;
    const double step = frame.spacing().min();
    const auto w = static_cast<std::size_t>(std::max(1L, std::lround(kSalienceSmoothingMm / step)));
    return peak_valley_salience(moving_average(*profile, w | 1u));
}

inline double rule4_verticality(const Line2D& centerline) {
    const double limit = std::tan(kMaxVerticalityAngleDeg * std::numbers::pi / 180.0);
    const double dx = std::abs(centerline.direction.x);
    const double dy = std::abs(centerline.direction.y);
    if (dy <= 0.0 || dx >= limit * dy) return limit;
    return dx / dy;
}

/// All four rules for one frame; nullopt marks an unscorable frame.
inline std::optional<RuleScores> evaluate_rules(const Raster& frame, const LabelMask& labels) {
    if (frame.width() != labels.width() || frame.height() != labels.height()) throw Error("dimension mismatch");
    const auto s1 = rule1_lens_anterior(frame, labels);
    if (!s1) return std::nullopt;
    SheathGeometry geom;
    try {
        geom = analyze_sheath(labels, frame.spacing());
    } catch (const Error&) {
        return std::nullopt;
    }
    const auto s2 = rule2_edge_clarity(frame, geom.sheath);
    if (!s2) return std::nullopt;
    const auto s3 = rule3_two_bright_three_dark(frame, geom.sheath, geom.centerline.line, geom.globe_exit);
    if (!s3) return std::nullopt;
    return RuleScores{*s1, *s2, *s3, rule4_verticality(geom.centerline.line)};
}

// ---------------------------------------------------------------------------
// Scoring model

enum class ModelSource { paper_default, fitted };

inline std::string to_string(ModelSource s) { return s == ModelSource::fitted ? "fitted" : "paper_default"; }

struct Normalization {
    RuleVector mean{};
    RuleVector std{1.0, 1.0, 1.0, 1.0};
};

struct ScoringModel {
    RuleVector weights{};
    std::optional<Normalization> norm;  // absent: standardise per video
    ModelSource source = ModelSource::paper_default;

    static ScoringModel paper_default() { return {{-0.2873, 0.3585, 0.1115, -0.1179}, std::nullopt, ModelSource::paper_default}; }
};

inline RuleVector standardize(const RuleScores& s, const Normalization& n) {
    const auto a = s.as_array();
    RuleVector z{};
    for (std::size_t i = 0; i < 4; ++i) z[i] = (a[i] - n.mean[i]) / n.std[i];
    return z;
}

inline double weighted_total(const RuleVector& z, const RuleVector& w) {
    double t = 0.0;
    for (std::size_t i = 0; i < 4; ++i) t += w[i] * z[i];
    return t;
}

inline double score_frame(const RuleScores& rules, const ScoringModel& model) {
    if (!model.norm) throw Error("scoring model has no normalization statistics");
    for (double s : model.norm->std)
        if (!(s > 0.0)) throw Error("normalization std must be positive");
    return weighted_total(standardize(rules, *model.norm), model.weights);
}

/// Population mean / std per rule; a zero spread is replaced by 1.
inline Normalization fit_normalization(std::span<const RuleScores> samples) {
    if (samples.empty()) throw Error("no samples for normalization");
    Normalization n;
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> col;
        col.reserve(samples.size());
        for (const auto& s : samples) col.push_back(s.as_array()[i]);
        n.mean[i] = stats::mean(col);
        const double sd = stats::stddev(col);
        n.std[i] = sd > 0.0 ? sd : 1.0;
    }
    return n;
}

/// Two-class Fisher discriminant on z-scored rules. Weights are the unit-norm
/// direction S_w^-1 (mu_pos - mu_neg), so positives score higher.
inline ScoringModel fit_lda(std::span<const RuleScores> positives, std::span<const RuleScores> negatives) {
    if (positives.size() < 2 || negatives.size() < 2) throw Error("insufficient annotations");
    std::vector<RuleScores> pooled(positives.begin(), positives.end());
    pooled.insert(pooled.end(), negatives.begin(), negatives.end());
    const Normalization norm = fit_normalization(pooled);

    using Vec4 = Eigen::Vector4d;
    auto class_stats = [&](std::span<const RuleScores> cls, Eigen::Matrix4d& scatter) {
        std::vector<Vec4> zs;
        Vec4 mu = Vec4::Zero();
        for (const auto& s : cls) {
            const auto z = standardize(s, norm);
            zs.emplace_back(z[0], z[1], z[2], z[3]);
            mu += zs.back();
        }
        mu /= static_cast<double>(cls.size());
        for (const auto& z : zs) scatter += (z - mu) * (z - mu).transpose();
        return mu;
    };
    Eigen::Matrix4d sw = Eigen::Matrix4d::Zero();
    const Vec4 mu_pos = class_stats(positives, sw);
    const Vec4 mu_neg = class_stats(negatives, sw);
    const Vec4 diff = mu_pos - mu_neg;
    if (diff.norm() <= 1e-12) throw Error("degenerate LDA");
    const double trace = sw.trace();
    if (!(trace > 0.0)) throw Error("degenerate LDA");
    sw.diagonal().array() += 1e-6 * trace / 4.0;

    const Eigen::FullPivLU<Eigen::Matrix4d> lu(sw);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) throw Error("degenerate LDA");
    Vec4 w = lu.solve(diff);
    const double wn = w.norm();
    if (!(wn > 0.0) || !std::isfinite(wn)) throw Error("degenerate LDA");
    w /= wn;
    if (w.dot(diff) < 0.0) w = -w;
    return {{w[0], w[1], w[2], w[3]}, norm, ModelSource::fitted};
}

inline nlohmann::json scoring_model_to_json(const ScoringModel& m) {
    nlohmann::json j{{"weights", m.weights}, {"source", to_string(m.source)}};
    j["norm_mean"] = m.norm ? nlohmann::json(m.norm->mean) : nlohmann::json(nullptr);
    j["norm_std"] = m.norm ? nlohmann::json(m.norm->std) : nlohmann::json(nullptr);
    return j;
}

inline ScoringModel scoring_model_from_json(const nlohmann::json& j) {
    ScoringModel m;
    try {
        m.weights = j.at("weights").get<RuleVector>();
        const std::string src = j.value("source", std::string("fitted"));
        if (src == "fitted") m.source = ModelSource::fitted;
        else if (src == "paper_default") m.source = ModelSource::paper_default;
        else throw Error("invalid scoring model source '" + src + "'");
        const bool has_mean = j.contains("norm_mean") && !j["norm_mean"].is_null();
        const bool has_std = j.contains("norm_std") && !j["norm_std"].is_null();
        if (has_mean != has_std) throw Error("scoring model needs both norm_mean and norm_std");
        if (has_mean) {
            Normalization n{j["norm_mean"].get<RuleVector>(), j["norm_std"].get<RuleVector>()};
            for (double s : n.std)
                if (!(s > 0.0)) throw Error("normalization std must be positive");
            m.norm = n;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("invalid scoring model: ") + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Ranking

struct FrameScore {
    int frame_index = 0;
    RuleScores rules;
    RuleVector z{};
    double total = 0.0;
};

struct RankedFrames {
    std::vector<FrameScore> order;   // total desc, frame index asc
    std::vector<int> keyframe_set;   // first min(5, count) indices of `order`
    std::vector<int> unscorable;     // ascending frame indices
    Normalization normalization;     // the statistics actually applied
    bool per_video_normalization = false;

    std::vector<int> ranked_indices() const {
        std::vector<int> out;
        out.reserve(order.size());
        for (const auto& f : order) out.push_back(f.frame_index);
        return out;
    }
};

/// Ranks already-evaluated rules. `rules[i]` nullopt marks frame i unscorable.
inline RankedFrames rank_rules(std::span<const std::optional<RuleScores>> rules, const ScoringModel& model) {
    RankedFrames ranked;
    std::vector<RuleScores> scorable;
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (rules[i]) scorable.push_back(*rules[i]);
        else ranked.unscorable.push_back(static_cast<int>(i));
    }
    if (scorable.empty()) throw Error(ErrorKind::empty_pipeline, "no scorable frames");

    ranked.per_video_normalization = !model.norm.has_value();
    ranked.normalization = model.norm ? *model.norm : fit_normalization(scorable);
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (!rules[i]) continue;
        FrameScore fs;
        fs.frame_index = static_cast<int>(i);
        fs.rules = *rules[i];
        fs.z = standardize(fs.rules, ranked.normalization);
        fs.total = weighted_total(fs.z, model.weights);
        ranked.order.push_back(fs);
    }
    std::stable_sort(ranked.order.begin(), ranked.order.end(), [](const FrameScore& a, const FrameScore& b) {
        if (a.total != b.total) return a.total > b.total;
        return a.frame_index < b.frame_index;
    });
    const std::size_t k = std::min(kKeyframeSetSize, ranked.order.size());
    for (std::size_t i = 0; i < k; ++i) ranked.keyframe_set.push_back(ranked.order[i].frame_index);
    return ranked;
}

inline std::vector<std::optional<RuleScores>> evaluate_bundle_rules(const CaseBundle& bundle, unsigned jobs = 1) {
    return parallel_map(bundle.size(), jobs,
                        [&](std::size_t i) { return evaluate_rules(bundle.frames[i], bundle.masks[i]); });
}

inline RankedFrames rank_frames(const CaseBundle& bundle, const ScoringModel& model, unsigned jobs = 1) {
    const auto rules = evaluate_bundle_rules(bundle, jobs);
    return rank_rules(rules, model);
}

/// Rules of the annotated keyframes (positives) and suboptimal frames (negatives).
struct AnnotatedRules {
    std::vector<RuleScores> positives;
    std::vector<RuleScores> negatives;
};

inline void collect_annotated_rules(const CaseBundle& bundle, AnnotatedRules& out, unsigned jobs = 1) {
    if (!bundle.annotations) return;
    const auto& a = *bundle.annotations;
    std::vector<std::pair<int, bool>> wanted;
    for (int i : a.keyframes) wanted.emplace_back(i, true);
    for (int i : a.suboptimal) wanted.emplace_back(i, false);
    const auto scores = parallel_map(wanted.size(), jobs, [&](std::size_t k) {
        const int i = wanted[k].first;
        return evaluate_rules(bundle.frames[i], bundle.masks[i]);
    });
    for (std::size_t k = 0; k < wanted.size(); ++k) {
        if (!scores[k]) continue;
        (wanted[k].second ? out.positives : out.negatives).push_back(*scores[k]);
    }
}

// ---------------------------------------------------------------------------
// Evaluation

inline constexpr int kFrameTolerance = 2;

/// Fraction of videos where some top-k prediction lies within 2 frames of an
/// annotated keyframe. Videos with fewer than k predictions use all of them.
inline double topk_accuracy(std::span<const std::vector<int>> predictions,
                            std::span<const std::vector<int>> ground_truth, int k) {
    if (k != 1 && k != 3 && k != 5) throw Error("k must be 1, 3 or 5");
    if (predictions.size() != ground_truth.size()) throw Error("prediction / ground truth count mismatch");
    if (predictions.empty()) throw Error("no videos to evaluate");
    std::size_t hits = 0;
    for (std::size_t v = 0; v < predictions.size(); ++v) {
        if (predictions[v].empty()) throw Error("video without predictions");
        if (ground_truth[v].empty()) throw Error("video without annotated keyframe");
        const std::size_t top = std::min<std::size_t>(k, predictions[v].size());
        bool hit = false;
        for (std::size_t i = 0; i < top && !hit; ++i)
            for (int gt : ground_truth[v])
                if (std::abs(predictions[v][i] - gt) <= kFrameTolerance) hit = true;
        hits += hit ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

inline double topk_accuracy(std::span<const std::vector<int>> predictions, std::span<const int> ground_truth, int k) {
    std::vector<std::vector<int>> gt;
    for (int g : ground_truth) gt.push_back({g});
    return topk_accuracy(predictions, gt, k);
}

}  // namespace onsd
