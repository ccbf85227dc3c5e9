#pragma once

// Geometric ONSD measurement: sheath centerline -> proximal globe exit ->
// target 3 mm along the centerline -> perpendicular chord across the sheath.
// Per-video aggregation applies Tukey fences and keeps the widest value.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "onsd/error.hpp"
#include "onsd/imaging.hpp"
#include "onsd/stats.hpp"

namespace onsd {

inline constexpr double kOnsdDepthMm = 3.0;
inline constexpr double kMaxChordMm = 20.0;
inline constexpr double kTukeyFence = 1.5;

struct Centerline {
    Line2D line;
    double t_min = 0.0;  // arclength extent of the sheath along the line (mm)
    double t_max = 0.0;
    double fit_residual = 0.0;
};

/// Centerline of the (largest component of the) sheath mask.
inline Centerline extract_centerline(const BinaryMask& ons_mask, Spacing spacing) {
    if (!spacing.valid()) throw Error("spacing must be positive");
    const BinaryMask sheath = largest_component(ons_mask);
    if (sheath.empty()) throw Error("empty sheath mask");

    std::vector<Point2> centroids;
    for (int row = 0; row < sheath.height(); ++row) {
        double sum = 0.0;
        int n = 0;
        for (int col = 0; col < sheath.width(); ++col) {
            if (sheath.at(col, row)) {
                sum += col;
                ++n;
            }
        }
        if (n > 0) centroids.push_back({sum / n * spacing.sx, row * spacing.sy});
    }
    if (centroids.size() < 3) throw Error("sheath too short");
    const LineFit rows = fit_line_tls(centroids);

    // Rows cut the ends of a tilted sheath obliquely, which drags the row
    // centroids toward vertical. A mask that is mirror-symmetric about the
    // sheath axis has that axis as an eigenvector of its pixel scatter, so the
    // principal axes are used, picking the one nearer the row fit.
    std::vector<Point2> pixels;
    for (int row = 0; row < sheath.height(); ++row)
        for (int col = 0; col < sheath.width(); ++col)
            if (sheath.at(col, row)) pixels.push_back(pixel_to_mm(col, row, spacing));
    Line2D axis = rows.line;
    try {
        const Line2D major = fit_line_tls(pixels).line;
        axis = std::abs(major.direction.dot(rows.line.direction)) >= std::sqrt(0.5)
                   ? major
                   : Line2D::through(major.point, major.normal());
    } catch (const Error&) {
        // isotropic scatter: keep the row fit
    }
    double residual = 0.0;
    for (const auto& p : centroids) {
        const double d = (p - axis.point).dot(axis.normal());
        residual += d * d;
    }
    const LineFit fit{axis, residual / static_cast<double>(centroids.size())};
    Centerline c{fit.line, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                 fit.residual};
    for (int row = 0; row < sheath.height(); ++row) {
        for (int col = 0; col < sheath.width(); ++col) {
            if (!sheath.at(col, row)) continue;
            const double t = fit.line.project(pixel_to_mm(col, row, spacing));
            c.t_min = std::min(c.t_min, t);
            c.t_max = std::max(c.t_max, t);
        }
    }
    if (!(c.t_min < c.t_max)) throw Error("sheath too short");
    return c;
}

namespace detail {

inline bool mask_at_mm(const BinaryMask& m, Point2 p, Spacing s) {
    const auto px = mm_to_pixel(p, s);
    return m.contains(px.col, px.row);
}

inline bool inside_image_mm(const BinaryMask& m, Point2 p, Spacing s) {
    const auto px = mm_to_pixel(p, s);
    return m.in_bounds(px.col, px.row);
}

/// Refines a membership transition between `out` (predicate false) and `in`
/// (predicate true) until the bracket is below `tol` mm; returns its midpoint.
template <class Pred>
Point2 bisect_boundary(Point2 out, Point2 in, double tol, Pred&& inside) {
    while ((in - out).norm() > tol) {
        const Point2 mid = (in + out) * 0.5;
        if (inside(mid)) in = mid;
        else out = mid;
    }
    return (in + out) * 0.5;
}

}  // namespace detail

/// Proximal intersection of the centerline with the eyeball, marching from the
/// sheath toward the globe in quarter-pixel steps.
inline Point2 globe_intersection(const Centerline& centerline, const BinaryMask& eyeball_mask, Spacing spacing) {
    const double step = 0.25 * spacing.min();
    const double tol = 0.1 * spacing.min();
    const auto in_eye = [&](Point2 p) { return detail::mask_at_mm(eyeball_mask, p, spacing); };
    const Line2D& line = centerline.line;

    double t = centerline.t_min;
    if (in_eye(line.at(t))) {
        // Sheath end already overlaps the globe: walk down to its lower edge.
        while (t <= centerline.t_max && in_eye(line.at(t))) t += step;
        if (t > centerline.t_max) throw Error("no globe intersection");
        return detail::bisect_boundary(line.at(t), line.at(t - step), tol, in_eye);
    }
    while (true) {
        const Point2 next = line.at(t - step);
        if (!detail::inside_image_mm(eyeball_mask, next, spacing)) throw Error("no globe intersection");
        if (in_eye(next)) return detail::bisect_boundary(line.at(t), next, tol, in_eye);
        t -= step;
    }
}

/// Per-frame sheath geometry shared by the measurement and the rule scores.
struct SheathGeometry {
    BinaryMask sheath;
    BinaryMask eyeball;
    Centerline centerline;
    Point2 globe_exit;
};

inline SheathGeometry analyze_sheath(const LabelMask& labels, Spacing spacing) {
    SheathGeometry g;
    g.sheath = largest_component(labels.select(Label::sheath));
    g.eyeball = largest_component(labels.select(Label::eyeball));
    if (g.sheath.empty()) throw Error("no sheath label");
    if (g.eyeball.empty()) throw Error("no eyeball label");
    g.centerline = extract_centerline(g.sheath, spacing);
    g.globe_exit = globe_intersection(g.centerline, g.eyeball, spacing);
    return g;
}

struct OnsdMeasurement {
    int frame_index = 0;
    Point2 globe_exit;
    Point2 target;
    Point2 p1;
    Point2 p2;
    double onsd_mm = 0.0;
};

inline OnsdMeasurement measure_onsd(const SheathGeometry& g, Spacing spacing, int frame_index = 0) {
    const Line2D& line = g.centerline.line;
    const Point2 target = g.globe_exit + line.direction * kOnsdDepthMm;
    const auto in_sheath = [&](Point2 p) { return detail::mask_at_mm(g.sheath, p, spacing); };
    if (!in_sheath(target)) throw Error("target off sheath");

    const double step = 0.25 * spacing.min();
    const double tol = 0.1 * spacing.min();
    const Point2 normal = line.normal();
    Point2 ends[2];
    for (int side = 0; side < 2; ++side) {
        const Point2 dir = normal * (side == 0 ? 1.0 : -1.0);
        double s = 0.0;
        while (in_sheath(target + dir * (s + step))) {
            s += step;
            if (s > kMaxChordMm) throw Error("unbounded chord");
        }
        ends[side] = detail::bisect_boundary(target + dir * (s + step), target + dir * s, tol, in_sheath);
    }
    return {frame_index, g.globe_exit, target, ends[0], ends[1], (ends[0] - ends[1]).norm()};
}

inline OnsdMeasurement measure_frame_onsd(const LabelMask& labels, Spacing spacing, int frame_index = 0) {
    return measure_onsd(analyze_sheath(labels, spacing), spacing, frame_index);
}

// ---------------------------------------------------------------------------
// Per-video aggregation

struct VideoOnsd {
    std::vector<OnsdMeasurement> per_frame;
    std::vector<double> values;  // in input order
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    double lower_fence = 0.0;
    double upper_fence = 0.0;
    std::vector<double> kept;
    std::vector<double> excluded;
    double onsd_mm = 0.0;
};

inline VideoOnsd aggregate_video_onsd(std::span<const double> values, double k_fence = kTukeyFence) {
    if (values.empty()) throw Error("no ONSD values to aggregate");
    if (!(k_fence >= 0.0)) throw Error("fence multiplier must be non-negative");
    VideoOnsd v;
    v.values.assign(values.begin(), values.end());
    std::vector<double> sorted = v.values;
    std::sort(sorted.begin(), sorted.end());
    v.q1 = stats::quantile_sorted(sorted, 0.25);
    v.q3 = stats::quantile_sorted(sorted, 0.75);
    v.iqr = v.q3 - v.q1;
    const bool vacuous = std::isinf(k_fence);
    v.lower_fence = vacuous ? -std::numeric_limits<double>::infinity() : v.q1 - k_fence * v.iqr;
    v.upper_fence = vacuous ? std::numeric_limits<double>::infinity() : v.q3 + k_fence * v.iqr;
    for (double x : v.values) (x >= v.lower_fence && x <= v.upper_fence ? v.kept : v.excluded).push_back(x);
    v.onsd_mm = *std::max_element(v.kept.begin(), v.kept.end());
    return v;
}

inline VideoOnsd aggregate_video_onsd(std::span<const OnsdMeasurement> measurements, double k_fence = kTukeyFence) {
    std::vector<double> values;
    values.reserve(measurements.size());
    for (const auto& m : measurements) values.push_back(m.onsd_mm);
    VideoOnsd v = aggregate_video_onsd(values, k_fence);
    v.per_frame.assign(measurements.begin(), measurements.end());
    return v;
}

inline double bilateral_mean(const std::optional<VideoOnsd>& left, const std::optional<VideoOnsd>& right) {
    if (!left || !right) throw Error("missing eye");
    return 0.5 * (left->onsd_mm + right->onsd_mm);
}

inline double bilateral_mean(const VideoOnsd& left, const VideoOnsd& right) {
    return 0.5 * (left.onsd_mm + right.onsd_mm);
}

// ---------------------------------------------------------------------------
// Report serialization

inline nlohmann::json point_json(Point2 p) { return nlohmann::json::array({p.x, p.y}); }

inline Point2 point_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline nlohmann::json measurement_to_json(const OnsdMeasurement& m) {
    return {{"frame", m.frame_index},       {"onsd_mm", m.onsd_mm},   {"p1", point_json(m.p1)},
            {"p2", point_json(m.p2)},        {"target", point_json(m.target)},
            {"globe_exit", point_json(m.globe_exit)}};
}

inline OnsdMeasurement measurement_from_json(const nlohmann::json& j) {
    OnsdMeasurement m;
    m.frame_index = j.at("frame").get<int>();
    m.onsd_mm = j.at("onsd_mm").get<double>();
    m.p1 = point_from_json(j.at("p1"));
    m.p2 = point_from_json(j.at("p2"));
    m.target = point_from_json(j.at("target"));
    if (j.contains("globe_exit")) m.globe_exit = point_from_json(j.at("globe_exit"));
    return m;
}

inline nlohmann::json video_onsd_to_json(const VideoOnsd& v) {
    nlohmann::json per_frame = nlohmann::json::array();
    for (const auto& m : v.per_frame) per_frame.push_back(measurement_to_json(m));
    return {{"per_frame", per_frame},
            {"q1", v.q1},
            {"q3", v.q3},
            {"iqr", v.iqr},
            {"fences", {v.lower_fence, v.upper_fence}},
            {"kept", v.kept},
            {"excluded", v.excluded},
            {"onsd_mm", v.onsd_mm}};
}

}  // namespace onsd
