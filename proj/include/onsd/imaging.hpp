#pragma once

// Raster and binary-mask primitives. Pixel (col, row) has its centre at
// (col * sx, row * sy) in millimetres; all geometry downstream works in mm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "onsd/error.hpp"

namespace onsd {

struct Spacing {
    double sx = 1.0;  // mm per px along columns
    double sy = 1.0;  // mm per px along rows

    double min() const noexcept { return std::min(sx, sy); }
    bool valid() const noexcept { return sx > 0.0 && sy > 0.0 && std::isfinite(sx) && std::isfinite(sy); }
    bool operator==(const Spacing&) const = default;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    Point2 operator+(Point2 o) const noexcept { return {x + o.x, y + o.y}; }
    Point2 operator-(Point2 o) const noexcept { return {x - o.x, y - o.y}; }
    Point2 operator*(double s) const noexcept { return {x * s, y * s}; }
    double dot(Point2 o) const noexcept { return x * o.x + y * o.y; }
    double norm() const noexcept { return std::hypot(x, y); }
    bool operator==(const Point2&) const = default;
};

struct PixelIndex {
    int col = 0;
    int row = 0;
};

inline Point2 pixel_to_mm(int col, int row, Spacing s) noexcept {
    return {col * s.sx, row * s.sy};
}

inline PixelIndex mm_to_pixel(Point2 p, Spacing s) noexcept {
    return {static_cast<int>(std::lround(p.x / s.sx)), static_cast<int>(std::lround(p.y / s.sy))};
}

/// Single-channel grayscale frame with physical pixel spacing.
class Raster {
public:
    Raster() = default;
    Raster(int width, int height, Spacing spacing, double fill = 0.0)
        : width_(width), height_(height), spacing_(spacing),
          pixels_(static_cast<std::size_t>(checked_area(width, height)), fill) {
        if (!spacing.valid()) throw Error("spacing must be positive");
        if (fill < 0.0 || fill > 255.0) throw Error("intensity out of range");
    }
    Raster(int width, int height, Spacing spacing, std::vector<double> pixels)
        : width_(width), height_(height), spacing_(spacing), pixels_(std::move(pixels)) {
        if (!spacing.valid()) throw Error("spacing must be positive");
        if (pixels_.size() != static_cast<std::size_t>(checked_area(width, height)))
            throw Error("dimension mismatch");
        for (double v : pixels_)
            if (!(v >= 0.0 && v <= 255.0)) throw Error("intensity out of range");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    Spacing spacing() const noexcept { return spacing_; }
    std::span<const double> pixels() const noexcept { return pixels_; }

    bool in_bounds(int col, int row) const noexcept {
        return col >= 0 && row >= 0 && col < width_ && row < height_;
    }
    double at(int col, int row) const { return pixels_[index(col, row)]; }
    void set(int col, int row, double v) {
        if (!(v >= 0.0 && v <= 255.0)) throw Error("intensity out of range");
        pixels_[index(col, row)] = v;
    }

    bool operator==(const Raster&) const = default;

private:
    static long checked_area(int w, int h) {
        if (w <= 0 || h <= 0) throw Error("raster dimensions must be positive");
        return static_cast<long>(w) * h;
    }
    std::size_t index(int col, int row) const noexcept {
        return static_cast<std::size_t>(row) * width_ + col;
    }

    int width_ = 0;
    int height_ = 0;
    Spacing spacing_{};
    std::vector<double> pixels_;
};

class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height, bool fill = false)
        : width_(width), height_(height),
          bits_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill ? 1 : 0) {
        if (width <= 0 || height <= 0) throw Error("mask dimensions must be positive");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool in_bounds(int col, int row) const noexcept {
        return col >= 0 && row >= 0 && col < width_ && row < height_;
    }
    bool at(int col, int row) const noexcept { return bits_[index(col, row)] != 0; }
    /// Out-of-image coordinates read as unset.
    bool contains(int col, int row) const noexcept { return in_bounds(col, row) && at(col, row); }
    void set(int col, int row, bool v = true) noexcept { bits_[index(col, row)] = v ? 1 : 0; }

    bool flat(std::size_t i) const noexcept { return bits_[i] != 0; }
    void set_flat(std::size_t i, bool v) noexcept { bits_[i] = v ? 1 : 0; }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
    }
    bool empty() const noexcept { return std::find(bits_.begin(), bits_.end(), 1) == bits_.end(); }

    bool same_shape(const BinaryMask& o) const noexcept { return width_ == o.width_ && height_ == o.height_; }

    bool operator==(const BinaryMask&) const = default;

private:
    std::size_t index(int col, int row) const noexcept {
        return static_cast<std::size_t>(row) * width_ + col;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class Label : std::uint8_t { background = 0, eyeball = 1, sheath = 2 };

class LabelMask {
public:
    LabelMask() = default;
    LabelMask(int width, int height)
        : width_(width), height_(height),
          labels_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0) {
        if (width <= 0 || height <= 0) throw Error("mask dimensions must be positive");
    }
    LabelMask(int width, int height, std::vector<std::uint8_t> labels)
        : width_(width), height_(height), labels_(std::move(labels)) {
        if (width <= 0 || height <= 0) throw Error("mask dimensions must be positive");
        if (labels_.size() != static_cast<std::size_t>(width) * height) throw Error("dimension mismatch");
        for (auto v : labels_)
            if (v > 2) throw Error("invalid label");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::span<const std::uint8_t> labels() const noexcept { return labels_; }

    Label at(int col, int row) const noexcept {
        return static_cast<Label>(labels_[static_cast<std::size_t>(row) * width_ + col]);
    }
    void set(int col, int row, Label l) noexcept {
        labels_[static_cast<std::size_t>(row) * width_ + col] = static_cast<std::uint8_t>(l);
    }

    BinaryMask select(Label l) const {
        BinaryMask m(width_, height_);
        for (std::size_t i = 0; i < labels_.size(); ++i) m.set_flat(i, labels_[i] == static_cast<std::uint8_t>(l));
        return m;
    }

    bool operator==(const LabelMask&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> labels_;
};

/// Unoriented line: direction is unit length with dy >= 0 (dx >= 0 when horizontal).
struct Line2D {
    Point2 point;
    Point2 direction{0.0, 1.0};

    static Line2D through(Point2 point, Point2 direction) {
        const double n = direction.norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw Error("degenerate line direction");
        Point2 d{direction.x / n, direction.y / n};
        if (d.y < 0.0 || (d.y == 0.0 && d.x < 0.0)) d = d * -1.0;
        return {point, d};
    }

    Point2 at(double t) const noexcept { return point + direction * t; }
    Point2 normal() const noexcept { return {-direction.y, direction.x}; }
    double project(Point2 p) const noexcept { return (p - point).dot(direction); }
};

// ---------------------------------------------------------------------------
// Morphology

enum class MorphOp { erode, dilate };

namespace detail {

constexpr double kFar = 1e20;

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
inline void distance_transform_1d(std::span<const double> f, std::span<double> d,
                                  std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -kFar;
    z[1] = kFar;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kFar;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

/// Squared Euclidean distance (px^2) from every pixel to the nearest pixel whose bit equals `target`.
inline std::vector<double> squared_distance_to(const BinaryMask& m, bool target) {
    const int w = m.width();
    const int h = m.height();
    std::vector<double> grid(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = (m.flat(i) == target) ? 0.0 : kFar;

    std::vector<int> v;
    std::vector<double> z;
    std::vector<double> f(std::max(w, h));
    std::vector<double> d(std::max(w, h));
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) f[r] = grid[static_cast<std::size_t>(r) * w + c];
        distance_transform_1d(std::span(f).first(h), std::span(d).first(h), v, z);
        for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = d[r];
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) f[c] = grid[static_cast<std::size_t>(r) * w + c];
        distance_transform_1d(std::span(f).first(w), std::span(d).first(w), v, z);
        for (int c = 0; c < w; ++c) grid[static_cast<std::size_t>(r) * w + c] = d[c];
    }
    return grid;
}

}  // namespace detail

/// Pixel radius of the disk structuring element for a millimetre radius.
inline int structuring_radius_px(double radius_mm, Spacing spacing) {
    if (radius_mm <= 0.0) return 0;
    return std::max(1, static_cast<int>(std::lround(radius_mm / spacing.min())));
}

/// Binary erosion / dilation by a discrete Euclidean disk. Pixels outside the
/// image count as background, so erosion also peels from the image border.
inline BinaryMask morphology(const BinaryMask& mask, MorphOp op, double radius_mm, Spacing spacing) {
    if (!(radius_mm >= 0.0)) throw Error("radius must be non-negative");
    if (!spacing.valid()) throw Error("spacing must be positive");
    const int r = structuring_radius_px(radius_mm, spacing);
    if (r == 0) return mask;

    const double r2 = double(r) * r;
    const int w = mask.width();
    const int h = mask.height();
    BinaryMask out(w, h);
    if (op == MorphOp::dilate) {
        if (mask.empty()) return out;
        const auto d2 = detail::squared_distance_to(mask, true);
        for (std::size_t i = 0; i < d2.size(); ++i) out.set_flat(i, d2[i] <= r2);
        return out;
    }
    if (mask.empty()) return out;
    const auto d2 = detail::squared_distance_to(mask, false);
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            if (!mask.at(col, row)) continue;
            const int border = std::min({col + 1, w - col, row + 1, h - row});
            const std::size_t i = static_cast<std::size_t>(row) * w + col;
            out.set_flat(i, d2[i] > r2 && border > r);
        }
    }
    return out;
}

/// Overload that validates the mask against the raster supplying the spacing.
inline BinaryMask morphology(const BinaryMask& mask, MorphOp op, double radius_mm, const Raster& spacing_source) {
    if (mask.width() != spacing_source.width() || mask.height() != spacing_source.height())
        throw Error("dimension mismatch");
    return morphology(mask, op, radius_mm, spacing_source.spacing());
}

inline BinaryMask erode(const BinaryMask& m, double radius_mm, Spacing s) { return morphology(m, MorphOp::erode, radius_mm, s); }
inline BinaryMask dilate(const BinaryMask& m, double radius_mm, Spacing s) { return morphology(m, MorphOp::dilate, radius_mm, s); }

inline BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw Error("dimension mismatch");
    BinaryMask out(a.width(), a.height());
    for (std::size_t i = 0; i < a.size(); ++i) out.set_flat(i, a.flat(i) && !b.flat(i));
    return out;
}

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw Error("dimension mismatch");
    BinaryMask out(a.width(), a.height());
    for (std::size_t i = 0; i < a.size(); ++i) out.set_flat(i, a.flat(i) || b.flat(i));
    return out;
}

inline std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw Error("dimension mismatch");
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += (a.flat(i) && b.flat(i)) ? 1 : 0;
    return n;
}

struct BandMasks {
    BinaryMask inner;  // just inside the contour
    BinaryMask outer;  // just outside the contour
};

inline BandMasks band_masks(const BinaryMask& mask, double band_mm, Spacing spacing) {
    if (!(band_mm > 0.0)) throw Error("band width must be positive");
    if (mask.count() < 4) throw Error("degenerate region");
    return {mask_difference(mask, erode(mask, band_mm, spacing)),
            mask_difference(dilate(mask, band_mm, spacing), mask)};
}

// ---------------------------------------------------------------------------
// Region statistics

inline void require_same_dims(const Raster& raster, const BinaryMask& mask) {
    if (raster.width() != mask.width() || raster.height() != mask.height()) throw Error("dimension mismatch");
}

inline double masked_sum(const Raster& raster, const BinaryMask& mask) {
    require_same_dims(raster, mask);
    const auto px = raster.pixels();
    double s = 0.0;
    for (std::size_t i = 0; i < px.size(); ++i)
        if (mask.flat(i)) s += px[i];
    return s;
}

inline double masked_mean(const Raster& raster, const BinaryMask& mask) {
    require_same_dims(raster, mask);
    const std::size_t n = mask.count();
    if (n == 0) throw Error("empty mask mean");
    return masked_sum(raster, mask) / static_cast<double>(n);
}

/// Largest 8-connected component; equal sizes resolve to the component whose
/// first pixel comes first in row-major order.
inline BinaryMask largest_component(const BinaryMask& mask) {
    const int w = mask.width();
    const int h = mask.height();
    BinaryMask best(w, h);
    std::vector<int> label(mask.size(), -1);
    std::vector<std::size_t> stack;
    std::size_t best_size = 0;
    int best_label = -1;
    int next = 0;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask.flat(start) || label[start] >= 0) continue;
        std::size_t size = 0;
        stack.push_back(start);
        label[start] = next;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++size;
            const int c = static_cast<int>(i % w);
            const int r = static_cast<int>(i / w);
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int nc = c + dc;
                    const int nr = r + dr;
                    if (!mask.contains(nc, nr)) continue;
                    const std::size_t j = static_cast<std::size_t>(nr) * w + nc;
                    if (label[j] >= 0) continue;
                    label[j] = next;
                    stack.push_back(j);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next;
        }
        ++next;
    }
    if (best_label < 0) return best;
    for (std::size_t i = 0; i < label.size(); ++i) best.set_flat(i, label[i] == best_label);
    return best;
}

/// Dice overlap 2|A n B| / (|A| + |B|); two empty masks agree perfectly.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw Error("dimension mismatch");
    const std::size_t na = a.count();
    const std::size_t nb = b.count();
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection_count(a, b)) / static_cast<double>(na + nb);
}

// ---------------------------------------------------------------------------
// Line fitting

struct LineFit {
    Line2D line;
    double residual = 0.0;  // smaller eigenvalue of the (mean-normalised) scatter matrix
};

/// Total-least-squares line: principal axis of the centred point cloud.
inline LineFit fit_line_tls(std::span<const Point2> points) {
    if (points.size() < 2) throw Error("degenerate line fit");
    const bool distinct = std::any_of(points.begin() + 1, points.end(),
                                      [&](const Point2& p) { return !(p == points.front()); });
    if (!distinct) throw Error("degenerate line fit");

    const double n = static_cast<double>(points.size());
    Point2 mean{};
    for (const auto& p : points) mean = mean + p;
    mean = mean * (1.0 / n);

    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& p : points) {
        const Point2 d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    sxx /= n;
    sxy /= n;
    syy /= n;

    const double trace = sxx + syy;
    const double gap = std::hypot(sxx - syy, 2.0 * sxy);
    if (gap <= 1e-12 * trace) throw Error("no principal axis");

    const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    return {Line2D::through(mean, {std::cos(angle), std::sin(angle)}), 0.5 * (trace - gap)};
}

}  // namespace onsd
