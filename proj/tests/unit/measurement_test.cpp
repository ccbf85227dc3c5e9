#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "onsd/measurement.hpp"
#include "onsd/phantom.hpp"
#include "onsd/stats.hpp"

using namespace onsd;

namespace {

PhantomSpec spec(double width_mm, double tilt_deg, double spacing = 0.065) {
    PhantomSpec s;
    s.spacing = {spacing, spacing};
    s.width = static_cast<int>(std::ceil(28.0 / spacing));
    s.height = static_cast<int>(std::ceil(34.0 / spacing));
    s.eyeball_center = {12.0, 9.0};
    s.sheath.length_mm = 12.0;
    s.sheath.width_start_mm = s.sheath.width_end_mm = width_mm;
    s.sheath.tilt_deg = tilt_deg;
    return s;
}

// Eyeball disk at (5, 5) mm, radius 3 mm, sampled at 0.01 mm/px.
constexpr Spacing kFine{0.01, 0.01};

BinaryMask fine_disk() {
    BinaryMask m(1000, 1400);
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c) {
            const Point2 p = pixel_to_mm(c, r, kFine);
            if ((p - Point2{5, 5}).norm() <= 3.0) m.set(c, r);
        }
    return m;
}

Centerline line_from(Point2 start, Point2 dir, double length) {
    Centerline c;
    c.line = Line2D::through(start, dir);
    c.t_min = 0.0;
    c.t_max = length;
    return c;
}

// Student-t two-sided tail by Simpson integration of the density.
double t_two_sided_p(double t, double dof) {
    const double norm = std::tgamma((dof + 1) / 2) / (std::sqrt(dof * std::numbers::pi) * std::tgamma(dof / 2));
    auto f = [&](double x) { return norm * std::pow(1.0 + x * x / dof, -(dof + 1) / 2); };
    const int n = 20000;
    const double h = std::abs(t) / n;
    double s = f(0) + f(std::abs(t));
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
    return 1.0 - 2.0 * s * h / 3.0;
}

}  // namespace

TEST(Centerline, VerticalBand) {
    BinaryMask m(100, 80);
    for (int r = 10; r < 70; ++r)
        for (int c = 40; c <= 60; ++c) m.set(c, r);
    const Spacing sp{0.065, 0.065};
    const auto cl = extract_centerline(m, sp);
    EXPECT_NEAR(cl.line.point.x, 50 * sp.sx, 1e-9);
    EXPECT_NEAR(cl.line.direction.x, 0.0, 1e-12);
    EXPECT_NEAR(cl.line.direction.y, 1.0, 1e-12);
    EXPECT_NEAR(cl.t_max - cl.t_min, 59 * sp.sy, 1e-9);
}

TEST(Centerline, TiltedPhantomDirection) {
    const auto f = generate_frame(spec(5.0, 10.0));
    const auto cl = extract_centerline(f.labels.select(Label::sheath), f.raster.spacing());
    const double angle = std::atan2(cl.line.direction.x, cl.line.direction.y) * 180.0 / std::numbers::pi;
    EXPECT_NEAR(angle, 10.0, 0.5);
}

TEST(Centerline, SpuriousBlobIgnored) {
    BinaryMask m(100, 100);
    for (int r = 10; r < 90; ++r)
        for (int c = 45; c <= 55; ++c) m.set(c, r);
    for (int r = 20; r < 30; ++r)
        for (int c = 5; c < 15; ++c) m.set(c, r);
    const auto cl = extract_centerline(m, {1.0, 1.0});
    EXPECT_NEAR(cl.line.point.x, 50.0, 1e-9);
    EXPECT_NEAR(cl.line.direction.x, 0.0, 1e-12);
}

TEST(Centerline, Errors) {
    BinaryMask m(10, 10);
    EXPECT_THROW(extract_centerline(m, {1, 1}), Error);
    for (int c = 0; c < 10; ++c) m.set(c, 4), m.set(c, 5);
    try {
        extract_centerline(m, {1, 1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "sheath too short");
    }
}

TEST(GlobeIntersection, VerticalLineBelowDisk) {
    const auto p = globe_intersection(line_from({5, 10}, {0, 1}, 3.0), fine_disk(), kFine);
    EXPECT_NEAR(p.x, 5.0, 0.01);
    EXPECT_NEAR(p.y, 8.0, 0.01);
}

TEST(GlobeIntersection, TiltedLineMatchesQuadraticSolution) {
    const auto disk = fine_disk();
    for (double deg : {5.0, 15.0, 25.0, 35.0}) {
        const double a = deg * std::numbers::pi / 180.0;
        const Point2 u{std::sin(a), std::cos(a)};
        const Point2 start = Point2{5, 5} + u * 6.0;
        // |start - c - s u|^2 = 9 with start - c = 6u gives s = 3 back toward the centre.
        const Point2 expect = start - u * 3.0;
        const auto p = globe_intersection(line_from(start, u, 2.0), disk, kFine);
        EXPECT_NEAR((p - expect).norm(), 0.0, 0.02) << deg;
    }
}

TEST(GlobeIntersection, MissIsError) {
    try {
        globe_intersection(line_from({9.5, 10}, {0, 1}, 3.0), fine_disk(), kFine);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no globe intersection");
    }
}

TEST(GlobeIntersection, SheathStartingInsideGlobe) {
    // Segment starts inside the disk: exit found at its lower edge.
    const auto p = globe_intersection(line_from({5, 6}, {0, 1}, 5.0), fine_disk(), kFine);
    EXPECT_NEAR(p.y, 8.0, 0.01);
}

TEST(FrameOnsd, ConstantWidthVertical) {
    const auto f = generate_frame(spec(5.0, 0.0));
    const auto m = measure_frame_onsd(f.labels, f.raster.spacing(), 7);
    EXPECT_GE(m.onsd_mm, 4.87);
    EXPECT_LE(m.onsd_mm, 5.13);
    EXPECT_EQ(m.frame_index, 7);
    EXPECT_NEAR((m.target - m.globe_exit).norm(), 3.0, 1e-9);
    EXPECT_NEAR((m.globe_exit - f.truth.globe_exit).norm(), 0.0, 0.065);
    EXPECT_NEAR((m.p1 - m.p2).norm(), m.onsd_mm, 1e-12);
}

TEST(FrameOnsd, ConstantWidthTilted) {
    const auto f = generate_frame(spec(5.0, 15.0));
    const double v = measure_frame_onsd(f.labels, f.raster.spacing()).onsd_mm;
    EXPECT_GE(v, 4.87);
    EXPECT_LE(v, 5.13);
}

TEST(FrameOnsd, TaperMeasuredAtThreeMillimetres) {
    auto s = spec(6.0, 0.0);
    s.sheath.width_end_mm = 4.0;
    s.sheath.taper_length_mm = 6.0;
    const auto f = generate_frame(s);
    EXPECT_DOUBLE_EQ(f.truth.onsd_at_3mm, 5.0);
    EXPECT_NEAR(measure_frame_onsd(f.labels, f.raster.spacing()).onsd_mm, 5.0, 0.15);
}

TEST(FrameOnsd, NoiseDoesNotTouchMasks) {
    auto s = spec(5.5, 8.0);
    const auto clean = generate_frame(s);
    s.noise = {0.5, 10.0};
    const auto noisy = generate_frame(s);
    EXPECT_EQ(clean.labels, noisy.labels);
    EXPECT_EQ(measure_frame_onsd(clean.labels, s.spacing).onsd_mm, measure_frame_onsd(noisy.labels, s.spacing).onsd_mm);
}

TEST(FrameOnsd, RotationChangesWidthByAtMostTwoPixels) {
    for (double w : {4.0, 5.5, 7.0})
        for (double tilt : {0.0, 7.0, 14.0}) {
            const auto a = generate_frame(spec(w, tilt));
            const auto b = generate_frame(spec(w, tilt + 10.0));
            EXPECT_LE(std::abs(measure_frame_onsd(a.labels, a.raster.spacing()).onsd_mm -
                               measure_frame_onsd(b.labels, b.raster.spacing()).onsd_mm),
                      2 * 0.065 + 1e-9)
                << w << " " << tilt;
        }
}

TEST(FrameOnsd, Errors) {
    LabelMask only_eye(50, 50);
    only_eye.set(10, 10, Label::eyeball);
    EXPECT_THROW(measure_frame_onsd(only_eye, {0.1, 0.1}), Error);

    // Sheath shorter than the 3 mm offset: target falls off the sheath.
    LabelMask short_sheath(100, 100);
    for (int r = 0; r < 20; ++r)
        for (int c = 40; c < 60; ++c) short_sheath.set(c, r, Label::eyeball);
    for (int r = 20; r < 40; ++r)
        for (int c = 45; c < 55; ++c) short_sheath.set(c, r, Label::sheath);
    try {
        measure_frame_onsd(short_sheath, {0.1, 0.1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "target off sheath");
    }
}

TEST(Aggregate, OutlierFenced) {
    const std::vector<double> v{4.0, 4.1, 4.2, 4.3, 9.0};
    const auto a = aggregate_video_onsd(v);
    EXPECT_NEAR(a.q1, 4.1, 1e-12);
    EXPECT_NEAR(a.q3, 4.3, 1e-12);
    EXPECT_NEAR(a.lower_fence, 3.8, 1e-12);
    EXPECT_NEAR(a.upper_fence, 4.6, 1e-12);
    EXPECT_EQ(a.excluded, (std::vector<double>{9.0}));
    EXPECT_DOUBLE_EQ(a.onsd_mm, 4.3);
}

TEST(Aggregate, ConstantAndSingle) {
    const std::vector<double> five(5, 5.0);
    const auto a = aggregate_video_onsd(five);
    EXPECT_EQ(a.kept.size(), 5u);
    EXPECT_DOUBLE_EQ(a.onsd_mm, 5.0);
    const std::vector<double> one{4.2};
    const auto b = aggregate_video_onsd(one);
    EXPECT_DOUBLE_EQ(b.q1, 4.2);
    EXPECT_DOUBLE_EQ(b.q3, 4.2);
    EXPECT_DOUBLE_EQ(b.onsd_mm, 4.2);
    EXPECT_THROW(aggregate_video_onsd(std::vector<double>{}), Error);
}

TEST(Aggregate, Properties) {
    std::mt19937 gen(31);
    std::uniform_real_distribution<double> u(3.0, 9.0);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> v(1 + t % 5);
        for (auto& x : v) x = u(gen);
        const double mx = *std::max_element(v.begin(), v.end());
        const auto a = aggregate_video_onsd(v);
        EXPECT_FALSE(a.kept.empty());
        EXPECT_LE(a.onsd_mm, mx);
        EXPECT_GE(a.iqr, 0.0);
        EXPECT_EQ(a.kept.size() + a.excluded.size(), v.size());
        EXPECT_EQ(aggregate_video_onsd(v, std::numeric_limits<double>::infinity()).onsd_mm, mx);
    }
}

TEST(Aggregate, MeasurementOverloadKeepsFrames) {
    std::vector<OnsdMeasurement> ms(3);
    for (int i = 0; i < 3; ++i) ms[i].frame_index = i, ms[i].onsd_mm = 5.0 + i * 0.1;
    const auto a = aggregate_video_onsd(ms);
    EXPECT_EQ(a.per_frame.size(), 3u);
    EXPECT_DOUBLE_EQ(a.onsd_mm, 5.2);
}

TEST(Bilateral, Mean) {
    VideoOnsd l, r;
    l.onsd_mm = 5.0;
    r.onsd_mm = 6.0;
    EXPECT_DOUBLE_EQ(bilateral_mean(l, r), 5.5);
    r.onsd_mm = 5.0;
    EXPECT_DOUBLE_EQ(bilateral_mean(std::optional(l), std::optional(r)), 5.0);
    try {
        bilateral_mean(std::nullopt, std::optional(r));
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "missing eye");
    }
}

TEST(Pearson, ExactLinear) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> y, z;
    for (double v : x) y.push_back(2 * v + 1), z.push_back(-v);
    EXPECT_NEAR(stats::pearson(x, y).r, 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(stats::pearson(x, y).p, 0.0);
    EXPECT_NEAR(stats::pearson(x, z).r, -1.0, 1e-15);
}

TEST(Pearson, HandComputedExample) {
    const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
    const auto c = stats::pearson(x, y);
    EXPECT_NEAR(c.r, 0.8, 1e-12);
    const double t = 0.8 * std::sqrt(3.0 / (1.0 - 0.64));
    EXPECT_NEAR(t, 2.3094, 1e-4);
    EXPECT_NEAR(c.p, t_two_sided_p(t, 3.0), 1e-8);
    EXPECT_EQ(c.n, 5u);
}

TEST(Pearson, SymmetricAndAffineInvariant) {
    std::mt19937 gen(6);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> x(30), y(30), ax(30);
    for (int i = 0; i < 30; ++i) x[i] = n(gen), y[i] = x[i] + n(gen), ax[i] = 3 * x[i] + 7;
    const auto a = stats::pearson(x, y), b = stats::pearson(y, x), c = stats::pearson(ax, y);
    EXPECT_NEAR(a.r, b.r, 1e-14);
    EXPECT_NEAR(a.r, c.r, 1e-12);
    EXPECT_NEAR(a.p, t_two_sided_p(a.r * std::sqrt(28 / (1 - a.r * a.r)), 28), 1e-7);
}

TEST(Pearson, Errors) {
    const std::vector<double> x{1, 2, 3}, k{2, 2, 2}, two{1, 2};
    try {
        stats::pearson(x, k);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "constant input");
    }
    EXPECT_THROW(stats::pearson(two, two), Error);
    EXPECT_THROW(stats::pearson(x, two), Error);
}

TEST(Quantile, InterpolatesAtPTimesNMinusOne) {
    const std::vector<double> s{1, 2, 4, 8};
    EXPECT_DOUBLE_EQ(stats::quantile_sorted(s, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(stats::quantile_sorted(s, 0.5), 3.0);
    EXPECT_DOUBLE_EQ(stats::quantile_sorted(s, 1.0), 8.0);
    EXPECT_DOUBLE_EQ(stats::median({3, 1, 2}), 2.0);
}
