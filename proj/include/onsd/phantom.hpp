#pragma once

// Synthetic B-mode-like ocular frames with exact ground truth.
//
// Geometry: a dark eyeball disk; the sheath leaves the globe radially at tilt
// theta from the image vertical. Across the sheath the intensity runs
// dura | subarachnoid | nerve | subarachnoid | dura (dark / bright / dark /
// bright / dark). Labels are rasterised from the analytic shapes before noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "onsd/error.hpp"
#include "onsd/imaging.hpp"
#include "onsd/ingest.hpp"

namespace onsd {

// ---------------------------------------------------------------------------
// Deterministic randomness

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stable per-item seed derived from a base seed and a stream/index pair.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) noexcept {
    return splitmix64(splitmix64(splitmix64(seed) ^ stream) + index);
}

/// mt19937_64 with distribution code written out, so draws are identical
/// across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }
    bool bernoulli(double p) { return uniform() < p; }
    double normal() {
        if (spare_) {
            const double v = *spare_;
            spare_.reset();
            return v;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }
    double normal(double mean, double sd) { return mean + sd * normal(); }
    /// Rayleigh draw scaled to unit mean.
    double rayleigh_unit_mean() {
        const double u = 1.0 - uniform();
        return std::sqrt(-2.0 * std::log(u)) / std::sqrt(std::numbers::pi / 2.0);
    }
    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

// ---------------------------------------------------------------------------
// Specification

struct PhantomPalette {
    double background = 90.0;
    double eyeball = 15.0;
    double nerve = 30.0;
    double subarachnoid = 170.0;
    double dura = 25.0;
};

struct SheathSpec {
    double tilt_deg = 0.0;
    double width_start_mm = 5.0;   // width at the globe exit
    double width_end_mm = 5.0;     // width after the taper
    double taper_length_mm = 0.0;  // 0: constant width
    double length_mm = 14.0;
    double dura_mm = 0.3;
    double plane_offset = 0.0;     // off-axis cut as a fraction of the radius; narrows the visible sheath

    double width_at(double depth_mm) const noexcept {
        if (taper_length_mm <= 0.0) return width_start_mm;
        const double f = std::clamp(depth_mm / taper_length_mm, 0.0, 1.0);
        return width_start_mm + f * (width_end_mm - width_start_mm);
    }
    double visible_width_at(double depth_mm) const noexcept {
        return width_at(depth_mm) * std::sqrt(1.0 - plane_offset * plane_offset);
    }
};

struct BandingSpec {
    double band_width_mm = 0.6;  // subarachnoid band
    double contrast = 1.0;       // 0: bands and dura fade into nerve / background
};

struct LensSpec {
    bool present = false;
    double intensity = 200.0;
    double semi_axis_x_mm = 2.5;
    double semi_axis_y_mm = 1.0;
};

struct NoiseSpec {
    double speckle = 0.0;   // multiplicative, Rayleigh with unit mean
    double gaussian = 0.0;  // additive sd
};

struct PhantomSpec {
    int width = 400;
    int height = 500;
    Spacing spacing{0.065, 0.065};
    Point2 eyeball_center{13.0, 9.0};
    double eyeball_radius_mm = 8.0;
    SheathSpec sheath;
    BandingSpec banding;
    LensSpec lens;
    NoiseSpec noise;
    PhantomPalette palette;
    std::uint64_t seed = 1;
    std::string case_id = "phantom";
    std::optional<double> icp_mmH2O;
};

struct PhantomTruth {
    double onsd_at_3mm = 0.0;           // on-axis sheath width 3 mm behind the globe
    double visible_onsd_at_3mm = 0.0;   // what an ideal chord on this frame measures
    double theta_true_deg = 0.0;
    Point2 globe_exit;
    Point2 axis;                        // unit sheath direction (image-downward)
    std::size_t lens_pixels = 0;
    int best_frame_index = -1;          // video mode only
    std::vector<double> frame_quality;  // analytic quality per frame (video mode)
    std::vector<double> frame_visible_onsd;
};

inline Point2 sheath_axis(double tilt_deg) {
    const double t = tilt_deg * std::numbers::pi / 180.0;
    return {std::sin(t), std::cos(t)};
}

inline void validate_phantom(const PhantomSpec& s) {
    if (s.width <= 0 || s.height <= 0) throw Error("phantom dimensions must be positive");
    if (!s.spacing.valid()) throw Error("spacing must be positive");
    if (!(s.eyeball_radius_mm > 0.0)) throw Error("eyeball radius must be positive");
    const auto& sh = s.sheath;
    if (!(sh.tilt_deg >= 0.0 && sh.tilt_deg < 45.0)) throw Error("sheath tilt must lie in [0, 45) degrees");
    if (!(sh.width_start_mm > 0.0 && sh.width_end_mm > 0.0)) throw Error("sheath width must be positive");
    if (!(sh.length_mm > 5.0)) throw Error("sheath length must exceed 5 mm");
    if (!(sh.plane_offset >= 0.0 && sh.plane_offset < 1.0)) throw Error("plane offset must lie in [0, 1)");
    if (!(sh.dura_mm >= 0.0) || !(s.banding.band_width_mm >= 0.0)) throw Error("layer widths must be non-negative");
    if (!(s.banding.contrast >= 0.0 && s.banding.contrast <= 1.0)) throw Error("contrast must lie in [0, 1]");
    if (!(s.noise.speckle >= 0.0 && s.noise.gaussian >= 0.0)) throw Error("noise levels must be non-negative");

    const double xmax = (s.width - 1) * s.spacing.sx;
    const double ymax = (s.height - 1) * s.spacing.sy;
    const Point2 c = s.eyeball_center;
    const double r = s.eyeball_radius_mm;
    auto inside = [&](Point2 p) { return p.x >= 0.0 && p.y >= 0.0 && p.x <= xmax && p.y <= ymax; };
    if (!inside({c.x - r, c.y - r}) || !inside({c.x + r, c.y + r})) throw Error("geometry overflow: eyeball");
    const Point2 u = sheath_axis(sh.tilt_deg);
    const Point2 n{u.y, -u.x};
    const Point2 g = c + u * r;
    const Point2 tip = g + u * sh.length_mm;
    const double half = 0.5 * std::max(sh.width_start_mm, sh.width_end_mm);
    for (Point2 p : {g + n * half, g - n * half, tip + n * half, tip - n * half})
        if (!inside(p)) throw Error("geometry overflow: sheath");
}

// ---------------------------------------------------------------------------
// Rendering

struct PhantomFrame {
    Raster raster;
    LabelMask labels;
    PhantomTruth truth;
};

inline PhantomFrame generate_frame(const PhantomSpec& s) {
    validate_phantom(s);
    const auto& sh = s.sheath;
    const auto& pal = s.palette;
    const Point2 c = s.eyeball_center;
    const double r = s.eyeball_radius_mm;
    const Point2 u = sheath_axis(sh.tilt_deg);
    const Point2 n{u.y, -u.x};
    const Point2 g = c + u * r;
    const Point2 lens_center = c + Point2{0.0, -0.45 * r};

    const double k = s.banding.contrast;
    const double bright = pal.nerve + k * (pal.subarachnoid - pal.nerve);
    const double dura = pal.background - k * (pal.background - pal.dura);

    LabelMask labels(s.width, s.height);
    std::vector<double> clean(static_cast<std::size_t>(s.width) * s.height, pal.background);
    std::size_t lens_pixels = 0;
    for (int row = 0; row < s.height; ++row) {
        for (int col = 0; col < s.width; ++col) {
            const Point2 p = pixel_to_mm(col, row, s.spacing);
            const std::size_t i = static_cast<std::size_t>(row) * s.width + col;
            if ((p - c).norm() <= r) {
                labels.set(col, row, Label::eyeball);
                clean[i] = pal.eyeball;
                if (s.lens.present) {
                    const double ex = (p.x - lens_center.x) / s.lens.semi_axis_x_mm;
                    const double ey = (p.y - lens_center.y) / s.lens.semi_axis_y_mm;
                    if (ex * ex + ey * ey <= 1.0) {
                        clean[i] = s.lens.intensity;
                        ++lens_pixels;
                    }
                }
                continue;
            }
            const Point2 d = p - g;
            const double depth = d.dot(u);
            const double half = 0.5 * sh.visible_width_at(std::max(depth, 0.0));
            const double off = std::abs(d.dot(n));
            if (depth < -half || depth > sh.length_mm || off > half) continue;
            labels.set(col, row, Label::sheath);
            const double inset = half - off;
            if (inset < sh.dura_mm) clean[i] = dura;
            else if (inset < sh.dura_mm + s.banding.band_width_mm) clean[i] = bright;
            else clean[i] = pal.nerve;
        }
    }

    std::vector<double> px(clean.size());
    Rng rng(derive_seed(s.seed, 0x6e6f697365ULL));
    for (std::size_t i = 0; i < clean.size(); ++i) {
        double v = clean[i];
        if (s.noise.speckle > 0.0) v *= 1.0 + s.noise.speckle * (rng.rayleigh_unit_mean() - 1.0);
        if (s.noise.gaussian > 0.0) v += rng.normal(0.0, s.noise.gaussian);
        px[i] = std::clamp(std::round(v), 0.0, 255.0);
    }

    PhantomTruth truth;
    truth.onsd_at_3mm = sh.width_at(3.0);
    truth.visible_onsd_at_3mm = sh.visible_width_at(3.0);
    truth.theta_true_deg = sh.tilt_deg;
    truth.globe_exit = g;
    truth.axis = u;
    truth.lens_pixels = lens_pixels;
    return {Raster(s.width, s.height, s.spacing, std::move(px)), std::move(labels), truth};
}

// ---------------------------------------------------------------------------
// Videos

/// Per-frame degradations applied to every frame except the planted best one.
struct QualitySchedule {
    int best_frame = -1;  // -1: drawn from the seed
    double contrast_min = 0.3;
    double contrast_max = 0.75;
    double tilt_jitter_min_deg = 2.0;
    double tilt_jitter_max_deg = 12.0;
    double lens_probability = 0.3;
    double extra_speckle_max = 0.15;
    double plane_offset_min = 0.05;
    double plane_offset_max = 0.6;
};

struct FrameDegradation {
    double contrast = 1.0;
    double tilt_deg = 0.0;
    bool lens = false;
    double extra_speckle = 0.0;
    double plane_offset = 0.0;
};

inline double analytic_quality(const FrameDegradation& d, double base_tilt_deg) {
    const double tan_gap = std::tan(d.tilt_deg * std::numbers::pi / 180.0) -
                           std::tan(base_tilt_deg * std::numbers::pi / 180.0);
    return d.contrast - d.plane_offset - (d.lens ? 0.5 : 0.0) - tan_gap - d.extra_speckle;
}

struct PhantomVideo {
    CaseBundle bundle;
    PhantomTruth truth;
    std::vector<FrameDegradation> schedule;
};

inline PhantomVideo generate_video(const PhantomSpec& spec, int n_frames, const QualitySchedule& q = {}) {
    if (n_frames < 5) throw Error("a phantom video needs at least 5 frames");
    if (q.best_frame >= n_frames) throw Error("best frame outside the video");
    if (!(q.contrast_max < spec.banding.contrast)) throw Error("degraded contrast must stay below the best frame's");
    if (!(q.contrast_min >= 0.0 && q.contrast_min <= q.contrast_max)) throw Error("invalid contrast range");
    validate_phantom(spec);

    Rng rng(derive_seed(spec.seed, 0x7363686564ULL));
    const int best = q.best_frame >= 0 ? q.best_frame : static_cast<int>(rng.below(static_cast<std::uint64_t>(n_frames)));
    const double base_tilt = spec.sheath.tilt_deg;

    PhantomVideo video;
    video.schedule.resize(n_frames);
    for (int i = 0; i < n_frames; ++i) {
        FrameDegradation d;
        d.tilt_deg = base_tilt;
        d.contrast = spec.banding.contrast;
        // Draw for every frame so the sequence does not depend on the best index.
        const double c = rng.uniform(q.contrast_min, q.contrast_max);
        const double jitter = rng.uniform(q.tilt_jitter_min_deg, q.tilt_jitter_max_deg);
        const bool lens = rng.bernoulli(q.lens_probability);
        const double speckle = rng.uniform(0.0, q.extra_speckle_max);
        const double offset = rng.uniform(q.plane_offset_min, q.plane_offset_max);
        if (i != best) {
            d.contrast = c;
            d.tilt_deg = std::min(base_tilt + jitter, 44.0);
            d.lens = lens;
            d.extra_speckle = speckle;
            d.plane_offset = offset;
        }
        video.schedule[i] = d;
    }

    auto& b = video.bundle;
    b.case_id = spec.case_id;
    b.eye = Eye::left;
    b.spacing = spec.spacing;
    b.icp_mmH2O = spec.icp_mmH2O;
    auto& truth = video.truth;
    for (int i = 0; i < n_frames; ++i) {
        const auto& d = video.schedule[i];
        PhantomSpec fs = spec;
        fs.seed = derive_seed(spec.seed, 0x6672616d65ULL, static_cast<std::uint64_t>(i));
        fs.banding.contrast = d.contrast;
        fs.sheath.tilt_deg = d.tilt_deg;
        fs.sheath.plane_offset = d.plane_offset;
        fs.lens.present = d.lens;
        fs.noise.speckle = spec.noise.speckle + d.extra_speckle;
        PhantomFrame f = generate_frame(fs);
        if (i == best) {
            auto quality = std::move(truth.frame_quality);
            auto visible = std::move(truth.frame_visible_onsd);
            truth = f.truth;
            truth.frame_quality = std::move(quality);
            truth.frame_visible_onsd = std::move(visible);
        }
        b.frames.push_back(std::move(f.raster));
        b.masks.push_back(std::move(f.labels));
        video.truth.frame_visible_onsd.push_back(fs.sheath.visible_width_at(3.0));
        video.truth.frame_quality.push_back(analytic_quality(d, base_tilt));
    }
    truth.best_frame_index = best;
    const auto worst = std::min_element(truth.frame_quality.begin(), truth.frame_quality.end()) - truth.frame_quality.begin();
    b.annotations = AnnotationSet{{best}, {static_cast<int>(worst)}};
    return video;
}

// ---------------------------------------------------------------------------
// JSON

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    PhantomSpec s;
    try {
        s.width = j.value("width", s.width);
        s.height = j.value("height", s.height);
        if (j.contains("spacing_mm")) s.spacing = {j["spacing_mm"].at(0).get<double>(), j["spacing_mm"].at(1).get<double>()};
        if (j.contains("eyeball")) {
            const auto& e = j["eyeball"];
            if (e.contains("center_mm")) s.eyeball_center = {e["center_mm"].at(0).get<double>(), e["center_mm"].at(1).get<double>()};
            s.eyeball_radius_mm = e.value("radius_mm", s.eyeball_radius_mm);
        }
        if (j.contains("sheath")) {
            const auto& e = j["sheath"];
            auto& sh = s.sheath;
            sh.tilt_deg = e.value("tilt_deg", sh.tilt_deg);
            if (e.contains("width_mm")) sh.width_start_mm = sh.width_end_mm = e["width_mm"].get<double>();
            sh.width_start_mm = e.value("width_start_mm", sh.width_start_mm);
            sh.width_end_mm = e.value("width_end_mm", sh.width_end_mm);
            sh.taper_length_mm = e.value("taper_length_mm", sh.taper_length_mm);
            sh.length_mm = e.value("length_mm", sh.length_mm);
            sh.dura_mm = e.value("dura_mm", sh.dura_mm);
            sh.plane_offset = e.value("plane_offset", sh.plane_offset);
        }
        if (j.contains("banding")) {
            s.banding.band_width_mm = j["banding"].value("band_width_mm", s.banding.band_width_mm);
            s.banding.contrast = j["banding"].value("contrast", s.banding.contrast);
        }
        if (j.contains("lens")) {
            const auto& e = j["lens"];
            s.lens.present = e.value("present", s.lens.present);
            s.lens.intensity = e.value("intensity", s.lens.intensity);
            s.lens.semi_axis_x_mm = e.value("semi_axis_x_mm", s.lens.semi_axis_x_mm);
            s.lens.semi_axis_y_mm = e.value("semi_axis_y_mm", s.lens.semi_axis_y_mm);
        }
        if (j.contains("noise")) {
            s.noise.speckle = j["noise"].value("speckle", s.noise.speckle);
            s.noise.gaussian = j["noise"].value("gaussian", s.noise.gaussian);
        }
        if (j.contains("palette")) {
            const auto& e = j["palette"];
            auto& p = s.palette;
            p.background = e.value("background", p.background);
            p.eyeball = e.value("eyeball", p.eyeball);
            p.nerve = e.value("nerve", p.nerve);
            p.subarachnoid = e.value("subarachnoid", p.subarachnoid);
            p.dura = e.value("dura", p.dura);
        }
        s.seed = j.value("seed", s.seed);
        s.case_id = j.value("case_id", s.case_id);
        if (j.contains("icp_mmH2O") && !j["icp_mmH2O"].is_null()) s.icp_mmH2O = j["icp_mmH2O"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("invalid phantom spec: ") + e.what());
    }
    return s;
}

inline nlohmann::json phantom_spec_to_json(const PhantomSpec& s) {
    const auto& sh = s.sheath;
    const auto& p = s.palette;
    return {{"width", s.width},
            {"height", s.height},
            {"spacing_mm", {s.spacing.sx, s.spacing.sy}},
            {"eyeball", {{"center_mm", {s.eyeball_center.x, s.eyeball_center.y}}, {"radius_mm", s.eyeball_radius_mm}}},
            {"sheath",
             {{"tilt_deg", sh.tilt_deg},
              {"width_start_mm", sh.width_start_mm},
              {"width_end_mm", sh.width_end_mm},
              {"taper_length_mm", sh.taper_length_mm},
              {"length_mm", sh.length_mm},
              {"dura_mm", sh.dura_mm},
              {"plane_offset", sh.plane_offset}}},
            {"banding", {{"band_width_mm", s.banding.band_width_mm}, {"contrast", s.banding.contrast}}},
            {"lens",
             {{"present", s.lens.present},
              {"intensity", s.lens.intensity},
              {"semi_axis_x_mm", s.lens.semi_axis_x_mm},
              {"semi_axis_y_mm", s.lens.semi_axis_y_mm}}},
            {"noise", {{"speckle", s.noise.speckle}, {"gaussian", s.noise.gaussian}}},
            {"palette",
             {{"background", p.background},
              {"eyeball", p.eyeball},
              {"nerve", p.nerve},
              {"subarachnoid", p.subarachnoid},
              {"dura", p.dura}}},
            {"seed", s.seed},
            {"case_id", s.case_id},
            {"icp_mmH2O", s.icp_mmH2O ? nlohmann::json(*s.icp_mmH2O) : nlohmann::json(nullptr)}};
}

inline nlohmann::json phantom_truth_to_json(const PhantomTruth& t) {
    return {{"onsd_at_3mm", t.onsd_at_3mm},
            {"visible_onsd_at_3mm", t.visible_onsd_at_3mm},
            {"theta_true_deg", t.theta_true_deg},
            {"globe_exit", {t.globe_exit.x, t.globe_exit.y}},
            {"lens_pixels", t.lens_pixels},
            {"best_frame_index", t.best_frame_index},
            {"frame_quality", t.frame_quality},
            {"frame_visible_onsd", t.frame_visible_onsd}};
}

// ---------------------------------------------------------------------------
// Synthetic cohort for the grading stage

/// ICP rises with ONSD and with the product of two clinical features, so a
/// single ONSD cut-off cannot separate the tiers.
struct CohortPatient {
    std::string patient_id;
    double onsd_left_mm = 0.0;
    double onsd_right_mm = 0.0;
    double icp_mmH2O = 0.0;
};

struct SyntheticCohort {
    ClinicalTable clinical;
    std::vector<CohortPatient> patients;
    std::size_t interacting_a = 47;  // schema indices of the interacting features
    std::size_t interacting_b = 48;
};

inline std::vector<std::string> synthetic_clinical_schema() {
    std::vector<std::string> names;
    char buf[32];
    for (std::size_t i = 0; i < kClinicalFeatureCount; ++i) {
        std::snprintf(buf, sizeof buf, "clin_%02zu", i);
        names.emplace_back(buf);
    }
    return names;
}

inline SyntheticCohort synthesize_cohort(std::size_t n_patients, std::uint64_t seed, double missing_rate = 0.03) {
    SyntheticCohort cohort;
    cohort.clinical.schema = synthetic_clinical_schema();
    Rng rng(derive_seed(seed, 0x636f686f7274ULL));
    for (std::size_t p = 0; p < n_patients; ++p) {
        char id[32];
        std::snprintf(id, sizeof id, "P%03zu", p);
        const double onsd = rng.uniform(4.0, 7.0);
        const double a = rng.uniform(0.0, 1.0);
        const double b = rng.uniform(0.0, 1.0);
        const double icp = std::max(20.0, 60.0 + 30.0 * (onsd - 4.0) + 330.0 * a * b + rng.normal(0.0, 10.0));
        const double asym = rng.normal(0.0, 0.1);

        ClinicalRecord rec;
        rec.patient_id = id;
        rec.icp_mmH2O = icp;
        for (std::size_t j = 0; j < kClinicalFeatureCount; ++j) {
            double v = rng.normal();
            if (j == cohort.interacting_a) v = a;
            if (j == cohort.interacting_b) v = b;
            const bool drop = j != cohort.interacting_a && j != cohort.interacting_b && rng.bernoulli(missing_rate);
            rec.features.push_back(drop ? std::nullopt : std::optional<double>(v));
        }
        cohort.clinical.records.push_back(std::move(rec));
        cohort.patients.push_back({id, onsd + asym, onsd - asym, icp});
    }
    return cohort;
}

}  // namespace onsd
