#pragma once

// Case bundles on disk:
//
//   <case>/meta.json         {"case_id", "eye", "spacing_mm": [sx, sy], "icp_mmH2O": number|null}
//   <case>/frames/NNNN.pgm   8-bit grayscale (.png accepted)
//   <case>/masks/NNNN.png    raw labels 0 background, 1 eyeball, 2 optic nerve sheath
//   <case>/annotations.json  {"keyframes": [...], "suboptimal": [...]}   (optional)
//
// plus the clinical table (CSV + JSON schema) and patient exclusion rules.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "onsd/csv.hpp"
#include "onsd/error.hpp"
#include "onsd/image_io.hpp"
#include "onsd/imaging.hpp"
#include "onsd/stats.hpp"

namespace onsd {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Eye { left, right };

inline std::string to_string(Eye e) { return e == Eye::left ? "left" : "right"; }

inline Eye parse_eye(const std::string& s) {
    if (s == "left") return Eye::left;
    if (s == "right") return Eye::right;
    throw Error("invalid eye '" + s + "'");
}

struct AnnotationSet {
    std::vector<int> keyframes;
    std::vector<int> suboptimal;

    bool operator==(const AnnotationSet&) const = default;
};

struct CaseBundle {
    std::string case_id;
    Eye eye = Eye::left;
    Spacing spacing{};
    std::vector<Raster> frames;
    std::vector<LabelMask> masks;
    std::optional<AnnotationSet> annotations;
    std::optional<double> icp_mmH2O;

    std::size_t size() const noexcept { return frames.size(); }
    bool operator==(const CaseBundle&) const = default;
};

inline void validate_annotations(const AnnotationSet& a, std::size_t frame_count) {
    auto check = [&](const std::vector<int>& v) {
        for (int i : v)
            if (i < 0 || static_cast<std::size_t>(i) >= frame_count) throw Error("annotation index out of range");
    };
    check(a.keyframes);
    check(a.suboptimal);
    const std::set<int> keys(a.keyframes.begin(), a.keyframes.end());
    for (int i : a.suboptimal)
        if (keys.count(i)) throw Error("annotation lists overlap");
}

inline void validate_bundle(const CaseBundle& b) {
    if (b.frames.empty() || b.frames.size() != b.masks.size()) throw Error("bundle incomplete");
    if (!b.spacing.valid()) throw Error("missing spacing");
    const int w = b.frames.front().width();
    const int h = b.frames.front().height();
    for (std::size_t i = 0; i < b.frames.size(); ++i) {
        const auto& f = b.frames[i];
        const auto& m = b.masks[i];
        if (f.width() != w || f.height() != h || m.width() != w || m.height() != h) throw Error("dimension mismatch");
        if (!(f.spacing() == b.spacing)) throw Error("frame spacing differs from bundle spacing");
    }
    if (b.annotations) validate_annotations(*b.annotations, b.frames.size());
    if (b.icp_mmH2O && !(*b.icp_mmH2O > 0.0)) throw Error("icp_mmH2O must be positive");
}

inline json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

inline void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline json annotations_to_json(const AnnotationSet& a) {
    return json{{"keyframes", a.keyframes}, {"suboptimal", a.suboptimal}};
}

inline AnnotationSet annotations_from_json(const json& j) {
    AnnotationSet a;
    try {
        if (j.contains("keyframes")) a.keyframes = j.at("keyframes").get<std::vector<int>>();
        if (j.contains("suboptimal")) a.suboptimal = j.at("suboptimal").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw Error(std::string("invalid annotations: ") + e.what());
    }
    return a;
}

namespace detail {

// NNNN.<ext> -> index; nullopt for anything else
inline std::optional<int> frame_index_of(const fs::path& p) {
    const std::string stem = p.stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; }))
        return std::nullopt;
    int v = 0;
    auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), v);
    if (ec != std::errc()) return std::nullopt;
    return v;
}

inline std::map<int, fs::path> list_indexed(const fs::path& dir, std::initializer_list<const char*> exts) {
    std::map<int, fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = lower_extension(entry.path());
        if (std::none_of(exts.begin(), exts.end(), [&](const char* e) { return ext == e; })) continue;
        if (auto idx = frame_index_of(entry.path())) {
            if (out.count(*idx)) throw Error("duplicate frame index " + std::to_string(*idx));
            out.emplace(*idx, entry.path());
        }
    }
    return out;
}

inline std::string indexed_name(int i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d%s", i, ext);
    return buf;
}

}  // namespace detail

inline bool is_case_dir(const fs::path& dir) { return fs::is_regular_file(dir / "meta.json"); }

inline CaseBundle load_case(const fs::path& dir) {
    if (!is_case_dir(dir)) throw Error("bundle incomplete: no meta.json in " + dir.string());
    const json meta = read_json_file(dir / "meta.json");
    CaseBundle b;
    try {
        b.case_id = meta.value("case_id", dir.filename().string());
        b.eye = parse_eye(meta.value("eye", std::string("left")));
        if (!meta.contains("spacing_mm") || !meta["spacing_mm"].is_array() || meta["spacing_mm"].size() != 2)
            throw Error("missing spacing");
        b.spacing = {meta["spacing_mm"][0].get<double>(), meta["spacing_mm"][1].get<double>()};
        if (meta.contains("icp_mmH2O") && !meta["icp_mmH2O"].is_null()) b.icp_mmH2O = meta["icp_mmH2O"].get<double>();
    } catch (const json::exception& e) {
        throw Error(std::string("invalid meta.json: ") + e.what());
    }
    if (!b.spacing.valid()) throw Error("missing spacing");

    const auto frames = detail::list_indexed(dir / "frames", {".pgm", ".png"});
    const auto masks = detail::list_indexed(dir / "masks", {".png"});
    if (frames.empty()) throw Error("bundle incomplete");
    for (const auto& [idx, _] : frames)
        if (!masks.count(idx)) throw Error("bundle incomplete");
    for (const auto& [idx, _] : masks)
        if (!frames.count(idx)) throw Error("bundle incomplete");
    int expect = 0;
    for (const auto& [idx, _] : frames)
        if (idx != expect++) throw Error("bundle incomplete");

    for (const auto& [idx, path] : frames) {
        b.frames.push_back(read_frame(path, b.spacing));
        b.masks.push_back(read_label_mask(masks.at(idx)));
    }
    if (fs::is_regular_file(dir / "annotations.json"))
        b.annotations = annotations_from_json(read_json_file(dir / "annotations.json"));
    validate_bundle(b);
    return b;
}

inline void write_case(const CaseBundle& b, const fs::path& dir) {
    validate_bundle(b);
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "masks");
    json meta{{"case_id", b.case_id},
              {"eye", to_string(b.eye)},
              {"spacing_mm", {b.spacing.sx, b.spacing.sy}},
              {"icp_mmH2O", b.icp_mmH2O ? json(*b.icp_mmH2O) : json(nullptr)}};
    write_json_file(dir / "meta.json", meta);
    for (std::size_t i = 0; i < b.frames.size(); ++i) {
        write_frame(dir / "frames" / detail::indexed_name(static_cast<int>(i), ".pgm"), b.frames[i]);
        write_label_mask(dir / "masks" / detail::indexed_name(static_cast<int>(i), ".png"), b.masks[i]);
    }
    if (b.annotations) write_json_file(dir / "annotations.json", annotations_to_json(*b.annotations));
}

/// Case directories directly under `root` (or `root` itself), sorted by path.
inline std::vector<fs::path> find_case_dirs(const fs::path& root) {
    if (is_case_dir(root)) return {root};
    std::vector<fs::path> out;
    if (!fs::is_directory(root)) throw Error("not a directory: " + root.string());
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && is_case_dir(entry.path())) out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Clinical table

inline constexpr std::size_t kClinicalFeatureCount = 49;

struct ClinicalRecord {
    std::string patient_id;
    std::vector<std::optional<double>> features;  // schema order; nullopt = missing
    std::optional<double> icp_mmH2O;
    bool excluded_mannitol = false;
    bool excluded_shunt = false;

    bool operator==(const ClinicalRecord&) const = default;
};

struct ClinicalTable {
    std::vector<std::string> schema;  // feature names, in order
    std::vector<ClinicalRecord> records;
};

inline std::vector<std::string> load_clinical_schema(const fs::path& path) {
    const json j = read_json_file(path);
    std::vector<std::string> names;
    try {
        names = (j.is_object() ? j.at("features") : j).get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw Error(std::string("schema mismatch: ") + e.what());
    }
    if (names.size() != kClinicalFeatureCount)
        throw Error("schema mismatch: expected " + std::to_string(kClinicalFeatureCount) + " features, got " +
                    std::to_string(names.size()));
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
        throw Error("schema mismatch: duplicate feature name");
    return names;
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_number(const std::string& cell) {
    const std::string t = trim(cell);
    if (t.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = t.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) throw std::invalid_argument(t);
    return v;
}

inline bool parse_flag(const std::string& cell) {
    std::string t = trim(cell);
    for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (t.empty() || t == "0" || t == "false" || t == "no") return false;
    if (t == "1" || t == "true" || t == "yes") return true;
    throw std::invalid_argument(t);
}

}  // namespace detail

inline ClinicalTable load_clinical_table(const fs::path& csv_path, const std::vector<std::string>& schema) {
    const auto rows = csv::read_file(csv_path.string());
    if (rows.empty()) throw Error("schema mismatch: empty clinical table");
    const auto& header = rows.front();

    std::map<std::string, std::size_t> fixed{{"patient_id", SIZE_MAX}, {"icp_mmH2O", SIZE_MAX}, {"mannitol", SIZE_MAX}, {"shunt", SIZE_MAX}};
    std::vector<std::size_t> feature_cols;
    std::vector<std::string> feature_names;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string name = detail::trim(header[c]);
        if (auto it = fixed.find(name); it != fixed.end()) {
            if (it->second != SIZE_MAX) throw Error("schema mismatch: duplicate column " + name);
            it->second = c;
        } else {
            feature_cols.push_back(c);
            feature_names.push_back(name);
        }
    }
    for (const auto& [name, col] : fixed)
        if (col == SIZE_MAX) throw Error("schema mismatch: missing column " + name);
    if (feature_names != schema) throw Error("schema mismatch: feature columns do not match schema");

    ClinicalTable table{schema, {}};
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && detail::trim(row[0]).empty()) continue;  // blank line
        if (row.size() != header.size())
            throw Error("parse error at row " + std::to_string(r + 1) + ": expected " + std::to_string(header.size()) +
                        " fields");
        auto fail = [&](std::size_t col) {
            return Error("parse error at row " + std::to_string(r + 1) + ", col " + std::to_string(col + 1) + " (" +
                         detail::trim(header[col]) + "): '" + row[col] + "'");
        };
        ClinicalRecord rec;
        rec.patient_id = detail::trim(row[fixed["patient_id"]]);
        if (rec.patient_id.empty()) throw fail(fixed["patient_id"]);
        try {
            rec.icp_mmH2O = detail::parse_number(row[fixed["icp_mmH2O"]]);
        } catch (const std::invalid_argument&) {
            throw fail(fixed["icp_mmH2O"]);
        }
        if (rec.icp_mmH2O && !(*rec.icp_mmH2O > 0.0)) throw fail(fixed["icp_mmH2O"]);
        for (const char* flag : {"mannitol", "shunt"}) {
            try {
                const bool v = detail::parse_flag(row[fixed[flag]]);
                (std::string(flag) == "mannitol" ? rec.excluded_mannitol : rec.excluded_shunt) = v;
            } catch (const std::invalid_argument&) {
                throw fail(fixed[flag]);
            }
        }
        rec.features.reserve(feature_cols.size());
        for (std::size_t col : feature_cols) {
            try {
                rec.features.push_back(detail::parse_number(row[col]));
            } catch (const std::invalid_argument&) {
                throw fail(col);
            }
        }
        table.records.push_back(std::move(rec));
    }
    return table;
}

inline ClinicalTable load_clinical_table(const fs::path& csv_path, const fs::path& schema_path) {
    return load_clinical_table(csv_path, load_clinical_schema(schema_path));
}

inline void write_clinical_table(const fs::path& csv_path, const ClinicalTable& table) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw Error("cannot write " + csv_path.string());
    csv::Row header{"patient_id", "icp_mmH2O", "mannitol", "shunt"};
    header.insert(header.end(), table.schema.begin(), table.schema.end());
    out << csv::join(header) << "\r\n";
    for (const auto& rec : table.records) {
        csv::Row row{rec.patient_id, rec.icp_mmH2O ? csv::format_number(*rec.icp_mmH2O) : "",
                     rec.excluded_mannitol ? "1" : "0", rec.excluded_shunt ? "1" : "0"};
        for (const auto& f : rec.features) row.push_back(f ? csv::format_number(*f) : "");
        out << csv::join(row) << "\r\n";
    }
}

inline void write_clinical_schema(const fs::path& path, const std::vector<std::string>& schema) {
    write_json_file(path, json{{"features", schema}});
}

/// Drops patients who received mannitol or underwent shunting; order preserved.
inline std::vector<ClinicalRecord> apply_exclusions(std::vector<ClinicalRecord> records) {
    std::erase_if(records, [](const ClinicalRecord& r) { return r.excluded_mannitol || r.excluded_shunt; });
    return records;
}

enum class ImputeStrategy { median };

/// Per-feature median over observed values.
inline std::vector<double> feature_medians(const std::vector<ClinicalRecord>& records, std::size_t feature_count) {
    std::vector<double> medians(feature_count);
    for (std::size_t j = 0; j < feature_count; ++j) {
        std::vector<double> seen;
        for (const auto& r : records)
            if (j < r.features.size() && r.features[j]) seen.push_back(*r.features[j]);
        if (seen.empty()) throw Error("feature has no observed values (column " + std::to_string(j + 1) + ")");
        medians[j] = stats::median(std::move(seen));
    }
    return medians;
}

inline std::vector<ClinicalRecord> impute_missing(std::vector<ClinicalRecord> records, const std::vector<double>& medians) {
    for (auto& r : records) {
        if (r.features.size() != medians.size()) throw Error("schema mismatch");
        for (std::size_t j = 0; j < medians.size(); ++j)
            if (!r.features[j]) r.features[j] = medians[j];
    }
    return records;
}

inline std::vector<ClinicalRecord> impute_missing(std::vector<ClinicalRecord> records, ImputeStrategy) {
    if (records.empty()) return records;
    const auto medians = feature_medians(records, records.front().features.size());
    return impute_missing(std::move(records), medians);
}

}  // namespace onsd
