#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "onsd/csv.hpp"
#include "onsd/ingest.hpp"

using namespace onsd;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / (std::string("onsd_ingest_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

CaseBundle make_bundle(int frames, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_int_distribution<int> px(0, 255), lab(0, 2);
    CaseBundle b;
    b.case_id = "P001_left";
    b.eye = Eye::left;
    b.spacing = {0.065, 0.065};
    b.icp_mmH2O = 210.0;
    for (int i = 0; i < frames; ++i) {
        std::vector<double> p(12 * 9);
        for (auto& v : p) v = px(gen);
        std::vector<std::uint8_t> l(12 * 9);
        for (auto& v : l) v = static_cast<std::uint8_t>(lab(gen));
        b.frames.emplace_back(12, 9, b.spacing, p);
        b.masks.emplace_back(12, 9, l);
    }
    if (frames >= 3) b.annotations = AnnotationSet{{1}, {0, 2}};
    return b;
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

std::vector<std::string> schema49() {
    std::vector<std::string> s;
    for (int i = 0; i < 49; ++i) s.push_back("f" + std::to_string(i));
    return s;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
}

std::string clinical_csv(const std::vector<std::string>& schema, const std::vector<std::string>& rows) {
    std::string out = "patient_id,icp_mmH2O,mannitol,shunt";
    for (const auto& n : schema) out += "," + n;
    out += "\n";
    for (const auto& r : rows) out += r + "\n";
    return out;
}

std::string row(const std::string& id, const std::string& icp, int mannitol, int shunt, const std::string& fill) {
    std::string r = id + "," + icp + "," + std::to_string(mannitol) + "," + std::to_string(shunt);
    for (int i = 0; i < 49; ++i) r += "," + fill;
    return r;
}

ClinicalRecord rec(const std::string& id, std::vector<std::optional<double>> f, bool mannitol = false, bool shunt = false) {
    ClinicalRecord r;
    r.patient_id = id;
    r.features = std::move(f);
    r.icp_mmH2O = 150.0;
    r.excluded_mannitol = mannitol;
    r.excluded_shunt = shunt;
    return r;
}

}  // namespace

TEST(CaseBundle, RoundTripIsExact) {
    TempDir tmp;
    const auto b = make_bundle(3, 1);
    write_case(b, tmp.path() / "case");
    const auto back = load_case(tmp.path() / "case");
    EXPECT_EQ(back.size(), 3u);
    EXPECT_EQ(back, b);
}

TEST(CaseBundle, RoundTripWithoutOptionalFields) {
    TempDir tmp;
    auto b = make_bundle(2, 2);
    b.annotations.reset();
    b.icp_mmH2O.reset();
    b.eye = Eye::right;
    write_case(b, tmp.path() / "c");
    EXPECT_EQ(load_case(tmp.path() / "c"), b);
}

TEST(CaseBundle, MissingMaskIsIncomplete) {
    TempDir tmp;
    write_case(make_bundle(3, 3), tmp.path() / "c");
    fs::remove(tmp.path() / "c" / "masks" / "0002.png");
    EXPECT_EQ(error_of([&] { load_case(tmp.path() / "c"); }), "bundle incomplete");
}

TEST(CaseBundle, GapInFrameIndicesIsIncomplete) {
    TempDir tmp;
    write_case(make_bundle(3, 3), tmp.path() / "c");
    fs::rename(tmp.path() / "c" / "frames" / "0001.pgm", tmp.path() / "c" / "frames" / "0005.pgm");
    fs::rename(tmp.path() / "c" / "masks" / "0001.png", tmp.path() / "c" / "masks" / "0005.png");
    EXPECT_EQ(error_of([&] { load_case(tmp.path() / "c"); }), "bundle incomplete");
}

TEST(CaseBundle, MissingSpacing) {
    TempDir tmp;
    write_case(make_bundle(1, 4), tmp.path() / "c");
    write_text(tmp.path() / "c" / "meta.json", R"({"case_id":"x","eye":"left"})");
    EXPECT_EQ(error_of([&] { load_case(tmp.path() / "c"); }), "missing spacing");
    write_text(tmp.path() / "c" / "meta.json", R"({"case_id":"x","eye":"left","spacing_mm":[0,0.1]})");
    EXPECT_EQ(error_of([&] { load_case(tmp.path() / "c"); }), "missing spacing");
}

TEST(CaseBundle, InvalidLabel) {
    TempDir tmp;
    write_case(make_bundle(1, 5), tmp.path() / "c");
    Gray8Image img{12, 9, std::vector<std::uint8_t>(12 * 9, 3)};
    write_png(tmp.path() / "c" / "masks" / "0000.png", img);
    EXPECT_EQ(error_of([&] { load_case(tmp.path() / "c"); }), "invalid label");
}

TEST(CaseBundle, AnnotationValidation) {
    EXPECT_NO_THROW(validate_annotations({{1, 2}, {0}}, 3));
    EXPECT_EQ(error_of([] { validate_annotations({{3}, {}}, 3); }), "annotation index out of range");
    EXPECT_EQ(error_of([] { validate_annotations({{1}, {1}}, 3); }), "annotation lists overlap");
}

TEST(CaseBundle, MalformedMetaJson) {
    TempDir tmp;
    write_case(make_bundle(1, 6), tmp.path() / "c");
    write_text(tmp.path() / "c" / "meta.json", "{\"case_id\": ");
    EXPECT_THROW(load_case(tmp.path() / "c"), Error);
}

TEST(CaseBundle, FindCaseDirsSorted) {
    TempDir tmp;
    write_case(make_bundle(1, 7), tmp.path() / "b");
    write_case(make_bundle(1, 8), tmp.path() / "a");
    fs::create_directories(tmp.path() / "not_a_case");
    const auto dirs = find_case_dirs(tmp.path());
    ASSERT_EQ(dirs.size(), 2u);
    EXPECT_EQ(dirs[0].filename(), "a");
    EXPECT_EQ(find_case_dirs(tmp.path() / "b").size(), 1u);
}

TEST(ImageIo, PngFrameRoundTrip) {
    TempDir tmp;
    const auto b = make_bundle(1, 9);
    write_frame(tmp.path() / "f.png", b.frames[0]);
    EXPECT_EQ(read_frame(tmp.path() / "f.png", b.spacing), b.frames[0]);
    write_frame(tmp.path() / "f.pgm", b.frames[0]);
    EXPECT_EQ(read_frame(tmp.path() / "f.pgm", b.spacing), b.frames[0]);
}

TEST(Csv, QuotingRoundTrip) {
    const csv::Row r{"a", "b,c", "say \"hi\"", "", "line\nbreak"};
    const auto parsed = csv::parse(csv::join(r) + "\r\n");
    ASSERT_EQ(parsed.size(), 1u);
    EXPECT_EQ(parsed[0], r);
}

TEST(ClinicalTable, LoadsTwoRows) {
    TempDir tmp;
    const auto schema = schema49();
    write_clinical_schema(tmp.path() / "schema.json", schema);
    write_text(tmp.path() / "c.csv", clinical_csv(schema, {row("P1", "200", 0, 0, "1.5"), row("P2", "", 1, 0, "")}));
    const auto t = load_clinical_table(tmp.path() / "c.csv", tmp.path() / "schema.json");
    ASSERT_EQ(t.records.size(), 2u);
    EXPECT_EQ(t.records[0].patient_id, "P1");
    EXPECT_EQ(t.records[0].features.size(), 49u);
    EXPECT_DOUBLE_EQ(*t.records[0].features[48], 1.5);
    EXPECT_FALSE(t.records[1].icp_mmH2O.has_value());
    EXPECT_FALSE(t.records[1].features[0].has_value());
    EXPECT_TRUE(t.records[1].excluded_mannitol);
}

TEST(ClinicalTable, WriteLoadRoundTrip) {
    TempDir tmp;
    ClinicalTable t{schema49(), {}};
    std::vector<std::optional<double>> f(49, 2.25);
    f[3].reset();
    t.records.push_back(rec("P\"1", f, true, false));
    t.records.push_back(rec("P,2", std::vector<std::optional<double>>(49, -0.1), false, true));
    write_clinical_table(tmp.path() / "c.csv", t);
    const auto back = load_clinical_table(tmp.path() / "c.csv", t.schema);
    EXPECT_EQ(back.records, t.records);
}

TEST(ClinicalTable, FortyEightColumnsIsSchemaMismatch) {
    TempDir tmp;
    auto schema = schema49();
    auto short_schema = schema;
    short_schema.pop_back();
    std::string r = "P1,200,0,0";
    for (int i = 0; i < 48; ++i) r += ",1";
    write_text(tmp.path() / "c.csv", clinical_csv(short_schema, {r}));
    EXPECT_NE(error_of([&] { load_clinical_table(tmp.path() / "c.csv", schema); }).find("schema mismatch"),
              std::string::npos);
    write_clinical_schema(tmp.path() / "s.json", short_schema);
    EXPECT_NE(error_of([&] { load_clinical_schema(tmp.path() / "s.json"); }).find("schema mismatch"), std::string::npos);
}

TEST(ClinicalTable, NonNumericCellNamesRowAndColumn) {
    TempDir tmp;
    const auto schema = schema49();
    std::string r = "P1,200,0,0,1,abc";
    for (int i = 0; i < 47; ++i) r += ",1";
    write_text(tmp.path() / "c.csv", clinical_csv(schema, {row("P0", "100", 0, 0, "1"), r}));
    const auto msg = error_of([&] { load_clinical_table(tmp.path() / "c.csv", schema); });
    EXPECT_NE(msg.find("parse error at row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("col 6"), std::string::npos) << msg;
    EXPECT_NE(msg.find("f1"), std::string::npos) << msg;
}

TEST(ClinicalTable, NonPositiveIcpRejected) {
    TempDir tmp;
    const auto schema = schema49();
    write_text(tmp.path() / "c.csv", clinical_csv(schema, {row("P1", "0", 0, 0, "1")}));
    EXPECT_NE(error_of([&] { load_clinical_table(tmp.path() / "c.csv", schema); }).find("parse error"), std::string::npos);
}

TEST(Exclusions, FilterAndOrder) {
    std::vector<ClinicalRecord> rs;
    for (int i = 0; i < 5; ++i) rs.push_back(rec("P" + std::to_string(i), {1.0}, i == 1 || i == 3));
    const auto kept = apply_exclusions(rs);
    ASSERT_EQ(kept.size(), 3u);
    EXPECT_EQ(kept[0].patient_id, "P0");
    EXPECT_EQ(kept[1].patient_id, "P2");
    EXPECT_EQ(kept[2].patient_id, "P4");
    EXPECT_EQ(apply_exclusions(kept), kept);
}

TEST(Exclusions, AllFlagged) {
    std::vector<ClinicalRecord> rs{rec("a", {1.0}, true), rec("b", {1.0}, false, true)};
    EXPECT_TRUE(apply_exclusions(rs).empty());
}

TEST(Exclusions, TenToSix) {
    std::vector<ClinicalRecord> rs;
    for (int i = 0; i < 10; ++i) rs.push_back(rec("P" + std::to_string(i), {1.0}, i % 5 == 0, i == 3 || i == 7));
    EXPECT_EQ(apply_exclusions(rs).size(), 6u);
}

TEST(Impute, MedianOfObserved) {
    std::vector<ClinicalRecord> rs{rec("a", {1.0}), rec("b", {std::nullopt}), rec("c", {3.0})};
    const auto out = impute_missing(rs, ImputeStrategy::median);
    EXPECT_DOUBLE_EQ(*out[1].features[0], 2.0);
    EXPECT_DOUBLE_EQ(*out[0].features[0], 1.0);

    std::vector<ClinicalRecord> rs2{rec("a", {1.0}), rec("b", {2.0}), rec("c", {std::nullopt}), rec("d", {100.0})};
    EXPECT_DOUBLE_EQ(*impute_missing(rs2, ImputeStrategy::median)[2].features[0], 2.0);
}

TEST(Impute, NoMissingIsIdentity) {
    std::vector<ClinicalRecord> rs{rec("a", {1.0, 5.0}), rec("b", {2.0, 7.0})};
    EXPECT_EQ(impute_missing(rs, ImputeStrategy::median), rs);
}

TEST(Impute, AllMissingFeatureIsError) {
    std::vector<ClinicalRecord> rs{rec("a", {1.0, std::nullopt}), rec("b", {2.0, std::nullopt})};
    EXPECT_NE(error_of([&] { impute_missing(rs, ImputeStrategy::median); }).find("feature has no observed values"),
              std::string::npos);
}
