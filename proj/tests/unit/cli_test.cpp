#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "onsd/ingest.hpp"
#include "onsd/phantom.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace onsd;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

class Cli : public ::testing::Test {
protected:
    fs::path root;

    void SetUp() override {
        char tmpl[] = "/tmp/onsdctl_test_XXXXXX";
        root = mkdtemp(tmpl);
        json spec = phantom_spec_to_json(small_spec());
        std::ofstream(root / "spec.json") << spec.dump(2);
    }
    void TearDown() override { fs::remove_all(root); }

    static PhantomSpec small_spec() {
        PhantomSpec s;
        s.width = 431;
        s.height = 524;
        s.eyeball_center = {12.0, 9.0};
        s.sheath.length_mm = 12.0;
        s.noise = {0.3, 5.0};
        s.case_id = "cli";
        return s;
    }

    /// Runs onsdctl with `args`; stderr is kept in root/stderr.txt.
    int run(const std::string& args) {
        const std::string cmd = std::string(ONSDCTL_PATH) + " " + args + " > " + (root / "stdout.txt").string() + " 2> " +
                                (root / "stderr.txt").string();
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }
    std::string err() const { return slurp(root / "stderr.txt"); }
    std::string p(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("frobnicate --out " + p("x")), 2);
    EXPECT_EQ(run("score " + p("nothing")), 2);  // --out missing
    EXPECT_EQ(run("grade --clinical a --schema b --measurements c --classifier svm --out " + p("x")), 2);
    EXPECT_EQ(run("phantom-gen --jobs 0 --out " + p("x")), 2);
    EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, PhantomGenSingleFrame) {
    ASSERT_EQ(run("phantom-gen --spec " + p("spec.json") + " --out " + p("one")), 0) << err();
    for (const char* f : {"meta.json", "truth.json", "run_config.json", "frames/0000.pgm", "masks/0000.png"})
        EXPECT_TRUE(fs::exists(root / "one" / f)) << f;
    const json truth = read_json_file(root / "one" / "truth.json");
    EXPECT_DOUBLE_EQ(truth.at("onsd_at_3mm").get<double>(), 5.0);
    const json cfg = read_json_file(root / "one" / "run_config.json");
    EXPECT_EQ(cfg.at("subcommand"), "phantom-gen");
    EXPECT_FALSE(cfg.contains("jobs"));
    EXPECT_TRUE(cfg.at("options").contains("resolved_spec"));
}

TEST_F(Cli, MalformedSpecReportsLineAndColumn) {
    std::ofstream(root / "bad.json") << "{\n  \"seed\": 3,\n  oops\n}\n";
    EXPECT_EQ(run("phantom-gen --spec " + p("bad.json") + " --out " + p("o")), 2);
    EXPECT_NE(err().find("line 3"), std::string::npos) << err();
    EXPECT_NE(err().find("column"), std::string::npos);

    auto s = phantom_spec_to_json(small_spec());
    s["sheath"]["tilt_deg"] = 50.0;
    std::ofstream(root / "tilt.json") << s.dump();
    EXPECT_EQ(run("phantom-gen --spec " + p("tilt.json") + " --out " + p("o")), 2);
    EXPECT_EQ(run("phantom-gen --spec " + p("missing.json") + " --out " + p("o")), 2);
}

TEST_F(Cli, ScoreMeasureOnVideos) {
    ASSERT_EQ(run("phantom-gen --spec " + p("spec.json") + " --video 3 --frames 8 --best-frame 3 --seed 5 --out " + p("vids")),
              0)
        << err();
    for (const char* d : {"000", "001", "002"}) EXPECT_TRUE(fs::exists(root / "vids" / d / "annotations.json")) << d;

    ASSERT_EQ(run("score " + p("vids") + " --out " + p("scores")), 0) << err();
    for (const char* d : {"000", "001", "002"}) {
        const auto trace = lines(root / "scores" / d / "trace.csv");
        ASSERT_GE(trace.size(), 10u);
        EXPECT_EQ(trace[0], "# scoring_model=paper_default normalization=per_video");
        EXPECT_EQ(trace[1], "frame_index,s1,s2,s3,s4,z1,z2,z3,z4,total,rank");
        EXPECT_EQ(trace.size(), 10u);
        const json kf = read_json_file(root / "scores" / d / "keyframes.json");
        const auto ranking = kf.at("ranking").get<std::vector<int>>();
        EXPECT_EQ(kf.at("keyframes").size(), 5u);
        EXPECT_NE(std::find(ranking.begin(), ranking.begin() + 3, 3), ranking.begin() + 3) << d;
    }
    EXPECT_FALSE(read_json_file(root / "scores" / "run_config.json").contains("jobs"));

    ASSERT_EQ(run("measure " + p("vids") + " --keyframes " + p("scores") + " --out " + p("meas")), 0) << err();
    for (const char* d : {"000", "001", "002"}) {
        const json m = read_json_file(root / "meas" / d / "measurement.json");
        for (const char* k : {"q1", "q3", "iqr", "fences", "kept", "excluded", "per_frame", "onsd_mm"})
            EXPECT_TRUE(m.contains(k)) << k;
        EXPECT_NEAR(m.at("onsd_mm").get<double>(), 5.0, 0.2);
    }

    ASSERT_EQ(run("eval --task keyframe --bundles " + p("vids") + " --scores " + p("scores") + " --out " + p("ev")), 0)
        << err();
    const auto ev = lines(root / "ev" / "keyframe_eval.csv");
    ASSERT_EQ(ev.size(), 2u);
    EXPECT_EQ(ev[0], "videos,top1,top3,top5");
    EXPECT_EQ(ev[1].substr(0, 2), "3,");
    EXPECT_NE(ev[1].find(",1.0000,1.0000"), std::string::npos) << ev[1];
}

TEST_F(Cli, FitFromWritesAndReusesScoringModel) {
    ASSERT_EQ(run("phantom-gen --spec " + p("spec.json") + " --video 4 --frames 6 --out " + p("vids")), 0) << err();
    ASSERT_EQ(run("score " + p("vids") + " --fit-from " + p("vids") + " --out " + p("fit")), 0) << err();
    ASSERT_TRUE(fs::exists(root / "fit" / "scoring_model.json"));
    EXPECT_EQ(first_line(root / "fit" / "000" / "trace.csv"), "# scoring_model=fitted normalization=stored");
    ASSERT_EQ(run("score " + p("vids") + " --model " + p("fit/scoring_model.json") + " --out " + p("reuse")), 0) << err();
    EXPECT_EQ(slurp(root / "fit" / "002" / "trace.csv"), slurp(root / "reuse" / "002" / "trace.csv"));
    EXPECT_EQ(run("score " + p("vids") + " --model x --fit-from " + p("vids") + " --out " + p("both")), 2);
}

TEST_F(Cli, OutputsIndependentOfJobs) {
    ASSERT_EQ(run("phantom-gen --spec " + p("spec.json") + " --video 2 --frames 6 --jobs 1 --out " + p("a")), 0) << err();
    ASSERT_EQ(run("phantom-gen --spec " + p("spec.json") + " --video 2 --frames 6 --jobs 4 --out " + p("b")), 0) << err();
    ASSERT_EQ(run("score " + p("a") + " --jobs 1 --out " + p("sa")), 0);
    ASSERT_EQ(run("score " + p("a") + " --jobs 4 --out " + p("sb")), 0);
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root / "a");
        if (rel == "run_config.json") continue;  // records --out
        EXPECT_EQ(slurp(e.path()), slurp(root / "b" / rel)) << rel;
    }
    for (const char* f : {"000/trace.csv", "000/keyframes.json", "001/trace.csv", "001/keyframes.json"})
        EXPECT_EQ(slurp(root / "sa" / f), slurp(root / "sb" / f)) << f;
}

TEST_F(Cli, UnmeasurableBundleExitsThree) {
    auto s = small_spec();
    auto f = generate_frame(s);
    CaseBundle b;
    b.case_id = "blank";
    b.spacing = s.spacing;
    LabelMask empty(f.labels.width(), f.labels.height());
    for (int i = 0; i < 3; ++i) {
        b.frames.push_back(f.raster);
        b.masks.push_back(empty);
    }
    write_case(b, root / "blank");
    EXPECT_EQ(run("measure " + p("blank") + " --out " + p("m")), 3);
    EXPECT_NE(err().find("no measurable frames"), std::string::npos) << err();
    EXPECT_EQ(run("score " + p("blank") + " --out " + p("s")), 3);
    EXPECT_EQ(run("measure " + p("nowhere") + " --out " + p("m2")), 2);
    fs::create_directories(root / "empty");
    EXPECT_EQ(run("measure " + p("empty") + " --out " + p("m3")), 3);
}

TEST_F(Cli, SegmentationEval) {
    ASSERT_EQ(run("phantom-gen --spec " + p("spec.json") + " --out " + p("one")), 0) << err();
    const auto mask = p("one/masks/0000.png");
    ASSERT_EQ(run("eval --task segmentation --mask-a " + mask + " --mask-b " + mask + " --out " + p("d")), 0) << err();
    EXPECT_EQ(lines(root / "d" / "dice.csv"),
              (std::vector<std::string>{"label,dice", "eyeball,1.000000", "sheath,1.000000"}));
    EXPECT_EQ(run("eval --task segmentation --mask-a " + mask + " --out " + p("d")), 2);
}

TEST_F(Cli, GradingEndToEnd) {
    ASSERT_EQ(run("phantom-gen --spec " + p("spec.json") + " --cohort 20 --frames 5 --seed 2 --jobs 4 --out " + p("co")), 0)
        << err();
    ASSERT_TRUE(fs::exists(root / "co" / "clinical.csv"));
    ASSERT_EQ(run("measure " + p("co/bundles") + " --jobs 4 --out " + p("meas")), 0) << err();
    const std::string common = " --clinical " + p("co/clinical.csv") + " --schema " + p("co/clinical_schema.json") +
                               " --measurements " + p("meas") + " --seed 4";

    ASSERT_EQ(run("grade" + common + " --mode cv --out " + p("cv")), 0) << err();
    const auto cv = lines(root / "cv" / "cv_report.csv");
    ASSERT_EQ(cv.size(), 7u);
    EXPECT_EQ(cv[0], "fold,accuracy,precision,recall,f1");
    for (int f = 1; f <= 5; ++f) EXPECT_EQ(cv[static_cast<std::size_t>(f)].substr(0, 2), std::to_string(f) + ",");
    EXPECT_EQ(cv[6].rfind("mean\xC2\xB1std,", 0), 0u);
    EXPECT_EQ(first_line(root / "cv" / "cv_confusion.csv"), "fold,class,tp,tn,fp,fn");
    ASSERT_EQ(run("grade" + common + " --mode cv --out " + p("cv2")), 0);
    EXPECT_EQ(slurp(root / "cv" / "cv_report.csv"), slurp(root / "cv2" / "cv_report.csv"));

    ASSERT_EQ(run("grade" + common + " --mode cv --classifier threshold_baseline --out " + p("thr")), 0) << err();
    EXPECT_EQ(first_line(root / "thr" / "cv_report.csv"), "fold,accuracy,precision,recall,f1,thresholds");

    ASSERT_EQ(run("grade" + common + " --mode train --classifier knn --out " + p("model")), 0) << err();
    const json model = read_json_file(root / "model" / "grading_model.json");
    EXPECT_EQ(model.at("format"), 1);
    EXPECT_EQ(model.at("kind"), "knn");
    ASSERT_EQ(run("grade" + common + " --mode predict --model " + p("model/grading_model.json") + " --out " + p("pred")), 0)
        << err();
    const auto pred = lines(root / "pred" / "predictions.csv");
    EXPECT_EQ(pred[0], "patient_id,tier,score_normal,score_mild,score_severe");
    EXPECT_EQ(pred.size(), 21u);

    EXPECT_EQ(run("grade" + common + " --mode predict --out " + p("nomodel")), 2);
    ASSERT_EQ(run("eval --task correlation --measurements " + p("meas") + " --out " + p("corr")), 0) << err();
    EXPECT_EQ(first_line(root / "corr" / "correlation.csv"), "r,p,n");
}
