// onsdctl: phantom generation, keyframe scoring, ONSD measurement, ICP grading
// and evaluation from the command line.
//
// Exit codes: 0 ok, 2 invalid input, 3 nothing to score/measure, 1 internal.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "onsd/onsd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace onsd;

namespace {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };
LogLevel g_level = LogLevel::info;

void log(LogLevel lvl, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (lvl <= g_level) std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << '\n';
}

struct Globals {
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    std::string out;
    std::string log_level = "info";
};

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    f << s;
}

fs::path prepare_out(const Globals& g) {
    if (g.out.empty()) throw Error("--out is required");
    fs::create_directories(g.out);
    return g.out;
}

// --jobs is left out: it never changes results.
void write_run_config(const fs::path& out, const std::string& cmd, const Globals& g, json options) {
    json j{{"subcommand", cmd}, {"seed", g.seed}, {"out", g.out}, {"log_level", g.log_level}, {"options", std::move(options)}};
    write_json_file(out / "run_config.json", j);
}

std::string num(double v) { return csv::format_number(v); }

std::string case_label(const CaseBundle& b) { return b.case_id + "_" + to_string(b.eye); }

// Case directories under any of `roots`, each directory sorted by path.
std::vector<fs::path> collect_cases(const std::vector<std::string>& roots) {
    std::vector<fs::path> all;
    for (const auto& r : roots) {
        auto found = find_case_dirs(r);
        all.insert(all.end(), found.begin(), found.end());
    }
    if (all.empty()) throw Error(ErrorKind::empty_pipeline, "no case bundles found");
    return all;
}

// ---------------------------------------------------------------------------
// phantom-gen

struct PhantomOpts {
    std::string spec;
    int videos = 0;
    int frames = 20;
    int cohort = 0;
    int best_frame = -1;
    std::vector<double> width_range;
};

void write_phantom_video(const PhantomVideo& v, const fs::path& dir) {
    write_case(v.bundle, dir);
    write_json_file(dir / "truth.json", phantom_truth_to_json(v.truth));
}

int cmd_phantom_gen(const Globals& g, const PhantomOpts& o) {
    const fs::path out = prepare_out(g);
    PhantomSpec base;
    if (!o.spec.empty()) base = phantom_spec_from_json(read_json_file(o.spec));
    if (o.frames < 1) throw Error("--frames must be positive");
    QualitySchedule sched;
    sched.best_frame = o.best_frame;
    if (!o.width_range.empty() && (o.width_range.size() != 2 || !(o.width_range[0] <= o.width_range[1])))
        throw Error("--width-range takes LO HI with LO <= HI");

    json opts{{"spec", o.spec}, {"video", o.videos}, {"frames", o.frames}, {"cohort", o.cohort},
              {"best_frame", o.best_frame}, {"width_range", o.width_range}, {"resolved_spec", phantom_spec_to_json(base)}};

    if (o.cohort > 0) {
        const auto cohort = synthesize_cohort(static_cast<std::size_t>(o.cohort), g.seed);
        write_clinical_table(out / "clinical.csv", cohort.clinical);
        write_clinical_schema(out / "clinical_schema.json", cohort.clinical.schema);
        const auto n = cohort.patients.size() * 2;
        parallel_map(n, g.jobs, [&](std::size_t k) {
            const auto& p = cohort.patients[k / 2];
            const bool left = k % 2 == 0;
            PhantomSpec s = base;
            s.case_id = p.patient_id;
            s.icp_mmH2O = p.icp_mmH2O;
            s.seed = derive_seed(g.seed, 0x657965ULL, k);
            s.sheath.width_start_mm = s.sheath.width_end_mm = left ? p.onsd_left_mm : p.onsd_right_mm;
            PhantomVideo v = generate_video(s, o.frames, sched);
            v.bundle.eye = left ? Eye::left : Eye::right;
            write_phantom_video(v, out / "bundles" / (p.patient_id + (left ? "_left" : "_right")));
            return 0;
        });
        write_run_config(out, "phantom-gen", g, opts);
        std::cout << "cohort: " << cohort.patients.size() << " patients, " << n << " bundles\n";
        return 0;
    }

    if (o.videos > 0) {
        parallel_map(static_cast<std::size_t>(o.videos), g.jobs, [&](std::size_t i) {
            PhantomSpec s = base;
            char id[32];
            std::snprintf(id, sizeof id, "%03zu", i);
            s.case_id = base.case_id + "_" + id;
            s.seed = derive_seed(base.seed ^ g.seed, 0x766964ULL, i);
            if (!o.width_range.empty()) {
                Rng rng(derive_seed(s.seed, 0x7769647468ULL));
                s.sheath.width_start_mm = s.sheath.width_end_mm = rng.uniform(o.width_range[0], o.width_range[1]);
            }
            write_phantom_video(generate_video(s, o.frames, sched), out / id);
            return 0;
        });
        write_run_config(out, "phantom-gen", g, opts);
        std::cout << "videos: " << o.videos << '\n';
        return 0;
    }

    PhantomFrame f = generate_frame(base);
    CaseBundle b;
    b.case_id = base.case_id;
    b.spacing = base.spacing;
    b.icp_mmH2O = base.icp_mmH2O;
    b.frames.push_back(std::move(f.raster));
    b.masks.push_back(std::move(f.labels));
    write_case(b, out);
    write_json_file(out / "truth.json", phantom_truth_to_json(f.truth));
    write_run_config(out, "phantom-gen", g, opts);
    std::cout << "frame: onsd_at_3mm=" << num(f.truth.onsd_at_3mm) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreOpts {
    std::vector<std::string> bundles;
    std::string model;
    std::vector<std::string> fit_from;
};

std::string trace_csv(const RankedFrames& r, std::size_t n_frames, const ScoringModel& m) {
    std::ostringstream s;
    s << "# scoring_model=" << to_string(m.source)
      << " normalization=" << (r.per_video_normalization ? "per_video" : "stored") << '\n';
    s << "frame_index,s1,s2,s3,s4,z1,z2,z3,z4,total,rank\n";
    std::vector<const FrameScore*> by_frame(n_frames, nullptr);
    std::vector<std::size_t> rank(n_frames, 0);
    for (std::size_t i = 0; i < r.order.size(); ++i) {
        by_frame[static_cast<std::size_t>(r.order[i].frame_index)] = &r.order[i];
        rank[static_cast<std::size_t>(r.order[i].frame_index)] = i + 1;
    }
    for (std::size_t f = 0; f < n_frames; ++f) {
        s << f;
        if (const auto* fs = by_frame[f]) {
            for (double v : fs->rules.as_array()) s << ',' << num(v);
            for (double v : fs->z) s << ',' << num(v);
            s << ',' << num(fs->total) << ',' << rank[f] << '\n';
        } else {
            s << ",,,,,,,,,,\n";
        }
    }
    return s.str();
}

int cmd_score(const Globals& g, const ScoreOpts& o) {
    const fs::path out = prepare_out(g);
    if (!o.model.empty() && !o.fit_from.empty()) throw Error("--model and --fit-from are mutually exclusive");
    ScoringModel model = ScoringModel::paper_default();
    if (!o.model.empty()) {
        model = scoring_model_from_json(read_json_file(o.model));
    } else if (!o.fit_from.empty()) {
        AnnotatedRules ann;
        for (const auto& dir : collect_cases(o.fit_from)) collect_annotated_rules(load_case(dir), ann, g.jobs);
        model = fit_lda(ann.positives, ann.negatives);
        write_json_file(out / "scoring_model.json", scoring_model_to_json(model));
        log(LogLevel::info, "fitted scoring model from " + std::to_string(ann.positives.size()) + " keyframes and " +
                                std::to_string(ann.negatives.size()) + " suboptimal frames");
    } else {
        log(LogLevel::info, "no model given; using paper_default weights with per-video normalization");
    }

    bool any_empty = false;
    for (const auto& dir : collect_cases(o.bundles)) {
        const CaseBundle b = load_case(dir);
        const fs::path case_out = out / dir.filename();
        fs::create_directories(case_out);
        RankedFrames r;
        try {
            r = rank_frames(b, model, g.jobs);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::empty_pipeline) throw;
            log(LogLevel::error, dir.string() + ": " + e.what());
            any_empty = true;
            continue;
        }
        write_text(case_out / "trace.csv", trace_csv(r, b.size(), model));
        json kf{{"case_id", b.case_id},
                {"eye", to_string(b.eye)},
                {"keyframes", r.keyframe_set},
                {"ranking", r.ranked_indices()},
                {"unscorable", r.unscorable},
                {"scoring_model", to_string(model.source)},
                {"normalization", r.per_video_normalization ? "per_video" : "stored"}};
        write_json_file(case_out / "keyframes.json", kf);
        std::cout << case_label(b) << ": keyframes";
        for (int k : r.keyframe_set) std::cout << ' ' << k;
        std::cout << '\n';
    }
    write_run_config(out, "score", g, {{"bundles", o.bundles}, {"model", o.model}, {"fit_from", o.fit_from},
                                       {"scoring_model", scoring_model_to_json(model)}});
    if (any_empty) throw Error(ErrorKind::empty_pipeline, "no scorable frames");
    return 0;
}

// ---------------------------------------------------------------------------
// measure

struct MeasureOpts {
    std::vector<std::string> bundles;
    std::string keyframes;
};

std::vector<int> keyframes_for(const fs::path& case_dir, const CaseBundle& b, const MeasureOpts& o, unsigned jobs) {
    if (!o.keyframes.empty()) {
        fs::path p = o.keyframes;
        if (fs::is_directory(p)) p = p / case_dir.filename() / "keyframes.json";
        const json j = read_json_file(p);
        auto k = j.at("keyframes").get<std::vector<int>>();
        for (int i : k)
            if (i < 0 || static_cast<std::size_t>(i) >= b.size()) throw Error("keyframe index out of range in " + p.string());
        return k;
    }
    return rank_frames(b, ScoringModel::paper_default(), jobs).keyframe_set;
}

int cmd_measure(const Globals& g, const MeasureOpts& o) {
    const fs::path out = prepare_out(g);
    bool any_empty = false;
    for (const auto& dir : collect_cases(o.bundles)) {
        const CaseBundle b = load_case(dir);
        std::vector<int> keys;
        try {
            keys = keyframes_for(dir, b, o, g.jobs);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::empty_pipeline) throw;
            keys.clear();
        }
        struct Attempt {
            std::optional<OnsdMeasurement> m;
            std::string reason;
        };
        const auto attempts = parallel_map(keys.size(), g.jobs, [&](std::size_t i) {
            const int f = keys[i];
            try {
                return Attempt{measure_frame_onsd(b.masks[static_cast<std::size_t>(f)], b.spacing, f), {}};
            } catch (const Error& e) {
                return Attempt{std::nullopt, e.what()};
            }
        });
        std::vector<OnsdMeasurement> ok;
        json failed = json::array();
        for (std::size_t i = 0; i < attempts.size(); ++i) {
            if (attempts[i].m) ok.push_back(*attempts[i].m);
            else failed.push_back({{"frame", keys[i]}, {"reason", attempts[i].reason}});
        }
        if (ok.empty()) {
            log(LogLevel::error, dir.string() + ": no measurable frames");
            any_empty = true;
            continue;
        }
        const VideoOnsd v = aggregate_video_onsd(ok);
        json rep = video_onsd_to_json(v);
        rep["case_id"] = b.case_id;
        rep["eye"] = to_string(b.eye);
        rep["icp_mmH2O"] = b.icp_mmH2O ? json(*b.icp_mmH2O) : json(nullptr);
        rep["keyframes"] = keys;
        rep["failed"] = failed;
        const fs::path case_out = out / dir.filename();
        fs::create_directories(case_out);
        write_json_file(case_out / "measurement.json", rep);
        std::cout << case_label(b) << ": onsd_mm=" << num(v.onsd_mm) << '\n';
    }
    write_run_config(out, "measure", g, {{"bundles", o.bundles}, {"keyframes", o.keyframes}, {"fence_k", kTukeyFence}});
    if (any_empty) throw Error(ErrorKind::empty_pipeline, "no measurable frames");
    return 0;
}

// ---------------------------------------------------------------------------
// grade

struct GradeOpts {
    std::string clinical;
    std::string schema;
    std::string measurements;
    std::string mode = "cv";
    std::string classifier = "random_forest";
    std::string model;
    int folds = 5;
};

struct EyeReport {
    std::string case_id;
    Eye eye;
    double onsd_mm;
    std::optional<double> icp;
};

std::vector<EyeReport> load_measurements(const fs::path& root) {
    if (!fs::is_directory(root)) throw Error("not a directory: " + root.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() == "measurement.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<EyeReport> out;
    for (const auto& f : files) {
        const json j = read_json_file(f);
        try {
            EyeReport r{j.at("case_id").get<std::string>(), parse_eye(j.at("eye").get<std::string>()),
                        j.at("onsd_mm").get<double>(), std::nullopt};
            if (j.contains("icp_mmH2O") && !j["icp_mmH2O"].is_null()) r.icp = j["icp_mmH2O"].get<double>();
            out.push_back(r);
        } catch (const json::exception& e) {
            throw Error(f.string() + ": " + e.what());
        }
    }
    if (out.empty()) throw Error(ErrorKind::empty_pipeline, "no measurement reports under " + root.string());
    return out;
}

// Bilateral mean per case id; cases missing an eye are skipped.
std::map<std::string, double> bilateral_means(const std::vector<EyeReport>& reports) {
    std::map<std::string, std::map<Eye, double>> by_case;
    for (const auto& r : reports) {
        if (by_case[r.case_id].count(r.eye)) throw Error("duplicate " + to_string(r.eye) + " eye for case " + r.case_id);
        by_case[r.case_id][r.eye] = r.onsd_mm;
    }
    std::map<std::string, double> out;
    for (const auto& [id, eyes] : by_case) {
        if (eyes.size() != 2) {
            log(LogLevel::warn, "case " + id + " lacks one eye; skipped");
            continue;
        }
        out[id] = 0.5 * (eyes.at(Eye::left) + eyes.at(Eye::right));
    }
    return out;
}

std::string scores_row(const std::string& id, const GradePrediction& p) {
    return csv::join({id, to_string(p.tier), num(p.scores[0]), num(p.scores[1]), num(p.scores[2])}) + "\n";
}

int cmd_grade(const Globals& g, const GradeOpts& o) {
    const fs::path out = prepare_out(g);
    const ClinicalTable table = load_clinical_table(o.clinical, fs::path(o.schema));
    AssemblyReport asm_report;
    const GradingDataset d = assemble_dataset(table, bilateral_means(load_measurements(o.measurements)), &asm_report);
    for (const auto& id : asm_report.excluded) log(LogLevel::info, "excluded by mannitol/shunt flag: " + id);
    for (const auto& id : asm_report.missing_onsd) log(LogLevel::warn, "no bilateral ONSD for " + id + "; skipped");
    if (d.size() == 0) throw Error(ErrorKind::empty_pipeline, "no samples with both clinical data and bilateral ONSD");

    TrainOptions opt;
    opt.kind = classifier_from_string(o.classifier);
    opt.seed = g.seed;
    opt.jobs = g.jobs;
    json opts{{"clinical", o.clinical}, {"schema", o.schema}, {"measurements", o.measurements}, {"mode", o.mode},
              {"classifier", o.classifier}, {"model", o.model}, {"folds", o.folds}, {"samples", d.size()}};

    if (o.mode == "cv") {
        const CvReport rep = cross_validate(d, opt, o.folds);
        const bool thr = opt.kind == ClassifierKind::threshold_baseline;
        std::ostringstream s;
        s << "fold,accuracy,precision,recall,f1" << (thr ? ",thresholds" : "") << '\n';
        for (const auto& f : rep.folds) {
            s << f.fold << ',' << csv::format_fixed(f.metrics.accuracy, 4) << ',' << csv::format_fixed(f.metrics.precision, 4)
              << ',' << csv::format_fixed(f.metrics.recall, 4) << ',' << csv::format_fixed(f.metrics.f1, 4);
            if (thr) s << ',' << csv::escape(csv::format_fixed(f.thresholds->first, 2) + " " + csv::format_fixed(f.thresholds->second, 2));
            s << '\n';
            for (const auto& w : f.warnings) log(LogLevel::warn, "fold " + std::to_string(f.fold) + ": " + w);
        }
        auto pm = [](double m, double sd) { return csv::format_fixed(m, 4) + "\xC2\xB1" + csv::format_fixed(sd, 4); };
        s << "mean\xC2\xB1std," << pm(rep.mean.accuracy, rep.stddev.accuracy) << ',' << pm(rep.mean.precision, rep.stddev.precision)
          << ',' << pm(rep.mean.recall, rep.stddev.recall) << ',' << pm(rep.mean.f1, rep.stddev.f1) << (thr ? "," : "") << '\n';
        write_text(out / "cv_report.csv", s.str());

        std::ostringstream cm;
        cm << "fold,class,tp,tn,fp,fn\n";
        for (const auto& f : rep.folds)
            for (int c = 0; c < kTierCount; ++c)
                cm << f.fold << ',' << kTierNames[c] << ',' << f.confusion.true_positive(c) << ',' << f.confusion.true_negative(c)
                   << ',' << f.confusion.false_positive(c) << ',' << f.confusion.false_negative(c) << '\n';
        write_text(out / "cv_confusion.csv", cm.str());
        std::cout << to_string(opt.kind) << " accuracy " << pm(rep.mean.accuracy, rep.stddev.accuracy) << '\n';
    } else if (o.mode == "train") {
        const GradingModel m = train_grading_model(d, opt);
        for (const auto& w : m.warnings) log(LogLevel::warn, w);
        write_json_file(out / "grading_model.json", grading_model_to_json(m));
        std::cout << "trained " << to_string(m.kind) << " on " << d.size() << " samples, "
                  << m.selected_columns().size() << " features\n";
    } else if (o.mode == "predict") {
        if (o.model.empty()) throw Error("--mode predict needs --model");
        const GradingModel m = grading_model_from_json(read_json_file(o.model));
        std::string s = "patient_id,tier,score_normal,score_mild,score_severe\n";
        for (std::size_t i = 0; i < d.size(); ++i) {
            ClinicalRecord rec;
            rec.features.assign(d.rows[i].begin(), d.rows[i].end() - 1);
            s += scores_row(d.ids[i], predict_grade(m, table.schema, rec, *d.rows[i].back()));
        }
        write_text(out / "predictions.csv", s);
        std::cout << "predicted " << d.size() << " samples\n";
    } else {
        throw Error("--mode must be train, cv or predict");
    }
    write_run_config(out, "grade", g, opts);
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
    std::string task;
    std::vector<std::string> bundles;
    std::string scores;
    std::string mask_a;
    std::string mask_b;
    std::string measurements;
};

int cmd_eval(const Globals& g, const EvalOpts& o) {
    const fs::path out = prepare_out(g);
    json opts{{"task", o.task}, {"bundles", o.bundles}, {"scores", o.scores}, {"mask_a", o.mask_a},
              {"mask_b", o.mask_b}, {"measurements", o.measurements}};
    if (o.task == "keyframe") {
        if (o.scores.empty()) throw Error("--task keyframe needs --scores");
        std::vector<std::vector<int>> pred, gt;
        for (const auto& dir : collect_cases(o.bundles)) {
            const json meta = read_json_file(dir / "annotations.json");
            gt.push_back(annotations_from_json(meta).keyframes);
            pred.push_back(read_json_file(fs::path(o.scores) / dir.filename() / "keyframes.json").at("ranking").get<std::vector<int>>());
        }
        std::ostringstream s;
        s << "videos,top1,top3,top5\n"
          << pred.size() << ',' << csv::format_fixed(topk_accuracy(pred, gt, 1), 4) << ','
          << csv::format_fixed(topk_accuracy(pred, gt, 3), 4) << ',' << csv::format_fixed(topk_accuracy(pred, gt, 5), 4) << '\n';
        write_text(out / "keyframe_eval.csv", s.str());
        std::cout << s.str();
    } else if (o.task == "segmentation") {
        if (o.mask_a.empty() || o.mask_b.empty()) throw Error("--task segmentation needs --mask-a and --mask-b");
        const LabelMask a = read_label_mask(o.mask_a), b = read_label_mask(o.mask_b);
        std::ostringstream s;
        s << "label,dice\n"
          << "eyeball," << csv::format_fixed(dice(a.select(Label::eyeball), b.select(Label::eyeball)), 6) << '\n'
          << "sheath," << csv::format_fixed(dice(a.select(Label::sheath), b.select(Label::sheath)), 6) << '\n';
        write_text(out / "dice.csv", s.str());
        std::cout << s.str();
    } else if (o.task == "correlation") {
        const auto reports = load_measurements(o.measurements);
        std::map<std::string, std::optional<double>> icp;
        for (const auto& r : reports)
            if (r.icp) icp[r.case_id] = r.icp;
        std::ostringstream rows;
        rows << "patient_id,mean_onsd_mm,icp_mmH2O\n";
        std::vector<double> xs, ys;
        for (const auto& [id, m] : bilateral_means(reports)) {
            const auto it = icp.find(id);
            if (it == icp.end() || !it->second) continue;
            rows << csv::escape(id) << ',' << num(m) << ',' << num(*it->second) << '\n';
            xs.push_back(m);
            ys.push_back(*it->second);
        }
        write_text(out / "correlation_points.csv", rows.str());
        const auto c = stats::pearson(xs, ys);
        std::ostringstream s;
        s << "r,p,n\n" << csv::format_fixed(c.r, 6) << ',' << num(c.p) << ',' << c.n << '\n';
        write_text(out / "correlation.csv", s.str());
        std::cout << s.str();
    } else {
        throw Error("--task must be keyframe, segmentation or correlation");
    }
    write_run_config(out, "eval", g, opts);
    return 0;
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_input: return 2;
        case ErrorKind::empty_pipeline: return 3;
        case ErrorKind::internal: return 1;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ONSD keyframe scoring, measurement and ICP grading"};
    app.require_subcommand(1);
    Globals g;
    auto add_globals = [&](CLI::App* sub) {
        sub->add_option("--seed", g.seed, "random seed");
        sub->add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", g.out, "output directory")->required();
        sub->add_option("--log-level", g.log_level, "error|warn|info|debug")
            ->check(CLI::IsMember({"error", "warn", "info", "debug"}));
    };

    PhantomOpts po;
    auto* ph = app.add_subcommand("phantom-gen", "generate synthetic bundles with ground truth");
    ph->add_option("--spec", po.spec, "phantom spec JSON");
    ph->add_option("--video", po.videos, "number of videos (one bundle each)");
    ph->add_option("--frames", po.frames, "frames per video");
    ph->add_option("--best-frame", po.best_frame, "index of the pristine frame (default: drawn from the seed)");
    ph->add_option("--width-range", po.width_range, "draw each video's sheath width from [LO, HI] mm")->expected(2);
    ph->add_option("--cohort", po.cohort, "synthetic cohort size: clinical table plus bilateral bundles");
    add_globals(ph);

    ScoreOpts so;
    auto* sc = app.add_subcommand("score", "rank frames and pick keyframes");
    sc->add_option("bundles", so.bundles, "case bundle(s) or directories of bundles")->required();
    sc->add_option("--model", so.model, "scoring_model.json");
    sc->add_option("--fit-from", so.fit_from, "annotated bundles to fit LDA weights from");
    add_globals(sc);

    MeasureOpts mo;
    auto* me = app.add_subcommand("measure", "measure ONSD on keyframes");
    me->add_option("bundles", mo.bundles, "case bundle(s) or directories of bundles")->required();
    me->add_option("--keyframes", mo.keyframes, "keyframes.json, or the output directory of `score`");
    add_globals(me);

    GradeOpts go;
    auto* gr = app.add_subcommand("grade", "train, cross-validate or apply an ICP grading model");
    gr->add_option("--clinical", go.clinical, "clinical.csv")->required();
    gr->add_option("--schema", go.schema, "clinical_schema.json")->required();
    gr->add_option("--measurements", go.measurements, "directory of measurement reports")->required();
    gr->add_option("--mode", go.mode, "train|cv|predict")->check(CLI::IsMember({"train", "cv", "predict"}));
    gr->add_option("--classifier", go.classifier, "logistic|decision_tree|random_forest|knn|naive_bayes|threshold_baseline")
        ->check(CLI::IsMember({"logistic", "decision_tree", "random_forest", "knn", "naive_bayes", "threshold_baseline"}));
    gr->add_option("--model", go.model, "grading_model.json (predict mode)");
    gr->add_option("--folds", go.folds, "cross-validation folds");
    add_globals(gr);

    EvalOpts eo;
    auto* ev = app.add_subcommand("eval", "keyframe, segmentation or correlation metrics");
    ev->add_option("--task", eo.task, "keyframe|segmentation|correlation")
        ->required()
        ->check(CLI::IsMember({"keyframe", "segmentation", "correlation"}));
    ev->add_option("--bundles", eo.bundles, "annotated bundles (keyframe task)");
    ev->add_option("--scores", eo.scores, "output directory of `score` (keyframe task)");
    ev->add_option("--mask-a", eo.mask_a, "label mask PNG");
    ev->add_option("--mask-b", eo.mask_b, "label mask PNG");
    ev->add_option("--measurements", eo.measurements, "directory of measurement reports (correlation task)");
    add_globals(ev);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    g_level = g.log_level == "error" ? LogLevel::error
              : g.log_level == "warn" ? LogLevel::warn
              : g.log_level == "debug" ? LogLevel::debug
                                       : LogLevel::info;
    try {
        if (ph->parsed()) return cmd_phantom_gen(g, po);
        if (sc->parsed()) return cmd_score(g, so);
        if (me->parsed()) return cmd_measure(g, mo);
        if (gr->parsed()) return cmd_grade(g, go);
        if (ev->parsed()) return cmd_eval(g, eo);
    } catch (const Error& e) {
        log(LogLevel::error, e.what());
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        log(LogLevel::error, e.what());
        return 2;
    } catch (const std::exception& e) {
        log(LogLevel::error, std::string("internal: ") + e.what());
        return 1;
    }
    return 1;
}
