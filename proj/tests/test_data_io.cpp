#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "physiossl/data_io.hpp"

using namespace physiossl;
using namespace physiossl::data;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = "/tmp/physiossl_test_data";

std::string fresh_dir(const std::string& name) {
    const std::string dir = kRoot + "/" + name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path);
    f << content;
}

std::string default_manifest_json(int subjects) {
    std::string subs;
    for (int s = 1; s <= subjects; ++s) {
        if (!subs.empty()) subs += ",";
        subs += R"({"id":"S)" + std::to_string(s) + R"(","files":{"EDA":"S)" + std::to_string(s) +
                R"(/eda.csv","BVP":"S)" + std::to_string(s) + R"(/bvp.csv","TEMP":"S)" +
                std::to_string(s) + R"(/temp.csv"},"labels":"S)" + std::to_string(s) +
                R"(/labels.csv"})";
    }
    return R"({
      "version": 1, "dataset_id": "fixture", "target_fs": 4.0,
      "window_s": 60.0, "overlap_frac": 0.0,
      "cutoffs": {"EDA": 0.5, "BVP": 2.0, "TEMP": 0.5},
      "native_fs": {"EDA": 4.0, "BVP": 64.0, "TEMP": 4.0},
      "tasks": {"binary": {"classes": 2, "label_map": {"0": 0, "1": 1}}},
      "subjects": [)" + subs + R"(]
    })";
}

void write_signal(const std::string& path, double fs, double seconds, double amp) {
    std::string body = "t_sec,value\n";
    const auto n = static_cast<std::size_t>(seconds * fs);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        body += std::to_string(t) + "," + std::to_string(amp * std::sin(0.4 * t) + 0.1 * t) + "\n";
    }
    write_file(path, body);
}

void write_fixture_corpus(const std::string& dir, int subjects, double seconds = 120.0) {
    write_file(dir + "/manifest.json", default_manifest_json(subjects));
    for (int s = 1; s <= subjects; ++s) {
        const std::string base = dir + "/S" + std::to_string(s);
        write_signal(base + "/eda.csv", 4.0, seconds, 1.0 + s);
        write_signal(base + "/bvp.csv", 64.0, seconds, 2.0);
        write_signal(base + "/temp.csv", 4.0, seconds, 0.5);
        std::string labels = "t_sec,class\n";
        for (int t = 0; t < static_cast<int>(seconds); ++t)
            labels += std::to_string(t) + "," + std::to_string(t < seconds / 2 ? 0 : 1) + "\n";
        write_file(base + "/labels.csv", labels);
    }
}

}  // namespace

TEST_CASE("fixture manifest loads two recordings with three streams") {
    const auto dir = fresh_dir("fixture2");
    write_fixture_corpus(dir, 2);
    const auto m = load_manifest(dir);
    CHECK(m.dataset_id == "fixture");
    CHECK(m.task("binary").classes == 2);
    const auto recs = load_dataset(m);
    REQUIRE(recs.size() == 2);
    for (const auto& r : recs) {
        CHECK(r.streams.size() == 3);
        CHECK(r.streams.at(dsp::Modality::BVP).fs == 64.0);
        CHECK(r.streams.at(dsp::Modality::BVP).samples.size() == 64u * 120u);
        CHECK(!r.labels.empty());
    }
}

TEST_CASE("empty subject list loads to an empty dataset without error") {
    const auto dir = fresh_dir("empty");
    write_file(dir + "/manifest.json", default_manifest_json(0));
    const auto m = load_manifest(dir);
    CHECK(load_dataset(m).empty());
}

TEST_CASE("malformed csv rows report file and line") {
    const auto dir = fresh_dir("malformed");
    write_file(dir + "/bad.csv", "t_sec,value\n0.0,1.0\n0.25,oops\n");
    try {
        (void)load_signal_csv(dir + "/bad.csv");
        CHECK(false);
    } catch (const InputError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad.csv") != std::string::npos);
        CHECK(msg.find(":3") != std::string::npos);
    }
}

TEST_CASE("non-finite samples are rejected at ingestion") {
    const auto dir = fresh_dir("nonfinite");
    write_file(dir + "/nan.csv", "t_sec,value\n0.0,nan\n");
    CHECK_THROWS_AS((void)load_signal_csv(dir + "/nan.csv"), InputError);
    write_file(dir + "/inf.csv", "t_sec,value\n0.0,inf\n");
    CHECK_THROWS_AS((void)load_signal_csv(dir + "/inf.csv"), InputError);
}

TEST_CASE("missing modality file is an error") {
    const auto dir = fresh_dir("missing_mod");
    write_fixture_corpus(dir, 1);
    fs::remove(dir + "/S1/temp.csv");
    const auto m = load_manifest(dir);
    CHECK_THROWS_AS((void)load_dataset(m), IoError);
}

TEST_CASE("manifest missing a modality entry is rejected") {
    const auto dir = fresh_dir("manifest_missing");
    std::string j = R"({
      "version": 1, "dataset_id": "x", "target_fs": 4.0, "window_s": 60.0,
      "overlap_frac": 0.0,
      "cutoffs": {"EDA": 0.5, "BVP": 2.0, "TEMP": 0.5},
      "native_fs": {"EDA": 4.0, "BVP": 64.0, "TEMP": 4.0},
      "subjects": [{"id":"S1","files":{"EDA":"a.csv","BVP":"b.csv"}}]
    })";
    write_file(dir + "/manifest.json", j);
    CHECK_THROWS_AS((void)load_manifest(dir), ConfigError);
}

TEST_CASE("synthetic corpus is deterministic per seed") {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.seconds_per_subject = 300.0;
    cfg.n_classes = 2;
    cfg.seed = 7;
    const auto a = generate_synthetic_corpus(cfg);
    const auto b = generate_synthetic_corpus(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (dsp::Modality m : dsp::kAllModalities)
            CHECK(a[i].streams.at(m).samples == b[i].streams.at(m).samples);
        CHECK(a[i].labels.size() == b[i].labels.size());
    }
    cfg.seed = 8;
    const auto c = generate_synthetic_corpus(cfg);
    CHECK(a[0].streams.at(dsp::Modality::EDA).samples !=
          c[0].streams.at(dsp::Modality::EDA).samples);
}

TEST_CASE("single-class synthetic corpus has uniform labels") {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.seconds_per_subject = 200.0;
    cfg.n_classes = 1;
    const auto recs = generate_synthetic_corpus(cfg);
    for (const auto& r : recs)
        for (const auto& lp : r.labels) CHECK(lp.cls == 0);
}

TEST_CASE("written corpus round-trips through the manifest loader") {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.seconds_per_subject = 120.0;
    cfg.n_classes = 2;
    cfg.seed = 3;
    const auto recs = generate_synthetic_corpus(cfg);
    const auto dir = fresh_dir("synth_roundtrip");
    write_corpus(dir, recs, cfg);
    const auto m = load_manifest(dir);
    CHECK(m.subjects.size() == 2);
    CHECK(m.tasks.size() == 1);
    const auto loaded = load_dataset(m);
    REQUIRE(loaded.size() == 2);
    // CSV serialization uses %.9g; values survive to that precision
    const auto& orig = recs[0].streams.at(dsp::Modality::EDA).samples;
    const auto& back = loaded[0].streams.at(dsp::Modality::EDA).samples;
    REQUIRE(orig.size() == back.size());
    for (std::size_t i = 0; i < orig.size(); i += 97)
        CHECK(back[i] == doctest::Approx(orig[i]).epsilon(1e-7));
}

TEST_CASE("window set round-trips with subject ids and labels") {
    WindowSet ws;
    ws.n_steps = 8;
    ws.dataset_id = "fixture";
    ws.manifest_hash = "abc";
    for (int i = 0; i < 5; ++i) {
        dsp::Window w;
        w.n_steps = 8;
        w.subject_id = i < 3 ? "S1" : "S2";
        w.t_start = i * 2.0;
        if (i != 2) w.label = i % 2;
        w.values.resize(8 * 3);
        for (std::size_t j = 0; j < w.values.size(); ++j)
            w.values[j] = 0.25 * static_cast<double>(i) + 0.01 * static_cast<double>(j);
        ws.windows.push_back(std::move(w));
    }
    const auto dir = fresh_dir("windows_roundtrip");
    save_windows(dir, ws);
    const auto back = load_windows(dir);
    REQUIRE(back.windows.size() == 5);
    CHECK(back.dataset_id == "fixture");
    CHECK(back.subject_ids() == std::vector<std::string>{"S1", "S2"});
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(back.windows[i].values == ws.windows[i].values);  // bit-exact (binary)
        CHECK(back.windows[i].subject_id == ws.windows[i].subject_id);
        CHECK(back.windows[i].label == ws.windows[i].label);
    }
}

TEST_CASE("metrics report files carry provenance") {
    MetricsReport r;
    r.task_id = "binary";
    r.config_hash = "deadbeef";
    r.seed = 11;
    r.dataset_id = "fixture";
    r.manifest_hash = "cafe";
    r.folds.push_back({"S1", 0.9, 0.8, 100, false});
    r.folds.push_back({"S2", 0.7, 0.6, 80, true});
    r.finalize();
    CHECK(r.mean_accuracy == doctest::Approx(0.8));
    CHECK(r.mean_f1 == doctest::Approx(0.7));
    const auto dir = fresh_dir("report");
    save_report(dir, r);
    std::ifstream jf(dir + "/report.json");
    std::string text((std::istreambuf_iterator<char>(jf)), std::istreambuf_iterator<char>());
    CHECK(text.find("deadbeef") != std::string::npos);
    CHECK(text.find("cafe") != std::string::npos);
    std::ifstream cf(dir + "/report.csv");
    std::string csv((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
    CHECK(csv.find("S1") != std::string::npos);
    CHECK(csv.find("S2") != std::string::npos);
}

TEST_CASE("manifest hash is stable and file-sensitive") {
    const auto dir = fresh_dir("hash");
    write_fixture_corpus(dir, 1);
    const auto h1 = manifest_hash(dir);
    CHECK(h1 == manifest_hash(dir));
    write_file(dir + "/manifest.json", default_manifest_json(1) + "\n");
    CHECK(manifest_hash(dir) != h1);
}
