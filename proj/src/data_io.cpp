#include "physiossl/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "physiossl/rng.hpp"

namespace physiossl::data {

namespace fs = std::filesystem;
using nlohmann::json;
using dsp::Modality;

const TaskDef& DatasetManifest::task(const std::string& task_id) const {
    for (const TaskDef& t : tasks)
        if (t.task_id == task_id) return t;
    throw ConfigError("manifest: unknown task '" + task_id + "'");
}

dsp::PreprocessConfig DatasetManifest::preprocess_config() const {
    dsp::PreprocessConfig p;
    p.cutoffs = cutoffs;
    p.filter_order = filter_order;
    p.target_fs = target_fs;
    p.window_s = window_s;
    p.overlap_frac = overlap_frac;
    return p;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

namespace {

std::map<Modality, double> modality_map_from_json(const json& j) {
    std::map<Modality, double> out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out[dsp::modality_from_name(it.key())] = it.value().get<double>();
    for (Modality m : dsp::kAllModalities)
        if (!out.count(m))
            throw ConfigError(std::string("manifest: missing modality entry ") +
                              dsp::modality_name(m));
    return out;
}

json modality_map_to_json(const std::map<Modality, double>& m) {
    json j;
    for (const auto& [mod, v] : m) j[dsp::modality_name(mod)] = v;
    return j;
}

}  // namespace

DatasetManifest load_manifest(const std::string& dir) {
    std::string path = dir + "/manifest.json";
    if (!fs::exists(path)) {
        path = dir + "/manifest";
        if (!fs::exists(path)) throw IoError("no manifest.json (or manifest) in " + dir);
    }
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    json j;
    try {
        j = json::parse(f, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }

    DatasetManifest m;
    m.version = j.value("version", 1);
    if (m.version != 1) throw ConfigError(path + ": unsupported manifest version");
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.target_fs = j.at("target_fs").get<double>();
    m.window_s = j.at("window_s").get<double>();
    m.overlap_frac = j.at("overlap_frac").get<double>();
    m.filter_order = j.value("filter_order", 4);
    m.cutoffs = modality_map_from_json(j.at("cutoffs"));
    m.native_fs = modality_map_from_json(j.at("native_fs"));
    m.tasks.clear();
    if (j.contains("tasks")) {
        for (auto it = j["tasks"].begin(); it != j["tasks"].end(); ++it) {
            TaskDef t;
            t.task_id = it.key();
            t.classes = it.value().at("classes").get<int>();
            for (auto lm = it.value().at("label_map").begin();
                 lm != it.value().at("label_map").end(); ++lm) {
                const int raw = std::stoi(lm.key());
                const int cls = lm.value().get<int>();
                if (cls < 0 || cls >= t.classes)
                    throw ConfigError(path + ": task " + t.task_id +
                                      " maps a label outside [0, classes)");
                t.label_map[raw] = cls;
            }
            m.tasks.push_back(std::move(t));
        }
    }
    m.subjects.clear();
    for (const auto& js : j.at("subjects")) {
        SubjectEntry s;
        s.id = js.at("id").get<std::string>();
        for (auto it = js.at("files").begin(); it != js.at("files").end(); ++it)
            s.files[dsp::modality_from_name(it.key())] = it.value().get<std::string>();
        for (Modality mod : dsp::kAllModalities)
            if (!s.files.count(mod))
                throw ConfigError(path + ": subject " + s.id + " missing modality file " +
                                  dsp::modality_name(mod));
        s.labels_file = js.value("labels", "");
        m.subjects.push_back(std::move(s));
    }
    m.root_dir = dir;
    return m;
}

void save_manifest(const std::string& dir, const DatasetManifest& m) {
    fs::create_directories(dir);
    json j;
    j["version"] = m.version;
    j["dataset_id"] = m.dataset_id;
    j["target_fs"] = m.target_fs;
    j["window_s"] = m.window_s;
    j["overlap_frac"] = m.overlap_frac;
    j["filter_order"] = m.filter_order;
    j["cutoffs"] = modality_map_to_json(m.cutoffs);
    j["native_fs"] = modality_map_to_json(m.native_fs);
    json jt = json::object();
    for (const TaskDef& t : m.tasks) {
        json tj;
        tj["classes"] = t.classes;
        json lm = json::object();
        for (const auto& [raw, cls] : t.label_map) lm[std::to_string(raw)] = cls;
        tj["label_map"] = lm;
        jt[t.task_id] = tj;
    }
    j["tasks"] = jt;
    json subs = json::array();
    for (const SubjectEntry& s : m.subjects) {
        json sj;
        sj["id"] = s.id;
        json files;
        for (const auto& [mod, p] : s.files) files[dsp::modality_name(mod)] = p;
        sj["files"] = files;
        if (!s.labels_file.empty()) sj["labels"] = s.labels_file;
        subs.push_back(sj);
    }
    j["subjects"] = subs;
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw IoError("cannot write " + dir + "/manifest.json");
    f << j.dump(2) << "\n";
}

std::string manifest_hash(const std::string& dir) {
    std::string path = dir + "/manifest.json";
    if (!fs::exists(path)) path = dir + "/manifest";
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open manifest in " + dir);
    std::ostringstream ss;
    ss << f.rdbuf();
    return to_hex(fnv1a64(ss.str()));
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace {

// parses "t,v" rows; returns (t, v) pairs with strict diagnostics
std::vector<std::pair<double, double>> load_two_column_csv(const std::string& path,
                                                           const char* expected_header) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw InputError(path + ":1: empty file");
    // tolerate trailing CR from CRLF files
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expected_header)
        throw InputError(path + ":1: expected header '" + std::string(expected_header) +
                         "', found '" + line + "'");
    std::vector<std::pair<double, double>> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        double t = 0.0, v = 0.0;
        char extra = 0;
        const int n = std::sscanf(line.c_str(), "%lf,%lf%c", &t, &v, &extra);
        if (n < 2 || (n == 3 && extra != '\0'))
            throw InputError(path + ":" + std::to_string(lineno) + ": malformed row '" + line +
                             "'");
        if (!std::isfinite(t) || !std::isfinite(v))
            throw InputError(path + ":" + std::to_string(lineno) + ": non-finite value");
        rows.emplace_back(t, v);
    }
    return rows;
}

}  // namespace

std::vector<double> load_signal_csv(const std::string& path) {
    auto rows = load_two_column_csv(path, "t_sec,value");
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& [t, v] : rows) out.push_back(v);
    return out;
}

std::vector<dsp::LabelPoint> load_labels_csv(const std::string& path) {
    auto rows = load_two_column_csv(path, "t_sec,class");
    std::vector<dsp::LabelPoint> out;
    out.reserve(rows.size());
    for (const auto& [t, v] : rows) {
        const double r = std::round(v);
        if (std::abs(v - r) > 1e-9)
            throw InputError(path + ": non-integer class id " + std::to_string(v));
        out.push_back({t, static_cast<int>(r)});
    }
    return out;
}

std::vector<dsp::Recording> load_dataset(const DatasetManifest& m) {
    std::vector<dsp::Recording> recs;
    recs.reserve(m.subjects.size());
    for (const SubjectEntry& s : m.subjects) {
        dsp::Recording r;
        r.subject_id = s.id;
        for (const auto& [mod, rel] : s.files) {
            dsp::Stream st;
            st.samples = load_signal_csv(m.root_dir + "/" + rel);
            st.fs = m.native_fs.at(mod);
            if (st.samples.empty())
                throw InputError(m.root_dir + "/" + rel + ": no samples for subject " + s.id);
            r.streams[mod] = std::move(st);
        }
        if (!s.labels_file.empty())
            r.labels = load_labels_csv(m.root_dir + "/" + s.labels_file);
        r.validate();
        recs.push_back(std::move(r));
    }
    return recs;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

double synth_class_frequency(const SynthConfig& cfg, Modality m, int cls) {
    switch (m) {
        case Modality::EDA: return cfg.eda_f0 + cfg.eda_df * cls;
        case Modality::BVP: return cfg.bvp_f0 + cfg.bvp_df * cls;
        case Modality::TEMP: return cfg.temp_f0 + cfg.temp_df * cls;
    }
    return 0.0;
}

std::vector<dsp::Recording> generate_synthetic_corpus(const SynthConfig& cfg) {
    if (cfg.n_subjects < 2) throw ConfigError("synthetic corpus: need at least 2 subjects");
    if (cfg.n_classes < 1) throw ConfigError("synthetic corpus: need at least 1 class");
    std::vector<dsp::Recording> recs;
    const std::map<Modality, double> native = {
        {Modality::EDA, 4.0}, {Modality::BVP, 64.0}, {Modality::TEMP, 4.0}};
    const std::map<Modality, double> amp = {
        {Modality::EDA, 1.0}, {Modality::BVP, 1.0}, {Modality::TEMP, 0.5}};

    const int n_blocks = std::max(1, static_cast<int>(cfg.seconds_per_subject / cfg.block_s));
    for (int s = 0; s < cfg.n_subjects; ++s) {
        dsp::Recording r;
        r.subject_id = "S" + std::to_string(s + 1);
        // class block sequence, rotated per subject so classes balance corpus-wide
        std::vector<int> block_cls(static_cast<std::size_t>(n_blocks));
        for (int b = 0; b < n_blocks; ++b)
            block_cls[static_cast<std::size_t>(b)] = (b + s) % cfg.n_classes;

        Rng subj_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s), 0x5u));
        for (Modality m : dsp::kAllModalities) {
            const double fs = native.at(m);
            const auto n = static_cast<std::size_t>(std::llround(cfg.seconds_per_subject * fs));
            const double offset = subj_rng.uniform(-1.0, 1.0);
            const double drift_phase = subj_rng.uniform(0.0, 2.0 * M_PI);
            const double drift_phase2 = subj_rng.uniform(0.0, 2.0 * M_PI);
            // one oscillation phase per block keeps block boundaries incoherent
            std::vector<double> block_phase(static_cast<std::size_t>(n_blocks));
            for (auto& p : block_phase) p = subj_rng.uniform(0.0, 2.0 * M_PI);

            dsp::Stream st;
            st.fs = fs;
            st.samples.resize(n);
            Rng noise_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s),
                                      static_cast<std::uint64_t>(m), 0xAu));
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / fs;
                int b = static_cast<int>(t / cfg.block_s);
                if (b >= n_blocks) b = n_blocks - 1;
                const int cls = block_cls[static_cast<std::size_t>(b)];
                const double f = synth_class_frequency(cfg, m, cls);
                double v = offset;
                v += 0.25 * std::sin(2.0 * M_PI * 0.005 * t + drift_phase);
                v += 0.15 * std::sin(2.0 * M_PI * 0.0023 * t + drift_phase2);
                v += amp.at(m) *
                     std::sin(2.0 * M_PI * f * t + block_phase[static_cast<std::size_t>(b)]);
                v += cfg.noise_sigma * noise_rng.gaussian();
                st.samples[i] = v;
            }
            r.streams[m] = std::move(st);
        }
        // labels at 1 Hz
        const auto n_lab = static_cast<std::size_t>(cfg.seconds_per_subject);
        r.labels.reserve(n_lab);
        for (std::size_t i = 0; i < n_lab; ++i) {
            int b = static_cast<int>(static_cast<double>(i) / cfg.block_s);
            if (b >= n_blocks) b = n_blocks - 1;
            r.labels.push_back(
                {static_cast<double>(i), block_cls[static_cast<std::size_t>(b)]});
        }
        recs.push_back(std::move(r));
    }
    return recs;
}

void write_corpus(const std::string& dir, const std::vector<dsp::Recording>& recs,
                  const SynthConfig& cfg) {
    fs::create_directories(dir);
    DatasetManifest m;
    m.dataset_id = "synthetic-" + std::to_string(cfg.seed);
    m.target_fs = 4.0;
    m.window_s = 60.0;
    m.overlap_frac = 0.995;
    // class ids are already 0..n-1; identity task mapping
    TaskDef t;
    t.task_id = "synthetic";
    t.classes = cfg.n_classes;
    for (int c = 0; c < cfg.n_classes; ++c) t.label_map[c] = c;
    m.tasks.push_back(t);

    for (const dsp::Recording& r : recs) {
        SubjectEntry s;
        s.id = r.subject_id;
        fs::create_directories(dir + "/" + r.subject_id);
        for (const auto& [mod, st] : r.streams) {
            std::string name = dsp::modality_name(mod);
            for (char& ch : name) ch = static_cast<char>(std::tolower(ch));
            const std::string rel = r.subject_id + "/" + name + ".csv";
            std::ofstream f(dir + "/" + rel);
            if (!f) throw IoError("cannot write " + dir + "/" + rel);
            f << "t_sec,value\n";
            char buf[64];
            for (std::size_t i = 0; i < st.samples.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "%.6f,%.9g\n",
                              static_cast<double>(i) / st.fs, st.samples[i]);
                f << buf;
            }
            s.files[mod] = rel;
        }
        if (!r.labels.empty()) {
            const std::string rel = r.subject_id + "/labels.csv";
            std::ofstream f(dir + "/" + rel);
            if (!f) throw IoError("cannot write " + dir + "/" + rel);
            f << "t_sec,class\n";
            for (const auto& lp : r.labels) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.6f,%d\n", lp.t_sec, lp.cls);
                f << buf;
            }
            s.labels_file = rel;
        }
        m.subjects.push_back(std::move(s));
    }
    save_manifest(dir, m);
}

// ---------------------------------------------------------------------------
// window storage
// ---------------------------------------------------------------------------

std::vector<std::string> WindowSet::subject_ids() const {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& w : windows)
        if (seen.insert(w.subject_id).second) ids.push_back(w.subject_id);
    return ids;
}

void save_windows(const std::string& dir, const WindowSet& ws) {
    fs::create_directories(dir);
    json meta;
    meta["format"] = "physiossl.windows";
    meta["version"] = 1;
    meta["n_windows"] = ws.windows.size();
    meta["n_steps"] = ws.n_steps;
    meta["n_modalities"] = dsp::kNumModalities;
    meta["dtype"] = "f64le";
    meta["dataset_id"] = ws.dataset_id;
    meta["manifest_hash"] = ws.manifest_hash;
    meta["target_fs"] = ws.target_fs;
    meta["window_s"] = ws.window_s;
    meta["overlap_frac"] = ws.overlap_frac;
    meta["any_too_short"] = ws.any_too_short;
    std::ofstream mf(dir + "/meta.json");
    if (!mf) throw IoError("cannot write " + dir + "/meta.json");
    mf << meta.dump(2) << "\n";

    std::ofstream idx(dir + "/windows.csv");
    if (!idx) throw IoError("cannot write " + dir + "/windows.csv");
    idx << "window_id,subject_id,t_start,label\n";
    std::ofstream bin(dir + "/windows.bin", std::ios::binary);
    if (!bin) throw IoError("cannot write " + dir + "/windows.bin");
    for (std::size_t i = 0; i < ws.windows.size(); ++i) {
        const dsp::Window& w = ws.windows[i];
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%zu,%s,%.6f,%d\n", i, w.subject_id.c_str(), w.t_start,
                      w.label ? *w.label : -1);
        idx << buf;
        bin.write(reinterpret_cast<const char*>(w.values.data()),
                  static_cast<std::streamsize>(w.values.size() * sizeof(double)));
    }
}

WindowSet load_windows(const std::string& dir) {
    std::ifstream mf(dir + "/meta.json");
    if (!mf) throw IoError("cannot open " + dir + "/meta.json");
    json meta = json::parse(mf, nullptr, true, true);
    if (meta.value("format", "") != "physiossl.windows")
        throw IoError(dir + ": not a preprocessed window directory");
    if (meta.value("version", 0) != 1) throw IoError(dir + ": unsupported windows version");

    WindowSet ws;
    ws.n_steps = meta.at("n_steps").get<int>();
    ws.dataset_id = meta.value("dataset_id", "");
    ws.manifest_hash = meta.value("manifest_hash", "");
    ws.target_fs = meta.value("target_fs", 4.0);
    ws.window_s = meta.value("window_s", 60.0);
    ws.overlap_frac = meta.value("overlap_frac", 0.995);
    ws.any_too_short = meta.value("any_too_short", false);
    const auto n = meta.at("n_windows").get<std::size_t>();

    std::ifstream idx(dir + "/windows.csv");
    if (!idx) throw IoError("cannot open " + dir + "/windows.csv");
    std::string line;
    std::getline(idx, line);
    std::ifstream bin(dir + "/windows.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + dir + "/windows.bin");

    ws.windows.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(idx, line))
            throw IoError(dir + "/windows.csv: truncated at row " + std::to_string(i + 2));
        dsp::Window& w = ws.windows[i];
        std::istringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');  // window_id
        std::getline(ss, w.subject_id, ',');
        std::getline(ss, tok, ',');
        w.t_start = std::stod(tok);
        std::getline(ss, tok, ',');
        const int lab = std::stoi(tok);
        if (lab >= 0) w.label = lab;
        w.n_steps = ws.n_steps;
        w.values.resize(static_cast<std::size_t>(ws.n_steps) * dsp::kNumModalities);
        bin.read(reinterpret_cast<char*>(w.values.data()),
                 static_cast<std::streamsize>(w.values.size() * sizeof(double)));
        if (!bin) throw IoError(dir + "/windows.bin: truncated at window " + std::to_string(i));
    }
    return ws;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

void MetricsReport::finalize() {
    double acc = 0.0, f1v = 0.0;
    for (const FoldResult& f : folds) {
        acc += f.accuracy;
        f1v += f.f1;
    }
    const double n = folds.empty() ? 1.0 : static_cast<double>(folds.size());
    mean_accuracy = acc / n;
    mean_f1 = f1v / n;
}

void save_report(const std::string& dir, const MetricsReport& r) {
    fs::create_directories(dir);
    std::ofstream csv(dir + "/report.csv");
    if (!csv) throw IoError("cannot write " + dir + "/report.csv");
    csv << "subject_id,accuracy,f1,n_test,single_class\n";
    for (const FoldResult& f : r.folds) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%lld,%d\n", f.subject_id.c_str(),
                      f.accuracy, f.f1, f.n_test, f.single_class ? 1 : 0);
        csv << buf;
    }
    json j;
    j["task_id"] = r.task_id;
    j["mean_accuracy"] = r.mean_accuracy;
    j["mean_f1"] = r.mean_f1;
    j["folds"] = r.folds.size();
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["dataset_id"] = r.dataset_id;
    j["manifest_hash"] = r.manifest_hash;
    j["wall_s"] = r.wall_s;
    std::ofstream jf(dir + "/report.json");
    if (!jf) throw IoError("cannot write " + dir + "/report.json");
    jf << j.dump(2) << "\n";
}

}  // namespace physiossl::data
