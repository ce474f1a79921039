// Dataset manifests, CSV signal ingestion, the synthetic corpus generator,
// window storage, and report serialization. File formats are documented in
// docs/formats.md.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "physiossl/dsp.hpp"

namespace physiossl::data {

struct TaskDef {
    std::string task_id;
    int classes = 2;
    // raw label id in labels.csv -> task class id in [0, classes)
    std::map<int, int> label_map;
};

struct SubjectEntry {
    std::string id;
    std::map<dsp::Modality, std::string> files;  // relative signal CSV paths
    std::string labels_file;                     // optional, relative
};

struct DatasetManifest {
    int version = 1;
    std::string dataset_id;
    double target_fs = 4.0;
    double window_s = 60.0;
    double overlap_frac = 0.995;
    std::map<dsp::Modality, double> cutoffs = {{dsp::Modality::EDA, 0.5},
                                               {dsp::Modality::BVP, 2.0},
                                               {dsp::Modality::TEMP, 0.5}};
    int filter_order = 4;
    std::map<dsp::Modality, double> native_fs = {{dsp::Modality::EDA, 4.0},
                                                 {dsp::Modality::BVP, 64.0},
                                                 {dsp::Modality::TEMP, 4.0}};
    std::vector<TaskDef> tasks;
    std::vector<SubjectEntry> subjects;
    std::string root_dir;  // set by the loader to resolve relative paths

    const TaskDef& task(const std::string& task_id) const;
    dsp::PreprocessConfig preprocess_config() const;
};

// Reads <dir>/manifest.json (falling back to <dir>/manifest).
DatasetManifest load_manifest(const std::string& dir);
void save_manifest(const std::string& dir, const DatasetManifest& m);
std::string manifest_hash(const std::string& dir);  // FNV-1a of the file bytes

// Loads every subject's streams at native rates; labels attached when a
// labels file is declared. Malformed rows are reported with file and line.
std::vector<dsp::Recording> load_dataset(const DatasetManifest& m);

// CSV with header "t_sec,value"; rejects NaN/Inf with file/line diagnostics.
std::vector<double> load_signal_csv(const std::string& path);
std::vector<dsp::LabelPoint> load_labels_csv(const std::string& path);

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

struct SynthConfig {
    int n_subjects = 4;
    double seconds_per_subject = 2400.0;
    int n_classes = 2;
    std::uint64_t seed = 7;
    double block_s = 480.0;  // label block duration
    // class-dependent oscillation base frequencies / spacing per modality
    double eda_f0 = 0.10, eda_df = 0.06;
    double bvp_f0 = 0.60, bvp_df = 0.20;
    double temp_f0 = 0.08, temp_df = 0.05;
    double noise_sigma = 0.15;
};

// Deterministic pseudo-physiological streams: slow drift + class-dependent
// oscillation + subject offset + Gaussian noise, at native rates 4/64/4 Hz.
// Labels are embedded as alternating class blocks (rotated per subject).
std::vector<dsp::Recording> generate_synthetic_corpus(const SynthConfig& cfg);

// Frequency of the class-c oscillation on a modality (the synthetic ground
// truth; tests build an independent spectral classifier from it).
double synth_class_frequency(const SynthConfig& cfg, dsp::Modality m, int cls);

// Writes recordings as a manifest directory (CSV files + manifest.json).
void write_corpus(const std::string& dir, const std::vector<dsp::Recording>& recs,
                  const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// preprocessed window storage
// ---------------------------------------------------------------------------

struct WindowSet {
    std::vector<dsp::Window> windows;
    int n_steps = 0;
    std::string dataset_id;
    std::string manifest_hash;
    double target_fs = 4.0;
    double window_s = 60.0;
    double overlap_frac = 0.995;
    bool any_too_short = false;

    std::vector<std::string> subject_ids() const;
};

void save_windows(const std::string& dir, const WindowSet& ws);
WindowSet load_windows(const std::string& dir);

// ---------------------------------------------------------------------------
// metrics reports
// ---------------------------------------------------------------------------

struct FoldResult {
    std::string subject_id;
    double accuracy = 0.0;
    double f1 = 0.0;
    long long n_test = 0;
    bool single_class = false;  // held-out subject exposes one class only
};

struct MetricsReport {
    std::string task_id;
    std::vector<FoldResult> folds;
    double mean_accuracy = 0.0;
    double mean_f1 = 0.0;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string dataset_id;
    std::string manifest_hash;
    double wall_s = 0.0;

    void finalize();  // fills the aggregate means
};

// report.csv (per-fold rows) + report.json (aggregate + provenance)
void save_report(const std::string& dir, const MetricsReport& r);

}  // namespace physiossl::data
