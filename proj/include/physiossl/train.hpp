// Pretraining, downstream training (frozen / fine-tuned / from scratch),
// LOSO evaluation, metrics, the low-data study and the ablation harnesses.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "physiossl/data_io.hpp"
#include "physiossl/model_io.hpp"
#include "physiossl/nn/network.hpp"
#include "physiossl/transforms.hpp"

namespace physiossl::train {

void set_jobs(int jobs);  // OpenMP worker count; never changes results

struct TrainOpts {
    double lr = 5e-3;
    int batch = 32;
    int epochs = 20;
    double weight_decay = 5e-7;
    double momentum = 0.0;
    std::uint64_t seed = 1;
    std::string f1_average = "macro";
    bool verbose = false;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    std::vector<double> head_accuracy;  // training accuracy per head
};

using NetF = nn::Network<float>;

// ---------------------------------------------------------------------------
// pretext stage
// ---------------------------------------------------------------------------

struct PretrainResult {
    std::shared_ptr<NetF> net;
    std::vector<EpochLog> logs;
};

// Trains transform recognition with SGD on L_total (the sum of per-head
// cross entropies). train_idx selects a sample subset; empty means all.
PretrainResult pretrain(const std::vector<transforms::PretextSample>& samples,
                        const nn::EncoderConfig& cfg, const TrainOpts& opts,
                        const std::vector<std::size_t>& train_idx = {});

// Mean per-head transform-classification accuracy, eval mode.
double pretext_accuracy(NetF& net, const std::vector<transforms::PretextSample>& samples,
                        const std::vector<std::size_t>& idx, int batch = 64);

// Eval-mode pretext loss (total and per head) over a sample subset.
nn::PretextLossValue pretext_loss_eval(NetF& net,
                                       const std::vector<transforms::PretextSample>& samples,
                                       const std::vector<std::size_t>& idx, int batch = 64);

// ---------------------------------------------------------------------------
// downstream stage
// ---------------------------------------------------------------------------

enum class DownstreamMode { Frozen, Finetuned, Scratch };
const char* downstream_mode_name(DownstreamMode m);
DownstreamMode downstream_mode_from_name(const std::string& s);

struct EmotionModel {
    std::shared_ptr<NetF> net;
    int classes = 0;
    std::vector<EpochLog> logs;

    std::vector<int> predict(const std::vector<dsp::Window>& windows, int batch = 64) const;
};

// Labeled training windows (task class ids). Frozen mode requires ckpt and
// updates only the emotion head (the encoder runs as a fixed eval-mode
// feature extractor); Finetuned initializes from ckpt and updates all
// parameters; Scratch initializes randomly and must not receive a ckpt.
EmotionModel train_downstream(const std::vector<dsp::Window>& windows,
                              const std::vector<int>& labels, int classes, DownstreamMode mode,
                              const Checkpoint* ckpt, const nn::EncoderConfig& cfg,
                              const TrainOpts& opts);

// ---------------------------------------------------------------------------
// metrics and protocols
// ---------------------------------------------------------------------------

struct Metrics {
    double accuracy = 0.0;
    double f1 = 0.0;
};

// accuracy + macro- (or weighted-) averaged F1 over the task's class set
Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                        int n_classes, const std::string& average = "macro");

// Maps window raw labels through the task definition; unlabeled windows are
// dropped; a raw label missing from the map is an error.
void task_labels(const std::vector<dsp::Window>& windows, const data::TaskDef& task,
                 std::vector<dsp::Window>& out_windows, std::vector<int>& out_labels);

struct LosoOptions {
    long long subsample_per_class = -1;  // -1: use every training window
    std::uint64_t subsample_seed = 0;
};

data::MetricsReport evaluate_loso(const data::WindowSet& ws, const data::TaskDef& task,
                                  DownstreamMode mode, const Checkpoint* ckpt,
                                  const nn::EncoderConfig& cfg, const TrainOpts& opts,
                                  const LosoOptions& loso = {});

// ---------------------------------------------------------------------------
// low-data study
// ---------------------------------------------------------------------------

struct LowDataEntry {
    long long size = 0;
    double mean_accuracy = 0.0, std_accuracy = 0.0;
    double mean_f1 = 0.0, std_f1 = 0.0;
    std::vector<double> per_repeat_accuracy;
};

struct LowDataReport {
    std::vector<LowDataEntry> entries;
};

LowDataReport run_low_data_study(const data::WindowSet& ws, const data::TaskDef& task,
                                 DownstreamMode mode, const Checkpoint* ckpt,
                                 const nn::EncoderConfig& cfg, const TrainOpts& opts,
                                 const std::vector<long long>& sizes, int repeats);

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string variant;
    double accuracy = 0.0;
    double f1 = 0.0;
    double drop_accuracy = 0.0;  // missing-modality only
    double drop_f1 = 0.0;
};

struct AblationReport {
    std::string kind;
    std::vector<AblationRow> rows;
};

struct AblationSpec {
    std::string kind;  // fusion | modality_subset | missing_modality |
                       // components_pe | transform_subset
    std::vector<std::string> variants;  // empty: the kind's default set
    double missing_drop_prob = 0.5;
    int missing_repeats = 10;
};

// Each variant pretrains with the shared base seed (so differences isolate
// the varied axis) and evaluates the downstream task LOSO in frozen mode.
AblationReport run_ablation(const AblationSpec& spec, const data::WindowSet& ws,
                            const data::TaskDef& task,
                            const transforms::TransformConfig& tcfg,
                            const nn::EncoderConfig& cfg, const TrainOpts& pretext_opts,
                            const TrainOpts& downstream_opts);

void save_ablation_report(const std::string& dir, const AblationReport& r);
void save_lowdata_report(const std::string& dir, const LowDataReport& r);
void save_training_log(const std::string& path, const std::vector<EpochLog>& logs);

}  // namespace physiossl::train
