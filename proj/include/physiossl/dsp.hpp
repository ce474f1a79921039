// Signal conditioning: low-pass filtering, z-score normalization, resampling
// and window segmentation. Pipeline order is fixed (filter -> zscore ->
// resample -> segment) and tracked with a stage tag on each Recording.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "physiossl/common.hpp"

namespace physiossl::dsp {

enum class Modality : int { EDA = 0, BVP = 1, TEMP = 2 };
constexpr int kNumModalities = 3;
constexpr std::array<Modality, 3> kAllModalities = {Modality::EDA, Modality::BVP,
                                                    Modality::TEMP};

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

enum class PipelineStage : int { Raw = 0, Filtered = 1, Normalized = 2, Resampled = 3 };

struct LabelPoint {
    double t_sec = 0.0;
    int cls = 0;
};

struct Stream {
    std::vector<double> samples;
    double fs = 0.0;  // Hz
};

struct Recording {
    std::string subject_id;
    std::map<Modality, Stream> streams;
    std::vector<LabelPoint> labels;
    PipelineStage stage = PipelineStage::Raw;

    void validate() const;  // all three modalities present, non-empty, fs > 0
};

// One fixed-length multimodal segment. values is row-major [n_steps x 3],
// column order EDA, BVP, TEMP.
struct Window {
    std::vector<double> values;
    int n_steps = 0;
    std::string subject_id;
    std::optional<int> label;
    double t_start = 0.0;

    double at(int t, int m) const { return values[static_cast<std::size_t>(t) * kNumModalities + m]; }
    double& at(int t, int m) { return values[static_cast<std::size_t>(t) * kNumModalities + m]; }
};

// Second-order sections of a digital low-pass Butterworth filter (bilinear
// transform with prewarping). Each section is normalized to unit DC gain.
struct BiquadSection {
    double b0, b1, b2;  // numerator
    double a1, a2;      // denominator (a0 == 1)
};

std::vector<BiquadSection> design_butterworth_lowpass(double fs, double cutoff, int order);

// Squared magnitude of the digital Butterworth low-pass at frequency f;
// closed form, independent of the section decomposition. A forward-backward
// pass applies this gain once per direction, so the round-trip amplitude
// gain at f is exactly this value.
double butterworth_forward_backward_gain(double f, double fs, double cutoff, int order);

// Zero-phase (forward-backward) low-pass. Output has the input's length.
// Edges are extended by odd reflection before filtering to suppress
// startup transients, as is conventional for offline zero-phase filtering.
std::vector<double> butterworth_lowpass(const std::vector<double>& samples, double fs,
                                        double cutoff, int order = 4);

// Per-sequence z-score with population std. Sequences with std < 1e-8 map
// to all zeros so constant channels never inject NaNs downstream.
std::vector<double> zscore_normalize(const std::vector<double>& samples);

// Linear-interpolation downsampling onto the grid j / dst_fs. Output length
// is round(len * dst_fs / src_fs). Upsampling is rejected.
std::vector<double> resample_to(const std::vector<double>& samples, double src_fs,
                                double dst_fs);

int majority_label(const std::vector<int>& labels_in_window);

struct SegmentationResult {
    std::vector<Window> windows;
    bool too_short = false;  // recording shorter than one window
};

// Splits a filtered+normalized+resampled recording into left-aligned windows
// of window_s seconds with step max(1, round((1-overlap_frac)*N)) samples.
// Labels, when present, are assigned by majority vote over the label points
// falling inside each window's time span.
SegmentationResult segment_windows(const Recording& recording, double window_s,
                                   double overlap_frac);

// Stage-checked recording-level wrappers. Each asserts the expected input
// stage and advances the tag, so the fixed pipeline order is enforced.
Recording filter_recording(const Recording& rec, const std::map<Modality, double>& cutoffs,
                           int order);
Recording normalize_recording(const Recording& rec);
Recording resample_recording(const Recording& rec, double target_fs);

struct PreprocessConfig {
    std::map<Modality, double> cutoffs = {
        {Modality::EDA, 0.5}, {Modality::BVP, 2.0}, {Modality::TEMP, 0.5}};
    int filter_order = 4;
    double target_fs = 4.0;
    double window_s = 60.0;
    double overlap_frac = 0.995;
};

// Full pipeline for one recording.
SegmentationResult preprocess_recording(const Recording& rec, const PreprocessConfig& cfg);

}  // namespace physiossl::dsp
