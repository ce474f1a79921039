// The five stochastic signal transformations used to pseudo-label windows
// for transform-recognition pretraining, plus the dataset builder that
// expands each window into six samples (original + five transforms).
#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "physiossl/dsp.hpp"
#include "physiossl/rng.hpp"

namespace physiossl::transforms {

// Label space of the pretext task. Original must stay 0.
enum class TransformKind : int {
    Original = 0,
    Noise = 1,
    Permutation = 2,
    MagnitudeWarp = 3,
    TimeWarp = 4,
    Crop = 5,
};
constexpr int kNumTransformLabels = 6;

const char* transform_name(TransformKind k);
// One-letter code used in transform-subset experiments: N, M, P, T, C.
TransformKind transform_from_letter(char c);

struct TransformConfig {
    double snr_db = 15.0;  // +inf disables the noise entirely
    double mw_sigma = 0.1;
    int mw_knots = 4;  // interior knots; the spline also gets both endpoints
    int perm_segments = 9;
    int tw_segments = 4;
    double tw_stretch = 1.05;
    double crop_ratio = 0.2;
    bool independent_per_modality = false;

    void validate() const;
};

struct PretextSample {
    std::vector<double> values;  // row-major [n_steps x 3]
    int n_steps = 0;
    std::array<int, dsp::kNumModalities> transform_labels{};
    std::uint64_t source_window_id = 0;
};

// --- individual transforms (length-preserving, deterministic given rng) ---

std::vector<double> add_gaussian_noise(const std::vector<double>& x, double snr_db, Rng& rng);
std::vector<double> magnitude_warp(const std::vector<double>& x, double mw_sigma, int mw_knots,
                                   Rng& rng);
std::vector<double> permute(const std::vector<double>& x, int perm_segments, Rng& rng);
std::vector<double> time_warp(const std::vector<double>& x, int tw_segments, double tw_stretch,
                              Rng& rng);
std::vector<double> crop_resize(const std::vector<double>& x, double crop_ratio, Rng& rng);

std::vector<double> apply_transform(TransformKind kind, const std::vector<double>& x,
                                    const TransformConfig& cfg, Rng& rng);

// Linear resize of a sequence onto new_len points spanning the same range.
// Exact copy when the length is unchanged.
std::vector<double> linear_resize(const std::vector<double>& x, std::size_t new_len);

// Natural cubic spline through (xs, ys), evaluated at t (xs strictly increasing).
class CubicSpline {
public:
    CubicSpline(std::vector<double> xs, std::vector<double> ys);
    double operator()(double t) const;

private:
    std::vector<double> xs_, ys_, m_;  // m_: second derivatives
};

// Expands each window into kNumTransformLabels samples. Label j applies
// transform j to every modality column, so the per-modality labels inside
// one sample agree. Each sample draws from an RNG substream derived from
// (seed, window_id, label), making the dataset independent of iteration
// order. With cfg.independent_per_modality, every modality instead draws
// its own label from the substream (seed, window_id, 8 + modality).
std::vector<PretextSample> build_pretext_dataset(const std::vector<dsp::Window>& windows,
                                                 const TransformConfig& cfg,
                                                 std::uint64_t seed);

// Same expansion restricted to a transform subset; the label space becomes
// {original} + subset, renumbered 0..subset.size() in the order given.
std::vector<PretextSample> build_pretext_dataset_subset(
    const std::vector<dsp::Window>& windows, const TransformConfig& cfg, std::uint64_t seed,
    const std::vector<TransformKind>& subset);

// On-disk form: meta.json + index.csv (sample_id,window_id,label) +
// samples.bin (row-major [n_steps x 3] float64 per sample, little-endian).
void save_pretext_dataset(const std::string& dir, const std::vector<PretextSample>& samples,
                          int n_steps, std::uint64_t seed);
std::vector<PretextSample> load_pretext_dataset(const std::string& dir);

}  // namespace physiossl::transforms
