// One flat, versioned run configuration. Every knob of the pipeline lives
// here; the effective configuration is echoed next to every output so runs
// can be reproduced from the snapshot alone.
#pragma once

#include <cstdint>
#include <string>

#include "physiossl/data_io.hpp"
#include "physiossl/nn/network.hpp"
#include "physiossl/transforms.hpp"

namespace physiossl {

struct RunConfig {
    int config_version = 1;

    // preprocessing
    double target_fs = 4.0;
    double window_s = 60.0;
    double overlap_frac = 0.995;
    double cutoff_eda = 0.5;
    double cutoff_bvp = 2.0;
    double cutoff_temp = 0.5;
    int filter_order = 4;

    // transforms
    double snr_db = 15.0;
    double mw_sigma = 0.1;
    int mw_knots = 4;
    int perm_segments = 9;
    int tw_segments = 4;
    double tw_stretch = 1.05;
    double crop_ratio = 0.2;
    bool independent_per_modality = false;

    // encoder / model
    int d_embed = 128;
    int tcn_filters = 16;
    int tcn_kernel = 6;
    std::vector<int> tcn_dilations = {1, 2};
    double tcn_dropout = 0.1;
    int tcn_convs_per_block = 1;
    bool use_tcn = true;
    int n_heads = 4;
    int ff_dim = 128;
    double attn_dropout = 0.2;
    double ff_dropout = 0.2;
    bool use_transformer = true;
    std::string positional_encoding = "none";
    std::string fusion = "intermediate";
    int pretext_hidden = 64;
    double pretext_dropout = 0.1;
    int emotion_hidden = 192;
    double emotion_dropout = 0.2;
    std::string modalities = "EDA,BVP,TEMP";

    // training
    double pretext_lr = 5e-3;
    int pretext_batch = 32;
    int pretext_epochs = 20;
    double downstream_lr = 1e-3;
    int downstream_batch = 64;
    int downstream_epochs = 20;
    double weight_decay = 5e-7;
    double sgd_momentum = 0.0;
    std::string f1_average = "macro";  // or "weighted"

    std::uint64_t seed = 1;
    int jobs = 1;

    // Loads (with // comments allowed) and applies "key=value" overrides;
    // unknown keys are rejected.
    static RunConfig load(const std::string& path);
    void apply_override(const std::string& key_equals_value);
    std::string to_json() const;  // sorted keys; used for hashing and echo
    std::string hash() const;
    void save_effective(const std::string& path) const;

    nn::EncoderConfig encoder_config() const;
    transforms::TransformConfig transform_config() const;
    dsp::PreprocessConfig preprocess_config() const;
    std::vector<dsp::Modality> modality_list() const;
};

}  // namespace physiossl
