#include "physiossl/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "physiossl/common.hpp"

namespace physiossl {

using nlohmann::json;

namespace {

// Field table: one place defining the flat key space.
template <class F>
void for_each_field(RunConfig& c, F&& f) {
    f("config_version", c.config_version);
    f("target_fs", c.target_fs);
    f("window_s", c.window_s);
    f("overlap_frac", c.overlap_frac);
    f("cutoff_eda", c.cutoff_eda);
    f("cutoff_bvp", c.cutoff_bvp);
    f("cutoff_temp", c.cutoff_temp);
    f("filter_order", c.filter_order);
    f("snr_db", c.snr_db);
    f("mw_sigma", c.mw_sigma);
    f("mw_knots", c.mw_knots);
    f("perm_segments", c.perm_segments);
    f("tw_segments", c.tw_segments);
    f("tw_stretch", c.tw_stretch);
    f("crop_ratio", c.crop_ratio);
    f("independent_per_modality", c.independent_per_modality);
    f("d_embed", c.d_embed);
    f("tcn_filters", c.tcn_filters);
    f("tcn_kernel", c.tcn_kernel);
    f("tcn_dilations", c.tcn_dilations);
    f("tcn_dropout", c.tcn_dropout);
    f("tcn_convs_per_block", c.tcn_convs_per_block);
    f("use_tcn", c.use_tcn);
    f("n_heads", c.n_heads);
    f("ff_dim", c.ff_dim);
    f("attn_dropout", c.attn_dropout);
    f("ff_dropout", c.ff_dropout);
    f("use_transformer", c.use_transformer);
    f("positional_encoding", c.positional_encoding);
    f("fusion", c.fusion);
    f("pretext_hidden", c.pretext_hidden);
    f("pretext_dropout", c.pretext_dropout);
    f("emotion_hidden", c.emotion_hidden);
    f("emotion_dropout", c.emotion_dropout);
    f("modalities", c.modalities);
    f("pretext_lr", c.pretext_lr);
    f("pretext_batch", c.pretext_batch);
    f("pretext_epochs", c.pretext_epochs);
    f("downstream_lr", c.downstream_lr);
    f("downstream_batch", c.downstream_batch);
    f("downstream_epochs", c.downstream_epochs);
    f("weight_decay", c.weight_decay);
    f("sgd_momentum", c.sgd_momentum);
    f("f1_average", c.f1_average);
    f("seed", c.seed);
    f("jobs", c.jobs);
}

template <class T>
void assign_from_json(const json& v, T& out) {
    out = v.get<T>();
}

// "inf" is accepted for snr_db (disables the noise transform)
void assign_from_json(const json& v, double& out) {
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf" || s == "+inf") {
            out = std::numeric_limits<double>::infinity();
            return;
        }
        throw ConfigError("config: cannot parse '" + s + "' as a number");
    }
    out = v.get<double>();
}

json field_to_json(const int& v) { return v; }
json field_to_json(const bool& v) { return v; }
json field_to_json(const std::uint64_t& v) { return v; }
json field_to_json(const std::string& v) { return v; }
json field_to_json(const std::vector<int>& v) { return v; }
json field_to_json(const double& v) {
    if (std::isinf(v)) return "inf";
    return v;
}

template <class T>
void assign_from_string(const std::string& s, T& out) {
    assign_from_json(json::parse(s), out);
}
void assign_from_string(const std::string& s, std::string& out) { out = s; }
void assign_from_string(const std::string& s, double& out) {
    if (s == "inf" || s == "+inf") {
        out = std::numeric_limits<double>::infinity();
        return;
    }
    out = std::stod(s);
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(f, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    RunConfig c;
    std::set<std::string> known;
    for_each_field(c, [&](const char* key, auto& field) {
        known.insert(key);
        if (j.contains(key)) {
            try {
                assign_from_json(j.at(key), field);
            } catch (const json::exception& e) {
                throw ConfigError(path + ": key '" + std::string(key) + "': " + e.what());
            }
        }
    });
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError(path + ": unknown config key '" + it.key() + "'");
    return c;
}

void RunConfig::apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must be key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    bool found = false;
    for_each_field(*this, [&](const char* k, auto& field) {
        if (key == k) {
            found = true;
            try {
                assign_from_string(value, field);
            } catch (const std::exception& e) {
                throw ConfigError("override '" + kv + "': " + e.what());
            }
        }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_json() const {
    json j;
    for_each_field(const_cast<RunConfig&>(*this),
                   [&](const char* key, auto& field) { j[key] = field_to_json(field); });
    return j.dump(2);
}

std::string RunConfig::hash() const { return to_hex(fnv1a64(to_json())); }

void RunConfig::save_effective(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write effective config: " + path);
    f << to_json() << "\n";
}

std::vector<dsp::Modality> RunConfig::modality_list() const {
    std::vector<dsp::Modality> mods;
    std::stringstream ss(modalities);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        mods.push_back(dsp::modality_from_name(tok));
    }
    if (mods.empty()) throw ConfigError("config: empty modality list");
    return mods;
}

nn::EncoderConfig RunConfig::encoder_config() const {
    nn::EncoderConfig e;
    e.window_len = static_cast<int>(std::llround(window_s * target_fs));
    e.modalities = modality_list();
    e.d_embed = d_embed;
    e.tcn_filters = tcn_filters;
    e.tcn_kernel = tcn_kernel;
    e.tcn_dilations = tcn_dilations;
    e.tcn_dropout = tcn_dropout;
    e.tcn_convs_per_block = tcn_convs_per_block;
    e.use_tcn = use_tcn;
    e.n_heads = n_heads;
    e.ff_dim = ff_dim;
    e.attn_dropout = attn_dropout;
    e.ff_dropout = ff_dropout;
    e.use_transformer = use_transformer;
    e.positional_encoding = nn::pos_encoding_from_name(positional_encoding);
    e.fusion = nn::fusion_mode_from_name(fusion);
    e.pretext_hidden = pretext_hidden;
    e.pretext_dropout = pretext_dropout;
    e.emotion_hidden = emotion_hidden;
    e.emotion_dropout = emotion_dropout;
    e.validate();
    return e;
}

transforms::TransformConfig RunConfig::transform_config() const {
    transforms::TransformConfig t;
    t.snr_db = snr_db;
    t.mw_sigma = mw_sigma;
    t.mw_knots = mw_knots;
    t.perm_segments = perm_segments;
    t.tw_segments = tw_segments;
    t.tw_stretch = tw_stretch;
    t.crop_ratio = crop_ratio;
    t.independent_per_modality = independent_per_modality;
    t.validate();
    return t;
}

dsp::PreprocessConfig RunConfig::preprocess_config() const {
    dsp::PreprocessConfig p;
    p.cutoffs = {{dsp::Modality::EDA, cutoff_eda},
                 {dsp::Modality::BVP, cutoff_bvp},
                 {dsp::Modality::TEMP, cutoff_temp}};
    p.filter_order = filter_order;
    p.target_fs = target_fs;
    p.window_s = window_s;
    p.overlap_frac = overlap_frac;
    return p;
}

}  // namespace physiossl
