#include "physiossl/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace physiossl {

using nlohmann::json;

namespace nn {

const char* pos_encoding_name(PosEncoding p) {
    switch (p) {
        case PosEncoding::None: return "none";
        case PosEncoding::Fixed: return "fixed";
        case PosEncoding::Learnable: return "learnable";
    }
    return "?";
}

PosEncoding pos_encoding_from_name(const std::string& s) {
    if (s == "none") return PosEncoding::None;
    if (s == "fixed") return PosEncoding::Fixed;
    if (s == "learnable") return PosEncoding::Learnable;
    throw ConfigError("unknown positional encoding: " + s);
}

const char* fusion_mode_name(FusionMode f) {
    switch (f) {
        case FusionMode::Intermediate: return "intermediate";
        case FusionMode::Early: return "early";
        case FusionMode::Late: return "late";
        case FusionMode::IntermediateOverall: return "intermediate_overall_loss";
    }
    return "?";
}

FusionMode fusion_mode_from_name(const std::string& s) {
    if (s == "intermediate") return FusionMode::Intermediate;
    if (s == "early") return FusionMode::Early;
    if (s == "late") return FusionMode::Late;
    if (s == "intermediate_overall_loss") return FusionMode::IntermediateOverall;
    throw ConfigError("unknown fusion mode: " + s);
}

}  // namespace nn

std::string encoder_config_to_json(const nn::EncoderConfig& cfg) {
    json j;
    j["window_len"] = cfg.window_len;
    std::vector<std::string> mods;
    for (auto m : cfg.modalities) mods.emplace_back(dsp::modality_name(m));
    j["modalities"] = mods;
    j["d_embed"] = cfg.d_embed;
    j["tcn_filters"] = cfg.tcn_filters;
    j["tcn_kernel"] = cfg.tcn_kernel;
    j["tcn_dilations"] = cfg.tcn_dilations;
    j["tcn_dropout"] = cfg.tcn_dropout;
    j["tcn_convs_per_block"] = cfg.tcn_convs_per_block;
    j["use_tcn"] = cfg.use_tcn;
    j["n_heads"] = cfg.n_heads;
    j["ff_dim"] = cfg.ff_dim;
    j["attn_dropout"] = cfg.attn_dropout;
    j["ff_dropout"] = cfg.ff_dropout;
    j["use_transformer"] = cfg.use_transformer;
    j["positional_encoding"] = nn::pos_encoding_name(cfg.positional_encoding);
    j["fusion"] = nn::fusion_mode_name(cfg.fusion);
    j["pretext_classes"] = cfg.pretext_classes;
    j["pretext_hidden"] = cfg.pretext_hidden;
    j["pretext_dropout"] = cfg.pretext_dropout;
    j["emotion_hidden"] = cfg.emotion_hidden;
    j["emotion_dropout"] = cfg.emotion_dropout;
    return j.dump();
}

nn::EncoderConfig encoder_config_from_json(const std::string& text) {
    json j = json::parse(text);
    nn::EncoderConfig cfg;
    cfg.window_len = j.at("window_len").get<int>();
    cfg.modalities.clear();
    for (const auto& s : j.at("modalities"))
        cfg.modalities.push_back(dsp::modality_from_name(s.get<std::string>()));
    cfg.d_embed = j.at("d_embed").get<int>();
    cfg.tcn_filters = j.at("tcn_filters").get<int>();
    cfg.tcn_kernel = j.at("tcn_kernel").get<int>();
    cfg.tcn_dilations = j.at("tcn_dilations").get<std::vector<int>>();
    cfg.tcn_dropout = j.at("tcn_dropout").get<double>();
    cfg.tcn_convs_per_block = j.at("tcn_convs_per_block").get<int>();
    cfg.use_tcn = j.at("use_tcn").get<bool>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.ff_dim = j.at("ff_dim").get<int>();
    cfg.attn_dropout = j.at("attn_dropout").get<double>();
    cfg.ff_dropout = j.at("ff_dropout").get<double>();
    cfg.use_transformer = j.at("use_transformer").get<bool>();
    cfg.positional_encoding = nn::pos_encoding_from_name(j.at("positional_encoding").get<std::string>());
    cfg.fusion = nn::fusion_mode_from_name(j.at("fusion").get<std::string>());
    cfg.pretext_classes = j.at("pretext_classes").get<int>();
    cfg.pretext_hidden = j.at("pretext_hidden").get<int>();
    cfg.pretext_dropout = j.at("pretext_dropout").get<double>();
    cfg.emotion_hidden = j.at("emotion_hidden").get<int>();
    cfg.emotion_dropout = j.at("emotion_dropout").get<double>();
    return cfg;
}

// Binary checkpoint layout (little-endian, see docs/formats.md):
//   magic "PSSLCKPT" | u32 version | u8 stage | u64 seed | u32 emotion_classes
//   | u32 config_len | config JSON | u32 n_arrays
//   then per array: u32 name_len | name | u32 dtype_len | dtype
//                   | u32 ndim | i64 dims[ndim] | u64 byte_len | raw data

namespace {

constexpr char kMagic[8] = {'P', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};

template <class T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f, const std::string& path) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw IoError(path + ": truncated checkpoint file");
    return v;
}

void write_str(std::ofstream& f, const std::string& s) {
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::ifstream& f, const std::string& path) {
    const auto len = read_pod<std::uint32_t>(f, path);
    std::string s(len, '\0');
    f.read(s.data(), len);
    if (!f) throw IoError(path + ": truncated checkpoint file");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint writer assumes a little-endian host");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kMagic, 8);
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ckpt.version));
    write_pod<std::uint8_t>(f, ckpt.stage == "finetuned" ? 1 : 0);
    write_pod<std::uint64_t>(f, ckpt.seed);
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ckpt.emotion_classes));
    write_str(f, encoder_config_to_json(ckpt.config));
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const ArrayBlob& a : ckpt.arrays) {
        write_str(f, a.name);
        write_str(f, a.dtype);
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(a.shape.size()));
        for (long long d : a.shape) write_pod<std::int64_t>(f, d);
        write_pod<std::uint64_t>(f, a.bytes.size());
        f.write(reinterpret_cast<const char*>(a.bytes.data()),
                static_cast<std::streamsize>(a.bytes.size()));
    }
    if (!f) throw IoError("write failure for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError(path + ": not a checkpoint file (bad magic)");
    Checkpoint c;
    c.version = static_cast<int>(read_pod<std::uint32_t>(f, path));
    if (c.version != 1)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(c.version));
    c.stage = read_pod<std::uint8_t>(f, path) == 1 ? "finetuned" : "pretrained";
    c.seed = read_pod<std::uint64_t>(f, path);
    c.emotion_classes = static_cast<int>(read_pod<std::uint32_t>(f, path));
    c.config = encoder_config_from_json(read_str(f, path));
    const auto n = read_pod<std::uint32_t>(f, path);
    c.arrays.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        ArrayBlob& a = c.arrays[i];
        a.name = read_str(f, path);
        a.dtype = read_str(f, path);
        const auto ndim = read_pod<std::uint32_t>(f, path);
        a.shape.resize(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) a.shape[d] = read_pod<std::int64_t>(f, path);
        const auto len = read_pod<std::uint64_t>(f, path);
        const std::size_t elem = a.dtype == "f32" ? 4 : 8;
        if (len != static_cast<std::uint64_t>(a.elements()) * elem)
            throw IoError(path + ": array '" + a.name + "' length disagrees with its shape");
        a.bytes.resize(len);
        f.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(len));
        if (!f) throw IoError(path + ": truncated checkpoint file");
    }
    return c;
}

}  // namespace physiossl
