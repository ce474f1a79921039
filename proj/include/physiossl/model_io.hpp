// Checkpoint container and its versioned binary layout (documented in
// docs/formats.md). Round trips are bit-exact.
#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "physiossl/nn/network.hpp"

namespace physiossl {

struct ArrayBlob {
    std::string name;
    std::vector<long long> shape;
    std::string dtype;  // "f32" or "f64"
    std::vector<unsigned char> bytes;

    long long elements() const {
        long long n = 1;
        for (long long d : shape) n *= d;
        return n;
    }
};

struct Checkpoint {
    int version = 1;
    std::string stage = "pretrained";  // "pretrained" | "finetuned"
    std::uint64_t seed = 0;
    int emotion_classes = 0;  // 0 when the checkpoint carries no emotion head
    nn::EncoderConfig config;
    std::vector<ArrayBlob> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// EncoderConfig <-> JSON (used inside checkpoints and effective-config dumps)
std::string encoder_config_to_json(const nn::EncoderConfig& cfg);
nn::EncoderConfig encoder_config_from_json(const std::string& json_text);

// Extract / restore the named parameter arrays of a network.
template <class S>
std::vector<ArrayBlob> export_arrays(const nn::ParameterStore<S>& store) {
    std::vector<ArrayBlob> out;
    for (const nn::Param<S>* p : store.items()) {
        ArrayBlob b;
        b.name = p->name;
        b.shape = p->shape;
        b.dtype = sizeof(S) == 4 ? "f32" : "f64";
        b.bytes.resize(p->w.size() * sizeof(S));
        std::memcpy(b.bytes.data(), p->w.data(), b.bytes.size());
        out.push_back(std::move(b));
    }
    return out;
}

// Loads arrays by name. Arrays in the store but absent from the blob list
// are an error unless their name passes `optional_if` (used to let a
// pretrained checkpoint initialize a network that also has a fresh emotion
// head). Shape mismatches name the first offending array.
template <class S>
void import_arrays(nn::ParameterStore<S>& store, const std::vector<ArrayBlob>& blobs,
                   const std::function<bool(const std::string&)>& optional_if = nullptr) {
    for (nn::Param<S>* p : store.items()) {
        const ArrayBlob* found = nullptr;
        for (const ArrayBlob& b : blobs)
            if (b.name == p->name) {
                found = &b;
                break;
            }
        if (!found) {
            if (optional_if && optional_if(p->name)) continue;
            throw IoError("checkpoint: missing array '" + p->name + "'");
        }
        if (found->shape != p->shape) {
            std::string want, got;
            for (long long d : p->shape) want += (want.empty() ? "" : "x") + std::to_string(d);
            for (long long d : found->shape) got += (got.empty() ? "" : "x") + std::to_string(d);
            throw IoError("checkpoint: shape mismatch for array '" + p->name + "' (expected " +
                          want + ", file has " + got + ")");
        }
        const std::string want_dtype = sizeof(S) == 4 ? "f32" : "f64";
        if (found->dtype != want_dtype)
            throw IoError("checkpoint: dtype mismatch for array '" + p->name + "'");
        std::memcpy(p->w.data(), found->bytes.data(), found->bytes.size());
    }
}

template <class S>
Checkpoint make_checkpoint(const nn::Network<S>& net, const std::string& stage,
                           std::uint64_t seed) {
    Checkpoint c;
    c.stage = stage;
    c.seed = seed;
    c.config = net.config();
    c.emotion_classes = stage == "finetuned" ? net.emotion_classes() : 0;
    c.arrays = export_arrays(net.params());
    if (stage == "pretrained") {
        // a pretrained checkpoint retains the encoder and pretext heads only
        std::erase_if(c.arrays, [](const ArrayBlob& b) {
            return b.name.rfind("head.emotion", 0) == 0;
        });
    }
    return c;
}

}  // namespace physiossl
