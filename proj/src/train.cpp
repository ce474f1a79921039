#include "physiossl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "json.hpp"
#include "physiossl/nn/optimizer.hpp"
#include "physiossl/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace physiossl::train {

using nn::RunMode;
using nn::Tensor;
using transforms::PretextSample;

void set_jobs(int jobs) {
#ifdef _OPENMP
    if (jobs > 0) omp_set_num_threads(jobs);
#else
    (void)jobs;
#endif
}

const char* downstream_mode_name(DownstreamMode m) {
    switch (m) {
        case DownstreamMode::Frozen: return "frozen";
        case DownstreamMode::Finetuned: return "finetuned";
        case DownstreamMode::Scratch: return "scratch";
    }
    return "?";
}

DownstreamMode downstream_mode_from_name(const std::string& s) {
    if (s == "frozen") return DownstreamMode::Frozen;
    if (s == "finetuned") return DownstreamMode::Finetuned;
    if (s == "scratch") return DownstreamMode::Scratch;
    throw ConfigError("unknown downstream mode: " + s);
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

namespace {

// global column index of each active modality
std::vector<int> modality_columns(const nn::EncoderConfig& cfg) {
    std::vector<int> cols;
    cols.reserve(cfg.modalities.size());
    for (dsp::Modality m : cfg.modalities) cols.push_back(static_cast<int>(m));
    return cols;
}

void fill_batch(const std::vector<const double*>& rows, int n_steps,
                const std::vector<int>& cols, Tensor<float>& x) {
    const auto b = static_cast<long long>(rows.size());
    const auto m = static_cast<long long>(cols.size());
    x.resize(b, n_steps, m);
    nn::parallel_for(b, [&](long long bi) {
        const double* src = rows[static_cast<std::size_t>(bi)];
        float* dst = x.data() + bi * n_steps * m;
        for (long long t = 0; t < n_steps; ++t)
            for (long long j = 0; j < m; ++j)
                dst[t * m + j] =
                    static_cast<float>(src[t * dsp::kNumModalities + cols[static_cast<std::size_t>(j)]]);
    });
}

// per-head pretext labels for a batch
std::vector<std::vector<int>> pretext_labels(const std::vector<const PretextSample*>& batch,
                                             const nn::EncoderConfig& cfg, int n_heads) {
    const auto cols = modality_columns(cfg);
    std::vector<std::vector<int>> labels(static_cast<std::size_t>(n_heads));
    if (n_heads == static_cast<int>(cols.size())) {
        for (int h = 0; h < n_heads; ++h) {
            labels[static_cast<std::size_t>(h)].reserve(batch.size());
            for (const PretextSample* s : batch)
                labels[static_cast<std::size_t>(h)].push_back(
                    s->transform_labels[static_cast<std::size_t>(cols[static_cast<std::size_t>(h)])]);
        }
    } else {
        // single shared head: the per-modality labels must agree
        labels[0].reserve(batch.size());
        for (const PretextSample* s : batch) {
            const int l = s->transform_labels[static_cast<std::size_t>(cols[0])];
            for (int c : cols)
                if (s->transform_labels[static_cast<std::size_t>(c)] != l)
                    throw ConfigError(
                        "single-head fusion variants require the same transform label on every "
                        "modality (build the dataset without independent_per_modality)");
            labels[0].push_back(l);
        }
    }
    return labels;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

int argmax_row(const float* row, long long n) {
    int best = 0;
    for (long long j = 1; j < n; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

PretrainResult pretrain(const std::vector<PretextSample>& samples, const nn::EncoderConfig& cfg,
                        const TrainOpts& opts, const std::vector<std::size_t>& train_idx) {
    if (samples.empty()) throw InputError("pretrain: empty dataset");
    for (const PretextSample& s : samples)
        for (int l : s.transform_labels)
            if (l < 0 || l >= cfg.pretext_classes)
                throw InputError("pretrain: transform label outside the configured class count");

    PretrainResult result;
    result.net = std::make_shared<NetF>(cfg, 0, opts.seed);
    NetF& net = *result.net;
    nn::Sgd<float> sgd(opts.lr, opts.weight_decay, opts.momentum);
    const auto cols = modality_columns(cfg);
    const int n_heads = net.pretext_head_count();

    std::vector<std::size_t> idx = train_idx.empty() ? all_indices(samples.size()) : train_idx;
    const int n_steps = samples.front().n_steps;
    if (n_steps != cfg.window_len)
        throw ConfigError("pretrain: sample length differs from config window_len");

    Tensor<float> x;
    std::vector<Tensor<float>> dlogits(static_cast<std::size_t>(n_heads));
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(opts.seed, 0x50FFull, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(idx);
        Rng drop_rng(derive_seed(opts.seed, 0xD120ull, static_cast<std::uint64_t>(epoch)));

        double loss_sum = 0.0;
        long long n_batches = 0;
        std::vector<long long> correct(static_cast<std::size_t>(n_heads), 0);
        long long seen = 0;

        for (std::size_t off = 0; off < idx.size(); off += static_cast<std::size_t>(opts.batch)) {
            const std::size_t take = std::min(static_cast<std::size_t>(opts.batch),
                                              idx.size() - off);
            std::vector<const PretextSample*> batch(take);
            std::vector<const double*> rows(take);
            for (std::size_t i = 0; i < take; ++i) {
                batch[i] = &samples[idx[off + i]];
                rows[i] = batch[i]->values.data();
            }
            fill_batch(rows, n_steps, cols, x);
            const auto labels = pretext_labels(batch, cfg, n_heads);

            net.params().zero_grads();
            RunMode mode = nn::train_mode(drop_rng);
            auto& logits = net.forward_pretext(x, mode);
            double total = 0.0;
            for (int h = 0; h < n_heads; ++h)
                total += nn::cross_entropy(logits[static_cast<std::size_t>(h)],
                                           labels[static_cast<std::size_t>(h)],
                                           &dlogits[static_cast<std::size_t>(h)]);
            if (!std::isfinite(total))
                throw NumericError("pretrain diverged: non-finite loss at epoch " +
                                   std::to_string(epoch + 1));
            net.backward_pretext(dlogits);
            net.params().check_finite_grads();
            sgd.step(net.params());

            loss_sum += total;
            ++n_batches;
            seen += static_cast<long long>(take);
            for (int h = 0; h < n_heads; ++h) {
                const Tensor<float>& lg = logits[static_cast<std::size_t>(h)];
                for (std::size_t i = 0; i < take; ++i)
                    if (argmax_row(lg.data() + static_cast<long long>(i) * lg.c, lg.c) ==
                        labels[static_cast<std::size_t>(h)][i])
                        ++correct[static_cast<std::size_t>(h)];
            }
        }

        EpochLog log;
        log.epoch = epoch + 1;
        log.loss = loss_sum / static_cast<double>(std::max<long long>(1, n_batches));
        for (int h = 0; h < n_heads; ++h)
            log.head_accuracy.push_back(static_cast<double>(correct[static_cast<std::size_t>(h)]) /
                                        static_cast<double>(std::max<long long>(1, seen)));
        result.logs.push_back(log);
        if (opts.verbose) {
            std::fprintf(stderr, "[pretrain] epoch %d/%d loss %.4f", epoch + 1, opts.epochs,
                         log.loss);
            for (double a : log.head_accuracy) std::fprintf(stderr, " acc %.3f", a);
            std::fprintf(stderr, "\n");
        }
    }
    return result;
}

double pretext_accuracy(NetF& net, const std::vector<PretextSample>& samples,
                        const std::vector<std::size_t>& idx, int batch) {
    const nn::EncoderConfig& cfg = net.config();
    const auto cols = modality_columns(cfg);
    const int n_heads = net.pretext_head_count();
    Tensor<float> x;
    std::vector<long long> correct(static_cast<std::size_t>(n_heads), 0);
    long long seen = 0;
    for (std::size_t off = 0; off < idx.size(); off += static_cast<std::size_t>(batch)) {
        const std::size_t take = std::min(static_cast<std::size_t>(batch), idx.size() - off);
        std::vector<const PretextSample*> b(take);
        std::vector<const double*> rows(take);
        for (std::size_t i = 0; i < take; ++i) {
            b[i] = &samples[idx[off + i]];
            rows[i] = b[i]->values.data();
        }
        fill_batch(rows, cfg.window_len, cols, x);
        const auto labels = pretext_labels(b, cfg, n_heads);
        RunMode mode = nn::eval_mode();
        auto& logits = net.forward_pretext(x, mode);
        for (int h = 0; h < n_heads; ++h)
            for (std::size_t i = 0; i < take; ++i)
                if (argmax_row(logits[static_cast<std::size_t>(h)].data() +
                                   static_cast<long long>(i) * logits[static_cast<std::size_t>(h)].c,
                               logits[static_cast<std::size_t>(h)].c) ==
                    labels[static_cast<std::size_t>(h)][i])
                    ++correct[static_cast<std::size_t>(h)];
        seen += static_cast<long long>(take);
    }
    double acc = 0.0;
    for (long long c : correct)
        acc += static_cast<double>(c) / static_cast<double>(std::max<long long>(1, seen));
    return acc / static_cast<double>(n_heads);
}

nn::PretextLossValue pretext_loss_eval(NetF& net, const std::vector<PretextSample>& samples,
                                       const std::vector<std::size_t>& idx, int batch) {
    const nn::EncoderConfig& cfg = net.config();
    const auto cols = modality_columns(cfg);
    const int n_heads = net.pretext_head_count();
    Tensor<float> x;
    nn::PretextLossValue out;
    out.per_modality.assign(static_cast<std::size_t>(n_heads), 0.0);
    long long n_batches = 0;
    for (std::size_t off = 0; off < idx.size(); off += static_cast<std::size_t>(batch)) {
        const std::size_t take = std::min(static_cast<std::size_t>(batch), idx.size() - off);
        std::vector<const PretextSample*> b(take);
        std::vector<const double*> rows(take);
        for (std::size_t i = 0; i < take; ++i) {
            b[i] = &samples[idx[off + i]];
            rows[i] = b[i]->values.data();
        }
        fill_batch(rows, cfg.window_len, cols, x);
        const auto labels = pretext_labels(b, cfg, n_heads);
        RunMode mode = nn::eval_mode();
        auto& logits = net.forward_pretext(x, mode);
        for (int h = 0; h < n_heads; ++h)
            out.per_modality[static_cast<std::size_t>(h)] +=
                nn::cross_entropy(logits[static_cast<std::size_t>(h)],
                                  labels[static_cast<std::size_t>(h)]);
        ++n_batches;
    }
    for (double& v : out.per_modality) v /= static_cast<double>(std::max<long long>(1, n_batches));
    out.total = 0.0;
    for (double v : out.per_modality) out.total += v;
    return out;
}

// ---------------------------------------------------------------------------
// downstream
// ---------------------------------------------------------------------------

namespace {

// emotion logits -> predictions; late fusion averages the per-head softmax
std::vector<int> decide(const std::vector<Tensor<float>>& logits) {
    const long long b = logits[0].b;
    const long long c = logits[0].c;
    std::vector<int> preds(static_cast<std::size_t>(b));
    if (logits.size() == 1) {
        for (long long i = 0; i < b; ++i)
            preds[static_cast<std::size_t>(i)] = argmax_row(logits[0].data() + i * c, c);
        return preds;
    }
    std::vector<double> probs(static_cast<std::size_t>(c));
    for (long long i = 0; i < b; ++i) {
        std::fill(probs.begin(), probs.end(), 0.0);
        for (const Tensor<float>& lg : logits) {
            const float* row = lg.data() + i * c;
            double mx = row[0];
            for (long long j = 1; j < c; ++j) mx = std::max<double>(mx, row[j]);
            double sum = 0.0;
            for (long long j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
            for (long long j = 0; j < c; ++j)
                probs[static_cast<std::size_t>(j)] +=
                    std::exp(static_cast<double>(row[j]) - mx) / sum;
        }
        int best = 0;
        for (long long j = 1; j < c; ++j)
            if (probs[static_cast<std::size_t>(j)] > probs[static_cast<std::size_t>(best)])
                best = static_cast<int>(j);
        preds[static_cast<std::size_t>(i)] = best;
    }
    return preds;
}

struct FeatureSet {
    // one tensor per emotion head group: [n_windows x 1 x dim]
    std::vector<Tensor<float>> groups;
    long long n = 0;
};

FeatureSet encode_features(NetF& net, const std::vector<dsp::Window>& windows, int batch) {
    const nn::EncoderConfig& cfg = net.config();
    const auto cols = modality_columns(cfg);
    FeatureSet fs;
    fs.n = static_cast<long long>(windows.size());
    Tensor<float> x;
    for (std::size_t off = 0; off < windows.size(); off += static_cast<std::size_t>(batch)) {
        const std::size_t take = std::min(static_cast<std::size_t>(batch), windows.size() - off);
        std::vector<const double*> rows(take);
        for (std::size_t i = 0; i < take; ++i) rows[i] = windows[off + i].values.data();
        fill_batch(rows, cfg.window_len, cols, x);
        auto feats = net.encode_emotion_features(x);
        if (fs.groups.empty()) {
            fs.groups.resize(feats.size());
            for (std::size_t g = 0; g < feats.size(); ++g)
                fs.groups[g].resize(fs.n, 1, feats[g].c);
        }
        for (std::size_t g = 0; g < feats.size(); ++g)
            std::copy(feats[g].data(), feats[g].data() + static_cast<long long>(take) * feats[g].c,
                      fs.groups[g].data() + static_cast<long long>(off) * feats[g].c);
    }
    return fs;
}

void gather_features(const FeatureSet& fs, const std::vector<std::size_t>& idx,
                     std::vector<Tensor<float>>& out) {
    out.resize(fs.groups.size());
    for (std::size_t g = 0; g < fs.groups.size(); ++g) {
        const long long dim = fs.groups[g].c;
        out[g].resize(static_cast<long long>(idx.size()), 1, dim);
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy(fs.groups[g].data() + static_cast<long long>(idx[i]) * dim,
                      fs.groups[g].data() + static_cast<long long>(idx[i] + 1) * dim,
                      out[g].data() + static_cast<long long>(i) * dim);
    }
}

// Fresh, seeded re-initialization of the emotion head arrays.
void reinit_emotion_head(NetF& net, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xE40Dull));
    for (nn::Param<float>* p : net.params().items()) {
        if (!NetF::is_emotion_head_param(p->name)) continue;
        if (p->name.ends_with(".w")) {
            nn::init_uniform_fan_in(*p, p->shape[0], rng);
        } else if (p->name.ends_with(".gamma") || p->name.ends_with(".rvar")) {
            std::fill(p->w.begin(), p->w.end(), 1.0f);
        } else {
            std::fill(p->w.begin(), p->w.end(), 0.0f);
        }
    }
}

// Trains the emotion head(s) on cached features (the frozen fast path;
// numerically identical to running the eval-mode encoder every epoch).
std::vector<EpochLog> train_head_on_features(NetF& net, const FeatureSet& fs,
                                             const std::vector<std::size_t>& train_rows,
                                             const std::vector<int>& labels,
                                             const TrainOpts& opts) {
    nn::Sgd<float> sgd(opts.lr, opts.weight_decay, opts.momentum);
    std::vector<std::size_t> order = train_rows;
    std::vector<EpochLog> logs;
    std::vector<Tensor<float>> feats, dlogits(net.emotion_head_count());
    std::map<std::size_t, int> label_of;
    for (std::size_t i = 0; i < train_rows.size(); ++i) label_of[train_rows[i]] = labels[i];

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(opts.seed, 0x50FFull, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng drop_rng(derive_seed(opts.seed, 0xD120ull, static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0;
        long long n_batches = 0, correct = 0, seen = 0;
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(opts.batch)) {
            const std::size_t take = std::min(static_cast<std::size_t>(opts.batch),
                                              order.size() - off);
            std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(off),
                                          order.begin() + static_cast<std::ptrdiff_t>(off + take));
            std::vector<int> y(take);
            for (std::size_t i = 0; i < take; ++i) y[i] = label_of[rows[i]];
            gather_features(fs, rows, feats);
            net.params().zero_grads();
            RunMode mode = nn::train_mode(drop_rng);
            auto& logits = net.emotion_head_forward(feats, mode);
            double total = 0.0;
            for (std::size_t h = 0; h < logits.size(); ++h)
                total += nn::cross_entropy(logits[h], y, &dlogits[h]);
            if (!std::isfinite(total))
                throw NumericError("downstream head training diverged (non-finite loss)");
            net.emotion_head_backward(dlogits);
            net.params().check_finite_grads();
            sgd.step(net.params(), NetF::is_emotion_head_param);
            loss_sum += total;
            ++n_batches;
            const auto preds = decide(logits);
            for (std::size_t i = 0; i < take; ++i)
                if (preds[i] == y[i]) ++correct;
            seen += static_cast<long long>(take);
        }
        EpochLog log;
        log.epoch = epoch + 1;
        log.loss = loss_sum / static_cast<double>(std::max<long long>(1, n_batches));
        log.head_accuracy = {static_cast<double>(correct) /
                             static_cast<double>(std::max<long long>(1, seen))};
        logs.push_back(log);
    }
    return logs;
}

std::vector<EpochLog> train_full_net(NetF& net, const std::vector<dsp::Window>& windows,
                                     const std::vector<int>& labels, const TrainOpts& opts) {
    const nn::EncoderConfig& cfg = net.config();
    const auto cols = modality_columns(cfg);
    nn::Sgd<float> sgd(opts.lr, opts.weight_decay, opts.momentum);
    std::vector<std::size_t> order = all_indices(windows.size());
    std::vector<EpochLog> logs;
    Tensor<float> x;
    std::vector<Tensor<float>> dlogits(net.emotion_head_count());

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(opts.seed, 0x50FFull, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng drop_rng(derive_seed(opts.seed, 0xD120ull, static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0;
        long long n_batches = 0, correct = 0, seen = 0;
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(opts.batch)) {
            const std::size_t take = std::min(static_cast<std::size_t>(opts.batch),
                                              order.size() - off);
            std::vector<const double*> rows(take);
            std::vector<int> y(take);
            for (std::size_t i = 0; i < take; ++i) {
                rows[i] = windows[order[off + i]].values.data();
                y[i] = labels[order[off + i]];
            }
            fill_batch(rows, cfg.window_len, cols, x);
            net.params().zero_grads();
            RunMode mode = nn::train_mode(drop_rng);
            auto& logits = net.forward_emotion(x, mode);
            double total = 0.0;
            for (std::size_t h = 0; h < logits.size(); ++h)
                total += nn::cross_entropy(logits[h], y, &dlogits[h]);
            if (!std::isfinite(total))
                throw NumericError("downstream training diverged (non-finite loss)");
            net.backward_emotion(dlogits);
            net.params().check_finite_grads();
            sgd.step(net.params());
            loss_sum += total;
            ++n_batches;
            const auto preds = decide(logits);
            for (std::size_t i = 0; i < take; ++i)
                if (preds[i] == y[i]) ++correct;
            seen += static_cast<long long>(take);
        }
        EpochLog log;
        log.epoch = epoch + 1;
        log.loss = loss_sum / static_cast<double>(std::max<long long>(1, n_batches));
        log.head_accuracy = {static_cast<double>(correct) /
                             static_cast<double>(std::max<long long>(1, seen))};
        logs.push_back(log);
        if (opts.verbose)
            std::fprintf(stderr, "[train] epoch %d/%d loss %.4f acc %.3f\n", epoch + 1,
                         opts.epochs, log.loss, log.head_accuracy[0]);
    }
    return logs;
}

}  // namespace

std::vector<int> EmotionModel::predict(const std::vector<dsp::Window>& windows, int batch) const {
    const nn::EncoderConfig& cfg = net->config();
    const auto cols = modality_columns(cfg);
    Tensor<float> x;
    std::vector<int> preds;
    preds.reserve(windows.size());
    for (std::size_t off = 0; off < windows.size(); off += static_cast<std::size_t>(batch)) {
        const std::size_t take = std::min(static_cast<std::size_t>(batch), windows.size() - off);
        std::vector<const double*> rows(take);
        for (std::size_t i = 0; i < take; ++i) rows[i] = windows[off + i].values.data();
        fill_batch(rows, cfg.window_len, cols, x);
        RunMode mode = nn::eval_mode();
        auto& logits = net->forward_emotion(x, mode);
        const auto p = decide(logits);
        preds.insert(preds.end(), p.begin(), p.end());
    }
    return preds;
}

EmotionModel train_downstream(const std::vector<dsp::Window>& windows,
                              const std::vector<int>& labels, int classes, DownstreamMode mode,
                              const Checkpoint* ckpt, const nn::EncoderConfig& cfg,
                              const TrainOpts& opts) {
    if (windows.empty()) throw InputError("train_downstream: no training windows");
    if (windows.size() != labels.size())
        throw InputError("train_downstream: window/label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= classes) throw InputError("train_downstream: label out of range");
    if (mode == DownstreamMode::Scratch && ckpt)
        throw ConfigError("scratch mode must not receive a checkpoint");
    if (mode != DownstreamMode::Scratch && !ckpt)
        throw ConfigError(std::string(downstream_mode_name(mode)) +
                          " mode requires a pretrained checkpoint");

    const nn::EncoderConfig& netcfg = ckpt ? ckpt->config : cfg;
    EmotionModel model;
    model.classes = classes;
    model.net = std::make_shared<NetF>(netcfg, classes, opts.seed);
    if (ckpt) {
        const bool emotion_optional = ckpt->stage == "pretrained";
        import_arrays(model.net->params(), ckpt->arrays,
                      [&](const std::string& name) {
                          return emotion_optional && NetF::is_emotion_head_param(name);
                      });
    }

    if (mode == DownstreamMode::Frozen) {
        FeatureSet fs = encode_features(*model.net, windows, std::max(opts.batch, 64));
        model.logs = train_head_on_features(*model.net, fs, all_indices(windows.size()), labels,
                                            opts);
    } else {
        model.logs = train_full_net(*model.net, windows, labels, opts);
    }
    return model;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                        int n_classes, const std::string& average) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw InputError("compute_metrics: empty or mismatched inputs");
    if (average != "macro" && average != "weighted")
        throw ConfigError("compute_metrics: average must be macro or weighted");

    long long correct = 0;
    std::vector<long long> tp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long long> fp(static_cast<std::size_t>(n_classes), 0);
    std::vector<long long> fn(static_cast<std::size_t>(n_classes), 0);
    std::vector<long long> support(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], y = labels[i];
        if (p < 0 || p >= n_classes || y < 0 || y >= n_classes)
            throw InputError("compute_metrics: class id out of range");
        ++support[static_cast<std::size_t>(y)];
        if (p == y) {
            ++correct;
            ++tp[static_cast<std::size_t>(p)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(y)];
        }
    }
    Metrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(predictions.size());
    double f1_sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        const auto tpc = static_cast<double>(tp[static_cast<std::size_t>(c)]);
        const auto fpc = static_cast<double>(fp[static_cast<std::size_t>(c)]);
        const auto fnc = static_cast<double>(fn[static_cast<std::size_t>(c)]);
        const double prec = (tpc + fpc) > 0.0 ? tpc / (tpc + fpc) : 0.0;
        const double rec = (tpc + fnc) > 0.0 ? tpc / (tpc + fnc) : 0.0;
        const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        if (average == "macro")
            f1_sum += f1 / static_cast<double>(n_classes);
        else
            f1_sum += f1 * static_cast<double>(support[static_cast<std::size_t>(c)]) /
                      static_cast<double>(predictions.size());
    }
    m.f1 = f1_sum;
    return m;
}

void task_labels(const std::vector<dsp::Window>& windows, const data::TaskDef& task,
                 std::vector<dsp::Window>& out_windows, std::vector<int>& out_labels) {
    out_windows.clear();
    out_labels.clear();
    for (const dsp::Window& w : windows) {
        if (!w.label) continue;
        auto it = task.label_map.find(*w.label);
        if (it == task.label_map.end())
            throw ConfigError("task '" + task.task_id + "': raw label " +
                              std::to_string(*w.label) + " missing from label_map");
        out_windows.push_back(w);
        out_labels.push_back(it->second);
    }
}

// ---------------------------------------------------------------------------
// LOSO
// ---------------------------------------------------------------------------

namespace {

struct FoldData {
    std::vector<std::size_t> train_rows;  // indices into the labeled window list
    std::vector<std::size_t> test_rows;
};

// Per-class subsample of the training rows; deterministic in (seed, fold).
std::vector<std::size_t> subsample_rows(const std::vector<std::size_t>& rows,
                                        const std::vector<int>& labels, long long per_class,
                                        std::uint64_t seed, std::size_t fold) {
    if (per_class <= 0) return rows;
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t r : rows) by_class[labels[r]].push_back(r);
    std::vector<std::size_t> keep;
    for (auto& [cls, members] : by_class) {
        Rng rng(derive_seed(seed, 0x5A3Aull + static_cast<std::uint64_t>(cls),
                            static_cast<std::uint64_t>(fold)));
        rng.shuffle(members);
        const std::size_t k = std::min<std::size_t>(members.size(),
                                                    static_cast<std::size_t>(per_class));
        keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

}  // namespace

data::MetricsReport evaluate_loso(const data::WindowSet& ws, const data::TaskDef& task,
                                  DownstreamMode mode, const Checkpoint* ckpt,
                                  const nn::EncoderConfig& cfg, const TrainOpts& opts,
                                  const LosoOptions& loso) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<dsp::Window> windows;
    std::vector<int> labels;
    task_labels(ws.windows, task, windows, labels);
    if (windows.empty()) throw InputError("evaluate_loso: no labeled windows for task " + task.task_id);

    std::vector<std::string> subjects;
    {
        std::set<std::string> seen;
        for (const auto& w : windows)
            if (seen.insert(w.subject_id).second) subjects.push_back(w.subject_id);
    }
    if (subjects.size() < 2) throw InputError("evaluate_loso: need at least 2 subjects");

    data::MetricsReport report;
    report.task_id = task.task_id;
    report.seed = opts.seed;
    report.dataset_id = ws.dataset_id;
    report.manifest_hash = ws.manifest_hash;

    // Frozen mode: the encoder is identical in every fold, so window
    // features are computed once and each fold trains only its head.
    std::unique_ptr<NetF> frozen_net;
    FeatureSet frozen_features;
    if (mode == DownstreamMode::Frozen) {
        if (!ckpt) throw ConfigError("frozen mode requires a pretrained checkpoint");
        frozen_net = std::make_unique<NetF>(ckpt->config, task.classes, opts.seed);
        import_arrays(frozen_net->params(), ckpt->arrays, [&](const std::string& name) {
            return ckpt->stage == "pretrained" && NetF::is_emotion_head_param(name);
        });
        frozen_features = encode_features(*frozen_net, windows, std::max(opts.batch, 64));
    }

    for (std::size_t fold = 0; fold < subjects.size(); ++fold) {
        const std::string& held_out = subjects[fold];
        FoldData fd;
        for (std::size_t i = 0; i < windows.size(); ++i)
            (windows[i].subject_id == held_out ? fd.test_rows : fd.train_rows).push_back(i);
        // partition audit: the held-out subject never reaches the train set
        for (std::size_t r : fd.train_rows)
            if (windows[r].subject_id == held_out)
                throw NumericError("LOSO partition audit failed for subject " + held_out);

        fd.train_rows = subsample_rows(fd.train_rows, labels, loso.subsample_per_class,
                                       loso.subsample_seed, fold);

        std::set<int> train_classes;
        for (std::size_t r : fd.train_rows) train_classes.insert(labels[r]);
        if (static_cast<int>(train_classes.size()) < task.classes)
            std::fprintf(stderr,
                         "[loso] warning: fold %s train set covers %zu of %d classes\n",
                         held_out.c_str(), train_classes.size(), task.classes);

        std::vector<int> test_labels;
        test_labels.reserve(fd.test_rows.size());
        for (std::size_t r : fd.test_rows) test_labels.push_back(labels[r]);

        TrainOpts fold_opts = opts;
        fold_opts.seed = derive_seed(opts.seed, 0xF01Dull, fold);

        std::vector<int> preds;
        if (mode == DownstreamMode::Frozen) {
            std::vector<int> train_labels;
            train_labels.reserve(fd.train_rows.size());
            for (std::size_t r : fd.train_rows) train_labels.push_back(labels[r]);
            reinit_emotion_head(*frozen_net, fold_opts.seed);
            train_head_on_features(*frozen_net, frozen_features, fd.train_rows, train_labels,
                                   fold_opts);
            std::vector<Tensor<float>> test_feats;
            gather_features(frozen_features, fd.test_rows, test_feats);
            RunMode mode_eval = nn::eval_mode();
            auto& logits = frozen_net->emotion_head_forward(test_feats, mode_eval);
            preds = decide(logits);
        } else {
            std::vector<dsp::Window> train_w;
            std::vector<int> train_y;
            train_w.reserve(fd.train_rows.size());
            for (std::size_t r : fd.train_rows) {
                train_w.push_back(windows[r]);
                train_y.push_back(labels[r]);
            }
            EmotionModel model = train_downstream(train_w, train_y, task.classes, mode, ckpt,
                                                  cfg, fold_opts);
            std::vector<dsp::Window> test_w;
            test_w.reserve(fd.test_rows.size());
            for (std::size_t r : fd.test_rows) test_w.push_back(windows[r]);
            preds = model.predict(test_w);
        }

        const Metrics m = compute_metrics(preds, test_labels, task.classes, opts.f1_average);
        data::FoldResult fr;
        fr.subject_id = held_out;
        fr.accuracy = m.accuracy;
        fr.f1 = m.f1;
        fr.n_test = static_cast<long long>(fd.test_rows.size());
        fr.single_class = std::set<int>(test_labels.begin(), test_labels.end()).size() <= 1;
        report.folds.push_back(fr);
    }
    report.finalize();
    report.wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---------------------------------------------------------------------------
// low-data study
// ---------------------------------------------------------------------------

LowDataReport run_low_data_study(const data::WindowSet& ws, const data::TaskDef& task,
                                 DownstreamMode mode, const Checkpoint* ckpt,
                                 const nn::EncoderConfig& cfg, const TrainOpts& opts,
                                 const std::vector<long long>& sizes, int repeats) {
    if (repeats < 1) throw ConfigError("low-data study: repeats must be >= 1");
    LowDataReport report;
    for (long long size : sizes) {
        LowDataEntry entry;
        entry.size = size;
        std::vector<double> accs, f1s;
        for (int r = 0; r < repeats; ++r) {
            LosoOptions loso;
            loso.subsample_per_class = size;
            loso.subsample_seed = derive_seed(opts.seed, 0x10D4ull,
                                              static_cast<std::uint64_t>(size) + 1,
                                              static_cast<std::uint64_t>(r));
            TrainOpts run_opts = opts;
            // repeat 0 keeps the base seed so a full-size run reproduces a
            // plain LOSO evaluation number for number
            if (r > 0)
                run_opts.seed = derive_seed(opts.seed, 0x5EEDull, static_cast<std::uint64_t>(r));
            const auto rep = evaluate_loso(ws, task, mode, ckpt, cfg, run_opts, loso);
            accs.push_back(rep.mean_accuracy);
            f1s.push_back(rep.mean_f1);
        }
        auto mean_std = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= static_cast<double>(v.size());
            return std::pair<double, double>(mean, std::sqrt(var));
        };
        std::tie(entry.mean_accuracy, entry.std_accuracy) = mean_std(accs);
        std::tie(entry.mean_f1, entry.std_f1) = mean_std(f1s);
        entry.per_repeat_accuracy = accs;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

namespace {

std::vector<dsp::Modality> parse_modality_combo(const std::string& s) {
    std::vector<dsp::Modality> mods;
    std::string cur;
    for (char c : s + "+") {
        if (c == '+') {
            if (!cur.empty()) mods.push_back(dsp::modality_from_name(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return mods;
}

std::vector<transforms::TransformKind> parse_transform_combo(const std::string& s) {
    std::vector<transforms::TransformKind> kinds;
    for (char c : s)
        if (c != '+') kinds.push_back(transforms::transform_from_letter(c));
    return kinds;
}

// pretrain on the window set, then frozen LOSO on the task
AblationRow pipeline_frozen_eval(const std::string& variant, const nn::EncoderConfig& cfg,
                                 const data::WindowSet& ws, const data::TaskDef& task,
                                 const std::vector<PretextSample>& samples,
                                 const TrainOpts& pre_opts, const TrainOpts& down_opts) {
    auto pre = pretrain(samples, cfg, pre_opts);
    Checkpoint ckpt = make_checkpoint(*pre.net, "pretrained", pre_opts.seed);
    const auto rep = evaluate_loso(ws, task, DownstreamMode::Frozen, &ckpt, cfg, down_opts);
    AblationRow row;
    row.variant = variant;
    row.accuracy = rep.mean_accuracy;
    row.f1 = rep.mean_f1;
    return row;
}

}  // namespace

AblationReport run_ablation(const AblationSpec& spec, const data::WindowSet& ws,
                            const data::TaskDef& task,
                            const transforms::TransformConfig& tcfg,
                            const nn::EncoderConfig& cfg, const TrainOpts& pretext_opts,
                            const TrainOpts& downstream_opts) {
    AblationReport report;
    report.kind = spec.kind;

    if (spec.kind == "fusion") {
        std::vector<std::string> variants = spec.variants;
        if (variants.empty())
            variants = {"early", "late", "intermediate_overall_loss", "intermediate"};
        const auto samples = transforms::build_pretext_dataset(ws.windows, tcfg,
                                                               pretext_opts.seed);
        for (const std::string& v : variants) {
            nn::EncoderConfig c = cfg;
            c.fusion = nn::fusion_mode_from_name(v);
            report.rows.push_back(
                pipeline_frozen_eval(v, c, ws, task, samples, pretext_opts, downstream_opts));
        }
        return report;
    }

    if (spec.kind == "modality_subset") {
        std::vector<std::string> variants = spec.variants;
        if (variants.empty())
            variants = {"EDA", "BVP", "TEMP", "EDA+BVP", "EDA+TEMP", "BVP+TEMP", "EDA+BVP+TEMP"};
        const auto samples = transforms::build_pretext_dataset(ws.windows, tcfg,
                                                               pretext_opts.seed);
        for (const std::string& v : variants) {
            nn::EncoderConfig c = cfg;
            c.modalities = parse_modality_combo(v);
            report.rows.push_back(
                pipeline_frozen_eval(v, c, ws, task, samples, pretext_opts, downstream_opts));
        }
        return report;
    }

    if (spec.kind == "components_pe") {
        std::vector<std::string> variants = spec.variants;
        if (variants.empty())
            variants = {"base", "no_tcn", "no_transformer", "fixed_pe", "learnable_pe"};
        const auto samples = transforms::build_pretext_dataset(ws.windows, tcfg,
                                                               pretext_opts.seed);
        for (const std::string& v : variants) {
            nn::EncoderConfig c = cfg;
            if (v == "no_tcn")
                c.use_tcn = false;
            else if (v == "no_transformer")
                c.use_transformer = false;
            else if (v == "fixed_pe")
                c.positional_encoding = nn::PosEncoding::Fixed;
            else if (v == "learnable_pe")
                c.positional_encoding = nn::PosEncoding::Learnable;
            else if (v != "base")
                throw ConfigError("components_pe ablation: unknown variant " + v);
            report.rows.push_back(
                pipeline_frozen_eval(v, c, ws, task, samples, pretext_opts, downstream_opts));
        }
        return report;
    }

    if (spec.kind == "transform_subset") {
        std::vector<std::string> variants = spec.variants;
        if (variants.empty())
            variants = {"N", "M", "P", "T", "C", "N+M", "P+T+C", "N+P", "M+P",
                        "N+T", "M+T", "N+C", "M+C", "N+M+P+T+C"};
        for (const std::string& v : variants) {
            const auto kinds = parse_transform_combo(v);
            const auto samples = transforms::build_pretext_dataset_subset(ws.windows, tcfg,
                                                                          pretext_opts.seed,
                                                                          kinds);
            nn::EncoderConfig c = cfg;
            c.pretext_classes = static_cast<int>(kinds.size()) + 1;
            report.rows.push_back(
                pipeline_frozen_eval(v, c, ws, task, samples, pretext_opts, downstream_opts));
        }
        return report;
    }

    if (spec.kind == "missing_modality") {
        std::vector<std::string> variants = spec.variants;
        if (variants.empty()) variants = {"EDA", "BVP", "TEMP"};
        const auto samples = transforms::build_pretext_dataset(ws.windows, tcfg,
                                                               pretext_opts.seed);
        auto pre = pretrain(samples, cfg, pretext_opts);
        Checkpoint ckpt = make_checkpoint(*pre.net, "pretrained", pretext_opts.seed);
        const auto baseline =
            evaluate_loso(ws, task, DownstreamMode::Frozen, &ckpt, cfg, downstream_opts);

        for (const std::string& v : variants) {
            const auto mod = dsp::modality_from_name(v);
            const int col = static_cast<int>(mod);
            double acc_sum = 0.0, f1_sum = 0.0;
            for (int rep = 0; rep < spec.missing_repeats; ++rep) {
                data::WindowSet dropped = ws;
                for (std::size_t i = 0; i < dropped.windows.size(); ++i) {
                    Rng rng(derive_seed(downstream_opts.seed, 0xD209ull + static_cast<std::uint64_t>(col),
                                        static_cast<std::uint64_t>(rep), i));
                    if (rng.uniform() < spec.missing_drop_prob) {
                        dsp::Window& w = dropped.windows[i];
                        for (int t = 0; t < w.n_steps; ++t) w.at(t, col) = 0.0;
                    }
                }
                // repeats vary only which samples lose the modality; the
                // training seed stays fixed so drop_prob = 0 reproduces the
                // baseline exactly
                const auto r = evaluate_loso(dropped, task, DownstreamMode::Frozen, &ckpt, cfg,
                                             downstream_opts);
                acc_sum += r.mean_accuracy;
                f1_sum += r.mean_f1;
            }
            AblationRow row;
            row.variant = v;
            row.accuracy = acc_sum / spec.missing_repeats;
            row.f1 = f1_sum / spec.missing_repeats;
            row.drop_accuracy = baseline.mean_accuracy - row.accuracy;
            row.drop_f1 = baseline.mean_f1 - row.f1;
            report.rows.push_back(row);
        }
        return report;
    }

    throw ConfigError("unknown ablation kind: " + spec.kind);
}

// ---------------------------------------------------------------------------
// report files
// ---------------------------------------------------------------------------

void save_ablation_report(const std::string& dir, const AblationReport& r) {
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir + "/ablation.csv");
    if (!csv) throw IoError("cannot write " + dir + "/ablation.csv");
    csv << "variant,accuracy,f1,drop_accuracy,drop_f1\n";
    for (const AblationRow& row : r.rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f\n", row.variant.c_str(),
                      row.accuracy, row.f1, row.drop_accuracy, row.drop_f1);
        csv << buf;
    }
    nlohmann::json j;
    j["kind"] = r.kind;
    auto rows = nlohmann::json::array();
    for (const AblationRow& row : r.rows)
        rows.push_back({{"variant", row.variant},
                        {"accuracy", row.accuracy},
                        {"f1", row.f1},
                        {"drop_accuracy", row.drop_accuracy},
                        {"drop_f1", row.drop_f1}});
    j["rows"] = rows;
    std::ofstream jf(dir + "/ablation.json");
    jf << j.dump(2) << "\n";
}

void save_lowdata_report(const std::string& dir, const LowDataReport& r) {
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir + "/lowdata.csv");
    if (!csv) throw IoError("cannot write " + dir + "/lowdata.csv");
    csv << "size,mean_accuracy,std_accuracy,mean_f1,std_f1\n";
    for (const LowDataEntry& e : r.entries) {
        char buf[196];
        std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6f,%.6f\n", e.size, e.mean_accuracy,
                      e.std_accuracy, e.mean_f1, e.std_f1);
        csv << buf;
    }
}

void save_training_log(const std::string& path, const std::vector<EpochLog>& logs) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "epoch,loss,head_accuracies\n";
    for (const EpochLog& l : logs) {
        f << l.epoch << ',' << l.loss << ',';
        for (std::size_t i = 0; i < l.head_accuracy.size(); ++i) {
            if (i) f << ';';
            f << l.head_accuracy[i];
        }
        f << '\n';
    }
}

}  // namespace physiossl::train
