// The encoder (per-modality TCN + projection + shared transformer), the
// transform-recognition and emotion heads, and the loss functions.
//
// One Network instance supports the fusion and component variants used by
// the experiment harness: intermediate fusion with per-modality heads (the
// default), early fusion (multichannel input into one TCN), late fusion
// (fully separate per-modality pipelines, decisions averaged), intermediate
// fusion with a single overall head, and the no-TCN / no-transformer /
// positional-encoding toggles.
#pragma once

#include <array>
#include <cctype>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "physiossl/dsp.hpp"
#include "physiossl/nn/layers.hpp"
#include "physiossl/nn/params.hpp"
#include "physiossl/nn/tensor.hpp"

namespace physiossl::nn {

enum class PosEncoding : int { None = 0, Fixed = 1, Learnable = 2 };
enum class FusionMode : int { Intermediate = 0, Early = 1, Late = 2, IntermediateOverall = 3 };

const char* pos_encoding_name(PosEncoding p);
PosEncoding pos_encoding_from_name(const std::string& s);
const char* fusion_mode_name(FusionMode f);
FusionMode fusion_mode_from_name(const std::string& s);

struct EncoderConfig {
    int window_len = 240;
    std::vector<dsp::Modality> modalities = {dsp::Modality::EDA, dsp::Modality::BVP,
                                             dsp::Modality::TEMP};
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
    PosEncoding positional_encoding = PosEncoding::None;
    FusionMode fusion = FusionMode::Intermediate;
    int pretext_classes = 6;
    int pretext_hidden = 64;
    double pretext_dropout = 0.1;
    int emotion_hidden = 192;
    double emotion_dropout = 0.2;

    void validate() const {
        if (d_embed <= 0 || n_heads <= 0 || d_embed % n_heads != 0)
            throw ConfigError("encoder config: d_embed must be positive and divisible by n_heads");
        if (window_len <= 0) throw ConfigError("encoder config: window_len must be positive");
        if (modalities.empty()) throw ConfigError("encoder config: at least one modality");
        if (tcn_kernel < 1 || tcn_filters < 1 || tcn_dilations.empty())
            throw ConfigError("encoder config: invalid TCN shape");
        if (tcn_convs_per_block < 1 || tcn_convs_per_block > 2)
            throw ConfigError("encoder config: tcn_convs_per_block must be 1 or 2");
        if (pretext_classes < 2) throw ConfigError("encoder config: pretext_classes must be >= 2");
    }

    int n_modalities() const { return static_cast<int>(modalities.size()); }
    // causal left padding per block: (k - 1) * dilation
    std::vector<int> tcn_paddings() const {
        std::vector<int> p;
        p.reserve(tcn_dilations.size());
        for (int d : tcn_dilations) p.push_back((tcn_kernel - 1) * d);
        return p;
    }
    // number of transformer tokens per group for the active fusion mode
    int tokens_per_group() const {
        if (fusion == FusionMode::Early || fusion == FusionMode::Late) return window_len;
        return n_modalities() * window_len;
    }
};

// Snapshot of intermediate activations of sample 0, for tests and debugging.
template <class S>
struct ForwardTrace {
    std::vector<std::vector<S>> z_m;  // per modality group, [n x d]
    std::vector<S> z_tokens;          // transformer input (post-PE), [tokens x d]
    std::vector<S> h_tokens;          // transformer output, [tokens x d]
    std::vector<S> attention;         // [heads x tokens x tokens]
    long long tokens = 0;
    int heads = 0;
};

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Batch-mean cross entropy on logits [b x 1 x classes]; softmax lives here
// (log-sum-exp) for numerical stability. Fills dlogits when given.
template <class S>
double cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                     Tensor<S>* dlogits = nullptr) {
    const long long b = logits.b;
    const long long c = logits.c;
    if (static_cast<long long>(labels.size()) != b)
        throw InputError("cross_entropy: batch size mismatch");
    for (int y : labels)
        if (y < 0 || y >= c) throw InputError("cross_entropy: label out of range");
    if (dlogits) dlogits->resize(b, 1, c);
    double total = 0.0;
    for (long long i = 0; i < b; ++i) {
        const S* row = logits.data() + i * c;
        double mx = static_cast<double>(row[0]);
        for (long long j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (long long j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(sum);
        total += lse - static_cast<double>(row[labels[static_cast<std::size_t>(i)]]);
        if (dlogits) {
            S* drow = dlogits->data() + i * c;
            for (long long j = 0; j < c; ++j) {
                const double p = std::exp(static_cast<double>(row[j]) - lse);
                drow[j] = static_cast<S>(
                    (p - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) /
                    static_cast<double>(b));
            }
        }
    }
    return total / static_cast<double>(b);
}

struct PretextLossValue {
    double total = 0.0;
    std::vector<double> per_modality;
};

// ---------------------------------------------------------------------------
// modules
// ---------------------------------------------------------------------------

template <class S>
class TcnBlock {
public:
    TcnBlock(ParameterStore<S>& store, const std::string& prefix, long long cin, long long cout,
             int kernel, int dilation, double dropout, int convs, Rng& rng)
        : drop1_(dropout), drop2_(dropout) {
        conv1_ = std::make_unique<CausalConvWN<S>>(store, prefix + ".conv0", cin, cout, kernel,
                                                   dilation, rng);
        if (convs == 2)
            conv2_ = std::make_unique<CausalConvWN<S>>(store, prefix + ".conv1", cout, cout,
                                                       kernel, dilation, rng);
        if (cin != cout)
            res_ = std::make_unique<Linear<S>>(store, prefix + ".res", cin, cout, rng);
    }

    void forward(const Tensor<S>& x, Tensor<S>& y, const RunMode& mode) {
        x_ = &x;
        conv1_->forward(x, c1_);
        relu1_.forward(c1_, r1_);
        drop1_.forward(r1_, p1_, mode);
        const Tensor<S>* path = &p1_;
        if (conv2_) {
            conv2_->forward(p1_, c2_);
            relu2_.forward(c2_, r2_);
            drop2_.forward(r2_, p2_, mode);
            path = &p2_;
        }
        y.resize(x.b, x.r, path->c);
        if (res_) {
            res_->forward(x, rproj_);
            const long long n = static_cast<long long>(y.size());
            const S* a = path->data();
            const S* r = rproj_.data();
            S* out = y.data();
            parallel_for(n, [&](long long i) { out[i] = a[i] + r[i]; });
        } else {
            const long long n = static_cast<long long>(y.size());
            const S* a = path->data();
            const S* r = x.data();
            S* out = y.data();
            parallel_for(n, [&](long long i) { out[i] = a[i] + r[i]; });
        }
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        const Tensor<S>* dpath = &dy;
        if (conv2_) {
            drop2_.backward(dy, dp2_);
            relu2_.backward(dp2_, dr2_);
            conv2_->backward(dr2_, dc2_);
            dpath = &dc2_;
        }
        drop1_.backward(*dpath, dp1_);
        relu1_.backward(dp1_, dr1_);
        conv1_->backward(dr1_, dx);
        if (res_) {
            res_->backward(dy, drres_);
            const long long n = static_cast<long long>(dx.size());
            S* a = dx.data();
            const S* r = drres_.data();
            parallel_for(n, [&](long long i) { a[i] += r[i]; });
        } else {
            const long long n = static_cast<long long>(dx.size());
            S* a = dx.data();
            const S* r = dy.data();
            parallel_for(n, [&](long long i) { a[i] += r[i]; });
        }
    }

private:
    std::unique_ptr<CausalConvWN<S>> conv1_, conv2_;
    std::unique_ptr<Linear<S>> res_;
    ReLU<S> relu1_, relu2_;
    Dropout<S> drop1_, drop2_;
    Tensor<S> c1_, r1_, p1_, c2_, r2_, p2_, rproj_;
    Tensor<S> dp1_, dr1_, dp2_, dr2_, dc2_, drres_;
    const Tensor<S>* x_ = nullptr;
};

// TCN (optional) -> per-step linear projection to d_embed -> layer norm.
template <class S>
class ModalityEncoder {
public:
    ModalityEncoder(ParameterStore<S>& store, const std::string& prefix, long long cin,
                    const EncoderConfig& cfg, Rng& rng) {
        long long ch = cin;
        if (cfg.use_tcn) {
            for (std::size_t i = 0; i < cfg.tcn_dilations.size(); ++i) {
                blocks_.push_back(std::make_unique<TcnBlock<S>>(
                    store, prefix + ".tcn.b" + std::to_string(i), ch, cfg.tcn_filters,
                    cfg.tcn_kernel, cfg.tcn_dilations[i], cfg.tcn_dropout,
                    cfg.tcn_convs_per_block, rng));
                ch = cfg.tcn_filters;
            }
        }
        proj_ = std::make_unique<Linear<S>>(store, prefix + ".proj", ch, cfg.d_embed, rng);
        ln_ = std::make_unique<LayerNorm<S>>(store, prefix + ".ln", cfg.d_embed);
    }

    void forward(const Tensor<S>& x, Tensor<S>& z, const RunMode& mode) {
        const Tensor<S>* cur = &x;
        acts_.resize(blocks_.size());
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            blocks_[i]->forward(*cur, acts_[i], mode);
            cur = &acts_[i];
        }
        proj_->forward(*cur, proj_out_);
        ln_->forward(proj_out_, z);
    }

    void backward(const Tensor<S>& dz, Tensor<S>& dx) {
        ln_->backward(dz, dln_);
        proj_->backward(dln_, dcur_);
        for (std::size_t i = blocks_.size(); i > 0; --i) {
            blocks_[i - 1]->backward(dcur_, dprev_);
            std::swap(dcur_, dprev_);
        }
        std::swap(dx, dcur_);
    }

    // tcn output (pre-projection) of the last block, for shape probes
    const Tensor<S>& tcn_out() const { return acts_.back(); }
    bool has_tcn() const { return !blocks_.empty(); }

private:
    std::vector<std::unique_ptr<TcnBlock<S>>> blocks_;
    std::unique_ptr<Linear<S>> proj_;
    std::unique_ptr<LayerNorm<S>> ln_;
    std::vector<Tensor<S>> acts_;
    Tensor<S> proj_out_, dln_, dcur_, dprev_;
};

template <class S>
class TransformerBlock {
public:
    TransformerBlock(ParameterStore<S>& store, const std::string& prefix,
                     const EncoderConfig& cfg, Rng& rng)
        : attn_(store, prefix + ".attn", cfg.d_embed, cfg.n_heads, cfg.attn_dropout, rng),
          ln1_(store, prefix + ".ln1", cfg.d_embed),
          ff1_(store, prefix + ".ff.fc1", cfg.d_embed, cfg.ff_dim, rng),
          ffdrop_(cfg.ff_dropout),
          ff2_(store, prefix + ".ff.fc2", cfg.ff_dim, cfg.d_embed, rng),
          ln2_(store, prefix + ".ln2", cfg.d_embed) {}

    void forward(const Tensor<S>& z, Tensor<S>& h, const RunMode& mode) {
        attn_.forward(z, a_, mode);
        add(z, a_, r1_);
        ln1_.forward(r1_, n1_);
        ff1_.forward(n1_, f1_);
        ffrelu_.forward(f1_, f2_);
        ffdrop_.forward(f2_, f3_, mode);
        ff2_.forward(f3_, f4_);
        add(n1_, f4_, r2_);
        ln2_.forward(r2_, h);
    }

    void backward(const Tensor<S>& dh, Tensor<S>& dz) {
        ln2_.backward(dh, dr2_);
        ff2_.backward(dr2_, df3_);
        ffdrop_.backward(df3_, df2_);
        ffrelu_.backward(df2_, df1_);
        ff1_.backward(df1_, dn1ff_);
        add(dr2_, dn1ff_, dn1_);
        ln1_.backward(dn1_, dr1_);
        attn_.backward(dr1_, dzattn_);
        add(dr1_, dzattn_, dz);
    }

    const MultiHeadSelfAttention<S>& attention() const { return attn_; }

private:
    static void add(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& out) {
        out.resize(a.b, a.r, a.c);
        const long long n = static_cast<long long>(a.size());
        const S* ap = a.data();
        const S* bp = b.data();
        S* op = out.data();
        parallel_for(n, [&](long long i) { op[i] = ap[i] + bp[i]; });
    }

    MultiHeadSelfAttention<S> attn_;
    LayerNorm<S> ln1_;
    Linear<S> ff1_;
    ReLU<S> ffrelu_;
    Dropout<S> ffdrop_;
    Linear<S> ff2_;
    LayerNorm<S> ln2_;
    Tensor<S> a_, r1_, n1_, f1_, f2_, f3_, f4_, r2_;
    Tensor<S> dr2_, df3_, df2_, df1_, dn1ff_, dn1_, dr1_, dzattn_;
};

// GAP (done by the caller) -> fc -> batch norm -> ReLU -> dropout -> fc.
template <class S>
class ClassifierHead {
public:
    ClassifierHead(ParameterStore<S>& store, const std::string& prefix, long long in,
                   long long hidden, long long classes, double dropout, Rng& rng)
        : fc1_(store, prefix + ".fc1", in, hidden, rng),
          bn_(store, prefix + ".bn", hidden),
          drop_(dropout),
          fc2_(store, prefix + ".fc2", hidden, classes, rng) {}

    void forward(const Tensor<S>& feat, Tensor<S>& logits, const RunMode& mode) {
        fc1_.forward(feat, h1_);
        bn_.forward(h1_, h2_, mode);
        relu_.forward(h2_, h3_);
        drop_.forward(h3_, h4_, mode);
        fc2_.forward(h4_, logits);
    }

    void backward(const Tensor<S>& dlogits, Tensor<S>& dfeat) {
        fc2_.backward(dlogits, dh4_);
        drop_.backward(dh4_, dh3_);
        relu_.backward(dh3_, dh2_);
        bn_.backward(dh2_, dh1_);
        fc1_.backward(dh1_, dfeat);
    }

    long long in() const { return fc1_.in(); }
    long long classes() const { return fc2_.out(); }

private:
    Linear<S> fc1_;
    BatchNorm1d<S> bn_;
    ReLU<S> relu_;
    Dropout<S> drop_;
    Linear<S> fc2_;
    Tensor<S> h1_, h2_, h3_, h4_;
    Tensor<S> dh4_, dh3_, dh2_, dh1_;
};

// ---------------------------------------------------------------------------
// the full model
// ---------------------------------------------------------------------------

template <class S>
class Network {
public:
    Network(EncoderConfig cfg, int emotion_classes, std::uint64_t init_seed)
        : cfg_(std::move(cfg)), emotion_classes_(emotion_classes) {
        cfg_.validate();
        Rng rng(derive_seed(init_seed, 0xC0DEull));
        const int m = cfg_.n_modalities();

        if (cfg_.fusion == FusionMode::Early) {
            encoders_.push_back(std::make_unique<ModalityEncoder<S>>(store_, "enc.all", m, cfg_, rng));
            group_names_.push_back("all");
        } else {
            for (dsp::Modality mod : cfg_.modalities) {
                std::string name = dsp::modality_name(mod);
                for (char& ch : name) ch = static_cast<char>(std::tolower(ch));
                encoders_.push_back(std::make_unique<ModalityEncoder<S>>(store_, "enc." + name,
                                                                         1, cfg_, rng));
                group_names_.push_back(name);
            }
        }

        if (cfg_.positional_encoding == PosEncoding::Learnable) {
            make_param(store_, pe_, "pe.table",
                       {cfg_.tokens_per_group(), cfg_.d_embed});
            for (S& v : pe_.w) v = static_cast<S>(rng.uniform(-0.02, 0.02));
        }

        if (cfg_.use_transformer) {
            if (cfg_.fusion == FusionMode::Late) {
                for (const std::string& g : group_names_)
                    transformers_.push_back(
                        std::make_unique<TransformerBlock<S>>(store_, "shared." + g, cfg_, rng));
            } else {
                transformers_.push_back(
                    std::make_unique<TransformerBlock<S>>(store_, "shared", cfg_, rng));
            }
        }

        // pretext heads
        if (cfg_.fusion == FusionMode::Early) {
            pretext_heads_.push_back(std::make_unique<ClassifierHead<S>>(
                store_, "head.pretext.all", cfg_.d_embed, cfg_.pretext_hidden,
                cfg_.pretext_classes, cfg_.pretext_dropout, rng));
        } else if (cfg_.fusion == FusionMode::IntermediateOverall) {
            pretext_heads_.push_back(std::make_unique<ClassifierHead<S>>(
                store_, "head.pretext.all", static_cast<long long>(m) * cfg_.d_embed,
                cfg_.pretext_hidden, cfg_.pretext_classes, cfg_.pretext_dropout, rng));
        } else {
            for (const std::string& g : group_names_)
                pretext_heads_.push_back(std::make_unique<ClassifierHead<S>>(
                    store_, "head.pretext." + g, cfg_.d_embed, cfg_.pretext_hidden,
                    cfg_.pretext_classes, cfg_.pretext_dropout, rng));
        }

        // emotion head(s)
        if (emotion_classes_ > 0) {
            if (cfg_.fusion == FusionMode::Late) {
                for (const std::string& g : group_names_)
                    emotion_heads_.push_back(std::make_unique<ClassifierHead<S>>(
                        store_, "head.emotion." + g, cfg_.d_embed, cfg_.emotion_hidden,
                        emotion_classes_, cfg_.emotion_dropout, rng));
            } else {
                const long long in = (cfg_.fusion == FusionMode::Early)
                                         ? cfg_.d_embed
                                         : static_cast<long long>(m) * cfg_.d_embed;
                emotion_heads_.push_back(std::make_unique<ClassifierHead<S>>(
                    store_, "head.emotion", in, cfg_.emotion_hidden, emotion_classes_,
                    cfg_.emotion_dropout, rng));
            }
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    int emotion_classes() const { return emotion_classes_; }
    ParameterStore<S>& params() { return store_; }
    const ParameterStore<S>& params() const { return store_; }

    static bool is_emotion_head_param(const std::string& name) {
        return name.rfind("head.emotion", 0) == 0;
    }

    int pretext_head_count() const { return static_cast<int>(pretext_heads_.size()); }
    int emotion_head_count() const { return static_cast<int>(emotion_heads_.size()); }

    // ---- encoder ----

    // x: [b x window_len x n_modalities]; produces per-group token features.
    void encoder_forward(const Tensor<S>& x, const RunMode& mode, ForwardTrace<S>* trace) {
        const long long b = x.b;
        const int m = cfg_.n_modalities();
        const long long n = cfg_.window_len;
        if (x.r != n || x.c != m)
            throw InputError("encoder_forward: input shape mismatch with config");

        // split into per-encoder inputs
        enc_in_.resize(encoders_.size());
        if (cfg_.fusion == FusionMode::Early) {
            enc_in_[0].resize(b, n, m);
            std::copy(x.data(), x.data() + x.size(), enc_in_[0].data());
        } else {
            for (std::size_t e = 0; e < encoders_.size(); ++e) {
                enc_in_[e].resize(b, n, 1);
                const long long mi = static_cast<long long>(e);
                parallel_for(b, [&](long long bi) {
                    for (long long t = 0; t < n; ++t)
                        enc_in_[e].data()[bi * n + t] = x.data()[(bi * n + t) * m + mi];
                });
            }
        }

        z_.resize(encoders_.size());
        for (std::size_t e = 0; e < encoders_.size(); ++e)
            encoders_[e]->forward(enc_in_[e], z_[e], mode);

        if (trace) {
            trace->z_m.clear();
            for (auto& z : z_) {
                auto Z = z.mat(0);
                trace->z_m.emplace_back(Z.data(), Z.data() + Z.size());
            }
        }

        // build transformer input groups
        if (cfg_.fusion == FusionMode::Late || cfg_.fusion == FusionMode::Early) {
            // one group per encoder output (early has a single encoder)
            groups_in_ = &z_;
        } else {
            // stack modality features along the token axis
            stacked_.resize(1);
            Tensor<S>& st = stacked_[0];
            st.resize(b, static_cast<long long>(m) * n, cfg_.d_embed);
            for (int e = 0; e < m; ++e) {
                const Tensor<S>& z = z_[static_cast<std::size_t>(e)];
                parallel_for(b, [&](long long bi) {
                    std::copy(z.data() + bi * n * cfg_.d_embed,
                              z.data() + (bi + 1) * n * cfg_.d_embed,
                              st.data() + (bi * m * n + static_cast<long long>(e) * n) * cfg_.d_embed);
                });
            }
            groups_in_ = &stacked_;
        }

        apply_positional_encoding(*groups_in_);
        if (trace && !groups_in_->empty()) {
            const Tensor<S>& g = (*groups_in_)[0];
            trace->z_tokens.assign(g.data(), g.data() + g.r * g.c);
            trace->tokens = g.r;
        }

        // transformer
        if (cfg_.use_transformer) {
            h_.resize(groups_in_->size());
            for (std::size_t gi = 0; gi < groups_in_->size(); ++gi)
                transformers_[transformers_.size() == 1 ? 0 : gi]->forward((*groups_in_)[gi],
                                                                           h_[gi], mode);
            groups_out_ = &h_;
        } else {
            groups_out_ = groups_in_;
        }

        if (trace && !groups_out_->empty()) {
            const Tensor<S>& g = (*groups_out_)[0];
            trace->h_tokens.assign(g.data(), g.data() + g.r * g.c);
            if (cfg_.use_transformer) {
                transformers_[0]->attention().copy_attention(0, trace->attention);
                trace->heads = cfg_.n_heads;
            }
        }
    }

    // dgroups must match groups_out_ layout; returns d(input windows).
    void encoder_backward(std::vector<Tensor<S>>& dgroups, Tensor<S>& dx) {
        const int m = cfg_.n_modalities();
        const long long n = cfg_.window_len;
        const long long b = dgroups[0].b;

        std::vector<Tensor<S>>* dz_groups = &dgroups;
        if (cfg_.use_transformer) {
            dtrans_.resize(dgroups.size());
            for (std::size_t gi = 0; gi < dgroups.size(); ++gi)
                transformers_[transformers_.size() == 1 ? 0 : gi]->backward(dgroups[gi],
                                                                            dtrans_[gi]);
            dz_groups = &dtrans_;
        }
        backward_positional_encoding(*dz_groups);

        // un-stack into per-encoder dz
        dz_.resize(encoders_.size());
        if (cfg_.fusion == FusionMode::Late || cfg_.fusion == FusionMode::Early) {
            for (std::size_t e = 0; e < encoders_.size(); ++e) std::swap(dz_[e], (*dz_groups)[e]);
        } else {
            const Tensor<S>& dst = (*dz_groups)[0];
            for (int e = 0; e < m; ++e) {
                dz_[static_cast<std::size_t>(e)].resize(b, n, cfg_.d_embed);
                Tensor<S>& dzm = dz_[static_cast<std::size_t>(e)];
                parallel_for(b, [&](long long bi) {
                    std::copy(dst.data() + (bi * m * n + static_cast<long long>(e) * n) * cfg_.d_embed,
                              dst.data() + (bi * m * n + static_cast<long long>(e + 1) * n) * cfg_.d_embed,
                              dzm.data() + bi * n * cfg_.d_embed);
                });
            }
        }

        dx.resize(b, n, m);
        denc_.resize(encoders_.size());
        for (std::size_t e = 0; e < encoders_.size(); ++e)
            encoders_[e]->backward(dz_[e], denc_[e]);
        if (cfg_.fusion == FusionMode::Early) {
            std::copy(denc_[0].data(), denc_[0].data() + denc_[0].size(), dx.data());
        } else {
            for (std::size_t e = 0; e < encoders_.size(); ++e) {
                const long long mi = static_cast<long long>(e);
                parallel_for(b, [&](long long bi) {
                    for (long long t = 0; t < n; ++t)
                        dx.data()[(bi * n + t) * m + mi] = denc_[e].data()[bi * n + t];
                });
            }
        }
    }

    // ---- pretext path ----

    // Returns one logits tensor per pretext head.
    std::vector<Tensor<S>>& forward_pretext(const Tensor<S>& x, const RunMode& mode,
                                            ForwardTrace<S>* trace = nullptr) {
        encoder_forward(x, mode, trace);
        gap_feats(mode);  // fills feat_ per group-or-modality
        pretext_logits_.resize(pretext_heads_.size());
        if (pretext_heads_.size() == 1 && cfg_.fusion == FusionMode::IntermediateOverall) {
            concat_feats(concat_feat_);
            pretext_heads_[0]->forward(concat_feat_, pretext_logits_[0], mode);
        } else {
            for (std::size_t i = 0; i < pretext_heads_.size(); ++i)
                pretext_heads_[i]->forward(feat_[i], pretext_logits_[i], mode);
        }
        return pretext_logits_;
    }

    void backward_pretext(const std::vector<Tensor<S>>& dlogits) {
        dfeat_.resize(feat_.size());
        if (pretext_heads_.size() == 1 && cfg_.fusion == FusionMode::IntermediateOverall) {
            pretext_heads_[0]->backward(dlogits[0], dconcat_);
            split_feats(dconcat_, dfeat_);
        } else {
            for (std::size_t i = 0; i < pretext_heads_.size(); ++i)
                pretext_heads_[i]->backward(dlogits[i], dfeat_[i]);
        }
        ungap_feats();
        Tensor<S> dx;  // input gradient unused in training
        encoder_backward(dgroups_, dx);
    }

    // ---- emotion path ----

    std::vector<Tensor<S>>& forward_emotion(const Tensor<S>& x, const RunMode& mode,
                                            ForwardTrace<S>* trace = nullptr) {
        encoder_forward(x, mode, trace);
        gap_feats(mode);
        emotion_logits_.resize(emotion_heads_.size());
        if (cfg_.fusion == FusionMode::Late) {
            for (std::size_t i = 0; i < emotion_heads_.size(); ++i)
                emotion_heads_[i]->forward(feat_[i], emotion_logits_[i], mode);
        } else {
            concat_feats(concat_feat_);
            emotion_heads_[0]->forward(concat_feat_, emotion_logits_[0], mode);
        }
        return emotion_logits_;
    }

    void backward_emotion(const std::vector<Tensor<S>>& dlogits) {
        dfeat_.resize(feat_.size());
        if (cfg_.fusion == FusionMode::Late) {
            for (std::size_t i = 0; i < emotion_heads_.size(); ++i)
                emotion_heads_[i]->backward(dlogits[i], dfeat_[i]);
        } else {
            emotion_heads_[0]->backward(dlogits[0], dconcat_);
            split_feats(dconcat_, dfeat_);
        }
        ungap_feats();
        Tensor<S> dx;
        encoder_backward(dgroups_, dx);
    }

    // Frozen-mode fast path: eval-mode encoder features for the emotion
    // head(s), identical to what forward_emotion computes before the head.
    std::vector<Tensor<S>> encode_emotion_features(const Tensor<S>& x) {
        RunMode mode = eval_mode();
        encoder_forward(x, mode, nullptr);
        gap_feats(mode);
        std::vector<Tensor<S>> out;
        if (cfg_.fusion == FusionMode::Late) {
            for (auto& f : feat_) out.push_back(f);
        } else {
            Tensor<S> cat;
            concat_feats(cat);
            out.push_back(std::move(cat));
        }
        return out;
    }

    // Head-only pass on cached features (frozen training).
    std::vector<Tensor<S>>& emotion_head_forward(const std::vector<Tensor<S>>& feats,
                                                 const RunMode& mode) {
        emotion_logits_.resize(emotion_heads_.size());
        for (std::size_t i = 0; i < emotion_heads_.size(); ++i)
            emotion_heads_[i]->forward(feats[i], emotion_logits_[i], mode);
        return emotion_logits_;
    }

    void emotion_head_backward(const std::vector<Tensor<S>>& dlogits) {
        Tensor<S> sink;
        for (std::size_t i = 0; i < emotion_heads_.size(); ++i)
            emotion_heads_[i]->backward(dlogits[i], sink);
    }

private:
    // GAP over each modality block (or group) of the token features.
    void gap_feats(const RunMode&) {
        const int m = cfg_.n_modalities();
        const long long n = cfg_.window_len;
        const bool split_blocks = cfg_.fusion == FusionMode::Intermediate ||
                                  cfg_.fusion == FusionMode::IntermediateOverall;
        const std::size_t nfeat = split_blocks ? static_cast<std::size_t>(m)
                                               : groups_out_->size();
        feat_.resize(nfeat);
        gaps_.resize(nfeat);
        if (split_blocks) {
            const Tensor<S>& h = (*groups_out_)[0];
            const long long b = h.b;
            block_views_.resize(static_cast<std::size_t>(m));
            for (int e = 0; e < m; ++e) {
                Tensor<S>& bv = block_views_[static_cast<std::size_t>(e)];
                bv.resize(b, n, cfg_.d_embed);
                parallel_for(b, [&](long long bi) {
                    std::copy(h.data() + (bi * m * n + static_cast<long long>(e) * n) * cfg_.d_embed,
                              h.data() + (bi * m * n + static_cast<long long>(e + 1) * n) * cfg_.d_embed,
                              bv.data() + bi * n * cfg_.d_embed);
                });
                gaps_[static_cast<std::size_t>(e)].forward(bv, feat_[static_cast<std::size_t>(e)]);
            }
        } else {
            for (std::size_t gi = 0; gi < groups_out_->size(); ++gi)
                gaps_[gi].forward((*groups_out_)[gi], feat_[gi]);
        }
    }

    // Backward of gap_feats: dfeat_ -> dgroups_ (token gradients per group).
    void ungap_feats() {
        const int m = cfg_.n_modalities();
        const long long n = cfg_.window_len;
        const bool split_blocks = cfg_.fusion == FusionMode::Intermediate ||
                                  cfg_.fusion == FusionMode::IntermediateOverall;
        if (split_blocks) {
            const Tensor<S>& h = (*groups_out_)[0];
            const long long b = h.b;
            dgroups_.resize(1);
            dgroups_[0].resize(b, h.r, h.c);
            for (int e = 0; e < m; ++e) {
                gaps_[static_cast<std::size_t>(e)].backward(dfeat_[static_cast<std::size_t>(e)],
                                                            dblock_);
                Tensor<S>& dst = dgroups_[0];
                parallel_for(b, [&](long long bi) {
                    std::copy(dblock_.data() + bi * n * cfg_.d_embed,
                              dblock_.data() + (bi + 1) * n * cfg_.d_embed,
                              dst.data() + (bi * m * n + static_cast<long long>(e) * n) * cfg_.d_embed);
                });
            }
        } else {
            dgroups_.resize(groups_out_->size());
            for (std::size_t gi = 0; gi < dgroups_.size(); ++gi)
                gaps_[gi].backward(dfeat_[gi], dgroups_[gi]);
        }
    }

    void concat_feats(Tensor<S>& out) {
        const long long b = feat_[0].b;
        const long long d = feat_[0].c;
        out.resize(b, 1, static_cast<long long>(feat_.size()) * d);
        for (std::size_t e = 0; e < feat_.size(); ++e) {
            const Tensor<S>& f = feat_[e];
            parallel_for(b, [&](long long bi) {
                std::copy(f.data() + bi * d, f.data() + (bi + 1) * d,
                          out.data() + bi * out.c + static_cast<long long>(e) * d);
            });
        }
    }

    void split_feats(const Tensor<S>& dcat, std::vector<Tensor<S>>& dfeat) {
        const long long b = dcat.b;
        const long long d = feat_[0].c;
        for (std::size_t e = 0; e < feat_.size(); ++e) {
            dfeat[e].resize(b, 1, d);
            Tensor<S>& df = dfeat[e];
            parallel_for(b, [&](long long bi) {
                std::copy(dcat.data() + bi * dcat.c + static_cast<long long>(e) * d,
                          dcat.data() + bi * dcat.c + static_cast<long long>(e + 1) * d,
                          df.data() + bi * d);
            });
        }
    }

    void apply_positional_encoding(std::vector<Tensor<S>>& groups) {
        if (cfg_.positional_encoding == PosEncoding::None) return;
        for (Tensor<S>& g : groups) {
            const long long t = g.r, d = g.c;
            if (cfg_.positional_encoding == PosEncoding::Fixed) {
                ensure_fixed_pe(t, d);
                parallel_for(g.b, [&](long long bi) {
                    S* p = g.data() + bi * t * d;
                    for (long long i = 0; i < t * d; ++i) p[i] += fixed_pe_[static_cast<std::size_t>(i)];
                });
            } else {
                parallel_for(g.b, [&](long long bi) {
                    S* p = g.data() + bi * t * d;
                    for (long long i = 0; i < t * d; ++i) p[i] += pe_.w[static_cast<std::size_t>(i)];
                });
            }
        }
    }

    void backward_positional_encoding(std::vector<Tensor<S>>& dgroups) {
        if (cfg_.positional_encoding != PosEncoding::Learnable) return;
        for (Tensor<S>& dg : dgroups) {
            const long long t = dg.r, d = dg.c;
            parallel_for(t * d, [&](long long i) {
                double acc = 0.0;
                for (long long bi = 0; bi < dg.b; ++bi)
                    acc += static_cast<double>(dg.data()[bi * t * d + i]);
                pe_.g[static_cast<std::size_t>(i)] += static_cast<S>(acc);
            });
        }
    }

    // sin/cos table at geometric frequencies, the standard fixed encoding
    void ensure_fixed_pe(long long t, long long d) {
        const std::size_t need = static_cast<std::size_t>(t * d);
        if (fixed_pe_.size() == need) return;
        fixed_pe_.resize(need);
        for (long long pos = 0; pos < t; ++pos)
            for (long long j = 0; j < d; ++j) {
                const double denom = std::pow(10000.0, 2.0 * static_cast<double>(j / 2) /
                                                          static_cast<double>(d));
                const double angle = static_cast<double>(pos) / denom;
                fixed_pe_[static_cast<std::size_t>(pos * d + j)] =
                    static_cast<S>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
            }
    }

    EncoderConfig cfg_;
    int emotion_classes_;
    ParameterStore<S> store_;
    std::vector<std::unique_ptr<ModalityEncoder<S>>> encoders_;
    std::vector<std::string> group_names_;
    std::vector<std::unique_ptr<TransformerBlock<S>>> transformers_;
    std::vector<std::unique_ptr<ClassifierHead<S>>> pretext_heads_;
    std::vector<std::unique_ptr<ClassifierHead<S>>> emotion_heads_;
    Param<S> pe_;
    std::vector<S> fixed_pe_;

    // activations
    std::vector<Tensor<S>> enc_in_, z_, stacked_, h_;
    std::vector<Tensor<S>>* groups_in_ = nullptr;
    std::vector<Tensor<S>>* groups_out_ = nullptr;
    std::vector<Tensor<S>> block_views_;
    std::vector<GlobalAvgPool<S>> gaps_;
    std::vector<Tensor<S>> feat_;
    Tensor<S> concat_feat_;
    std::vector<Tensor<S>> pretext_logits_, emotion_logits_;

    // gradients
    std::vector<Tensor<S>> dfeat_, dgroups_, dtrans_, dz_, denc_;
    Tensor<S> dconcat_, dblock_;
};

}  // namespace physiossl::nn
