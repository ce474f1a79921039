// Network building blocks with hand-written backward passes. Every layer is
// verified against central finite differences in the test suite.
//
// Usage pattern: forward(x, mode) caches whatever backward needs for the one
// in-flight batch; backward(dy) accumulates parameter gradients and returns
// the input gradient through an internal buffer. Layers are not reentrant.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "physiossl/nn/params.hpp"
#include "physiossl/nn/tensor.hpp"
#include "physiossl/rng.hpp"

namespace physiossl::nn {

struct RunMode {
    bool train = false;    // batch statistics in BN, running-stat updates
    bool dropout = false;  // stochastic masks active (requires rng)
    Rng* rng = nullptr;
    bool update_running_stats = true;  // BN side effects (off for grad checks)
};

inline RunMode train_mode(Rng& rng) { return RunMode{true, true, &rng, true}; }
inline RunMode eval_mode() { return RunMode{false, false, nullptr, true}; }

// ---------------------------------------------------------------------------
// Linear applied per row (time step or feature vector)
// ---------------------------------------------------------------------------

template <class S>
class Linear {
public:
    Linear(ParameterStore<S>& store, const std::string& prefix, long long in, long long out,
           Rng& rng)
        : in_(in), out_(out) {
        make_param(store, w_, prefix + ".w", {in, out});
        make_param(store, b_, prefix + ".bias", {out});
        init_uniform_fan_in(w_, in, rng);
    }

    // x: [b x r x in] -> y: [b x r x out]
    void forward(const Tensor<S>& x, Tensor<S>& y) {
        x_ = &x;
        y.resize(x.b, x.r, out_);
        CMatMap<S> W(w_.w.data(), in_, out_);
        par_gemm<S>(y.flat(), x.flat(), W, false);
        MatMap<S> Y = y.flat();
        parallel_for(Y.rows(), [&](long long i) {
            for (long long j = 0; j < out_; ++j) Y(i, j) += b_.w[static_cast<std::size_t>(j)];
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        dx.resize(x_->b, x_->r, in_);
        CMatMap<S> W(w_.w.data(), in_, out_);
        par_gemm<S>(dx.flat(), dy.flat(), W.transpose(), false);
        MatMap<S> dW(w_.g.data(), in_, out_);
        par_gemm<S>(dW, x_->flat().transpose(), dy.flat(), true);
        colsum<S>(dy.flat(), b_.g.data(), true);
    }

    long long in() const { return in_; }
    long long out() const { return out_; }

private:
    long long in_, out_;
    Param<S> w_, b_;
    const Tensor<S>* x_ = nullptr;
};

// ---------------------------------------------------------------------------
// Dilated causal convolution with weight normalization
// ---------------------------------------------------------------------------

// Output(t, o) = bias(o) + sum_i sum_c Weff(o, c, i) * x(t - dilation*i, c),
// with Weff(o) = g(o) * v(o) / ||v(o)||. Left zero-padding of (k-1)*dilation
// keeps the length and makes the output at t independent of inputs after t.
template <class S>
class CausalConvWN {
public:
    CausalConvWN(ParameterStore<S>& store, const std::string& prefix, long long cin,
                 long long cout, int kernel, int dilation, Rng& rng)
        : cin_(cin), cout_(cout), k_(kernel), d_(dilation) {
        make_param(store, v_, prefix + ".v", {cout, cin, kernel});
        make_param(store, g_, prefix + ".g", {cout});
        make_param(store, b_, prefix + ".bias", {cout});
        init_uniform_fan_in(v_, cin * kernel, rng);
        // g starts at ||v|| so the effective weight equals v at init
        for (long long o = 0; o < cout; ++o) {
            double n2 = 0.0;
            for (long long j = 0; j < cin * kernel; ++j) {
                const double val = static_cast<double>(v_.w[static_cast<std::size_t>(o * cin * kernel + j)]);
                n2 += val * val;
            }
            g_.w[static_cast<std::size_t>(o)] = static_cast<S>(std::sqrt(n2));
        }
    }

    // x: [b x n x cin] -> y: [b x n x cout]
    void forward(const Tensor<S>& x, Tensor<S>& y) {
        x_ = &x;
        y.resize(x.b, x.r, cout_);
        materialize_weights();
        const long long n = x.r;
        parallel_for(x.b, [&](long long bi) {
            MatMap<S> Y = y.mat(bi);
            CMatMap<S> X = x.mat(bi);
            for (long long t = 0; t < n; ++t)
                for (long long o = 0; o < cout_; ++o) Y(t, o) = b_.w[static_cast<std::size_t>(o)];
            for (int i = 0; i < k_; ++i) {
                const long long shift = static_cast<long long>(d_) * i;
                if (shift >= n) break;
                CMatMap<S> Wi(wtap_.data() + static_cast<std::size_t>(i) * cin_ * cout_, cin_,
                              cout_);
                Y.middleRows(shift, n - shift).noalias() += X.middleRows(0, n - shift) * Wi;
            }
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        const Tensor<S>& x = *x_;
        const long long n = x.r;
        dx.resize(x.b, x.r, cin_);
        dx.set_zero();
        parallel_for(x.b, [&](long long bi) {
            MatMap<S> dX = dx.mat(bi);
            CMatMap<S> dY = dy.mat(bi);
            for (int i = 0; i < k_; ++i) {
                const long long shift = static_cast<long long>(d_) * i;
                if (shift >= n) break;
                CMatMap<S> Wi(wtap_.data() + static_cast<std::size_t>(i) * cin_ * cout_, cin_,
                              cout_);
                dX.middleRows(0, n - shift).noalias() += dY.middleRows(shift, n - shift) * Wi.transpose();
            }
        });

        // Per-sample partial dWeff, reduced over samples in index order.
        const std::size_t tap_sz = static_cast<std::size_t>(k_ * cin_ * cout_);
        dw_partial_.assign(static_cast<std::size_t>(x.b) * tap_sz, S(0));
        parallel_for(x.b, [&](long long bi) {
            CMatMap<S> X = x.mat(bi);
            CMatMap<S> dY = dy.mat(bi);
            S* base = dw_partial_.data() + static_cast<std::size_t>(bi) * tap_sz;
            for (int i = 0; i < k_; ++i) {
                const long long shift = static_cast<long long>(d_) * i;
                if (shift >= n) break;
                MatMap<S> dWi(base + static_cast<std::size_t>(i) * cin_ * cout_, cin_, cout_);
                dWi.noalias() = X.middleRows(0, n - shift).transpose() * dY.middleRows(shift, n - shift);
            }
        });
        std::vector<S> dweff(tap_sz, S(0));
        for (long long bi = 0; bi < x.b; ++bi) {
            const S* base = dw_partial_.data() + static_cast<std::size_t>(bi) * tap_sz;
            for (std::size_t j = 0; j < tap_sz; ++j) dweff[j] += base[j];
        }
        colsum<S>(dy.flat(), b_.g.data(), true);

        // Chain through the weight-norm parameterization.
        const long long fan = cin_ * k_;
        for (long long o = 0; o < cout_; ++o) {
            double norm2 = 0.0;
            for (long long j = 0; j < fan; ++j) {
                const double vv = static_cast<double>(v_.w[static_cast<std::size_t>(o * fan + j)]);
                norm2 += vv * vv;
            }
            const double norm = std::sqrt(norm2);
            double dot = 0.0;  // dWeff(o) . v_hat(o)
            for (long long c = 0; c < cin_; ++c)
                for (int i = 0; i < k_; ++i) {
                    const double dwe = static_cast<double>(
                        dweff[static_cast<std::size_t>(i) * cin_ * cout_ +
                              static_cast<std::size_t>(c) * cout_ + static_cast<std::size_t>(o)]);
                    const double vh =
                        static_cast<double>(v_.w[static_cast<std::size_t>(o * fan + c * k_ + i)]) / norm;
                    dot += dwe * vh;
                }
            g_.g[static_cast<std::size_t>(o)] += static_cast<S>(dot);
            const double gn = static_cast<double>(g_.w[static_cast<std::size_t>(o)]) / norm;
            for (long long c = 0; c < cin_; ++c)
                for (int i = 0; i < k_; ++i) {
                    const double dwe = static_cast<double>(
                        dweff[static_cast<std::size_t>(i) * cin_ * cout_ +
                              static_cast<std::size_t>(c) * cout_ + static_cast<std::size_t>(o)]);
                    const double vh =
                        static_cast<double>(v_.w[static_cast<std::size_t>(o * fan + c * k_ + i)]) / norm;
                    v_.g[static_cast<std::size_t>(o * fan + c * k_ + i)] +=
                        static_cast<S>(gn * (dwe - dot * vh));
                }
        }
    }

    int kernel() const { return k_; }
    int dilation() const { return d_; }

private:
    // wtap layout: [k][cin][cout] so each tap is GEMM-ready.
    void materialize_weights() {
        wtap_.resize(static_cast<std::size_t>(k_) * cin_ * cout_);
        const long long fan = cin_ * k_;
        for (long long o = 0; o < cout_; ++o) {
            double norm2 = 0.0;
            for (long long j = 0; j < fan; ++j) {
                const double vv = static_cast<double>(v_.w[static_cast<std::size_t>(o * fan + j)]);
                norm2 += vv * vv;
            }
            const double scale = static_cast<double>(g_.w[static_cast<std::size_t>(o)]) / std::sqrt(norm2);
            for (long long c = 0; c < cin_; ++c)
                for (int i = 0; i < k_; ++i)
                    wtap_[static_cast<std::size_t>(i) * cin_ * cout_ +
                          static_cast<std::size_t>(c) * cout_ + static_cast<std::size_t>(o)] =
                        static_cast<S>(scale *
                                       static_cast<double>(v_.w[static_cast<std::size_t>(o * fan + c * k_ + i)]));
        }
    }

    long long cin_, cout_;
    int k_, d_;
    Param<S> v_, g_, b_;
    std::vector<S> wtap_;
    std::vector<S> dw_partial_;
    const Tensor<S>* x_ = nullptr;
};

// ---------------------------------------------------------------------------
// ReLU / Dropout
// ---------------------------------------------------------------------------

template <class S>
class ReLU {
public:
    void forward(const Tensor<S>& x, Tensor<S>& y) {
        y.resize(x.b, x.r, x.c);
        mask_.resize(x.size());
        const S* xp = x.data();
        S* yp = y.data();
        const long long n = static_cast<long long>(x.size());
        parallel_for(n, [&](long long i) {
            const bool pos = xp[i] > S(0);
            mask_[static_cast<std::size_t>(i)] = pos;
            yp[i] = pos ? xp[i] : S(0);
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        dx.resize(dy.b, dy.r, dy.c);
        const S* dp = dy.data();
        S* xp = dx.data();
        const long long n = static_cast<long long>(dy.size());
        parallel_for(n, [&](long long i) { xp[i] = mask_[static_cast<std::size_t>(i)] ? dp[i] : S(0); });
    }

private:
    std::vector<char> mask_;
};

template <class S>
class Dropout {
public:
    explicit Dropout(double rate) : rate_(rate) {}

    void forward(const Tensor<S>& x, Tensor<S>& y, const RunMode& mode) {
        y.resize(x.b, x.r, x.c);
        const long long n = static_cast<long long>(x.size());
        active_ = mode.dropout && rate_ > 0.0;
        if (!active_) {
            std::copy(x.data(), x.data() + n, y.data());
            return;
        }
        mask_.resize(x.size());
        const S scale = static_cast<S>(1.0 / (1.0 - rate_));
        // One sequential draw per call keys a counter-based mask; the mask
        // itself is computed in parallel yet is thread-count independent.
        const std::uint64_t site = mode.rng->next_u64();
        const double rate = rate_;
        const S* xp = x.data();
        S* yp = y.data();
        parallel_for(n, [&](long long i) {
            const bool keep = mask_uniform(site, static_cast<std::uint64_t>(i)) >= rate;
            mask_[static_cast<std::size_t>(i)] = keep;
            yp[i] = keep ? xp[i] * scale : S(0);
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        dx.resize(dy.b, dy.r, dy.c);
        const long long n = static_cast<long long>(dy.size());
        if (!active_) {
            std::copy(dy.data(), dy.data() + n, dx.data());
            return;
        }
        const S scale = static_cast<S>(1.0 / (1.0 - rate_));
        const S* dp = dy.data();
        S* xp = dx.data();
        parallel_for(n, [&](long long i) {
            xp[i] = mask_[static_cast<std::size_t>(i)] ? dp[i] * scale : S(0);
        });
    }

    double rate() const { return rate_; }

private:
    double rate_;
    bool active_ = false;
    std::vector<char> mask_;
};

// ---------------------------------------------------------------------------
// LayerNorm over the feature (last) axis of every row
// ---------------------------------------------------------------------------

template <class S>
class LayerNorm {
public:
    LayerNorm(ParameterStore<S>& store, const std::string& prefix, long long dim)
        : dim_(dim) {
        make_param(store, gamma_, prefix + ".gamma", {dim});
        make_param(store, beta_, prefix + ".beta", {dim});
        std::fill(gamma_.w.begin(), gamma_.w.end(), S(1));
    }

    void forward(const Tensor<S>& x, Tensor<S>& y) {
        x_ = &x;
        y.resize(x.b, x.r, x.c);
        const long long rows = x.b * x.r;
        xhat_.resize(static_cast<std::size_t>(rows * dim_));
        inv_std_.resize(static_cast<std::size_t>(rows));
        const S* xp = x.data();
        S* yp = y.data();
        parallel_for(rows, [&](long long i) {
            const S* row = xp + i * dim_;
            double mean = 0.0;
            for (long long j = 0; j < dim_; ++j) mean += static_cast<double>(row[j]);
            mean /= static_cast<double>(dim_);
            double var = 0.0;
            for (long long j = 0; j < dim_; ++j) {
                const double dv = static_cast<double>(row[j]) - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(dim_);
            const double inv = 1.0 / std::sqrt(var + kEps);
            inv_std_[static_cast<std::size_t>(i)] = static_cast<S>(inv);
            S* xh = xhat_.data() + i * dim_;
            S* yr = yp + i * dim_;
            for (long long j = 0; j < dim_; ++j) {
                const S h = static_cast<S>((static_cast<double>(row[j]) - mean) * inv);
                xh[j] = h;
                yr[j] = gamma_.w[static_cast<std::size_t>(j)] * h + beta_.w[static_cast<std::size_t>(j)];
            }
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        dx.resize(dy.b, dy.r, dy.c);
        const long long rows = dy.b * dy.r;
        const S* dp = dy.data();
        S* dxp = dx.data();
        parallel_for(rows, [&](long long i) {
            const S* dr = dp + i * dim_;
            const S* xh = xhat_.data() + i * dim_;
            const double inv = static_cast<double>(inv_std_[static_cast<std::size_t>(i)]);
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (long long j = 0; j < dim_; ++j) {
                const double dxh = static_cast<double>(dr[j]) *
                                   static_cast<double>(gamma_.w[static_cast<std::size_t>(j)]);
                mean_dxh += dxh;
                mean_dxh_xh += dxh * static_cast<double>(xh[j]);
            }
            mean_dxh /= static_cast<double>(dim_);
            mean_dxh_xh /= static_cast<double>(dim_);
            S* dxr = dxp + i * dim_;
            for (long long j = 0; j < dim_; ++j) {
                const double dxh = static_cast<double>(dr[j]) *
                                   static_cast<double>(gamma_.w[static_cast<std::size_t>(j)]);
                dxr[j] = static_cast<S>(inv * (dxh - mean_dxh -
                                               static_cast<double>(xh[j]) * mean_dxh_xh));
            }
        });
        // Parameter grads: threads own disjoint feature ranges and walk the
        // rows in order with contiguous reads.
        {
            const int nt = max_threads();
            const long long chunk = (dim_ + nt - 1) / nt;
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
            for (int t = 0; t < nt; ++t) {
                const long long c0 = t * chunk;
                if (c0 >= dim_) continue;
                const long long c1 = std::min(dim_, c0 + chunk);
                for (long long i = 0; i < rows; ++i) {
                    const S* dr = dp + i * dim_;
                    const S* xh = xhat_.data() + i * dim_;
                    for (long long j = c0; j < c1; ++j) {
                        gamma_.g[static_cast<std::size_t>(j)] += dr[j] * xh[j];
                        beta_.g[static_cast<std::size_t>(j)] += dr[j];
                    }
                }
            }
        }
    }

    static constexpr double kEps = 1e-5;

private:
    long long dim_;
    Param<S> gamma_, beta_;
    std::vector<S> xhat_;
    std::vector<S> inv_std_;
    const Tensor<S>* x_ = nullptr;
};

// ---------------------------------------------------------------------------
// BatchNorm over the batch axis of [b x features]
// ---------------------------------------------------------------------------

template <class S>
class BatchNorm1d {
public:
    BatchNorm1d(ParameterStore<S>& store, const std::string& prefix, long long dim,
                double momentum = 0.1)
        : dim_(dim), momentum_(momentum) {
        make_param(store, gamma_, prefix + ".gamma", {dim});
        make_param(store, beta_, prefix + ".beta", {dim});
        make_param(store, rmean_, prefix + ".rmean", {dim}, /*is_buffer=*/true);
        make_param(store, rvar_, prefix + ".rvar", {dim}, /*is_buffer=*/true);
        std::fill(gamma_.w.begin(), gamma_.w.end(), S(1));
        std::fill(rvar_.w.begin(), rvar_.w.end(), S(1));
    }

    // x: [b x 1 x dim]
    void forward(const Tensor<S>& x, Tensor<S>& y, const RunMode& mode) {
        x_ = &x;
        train_ = mode.train;
        y.resize(x.b, x.r, x.c);
        const long long bsz = x.b;
        xhat_.resize(static_cast<std::size_t>(bsz * dim_));
        if (train_) {
            mean_.resize(static_cast<std::size_t>(dim_));
            inv_std_.resize(static_cast<std::size_t>(dim_));
            parallel_for(dim_, [&](long long j) {
                double m = 0.0;
                for (long long i = 0; i < bsz; ++i) m += static_cast<double>(x.data()[i * dim_ + j]);
                m /= static_cast<double>(bsz);
                double var = 0.0;
                for (long long i = 0; i < bsz; ++i) {
                    const double dv = static_cast<double>(x.data()[i * dim_ + j]) - m;
                    var += dv * dv;
                }
                var /= static_cast<double>(bsz);
                mean_[static_cast<std::size_t>(j)] = static_cast<S>(m);
                inv_std_[static_cast<std::size_t>(j)] = static_cast<S>(1.0 / std::sqrt(var + kEps));
                if (mode.update_running_stats) {
                    const double unbiased = bsz > 1 ? var * static_cast<double>(bsz) /
                                                          static_cast<double>(bsz - 1)
                                                    : var;
                    rmean_.w[static_cast<std::size_t>(j)] = static_cast<S>(
                        (1.0 - momentum_) * static_cast<double>(rmean_.w[static_cast<std::size_t>(j)]) +
                        momentum_ * m);
                    rvar_.w[static_cast<std::size_t>(j)] = static_cast<S>(
                        (1.0 - momentum_) * static_cast<double>(rvar_.w[static_cast<std::size_t>(j)]) +
                        momentum_ * unbiased);
                }
            });
        }
        parallel_for(bsz, [&](long long i) {
            for (long long j = 0; j < dim_; ++j) {
                const double m = train_ ? static_cast<double>(mean_[static_cast<std::size_t>(j)])
                                        : static_cast<double>(rmean_.w[static_cast<std::size_t>(j)]);
                const double inv =
                    train_ ? static_cast<double>(inv_std_[static_cast<std::size_t>(j)])
                           : 1.0 / std::sqrt(static_cast<double>(rvar_.w[static_cast<std::size_t>(j)]) + kEps);
                const double h = (static_cast<double>(x.data()[i * dim_ + j]) - m) * inv;
                xhat_[static_cast<std::size_t>(i * dim_ + j)] = static_cast<S>(h);
                y.data()[i * dim_ + j] = static_cast<S>(
                    static_cast<double>(gamma_.w[static_cast<std::size_t>(j)]) * h +
                    static_cast<double>(beta_.w[static_cast<std::size_t>(j)]));
            }
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        const long long bsz = dy.b;
        dx.resize(dy.b, dy.r, dy.c);
        parallel_for(dim_, [&](long long j) {
            const double gamma = static_cast<double>(gamma_.w[static_cast<std::size_t>(j)]);
            const double inv =
                train_ ? static_cast<double>(inv_std_[static_cast<std::size_t>(j)])
                       : 1.0 / std::sqrt(static_cast<double>(rvar_.w[static_cast<std::size_t>(j)]) + kEps);
            double dg = 0.0, db = 0.0, sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (long long i = 0; i < bsz; ++i) {
                const double d = static_cast<double>(dy.data()[i * dim_ + j]);
                const double xh = static_cast<double>(xhat_[static_cast<std::size_t>(i * dim_ + j)]);
                dg += d * xh;
                db += d;
                sum_dxh += d * gamma;
                sum_dxh_xh += d * gamma * xh;
            }
            gamma_.g[static_cast<std::size_t>(j)] += static_cast<S>(dg);
            beta_.g[static_cast<std::size_t>(j)] += static_cast<S>(db);
            for (long long i = 0; i < bsz; ++i) {
                const double dxh = static_cast<double>(dy.data()[i * dim_ + j]) * gamma;
                const double xh = static_cast<double>(xhat_[static_cast<std::size_t>(i * dim_ + j)]);
                double dv;
                if (train_) {
                    dv = inv * (dxh - sum_dxh / static_cast<double>(bsz) -
                                xh * sum_dxh_xh / static_cast<double>(bsz));
                } else {
                    dv = inv * dxh;  // running stats are constants
                }
                dx.data()[i * dim_ + j] = static_cast<S>(dv);
            }
        });
    }

    static constexpr double kEps = 1e-5;

private:
    long long dim_;
    double momentum_;
    Param<S> gamma_, beta_, rmean_, rvar_;
    std::vector<S> xhat_, mean_, inv_std_;
    bool train_ = false;
    const Tensor<S>* x_ = nullptr;
};

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product self-attention
// ---------------------------------------------------------------------------

template <class S>
class MultiHeadSelfAttention {
public:
    MultiHeadSelfAttention(ParameterStore<S>& store, const std::string& prefix, long long d,
                           int heads, double attn_dropout, Rng& rng)
        : d_(d), h_(heads), dh_(d / heads), drop_rate_(attn_dropout) {
        if (d % heads != 0) throw ConfigError("attention: d_embed must be divisible by n_heads");
        make_param(store, wq_, prefix + ".q.w", {d, d});
        make_param(store, bq_, prefix + ".q.bias", {d});
        make_param(store, wk_, prefix + ".k.w", {d, d});
        make_param(store, bk_, prefix + ".k.bias", {d});
        make_param(store, wv_, prefix + ".v.w", {d, d});
        make_param(store, bv_, prefix + ".v.bias", {d});
        make_param(store, wo_, prefix + ".o.w", {d, d});
        make_param(store, bo_, prefix + ".o.bias", {d});
        for (Param<S>* p : {&wq_, &wk_, &wv_, &wo_}) init_uniform_fan_in(*p, d, rng);
    }

    // x: [b x t x d] -> y: [b x t x d]
    void forward(const Tensor<S>& x, Tensor<S>& y, const RunMode& mode) {
        x_ = &x;
        const long long b = x.b, t = x.r;
        y.resize(b, t, d_);
        q_.resize(b, t, d_);
        k_.resize(b, t, d_);
        v_.resize(b, t, d_);
        ctx_.resize(b, t, d_);
        probs_.resize(b * h_, t, t);
        drop_active_ = mode.dropout && drop_rate_ > 0.0;
        std::uint64_t site = 0;
        if (drop_active_) {
            drop_mask_.resize(probs_.size());
            probs_dropped_.resize(b * h_, t, t);
            site = mode.rng->next_u64();
        }

        project(x, wq_, bq_, q_);
        project(x, wk_, bk_, k_);
        project(x, wv_, bv_, v_);

        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh_)));
        const S drop_scale = static_cast<S>(1.0 / (1.0 - drop_rate_));
        parallel_for(b * h_, [&](long long bh) {
            const long long bi = bh / h_;
            const long long hi = bh % h_;
            auto Q = q_.mat(bi).middleCols(hi * dh_, dh_);
            auto K = k_.mat(bi).middleCols(hi * dh_, dh_);
            auto V = v_.mat(bi).middleCols(hi * dh_, dh_);
            MatMap<S> P = probs_.mat(bh);
            P.noalias() = Q * K.transpose() * scale;
            // row-stable softmax, vectorized over each contiguous row
            for (long long i = 0; i < t; ++i) {
                Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> row(P.data() + i * t, t);
                row -= row.maxCoeff();
                row = row.exp();
                row *= S(1) / row.sum();
            }
            auto C = ctx_.mat(bi).middleCols(hi * dh_, dh_);
            if (drop_active_) {
                // mask and dropped probabilities are produced while the row
                // block is hot; backward reuses both buffers
                char* m = drop_mask_.data() + static_cast<std::size_t>(bh) * t * t;
                fill_mask_bytes(site, static_cast<std::uint64_t>(bh) * t * t,
                                static_cast<std::uint64_t>(bh + 1) * t * t, drop_rate_, m);
                MatMap<S> Pd = probs_dropped_.mat(bh);
                for (long long i = 0; i < t * t; ++i)
                    Pd.data()[i] = m[i] ? P.data()[i] * drop_scale : S(0);
                C.noalias() = Pd * V;
            } else {
                C.noalias() = P * V;
            }
        });

        CMatMap<S> Wo(wo_.w.data(), d_, d_);
        par_gemm<S>(y.flat(), ctx_.flat(), Wo, false);
        MatMap<S> Y = y.flat();
        parallel_for(Y.rows(), [&](long long i) {
            for (long long j = 0; j < d_; ++j) Y(i, j) += bo_.w[static_cast<std::size_t>(j)];
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        const Tensor<S>& x = *x_;
        const long long b = x.b, t = x.r;
        dx.resize(b, t, d_);

        // dCtx and dWo
        dctx_.resize(b, t, d_);
        CMatMap<S> Wo(wo_.w.data(), d_, d_);
        par_gemm<S>(dctx_.flat(), dy.flat(), Wo.transpose(), false);
        MatMap<S> dWo(wo_.g.data(), d_, d_);
        par_gemm<S>(dWo, ctx_.flat().transpose(), dy.flat(), true);
        colsum<S>(dy.flat(), bo_.g.data(), true);

        dq_.resize(b, t, d_);
        dk_.resize(b, t, d_);
        dv_.resize(b, t, d_);
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh_)));
        const S drop_scale = static_cast<S>(1.0 / (1.0 - drop_rate_));
        parallel_for(b * h_, [&](long long bh) {
            const long long bi = bh / h_;
            const long long hi = bh % h_;
            auto Q = q_.mat(bi).middleCols(hi * dh_, dh_);
            auto K = k_.mat(bi).middleCols(hi * dh_, dh_);
            auto V = v_.mat(bi).middleCols(hi * dh_, dh_);
            auto dC = dctx_.mat(bi).middleCols(hi * dh_, dh_);
            auto P = probs_.mat(bh);

            auto& sp = scratch_t();
            if (sp.size() < static_cast<std::size_t>(t * t))
                sp.resize(static_cast<std::size_t>(t * t));
            MatMap<S> dP(sp.data(), t, t);
            if (drop_active_) {
                auto Pd = probs_dropped_.mat(bh);
                dv_.mat(bi).middleCols(hi * dh_, dh_).noalias() = Pd.transpose() * dC;
            } else {
                dv_.mat(bi).middleCols(hi * dh_, dh_).noalias() = P.transpose() * dC;
            }
            dP.noalias() = dC * V.transpose();
            if (drop_active_) {
                const char* m = drop_mask_.data() + static_cast<std::size_t>(bh) * t * t;
                for (long long i = 0; i < t * t; ++i)
                    dP.data()[i] = m[i] ? dP.data()[i] * drop_scale : S(0);
            }
            // softmax backward in place: dS = P .* (dP - rowdot(dP, P))
            for (long long i = 0; i < t; ++i) {
                Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> drow(dP.data() + i * t, t);
                Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> prow(P.data() + i * t, t);
                const S dot = (drow * prow).sum();
                drow = prow * (drow - dot);
            }
            dq_.mat(bi).middleCols(hi * dh_, dh_).noalias() = dP * K * scale;
            dk_.mat(bi).middleCols(hi * dh_, dh_).noalias() = dP.transpose() * Q * scale;
        });

        // input gradient and projection parameter gradients
        CMatMap<S> Wq(wq_.w.data(), d_, d_), Wk(wk_.w.data(), d_, d_), Wv(wv_.w.data(), d_, d_);
        par_gemm<S>(dx.flat(), dq_.flat(), Wq.transpose(), false);
        par_gemm<S>(dx.flat(), dk_.flat(), Wk.transpose(), true);
        par_gemm<S>(dx.flat(), dv_.flat(), Wv.transpose(), true);
        MatMap<S> dWq(wq_.g.data(), d_, d_), dWk(wk_.g.data(), d_, d_), dWv(wv_.g.data(), d_, d_);
        par_gemm<S>(dWq, x.flat().transpose(), dq_.flat(), true);
        par_gemm<S>(dWk, x.flat().transpose(), dk_.flat(), true);
        par_gemm<S>(dWv, x.flat().transpose(), dv_.flat(), true);
        colsum<S>(dq_.flat(), bq_.g.data(), true);
        colsum<S>(dk_.flat(), bk_.g.data(), true);
        colsum<S>(dv_.flat(), bv_.g.data(), true);
    }

    // Post-softmax attention rows of sample bi (pre-dropout), head-major.
    void copy_attention(long long bi, std::vector<S>& out) const {
        const long long t = probs_.r;
        out.resize(static_cast<std::size_t>(h_ * t * t));
        for (long long hi = 0; hi < h_; ++hi) {
            CMatMap<S> P = probs_.mat(bi * h_ + hi);
            std::copy(P.data(), P.data() + t * t, out.data() + hi * t * t);
        }
    }

    int heads() const { return h_; }

private:
    void project(const Tensor<S>& x, Param<S>& w, Param<S>& bias, Tensor<S>& out) {
        CMatMap<S> W(w.w.data(), d_, d_);
        par_gemm<S>(out.flat(), x.flat(), W, false);
        MatMap<S> O = out.flat();
        parallel_for(O.rows(), [&](long long i) {
            for (long long j = 0; j < d_; ++j) O(i, j) += bias.w[static_cast<std::size_t>(j)];
        });
    }

    // per-thread scratch for [t x t] temporaries
    static std::vector<S>& scratch_t() {
        thread_local std::vector<S> buf;
        return buf;
    }

    long long d_;
    int h_;
    long long dh_;
    double drop_rate_;
    bool drop_active_ = false;
    Param<S> wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
    Tensor<S> q_, k_, v_, ctx_, probs_, probs_dropped_, dctx_, dq_, dk_, dv_;
    std::vector<char> drop_mask_;
    const Tensor<S>* x_ = nullptr;
};

// ---------------------------------------------------------------------------
// Global average pooling over rows
// ---------------------------------------------------------------------------

template <class S>
class GlobalAvgPool {
public:
    // x: [b x n x d] -> y: [b x 1 x d]
    void forward(const Tensor<S>& x, Tensor<S>& y) {
        n_ = x.r;
        y.resize(x.b, 1, x.c);
        const S inv = static_cast<S>(1.0 / static_cast<double>(x.r));
        parallel_for(x.b, [&](long long bi) {
            const S* src = x.data() + bi * x.r * x.c;
            S* dst = y.data() + bi * x.c;
            for (long long j = 0; j < x.c; ++j) dst[j] = S(0);
            for (long long i = 0; i < x.r; ++i) {
                const S* row = src + i * x.c;
                for (long long j = 0; j < x.c; ++j) dst[j] += row[j];
            }
            for (long long j = 0; j < x.c; ++j) dst[j] *= inv;
        });
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) {
        dx.resize(dy.b, n_, dy.c);
        const S inv = static_cast<S>(1.0 / static_cast<double>(n_));
        parallel_for(dy.b, [&](long long bi) {
            MatMap<S> dX = dx.mat(bi);
            CMatMap<S> dY = dy.mat(bi);
            for (long long i = 0; i < n_; ++i)
                for (long long j = 0; j < dy.c; ++j) dX(i, j) = dY(0, j) * inv;
        });
    }

private:
    long long n_ = 0;
};

}  // namespace physiossl::nn
