// Batched row-major tensors and deterministic parallel GEMM helpers.
//
// Determinism contract: every floating-point reduction happens in a fixed
// order that does not depend on the OpenMP thread count. Parallel regions
// only ever write disjoint output elements; each output element's
// accumulation runs sequentially inside one thread (Eigen products are
// single-threaded here, see EIGEN_DONT_PARALLELIZE).
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace physiossl::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<Mat<S>>;
template <class S>
using CMatMap = Eigen::Map<const Mat<S>>;

// batch x rows x cols, contiguous row-major. Buffers grow but never shrink,
// so per-layer scratch is reused across batches.
template <class S>
struct Tensor {
    long long b = 0, r = 0, c = 0;
    std::vector<S> v;

    Tensor() = default;
    Tensor(long long b_, long long r_, long long c_) { resize(b_, r_, c_); }

    void resize(long long b_, long long r_, long long c_) {
        b = b_;
        r = r_;
        c = c_;
        const auto need = static_cast<std::size_t>(b * r * c);
        if (v.size() < need) v.resize(need);
    }

    std::size_t size() const { return static_cast<std::size_t>(b * r * c); }
    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    MatMap<S> mat(long long i) { return MatMap<S>(v.data() + i * r * c, r, c); }
    CMatMap<S> mat(long long i) const { return CMatMap<S>(v.data() + i * r * c, r, c); }
    // all samples stacked: [b*r x c]
    MatMap<S> flat() { return MatMap<S>(v.data(), b * r, c); }
    CMatMap<S> flat() const { return CMatMap<S>(v.data(), b * r, c); }

    void set_zero() { std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(size()), S(0)); }
};

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

template <class F>
void parallel_for(long long n, F&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < n; ++i) fn(i);
}

// C[rows x n] (+)= A[rows x k] * B[k x n], parallel over output row chunks.
template <class S, class EA, class EB>
void par_gemm(MatMap<S> C, const EA& A, const EB& B, bool accumulate) {
    const long long rows = C.rows();
    const int nt = max_threads();
    const long long chunk = (rows + nt - 1) / nt;
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
    for (int t = 0; t < nt; ++t) {
        const long long r0 = t * chunk;
        if (r0 >= rows) continue;
        const long long len = std::min(chunk, rows - r0);
        if (accumulate)
            C.middleRows(r0, len).noalias() += A.middleRows(r0, len) * B;
        else
            C.middleRows(r0, len).noalias() = A.middleRows(r0, len) * B;
    }
}

// Column reduction: out[j] (+)= sum over rows of X(:, j). Threads own
// disjoint column ranges and walk the rows in ascending order with
// contiguous reads, so the result is independent of the thread count.
template <class S, class E>
void colsum(const E& X, S* out, bool accumulate) {
    const long long cols = X.cols();
    const long long rows = X.rows();
    const int nt = max_threads();
    const long long chunk = (cols + nt - 1) / nt;
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
    for (int t = 0; t < nt; ++t) {
        const long long c0 = t * chunk;
        if (c0 >= cols) continue;
        const long long c1 = std::min(cols, c0 + chunk);
        if (!accumulate)
            for (long long j = c0; j < c1; ++j) out[j] = S(0);
        for (long long i = 0; i < rows; ++i) {
            const auto row = X.row(i);
            for (long long j = c0; j < c1; ++j) out[j] += row(j);
        }
    }
}

// Counter-based Bernoulli masks for dropout: element i keeps its value iff
// hash(site_seed, i) maps above the drop rate. Fully parallel and
// deterministic for any thread count.
inline std::uint64_t mask_hash(std::uint64_t site_seed, std::uint64_t i) {
    std::uint64_t z = site_seed + (i + 1) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline double mask_uniform(std::uint64_t site_seed, std::uint64_t i) {
    return (mask_hash(site_seed, i) >> 11) * 0x1.0p-53;
}

// Fills keep-flags for [begin, end) of a mask stream, four elements per
// hash via 16-bit lanes (the drop rate is quantized to 1/65536).
inline void fill_mask_bytes(std::uint64_t site_seed, std::uint64_t begin, std::uint64_t end,
                            double rate, char* out) {
    const auto threshold = static_cast<std::uint32_t>(rate * 65536.0 + 0.5);
    std::uint64_t i = begin;
    while (i < end && (i & 3u) != 0) {
        const std::uint64_t h = mask_hash(site_seed, i >> 2);
        out[i - begin] = static_cast<char>(((h >> (16 * (i & 3u))) & 0xffffu) >= threshold);
        ++i;
    }
    for (; i + 4 <= end; i += 4) {
        const std::uint64_t h = mask_hash(site_seed, i >> 2);
        out[i - begin + 0] = static_cast<char>(((h >> 0) & 0xffffu) >= threshold);
        out[i - begin + 1] = static_cast<char>(((h >> 16) & 0xffffu) >= threshold);
        out[i - begin + 2] = static_cast<char>(((h >> 32) & 0xffffu) >= threshold);
        out[i - begin + 3] = static_cast<char>(((h >> 48) & 0xffffu) >= threshold);
    }
    for (; i < end; ++i) {
        const std::uint64_t h = mask_hash(site_seed, i >> 2);
        out[i - begin] = static_cast<char>(((h >> (16 * (i & 3u))) & 0xffffu) >= threshold);
    }
}

}  // namespace physiossl::nn
