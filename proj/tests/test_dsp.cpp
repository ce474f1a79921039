#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>
#include <numeric>

#include "doctest.h"
#include "physiossl/dsp.hpp"
#include "physiossl/rng.hpp"

using namespace physiossl;
using namespace physiossl::dsp;

namespace {

std::vector<double> sine(double freq, double fs, std::size_t n, double amp = 1.0,
                         double phase = 0.0) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / fs + phase);
    return x;
}

double rms(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += x[i] * x[i];
    return std::sqrt(acc / static_cast<double>(hi - lo));
}

Recording make_recording(std::size_t n_eda, double fs_eda = 4.0) {
    Recording r;
    r.subject_id = "S1";
    Rng rng(99);
    for (Modality m : kAllModalities) {
        Stream st;
        st.fs = (m == Modality::BVP) ? 16.0 * fs_eda : fs_eda;
        const std::size_t n = (m == Modality::BVP) ? 16 * n_eda : n_eda;
        st.samples.resize(n);
        for (auto& v : st.samples) v = rng.gaussian() + 3.0;
        r.streams[m] = std::move(st);
    }
    return r;
}

// frequency response of the designed sections, evaluated independently of
// the closed form they are checked against
double sos_magnitude(const std::vector<BiquadSection>& sos, double f, double fs) {
    const std::complex<double> z = std::exp(std::complex<double>(0.0, -2.0 * M_PI * f / fs));
    std::complex<double> h = 1.0;
    for (const auto& s : sos)
        h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z);
    return std::abs(h);
}

}  // namespace

// ---------------------------------------------------------------------------
// Butterworth
// ---------------------------------------------------------------------------

TEST_CASE("designed filter matches the analytic magnitude response") {
    for (int order : {1, 2, 3, 4, 5, 8}) {
        auto sos = design_butterworth_lowpass(4.0, 0.5, order);
        for (double f : {0.05, 0.2, 0.5, 0.9, 1.5, 1.9}) {
            const double mag = sos_magnitude(sos, f, 4.0);
            const double expect = std::sqrt(butterworth_forward_backward_gain(f, 4.0, 0.5, order));
            CHECK(mag == doctest::Approx(expect).epsilon(1e-9));
        }
    }
}

TEST_CASE("constant sequence passes with unit DC gain") {
    std::vector<double> x(200, 5.0);
    for (double cutoff : {0.1, 0.5, 1.5}) {
        auto y = butterworth_lowpass(x, 4.0, cutoff, 4);
        REQUIRE(y.size() == x.size());
        for (double v : y) CHECK(v == doctest::Approx(5.0).epsilon(1e-9));
    }
}

TEST_CASE("stopband sine attenuates per the forward-backward oracle") {
    // EDA-style config: fs 4 Hz, cutoff 0.5 Hz, order 4, pure 1.5 Hz sine
    const double fs = 4.0, cutoff = 0.5, f = 1.5;
    const std::size_t n = 16384;
    auto x = sine(f, fs, n);
    auto y = butterworth_lowpass(x, fs, cutoff, 4);
    REQUIRE(y.size() == n);
    const double expect = butterworth_forward_backward_gain(f, fs, cutoff, 4);
    // steady-state region away from the edges
    const double ratio = rms(y, n / 4, 3 * n / 4) / rms(x, n / 4, 3 * n / 4);
    CHECK(ratio == doctest::Approx(expect).epsilon(0.10));
}

TEST_CASE("passband sine is nearly untouched") {
    const double fs = 64.0, cutoff = 2.0, f = 0.2;
    auto x = sine(f, fs, 8192);
    auto y = butterworth_lowpass(x, fs, cutoff, 4);
    const double ratio = rms(y, 2048, 6144) / rms(x, 2048, 6144);
    CHECK(ratio == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("zero-phase application does not shift a slow sine") {
    const double fs = 4.0, f = 0.1;
    const std::size_t n = 4096;
    auto x = sine(f, fs, n);
    auto y = butterworth_lowpass(x, fs, 0.5, 4);
    // cross-correlation peak at zero lag
    double best = -1e300;
    int best_lag = 0;
    for (int lag = -8; lag <= 8; ++lag) {
        double acc = 0.0;
        for (std::size_t i = 512; i < n - 512; ++i)
            acc += x[i] * y[static_cast<std::size_t>(static_cast<long long>(i) + lag)];
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    CHECK(best_lag == 0);
}

TEST_CASE("invalid filter configs are rejected") {
    std::vector<double> x(100, 1.0);
    CHECK_THROWS_AS((void)butterworth_lowpass(x, 4.0, 2.0, 4), ConfigError);   // cutoff == Nyquist
    CHECK_THROWS_AS((void)butterworth_lowpass(x, 4.0, 2.5, 4), ConfigError);   // above Nyquist
    CHECK_THROWS_AS((void)design_butterworth_lowpass(4.0, 0.5, 0), ConfigError);
    std::vector<double> tiny(12, 1.0);
    CHECK_THROWS_AS((void)butterworth_lowpass(tiny, 4.0, 0.5, 4), InputError);  // len <= 3*order
}

// ---------------------------------------------------------------------------
// z-score
// ---------------------------------------------------------------------------

TEST_CASE("zscore maps constants to zeros") {
    std::vector<double> x(4, 3.0);
    auto y = zscore_normalize(x);
    for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("zscore two-point example") {
    auto y = zscore_normalize({0.0, 2.0});
    CHECK(y[0] == doctest::Approx(-1.0));
    CHECK(y[1] == doctest::Approx(1.0));
}

TEST_CASE("zscore output moments and idempotence") {
    Rng rng(4);
    std::vector<double> x(1000);
    for (auto& v : x) v = 2.0 + 3.0 * rng.gaussian();
    auto y = zscore_normalize(x);
    double mean = std::accumulate(y.begin(), y.end(), 0.0) / 1000.0;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= 1000.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);

    auto y2 = zscore_normalize(y);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y2[i] == doctest::Approx(y[i]).epsilon(1e-6));
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

TEST_CASE("identity resample returns the input") {
    std::vector<double> x = {1.0, 2.0, 3.0};
    CHECK(resample_to(x, 4.0, 4.0) == x);
}

TEST_CASE("60 s of 64 Hz becomes 240 samples at 4 Hz") {
    std::vector<double> x(3840, 0.0);
    CHECK(resample_to(x, 64.0, 4.0).size() == 240);
}

TEST_CASE("linear ramp resamples onto the ideal line") {
    const std::size_t n = 3840;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i) / (n - 1);
    auto y = resample_to(x, 64.0, 4.0);
    REQUIRE(y.size() == 240);
    for (std::size_t j = 0; j < y.size(); ++j) {
        const double ideal = 16.0 * static_cast<double>(j) / (n - 1);
        CHECK(std::abs(y[j] - ideal) < 1e-6);
    }
}

TEST_CASE("monotone input stays monotone") {
    Rng rng(8);
    std::vector<double> x(513);
    x[0] = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) x[i] = x[i - 1] + rng.uniform();
    auto y = resample_to(x, 32.0, 4.0);
    for (std::size_t i = 1; i < y.size(); ++i) CHECK(y[i] >= y[i - 1]);
}

TEST_CASE("upsampling is rejected") {
    std::vector<double> x(10, 0.0);
    CHECK_THROWS_AS((void)resample_to(x, 4.0, 8.0), ConfigError);
}

// ---------------------------------------------------------------------------
// majority label
// ---------------------------------------------------------------------------

TEST_CASE("majority label cases") {
    CHECK(majority_label({2, 2, 2}) == 2);
    CHECK(majority_label({1, 1, 2}) == 1);
    CHECK(majority_label({0, 1, 0, 1}) == 0);  // tie -> smallest id
    CHECK(majority_label({5, 3, 3, 5, 7}) == 3);
    CHECK_THROWS_AS((void)majority_label({}), InputError);
}

// ---------------------------------------------------------------------------
// segmentation
// ---------------------------------------------------------------------------

namespace {

Recording resampled_recording(std::size_t len, double fs = 4.0) {
    Recording r;
    r.subject_id = "S1";
    r.stage = PipelineStage::Resampled;
    Rng rng(17);
    for (Modality m : kAllModalities) {
        Stream st;
        st.fs = fs;
        st.samples.resize(len);
        for (auto& v : st.samples) v = rng.gaussian();
        r.streams[m] = std::move(st);
    }
    return r;
}

}  // namespace

TEST_CASE("single-window recording yields one window") {
    auto r = resampled_recording(240);
    auto res = segment_windows(r, 60.0, 0.995);
    CHECK(res.windows.size() == 1);
    CHECK(res.windows[0].n_steps == 240);
    CHECK(res.windows[0].t_start == 0.0);
}

TEST_CASE("two disjoint windows tile 480 samples") {
    auto r = resampled_recording(480);
    auto res = segment_windows(r, 60.0, 0.0);
    REQUIRE(res.windows.size() == 2);
    CHECK(res.windows[1].t_start == doctest::Approx(60.0));
}

TEST_CASE("99.5% overlap gives step 1 and 761 windows for L=1000") {
    auto r = resampled_recording(1000);
    auto res = segment_windows(r, 60.0, 0.995);
    CHECK(res.windows.size() == 761);
}

TEST_CASE("short recording yields empty result with a flag") {
    auto r = resampled_recording(100);
    auto res = segment_windows(r, 60.0, 0.5);
    CHECK(res.windows.empty());
    CHECK(res.too_short);
}

TEST_CASE("overlap-0 windows reconstruct a prefix of the stream") {
    auto r = resampled_recording(720);
    auto res = segment_windows(r, 60.0, 0.0);
    REQUIRE(res.windows.size() == 3);
    const auto& eda = r.streams.at(Modality::EDA).samples;
    std::size_t k = 0;
    for (const auto& w : res.windows)
        for (int t = 0; t < w.n_steps; ++t) CHECK(w.at(t, 0) == eda[k++]);
}

TEST_CASE("windows inherit the majority label over their span") {
    auto r = resampled_recording(480);
    // first 60 s labeled 1, next 60 s labeled 2, at 1 Hz
    for (int t = 0; t < 120; ++t) r.labels.push_back({static_cast<double>(t), t < 60 ? 1 : 2});
    auto res = segment_windows(r, 60.0, 0.0);
    REQUIRE(res.windows.size() == 2);
    CHECK(res.windows[0].label == 1);
    CHECK(res.windows[1].label == 2);
}

TEST_CASE("pipeline stage order is enforced") {
    auto raw = make_recording(1000);
    CHECK_THROWS_AS((void)segment_windows(raw, 60.0, 0.0), ConfigError);
    CHECK_THROWS_AS((void)normalize_recording(raw), ConfigError);
    CHECK_THROWS_AS((void)resample_recording(raw, 4.0), ConfigError);

    std::map<Modality, double> cutoffs = {
        {Modality::EDA, 0.5}, {Modality::BVP, 2.0}, {Modality::TEMP, 0.5}};
    auto filtered = filter_recording(raw, cutoffs, 4);
    CHECK(filtered.stage == PipelineStage::Filtered);
    CHECK_THROWS_AS((void)filter_recording(filtered, cutoffs, 4), ConfigError);
    auto normalized = normalize_recording(filtered);
    auto resampled = resample_recording(normalized, 4.0);
    auto res = segment_windows(resampled, 60.0, 0.0);
    CHECK(!res.windows.empty());
}

TEST_CASE("full pipeline is deterministic") {
    auto r1 = make_recording(2000);
    auto r2 = make_recording(2000);
    PreprocessConfig cfg;
    auto a = preprocess_recording(r1, cfg);
    auto b = preprocess_recording(r2, cfg);
    REQUIRE(a.windows.size() == b.windows.size());
    for (std::size_t i = 0; i < a.windows.size(); ++i)
        CHECK(a.windows[i].values == b.windows[i].values);
}

TEST_CASE("windows carry no NaN and satisfy the shape invariant") {
    auto r = make_recording(2000);
    PreprocessConfig cfg;
    auto res = preprocess_recording(r, cfg);
    REQUIRE(!res.windows.empty());
    for (const auto& w : res.windows) {
        CHECK(w.n_steps == 240);
        CHECK(w.values.size() == 240u * 3u);
        for (double v : w.values) CHECK(std::isfinite(v));
    }
}
