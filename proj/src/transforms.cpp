#include "physiossl/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace physiossl::transforms {

using dsp::kNumModalities;

const char* transform_name(TransformKind k) {
    switch (k) {
        case TransformKind::Original: return "original";
        case TransformKind::Noise: return "noise";
        case TransformKind::Permutation: return "permutation";
        case TransformKind::MagnitudeWarp: return "magnitude_warp";
        case TransformKind::TimeWarp: return "time_warp";
        case TransformKind::Crop: return "crop";
    }
    return "?";
}

TransformKind transform_from_letter(char c) {
    switch (c) {
        case 'N': return TransformKind::Noise;
        case 'M': return TransformKind::MagnitudeWarp;
        case 'P': return TransformKind::Permutation;
        case 'T': return TransformKind::TimeWarp;
        case 'C': return TransformKind::Crop;
        default: throw ConfigError(std::string("unknown transform letter: ") + c);
    }
}

void TransformConfig::validate() const {
    if (perm_segments < 1) throw ConfigError("transforms: perm_segments must be >= 1");
    if (mw_knots < 2) throw ConfigError("transforms: mw_knots must be >= 2");
    if (tw_segments < 2) throw ConfigError("transforms: tw_segments must be >= 2");
    if (!(tw_stretch >= 1.0)) throw ConfigError("transforms: tw_stretch must be >= 1");
    if (!(crop_ratio > 0.0) || crop_ratio > 1.0)
        throw ConfigError("transforms: crop_ratio must be in (0,1]");
    if (!(mw_sigma >= 0.0)) throw ConfigError("transforms: mw_sigma must be >= 0");
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

std::vector<double> linear_resize(const std::vector<double>& x, std::size_t new_len) {
    const std::size_t n = x.size();
    if (n == 0 || new_len == 0) return {};
    if (new_len == n) return x;
    std::vector<double> out(new_len);
    if (n == 1 || new_len == 1) {
        std::fill(out.begin(), out.end(), x[0]);
        if (new_len == 1) out[0] = x[0];
        return out;
    }
    const double scale = static_cast<double>(n - 1) / static_cast<double>(new_len - 1);
    for (std::size_t j = 0; j < new_len; ++j) {
        const double p = static_cast<double>(j) * scale;
        auto i = static_cast<std::size_t>(p);
        if (i >= n - 1) {
            out[j] = x[n - 1];
            continue;
        }
        const double frac = p - static_cast<double>(i);
        out[j] = x[i] + frac * (x[i + 1] - x[i]);
    }
    return out;
}

CubicSpline::CubicSpline(std::vector<double> xs, std::vector<double> ys)
    : xs_(std::move(xs)), ys_(std::move(ys)) {
    const std::size_t n = xs_.size();
    if (n < 2 || ys_.size() != n) throw ConfigError("CubicSpline: need >= 2 knots");
    m_.assign(n, 0.0);
    if (n == 2) return;  // natural spline through 2 points is linear
    // Tridiagonal solve for second derivatives (natural boundary m0 = mn = 0).
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = xs_[i] - xs_[i - 1];
        const double h1 = xs_[i + 1] - xs_[i];
        a[i] = h0;
        b[i] = 2.0 * (h0 + h1);
        c[i] = h1;
        d[i] = 6.0 * ((ys_[i + 1] - ys_[i]) / h1 - (ys_[i] - ys_[i - 1]) / h0);
    }
    for (std::size_t i = 2; i + 1 < n; ++i) {
        const double w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        d[i] -= w * d[i - 1];
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
        m_[i] = (d[i] - c[i] * (i + 2 < n ? m_[i + 1] : 0.0)) / b[i];
        if (i == 1) break;
    }
}

double CubicSpline::operator()(double t) const {
    const std::size_t n = xs_.size();
    if (t <= xs_.front()) t = xs_.front();
    if (t >= xs_.back()) t = xs_.back();
    std::size_t i = 0;
    {
        auto it = std::upper_bound(xs_.begin(), xs_.end(), t);
        i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - xs_.begin()) - 1));
        if (i >= n - 1) i = n - 2;
    }
    const double h = xs_[i + 1] - xs_[i];
    const double u = (t - xs_[i]) / h;
    const double u1 = 1.0 - u;
    return u1 * ys_[i] + u * ys_[i + 1] +
           (h * h / 6.0) * ((u1 * u1 * u1 - u1) * m_[i] + (u * u * u - u) * m_[i + 1]);
}

namespace {

// Segment boundaries: first (n mod k) segments get one extra sample.
std::vector<std::size_t> segment_sizes(std::size_t n, int k) {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k));
    const std::size_t base = n / static_cast<std::size_t>(k);
    const std::size_t extra = n % static_cast<std::size_t>(k);
    for (std::size_t i = 0; i < sizes.size(); ++i) sizes[i] = base + (i < extra ? 1 : 0);
    return sizes;
}

}  // namespace

// ---------------------------------------------------------------------------
// the five transforms
// ---------------------------------------------------------------------------

std::vector<double> add_gaussian_noise(const std::vector<double>& x, double snr_db, Rng& rng) {
    double p_sig = 0.0;
    for (double v : x) p_sig += v * v;
    p_sig /= static_cast<double>(x.size());
    if (p_sig <= 0.0) throw InputError("add_gaussian_noise: zero-power input");
    if (std::isinf(snr_db)) return x;
    const double p_sig_db = 10.0 * std::log10(p_sig);
    const double sigma2 = std::pow(10.0, (p_sig_db - snr_db) / 10.0);
    const double sigma = std::sqrt(sigma2);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + sigma * rng.gaussian();
    return out;
}

std::vector<double> magnitude_warp(const std::vector<double>& x, double mw_sigma, int mw_knots,
                                   Rng& rng) {
    if (mw_knots < 2) throw ConfigError("magnitude_warp: mw_knots must be >= 2");
    if (mw_sigma == 0.0) return x;
    const std::size_t n = x.size();
    const int total = mw_knots + 2;  // interior knots plus both endpoints
    std::vector<double> xs(static_cast<std::size_t>(total)), ys(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
        xs[static_cast<std::size_t>(i)] =
            static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(total - 1);
        ys[static_cast<std::size_t>(i)] = rng.gaussian(1.0, mw_sigma);
    }
    CubicSpline phi(std::move(xs), std::move(ys));
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t) out[t] = x[t] * phi(static_cast<double>(t));
    return out;
}

std::vector<double> permute(const std::vector<double>& x, int perm_segments, Rng& rng) {
    if (perm_segments < 1) throw ConfigError("permute: perm_segments must be >= 1");
    if (static_cast<std::size_t>(perm_segments) > x.size())
        throw InputError("permute: more segments than samples");
    if (perm_segments == 1) return x;
    const auto sizes = segment_sizes(x.size(), perm_segments);
    std::vector<std::size_t> offsets(sizes.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        offsets[i] = off;
        off += sizes[i];
    }
    // Uniform non-identity order: redraw until the order differs.
    std::vector<std::size_t> order;
    bool identity = true;
    do {
        order = rng.permutation(sizes.size());
        identity = true;
        for (std::size_t i = 0; i < order.size(); ++i)
            if (order[i] != i) {
                identity = false;
                break;
            }
    } while (identity);
    std::vector<double> out;
    out.reserve(x.size());
    for (std::size_t s : order)
        out.insert(out.end(), x.begin() + static_cast<std::ptrdiff_t>(offsets[s]),
                   x.begin() + static_cast<std::ptrdiff_t>(offsets[s] + sizes[s]));
    return out;
}

std::vector<double> time_warp(const std::vector<double>& x, int tw_segments, double tw_stretch,
                              Rng& rng) {
    if (tw_segments < 2) throw ConfigError("time_warp: tw_segments must be >= 2");
    if (!(tw_stretch >= 1.0)) throw ConfigError("time_warp: tw_stretch must be >= 1");
    const auto sizes = segment_sizes(x.size(), tw_segments);
    // ceil(n/2) randomly chosen segments stretch by k, the rest squeeze by 1/k.
    const auto n_seg = sizes.size();
    const std::size_t n_stretch = (n_seg + 1) / 2;
    auto pick = rng.permutation(n_seg);
    std::vector<bool> stretched(n_seg, false);
    for (std::size_t i = 0; i < n_stretch; ++i) stretched[pick[i]] = true;

    std::vector<double> warped;
    warped.reserve(x.size() + n_seg);
    std::size_t off = 0;
    for (std::size_t s = 0; s < n_seg; ++s) {
        std::vector<double> seg(x.begin() + static_cast<std::ptrdiff_t>(off),
                                x.begin() + static_cast<std::ptrdiff_t>(off + sizes[s]));
        off += sizes[s];
        const double factor = stretched[s] ? tw_stretch : 1.0 / tw_stretch;
        const auto new_len = static_cast<std::size_t>(
            std::max<long long>(1, std::llround(static_cast<double>(seg.size()) * factor)));
        auto resized = linear_resize(seg, new_len);
        warped.insert(warped.end(), resized.begin(), resized.end());
    }
    return linear_resize(warped, x.size());
}

std::vector<double> crop_resize(const std::vector<double>& x, double crop_ratio, Rng& rng) {
    if (!(crop_ratio > 0.0) || crop_ratio > 1.0)
        throw ConfigError("crop_resize: crop_ratio must be in (0,1]");
    const std::size_t n = x.size();
    const auto crop_len =
        static_cast<std::size_t>(std::llround(crop_ratio * static_cast<double>(n)));
    if (crop_len < 2) throw InputError("crop_resize: crop shorter than 2 samples");
    const auto start = static_cast<std::size_t>(rng.uniform_int(n - crop_len + 1));
    std::vector<double> seg(x.begin() + static_cast<std::ptrdiff_t>(start),
                            x.begin() + static_cast<std::ptrdiff_t>(start + crop_len));
    return linear_resize(seg, n);
}

std::vector<double> apply_transform(TransformKind kind, const std::vector<double>& x,
                                    const TransformConfig& cfg, Rng& rng) {
    switch (kind) {
        case TransformKind::Original: return x;
        case TransformKind::Noise: return add_gaussian_noise(x, cfg.snr_db, rng);
        case TransformKind::MagnitudeWarp:
            return magnitude_warp(x, cfg.mw_sigma, cfg.mw_knots, rng);
        case TransformKind::Permutation: return permute(x, cfg.perm_segments, rng);
        case TransformKind::TimeWarp: return time_warp(x, cfg.tw_segments, cfg.tw_stretch, rng);
        case TransformKind::Crop: return crop_resize(x, cfg.crop_ratio, rng);
    }
    throw ConfigError("apply_transform: unknown kind");
}

// ---------------------------------------------------------------------------
// dataset building
// ---------------------------------------------------------------------------

namespace {

std::vector<double> window_column(const dsp::Window& w, int m) {
    std::vector<double> col(static_cast<std::size_t>(w.n_steps));
    for (int t = 0; t < w.n_steps; ++t) col[static_cast<std::size_t>(t)] = w.at(t, m);
    return col;
}

PretextSample make_sample(const dsp::Window& w, std::uint64_t window_id,
                          const std::vector<TransformKind>& kinds_per_modality,
                          const std::vector<int>& labels_per_modality,
                          const TransformConfig& cfg, Rng& rng) {
    PretextSample s;
    s.n_steps = w.n_steps;
    s.source_window_id = window_id;
    s.values.resize(static_cast<std::size_t>(w.n_steps) * kNumModalities);
    for (int m = 0; m < kNumModalities; ++m) {
        s.transform_labels[static_cast<std::size_t>(m)] = labels_per_modality[static_cast<std::size_t>(m)];
        auto col = window_column(w, m);
        auto out = apply_transform(kinds_per_modality[static_cast<std::size_t>(m)], col, cfg, rng);
        for (int t = 0; t < w.n_steps; ++t)
            s.values[static_cast<std::size_t>(t) * kNumModalities + static_cast<std::size_t>(m)] =
                out[static_cast<std::size_t>(t)];
    }
    return s;
}

}  // namespace

std::vector<PretextSample> build_pretext_dataset(const std::vector<dsp::Window>& windows,
                                                 const TransformConfig& cfg,
                                                 std::uint64_t seed) {
    std::vector<TransformKind> all(kNumTransformLabels);
    for (int j = 0; j < kNumTransformLabels; ++j) all[static_cast<std::size_t>(j)] = static_cast<TransformKind>(j);

    cfg.validate();
    if (windows.empty()) throw InputError("build_pretext_dataset: no windows");

    std::vector<PretextSample> samples;
    if (!cfg.independent_per_modality) {
        samples.reserve(windows.size() * kNumTransformLabels);
        for (std::size_t w = 0; w < windows.size(); ++w) {
            for (int j = 0; j < kNumTransformLabels; ++j) {
                Rng rng(derive_seed(seed, w, static_cast<std::uint64_t>(j)));
                std::vector<TransformKind> kinds(kNumModalities, static_cast<TransformKind>(j));
                std::vector<int> labels(kNumModalities, j);
                samples.push_back(make_sample(windows[w], w, kinds, labels, cfg, rng));
            }
        }
        return samples;
    }

    // Independent labels per modality: still six samples per window so the
    // expansion factor matches, but each modality draws its own label.
    samples.reserve(windows.size() * kNumTransformLabels);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        for (int j = 0; j < kNumTransformLabels; ++j) {
            Rng rng(derive_seed(seed, w, static_cast<std::uint64_t>(8 + j)));
            std::vector<TransformKind> kinds(kNumModalities);
            std::vector<int> labels(kNumModalities);
            for (int m = 0; m < kNumModalities; ++m) {
                const int l = static_cast<int>(rng.uniform_int(kNumTransformLabels));
                kinds[static_cast<std::size_t>(m)] = static_cast<TransformKind>(l);
                labels[static_cast<std::size_t>(m)] = l;
            }
            samples.push_back(make_sample(windows[w], w, kinds, labels, cfg, rng));
        }
    }
    return samples;
}

std::vector<PretextSample> build_pretext_dataset_subset(
    const std::vector<dsp::Window>& windows, const TransformConfig& cfg, std::uint64_t seed,
    const std::vector<TransformKind>& subset) {
    cfg.validate();
    if (windows.empty()) throw InputError("build_pretext_dataset_subset: no windows");
    for (TransformKind k : subset)
        if (k == TransformKind::Original)
            throw ConfigError("transform subset must not list the original class");

    std::vector<PretextSample> samples;
    samples.reserve(windows.size() * (subset.size() + 1));
    for (std::size_t w = 0; w < windows.size(); ++w) {
        for (std::size_t j = 0; j <= subset.size(); ++j) {
            const TransformKind kind = (j == 0) ? TransformKind::Original : subset[j - 1];
            // Substream keyed by the original label id so that a subset run
            // applies the same deformation a full run would.
            Rng rng(derive_seed(seed, w, static_cast<std::uint64_t>(kind)));
            std::vector<TransformKind> kinds(kNumModalities, kind);
            std::vector<int> labels(kNumModalities, static_cast<int>(j));
            samples.push_back(make_sample(windows[w], w, kinds, labels, cfg, rng));
        }
    }
    return samples;
}

// ---------------------------------------------------------------------------
// on-disk form
// ---------------------------------------------------------------------------

void save_pretext_dataset(const std::string& dir, const std::vector<PretextSample>& samples,
                          int n_steps, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json meta;
    meta["format"] = "physiossl.pretext";
    meta["version"] = 1;
    meta["n_samples"] = samples.size();
    meta["n_steps"] = n_steps;
    meta["n_modalities"] = dsp::kNumModalities;
    meta["dtype"] = "f64le";
    meta["seed"] = seed;
    std::ofstream mf(dir + "/meta.json");
    if (!mf) throw IoError("cannot write " + dir + "/meta.json");
    mf << meta.dump(2) << "\n";

    std::ofstream idx(dir + "/index.csv");
    if (!idx) throw IoError("cannot write " + dir + "/index.csv");
    idx << "sample_id,window_id,label_eda,label_bvp,label_temp\n";
    std::ofstream bin(dir + "/samples.bin", std::ios::binary);
    if (!bin) throw IoError("cannot write " + dir + "/samples.bin");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const PretextSample& s = samples[i];
        idx << i << ',' << s.source_window_id << ',' << s.transform_labels[0] << ','
            << s.transform_labels[1] << ',' << s.transform_labels[2] << '\n';
        bin.write(reinterpret_cast<const char*>(s.values.data()),
                  static_cast<std::streamsize>(s.values.size() * sizeof(double)));
    }
}

std::vector<PretextSample> load_pretext_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/meta.json");
    if (!mf) throw IoError("cannot open " + dir + "/meta.json");
    nlohmann::json meta = nlohmann::json::parse(mf, nullptr, true, true);
    if (meta.value("format", "") != "physiossl.pretext")
        throw IoError(dir + ": not a pretext dataset directory");
    if (meta.value("version", 0) != 1) throw IoError(dir + ": unsupported pretext version");
    const auto n_samples = meta.at("n_samples").get<std::size_t>();
    const int n_steps = meta.at("n_steps").get<int>();

    std::ifstream idx(dir + "/index.csv");
    if (!idx) throw IoError("cannot open " + dir + "/index.csv");
    std::string line;
    std::getline(idx, line);  // header
    std::ifstream bin(dir + "/samples.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + dir + "/samples.bin");

    std::vector<PretextSample> samples(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        if (!std::getline(idx, line))
            throw IoError(dir + "/index.csv: truncated at row " + std::to_string(i + 2));
        PretextSample& s = samples[i];
        unsigned long long sid = 0, wid = 0;
        int l0 = 0, l1 = 0, l2 = 0;
        if (std::sscanf(line.c_str(), "%llu,%llu,%d,%d,%d", &sid, &wid, &l0, &l1, &l2) != 5)
            throw IoError(dir + "/index.csv: malformed row " + std::to_string(i + 2));
        s.source_window_id = wid;
        s.transform_labels = {l0, l1, l2};
        s.n_steps = n_steps;
        s.values.resize(static_cast<std::size_t>(n_steps) * dsp::kNumModalities);
        bin.read(reinterpret_cast<char*>(s.values.data()),
                 static_cast<std::streamsize>(s.values.size() * sizeof(double)));
        if (!bin) throw IoError(dir + "/samples.bin: truncated at sample " + std::to_string(i));
    }
    return samples;
}

}  // namespace physiossl::transforms
