#include "physiossl/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>

namespace physiossl::dsp {

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::EDA: return "EDA";
        case Modality::BVP: return "BVP";
        case Modality::TEMP: return "TEMP";
    }
    return "?";
}

Modality modality_from_name(const std::string& name) {
    for (Modality m : kAllModalities)
        if (name == modality_name(m)) return m;
    throw InputError("unknown modality name: " + name);
}

void Recording::validate() const {
    for (Modality m : kAllModalities) {
        auto it = streams.find(m);
        if (it == streams.end())
            throw InputError("recording " + subject_id + ": missing modality " +
                             modality_name(m));
        if (it->second.samples.empty())
            throw InputError("recording " + subject_id + ": empty stream " + modality_name(m));
        if (!(it->second.fs > 0.0))
            throw InputError("recording " + subject_id + ": non-positive sampling rate for " +
                             modality_name(m));
    }
}

// ---------------------------------------------------------------------------
// Butterworth design (bilinear transform with prewarping)
// ---------------------------------------------------------------------------

std::vector<BiquadSection> design_butterworth_lowpass(double fs, double cutoff, int order) {
    if (order < 1) throw ConfigError("butterworth: order must be >= 1");
    if (!(cutoff > 0.0) || cutoff >= fs / 2.0)
        throw ConfigError("butterworth: cutoff must satisfy 0 < cutoff < fs/2 (cutoff=" +
                          std::to_string(cutoff) + ", fs=" + std::to_string(fs) + ")");

    // Analog prototype poles on the unit circle (left half-plane), scaled by
    // the prewarped cutoff, then mapped with z = (1+s)/(1-s). All zeros land
    // at z = -1.
    const double warped = std::tan(M_PI * cutoff / fs);
    std::vector<std::complex<double>> zp(order);
    for (int k = 0; k < order; ++k) {
        const double theta = M_PI * (2.0 * k + order + 1.0) / (2.0 * order);
        const std::complex<double> s = warped * std::complex<double>(std::cos(theta),
                                                                     std::sin(theta));
        zp[k] = (1.0 + s) / (1.0 - s);
    }

    std::vector<BiquadSection> sections;
    // Pair each pole with its conjugate; complex poles come in conjugate
    // pairs because the prototype angles are symmetric about pi.
    std::vector<bool> used(order, false);
    for (int i = 0; i < order; ++i) {
        if (used[i]) continue;
        used[i] = true;
        if (std::abs(zp[i].imag()) < 1e-12) {
            // real pole: first-order section with zero at -1
            const double p = zp[i].real();
            BiquadSection s{1.0, 1.0, 0.0, -p, 0.0};
            const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
            s.b0 /= dc;
            s.b1 /= dc;
            sections.push_back(s);
            continue;
        }
        int j = -1;
        for (int t = i + 1; t < order; ++t) {
            if (!used[t] && std::abs(zp[t] - std::conj(zp[i])) < 1e-9) {
                j = t;
                break;
            }
        }
        if (j < 0) throw NumericError("butterworth: unpaired complex pole");
        used[j] = true;
        const double re = zp[i].real();
        const double mag2 = std::norm(zp[i]);
        BiquadSection s{1.0, 2.0, 1.0, -2.0 * re, mag2};
        const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        s.b0 /= dc;
        s.b1 /= dc;
        s.b2 /= dc;
        sections.push_back(s);
    }
    return sections;
}

double butterworth_forward_backward_gain(double f, double fs, double cutoff, int order) {
    const double ratio = std::tan(M_PI * f / fs) / std::tan(M_PI * cutoff / fs);
    const double mag2 = 1.0 / (1.0 + std::pow(ratio, 2.0 * order));
    return mag2;  // |H|^2: one |H| per direction
}

namespace {

// Transposed direct form II with steady-state initial conditions scaled by
// the first sample, so a constant input passes without any startup
// transient (the sections have unit DC gain, which makes the steady state
// z1 = x0(1-b0), z2 = x0(b2-a2) self-consistent).
void run_sos_forward(std::vector<double>& x, const std::vector<BiquadSection>& sos) {
    if (x.empty()) return;
    for (const BiquadSection& s : sos) {
        const double x0 = x.front();
        double z1 = x0 * (1.0 - s.b0);
        double z2 = x0 * (s.b2 - s.a2);
        for (double& v : x) {
            const double in = v;
            const double y = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * y + z2;
            z2 = s.b2 * in - s.a2 * y;
            v = y;
        }
    }
}

}  // namespace

std::vector<double> butterworth_lowpass(const std::vector<double>& samples, double fs,
                                        double cutoff, int order) {
    auto sos = design_butterworth_lowpass(fs, cutoff, order);
    const std::size_t n = samples.size();
    if (n <= static_cast<std::size_t>(3 * order))
        throw InputError("butterworth: sequence too short for order " + std::to_string(order) +
                         " (length " + std::to_string(n) + ")");

    // Odd reflection on both ends; pad long enough for the slow transient of
    // narrow filters (~fs/cutoff samples per time constant).
    const std::size_t want = static_cast<std::size_t>(std::lround(10.0 * fs / cutoff)) +
                             static_cast<std::size_t>(6 * order);
    const std::size_t pad = std::min(n - 1, want);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * samples[0] - samples[pad - i]);
    ext.insert(ext.end(), samples.begin(), samples.end());
    for (std::size_t i = 0; i < pad; ++i)
        ext.push_back(2.0 * samples[n - 1] - samples[n - 2 - i]);

    run_sos_forward(ext, sos);
    std::reverse(ext.begin(), ext.end());
    run_sos_forward(ext, sos);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                               ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

// ---------------------------------------------------------------------------
// Normalization / resampling / segmentation
// ---------------------------------------------------------------------------

std::vector<double> zscore_normalize(const std::vector<double>& samples) {
    if (samples.empty()) throw InputError("zscore_normalize: empty sequence");
    const double n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    var /= n;
    const double sd = std::sqrt(var);
    std::vector<double> out(samples.size());
    if (sd < 1e-8) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = (samples[i] - mean) / sd;
    return out;
}

std::vector<double> resample_to(const std::vector<double>& samples, double src_fs,
                                double dst_fs) {
    if (!(dst_fs > 0.0) || src_fs < dst_fs)
        throw ConfigError("resample_to: requires src_fs >= dst_fs > 0 (src=" +
                          std::to_string(src_fs) + ", dst=" + std::to_string(dst_fs) + ")");
    const std::size_t n = samples.size();
    if (n == 0) return {};
    if (src_fs == dst_fs) return samples;
    const auto out_len =
        static_cast<std::size_t>(std::llround(static_cast<double>(n) * dst_fs / src_fs));
    std::vector<double> out(out_len);
    const double step = src_fs / dst_fs;  // input samples per output sample
    for (std::size_t j = 0; j < out_len; ++j) {
        const double p = static_cast<double>(j) * step;
        auto i = static_cast<std::size_t>(p);
        if (i >= n - 1) {
            out[j] = samples[n - 1];
            continue;
        }
        const double frac = p - static_cast<double>(i);
        out[j] = samples[i] + frac * (samples[i + 1] - samples[i]);
    }
    return out;
}

int majority_label(const std::vector<int>& labels_in_window) {
    if (labels_in_window.empty()) throw InputError("majority_label: empty label set");
    std::map<int, std::size_t> counts;
    for (int l : labels_in_window) ++counts[l];
    int best = labels_in_window.front();
    std::size_t best_count = 0;
    for (const auto& [cls, cnt] : counts) {
        // std::map iterates in ascending class order, so ties keep the
        // smallest id.
        if (cnt > best_count) {
            best = cls;
            best_count = cnt;
        }
    }
    return best;
}

SegmentationResult segment_windows(const Recording& recording, double window_s,
                                   double overlap_frac) {
    if (recording.stage != PipelineStage::Resampled)
        throw ConfigError("segment_windows: recording must be filtered, normalized and "
                          "resampled first (pipeline order is fixed)");
    if (!(overlap_frac >= 0.0) || overlap_frac >= 1.0)
        throw ConfigError("segment_windows: overlap_frac must be in [0,1)");
    recording.validate();

    const double fs = recording.streams.begin()->second.fs;
    for (const auto& [m, st] : recording.streams)
        if (st.fs != fs) throw ConfigError("segment_windows: streams not on a common rate");

    const double n_exact = window_s * fs;
    const auto n_steps = static_cast<long long>(std::llround(n_exact));
    if (std::abs(n_exact - static_cast<double>(n_steps)) > 1e-9 || n_steps < 1)
        throw ConfigError("segment_windows: window_s * fs must be a positive integer");

    long long len = -1;
    for (const auto& [m, st] : recording.streams) {
        const auto l = static_cast<long long>(st.samples.size());
        len = (len < 0) ? l : std::min(len, l);
    }

    SegmentationResult result;
    if (len < n_steps) {
        result.too_short = true;
        return result;
    }

    const long long step =
        std::max<long long>(1, std::llround((1.0 - overlap_frac) * static_cast<double>(n_steps)));
    const long long count = (len - n_steps) / step + 1;

    result.windows.reserve(static_cast<std::size_t>(count));
    for (long long w = 0; w < count; ++w) {
        Window win;
        win.n_steps = static_cast<int>(n_steps);
        win.subject_id = recording.subject_id;
        const long long start = w * step;
        win.t_start = static_cast<double>(start) / fs;
        win.values.resize(static_cast<std::size_t>(n_steps) * kNumModalities);
        for (Modality m : kAllModalities) {
            const auto& s = recording.streams.at(m).samples;
            for (long long t = 0; t < n_steps; ++t) {
                const double v = s[static_cast<std::size_t>(start + t)];
                if (!std::isfinite(v))
                    throw InputError("segment_windows: non-finite sample in " +
                                     recording.subject_id);
                win.at(static_cast<int>(t), static_cast<int>(m)) = v;
            }
        }
        if (!recording.labels.empty()) {
            const double t0 = win.t_start;
            const double t1 = t0 + window_s;
            std::vector<int> inside;
            for (const LabelPoint& lp : recording.labels)
                if (lp.t_sec >= t0 && lp.t_sec < t1) inside.push_back(lp.cls);
            if (!inside.empty()) win.label = majority_label(inside);
        }
        result.windows.push_back(std::move(win));
    }
    return result;
}

Recording filter_recording(const Recording& rec, const std::map<Modality, double>& cutoffs,
                           int order) {
    if (rec.stage != PipelineStage::Raw)
        throw ConfigError("filter_recording: expected a raw recording");
    rec.validate();
    Recording out = rec;
    for (Modality m : kAllModalities) {
        const double cutoff = cutoffs.at(m);
        Stream& st = out.streams.at(m);
        st.samples = butterworth_lowpass(st.samples, st.fs, cutoff, order);
    }
    out.stage = PipelineStage::Filtered;
    return out;
}

Recording normalize_recording(const Recording& rec) {
    if (rec.stage != PipelineStage::Filtered)
        throw ConfigError("normalize_recording: recording must be filtered first");
    Recording out = rec;
    for (auto& [m, st] : out.streams) st.samples = zscore_normalize(st.samples);
    out.stage = PipelineStage::Normalized;
    return out;
}

Recording resample_recording(const Recording& rec, double target_fs) {
    if (rec.stage != PipelineStage::Normalized)
        throw ConfigError("resample_recording: recording must be normalized first");
    Recording out = rec;
    for (auto& [m, st] : out.streams) {
        st.samples = resample_to(st.samples, st.fs, target_fs);
        st.fs = target_fs;
    }
    out.stage = PipelineStage::Resampled;
    return out;
}

SegmentationResult preprocess_recording(const Recording& rec, const PreprocessConfig& cfg) {
    Recording r = filter_recording(rec, cfg.cutoffs, cfg.filter_order);
    r = normalize_recording(r);
    r = resample_recording(r, cfg.target_fs);
    return segment_windows(r, cfg.window_s, cfg.overlap_frac);
}

}  // namespace physiossl::dsp

namespace physiossl {
std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}
}  // namespace physiossl
