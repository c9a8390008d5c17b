#include "cffma/stft.hpp"

#include <cmath>
#include <utility>
#include <vector>

#include "cffma/errors.hpp"
#include "cffma/ops.hpp"

namespace cffma {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kEnvelopeFloor = 1e-8;

// Periodic Hann: w[n] = 0.5 - 0.5 cos(2 pi n / N), n in [0, N).
std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    }
    return w;
}

// Reflect index into [0, len). Mirrors without repeating the edge sample,
// matching reflect padding of half a window on each side.
int64_t mirror(int64_t i, int64_t len) {
    if (len == 1) return 0;
    while (i < 0 || i >= len) {
        if (i < 0) i = -i;
        if (i >= len) i = 2 * len - 2 - i;
    }
    return i;
}

struct DftTables {
    // cos_t[f * win + n] = cos(2 pi f n / fft_len), same layout for sin_t.
    std::vector<double> cos_t;
    std::vector<double> sin_t;
};

DftTables dft_tables(const StftConfig& cfg) {
    const int f_bins = cfg.freq_bins();
    DftTables t;
    t.cos_t.resize(static_cast<size_t>(f_bins) * cfg.win_len);
    t.sin_t.resize(static_cast<size_t>(f_bins) * cfg.win_len);
    for (int f = 0; f < f_bins; ++f) {
        for (int n = 0; n < cfg.win_len; ++n) {
            const double ang = 2.0 * kPi * f * n / cfg.fft_len;
            t.cos_t[static_cast<size_t>(f) * cfg.win_len + n] = std::cos(ang);
            t.sin_t[static_cast<size_t>(f) * cfg.win_len + n] = std::sin(ang);
        }
    }
    return t;
}

// Sum of squared synthesis windows at every padded sample position.
std::vector<double> ola_envelope(const StftConfig& cfg, int64_t frames) {
    const std::vector<double> w = hann_window(cfg.win_len);
    std::vector<double> env(static_cast<size_t>((frames - 1) * cfg.hop + cfg.win_len), 0.0);
    for (int64_t t = 0; t < frames; ++t) {
        for (int n = 0; n < cfg.win_len; ++n) {
            env[static_cast<size_t>(t * cfg.hop + n)] += w[static_cast<size_t>(n)] * w[static_cast<size_t>(n)];
        }
    }
    return env;
}

}  // namespace

void StftConfig::validate() const {
    if (fft_len <= 0 || win_len <= 0 || hop <= 0) {
        throw ContractError("stft config: fft_len, win_len and hop must be positive");
    }
    if (fft_len % 2 != 0) {
        throw ContractError("stft config: fft_len must be even");
    }
    if (win_len > fft_len) {
        throw ContractError("stft config: win_len must not exceed fft_len");
    }
    if (hop > win_len) {
        throw ContractError("stft config: hop must not exceed win_len");
    }
}

int64_t stft_frames(int64_t len, const StftConfig& cfg) {
    cfg.validate();
    if (len <= 0) throw ContractError("stft: empty signal");
    return 1 + len / cfg.hop;
}

ComplexSpec stft_complex(const Waveform& x, const StftConfig& cfg) {
    cfg.validate();
    const int64_t len = static_cast<int64_t>(x.samples.size());
    if (len == 0) throw ContractError("stft: empty signal");

    const int f_bins = cfg.freq_bins();
    const int64_t frames = stft_frames(len, cfg);
    const int64_t pad = cfg.win_len / 2;
    const std::vector<double> w = hann_window(cfg.win_len);
    const DftTables tab = dft_tables(cfg);

    std::vector<float> re(static_cast<size_t>(f_bins) * frames);
    std::vector<float> im(static_cast<size_t>(f_bins) * frames);
    std::vector<double> frame(static_cast<size_t>(cfg.win_len));

    for (int64_t t = 0; t < frames; ++t) {
        for (int n = 0; n < cfg.win_len; ++n) {
            const int64_t src = mirror(t * cfg.hop - pad + n, len);
            frame[static_cast<size_t>(n)] =
                static_cast<double>(x.samples[static_cast<size_t>(src)]) * w[static_cast<size_t>(n)];
        }
        for (int f = 0; f < f_bins; ++f) {
            const double* ct = &tab.cos_t[static_cast<size_t>(f) * cfg.win_len];
            const double* st = &tab.sin_t[static_cast<size_t>(f) * cfg.win_len];
            double acc_re = 0.0;
            double acc_im = 0.0;
            for (int n = 0; n < cfg.win_len; ++n) {
                acc_re += frame[static_cast<size_t>(n)] * ct[n];
                acc_im -= frame[static_cast<size_t>(n)] * st[n];
            }
            re[static_cast<size_t>(f) * frames + t] = static_cast<float>(acc_re);
            im[static_cast<size_t>(f) * frames + t] = static_cast<float>(acc_im);
        }
    }

    ComplexSpec out;
    out.re = Tensor::from_data({f_bins, frames}, std::move(re));
    out.im = Tensor::from_data({f_bins, frames}, std::move(im));
    return out;
}

SpectroStack stft(const Waveform& x, const StftConfig& cfg) {
    const ComplexSpec spec = stft_complex(x, cfg);
    const auto re = spec.re.data();
    const auto im = spec.im.data();
    const size_t count = re.size();

    std::vector<float> mag(count);
    std::vector<float> phase(count * 2);
    for (size_t i = 0; i < count; ++i) {
        const double r = re[i];
        const double m = im[i];
        const double h = std::hypot(r, m);
        mag[i] = static_cast<float>(h);
        if (h > 0.0) {
            phase[2 * i] = static_cast<float>(r / h);
            phase[2 * i + 1] = static_cast<float>(m / h);
        } else {
            phase[2 * i] = 1.0f;
            phase[2 * i + 1] = 0.0f;
        }
    }

    SpectroStack out;
    const Shape fs = spec.re.shape();
    out.mag = Tensor::from_data(fs, std::move(mag));
    out.phase = Tensor::from_data({fs[0], fs[1], 2}, std::move(phase));
    out.config = cfg;
    out.orig_len = static_cast<int64_t>(x.samples.size());
    return out;
}

Tensor phase_part(const Tensor& phase, int component) {
    const Shape& s = phase.shape();
    if (s.size() != 3 || s[2] != 2) {
        throw DimError("phase_part: expected rank-3 phase of shape F x T x 2, got " + shape_str(s));
    }
    if (component != 0 && component != 1) {
        throw ContractError("phase_part: component must be 0 (cos) or 1 (sin)");
    }
    const auto src = phase.data();
    std::vector<float> out(static_cast<size_t>(s[0] * s[1]));
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = src[2 * i + static_cast<size_t>(component)];
    }
    return Tensor::from_data({s[0], s[1]}, std::move(out));
}

ComplexSpec reconstruct(const Tensor& mag, const Tensor& phase) {
    const Shape& ms = mag.shape();
    const Shape& ps = phase.shape();
    if (ms.size() != 2) throw DimError("reconstruct: magnitude must be rank 2, got " + shape_str(ms));
    if (ps.size() != 3 || ps[0] != ms[0] || ps[1] != ms[1] || ps[2] != 2) {
        throw DimError("reconstruct: phase " + shape_str(ps) + " does not match magnitude " + shape_str(ms));
    }
    for (float v : mag.data()) {
        if (v < 0.0f) throw ContractError("reconstruct: negative magnitude");
    }
    ComplexSpec out;
    out.re = mul(mag, phase_part(phase, 0));
    out.im = mul(mag, phase_part(phase, 1));
    return out;
}

Waveform istft(const ComplexSpec& spec, const StftConfig& cfg, int64_t orig_len) {
    cfg.validate();
    const Shape& rs = spec.re.shape();
    if (rs.size() != 2 || spec.im.shape() != rs) {
        throw DimError("istft: re/im must be matching rank-2 spectra");
    }
    if (rs[0] != cfg.freq_bins()) {
        throw DimError("istft: spectrum has " + std::to_string(rs[0]) + " bins, config wants " +
                       std::to_string(cfg.freq_bins()));
    }
    if (orig_len <= 0) throw ContractError("istft: orig_len must be positive");
    const int64_t frames = rs[1];
    const int64_t pad = cfg.win_len / 2;
    if ((frames - 1) * cfg.hop + cfg.win_len < pad + orig_len) {
        throw ContractError("istft: too few frames for requested length");
    }

    const int f_bins = cfg.freq_bins();
    const std::vector<double> w = hann_window(cfg.win_len);
    const DftTables tab = dft_tables(cfg);
    const auto re = spec.re.data();
    const auto im = spec.im.data();

    std::vector<double> buf(static_cast<size_t>((frames - 1) * cfg.hop + cfg.win_len), 0.0);
    const std::vector<double> env = ola_envelope(cfg, frames);
    std::vector<double> frame(static_cast<size_t>(cfg.win_len));

    for (int64_t t = 0; t < frames; ++t) {
        // Inverse real DFT. Interior bins count twice (conjugate pair); DC and
        // Nyquist once, with their imaginary parts dropping out via sin = 0.
        std::fill(frame.begin(), frame.end(), 0.0);
        for (int f = 0; f < f_bins; ++f) {
            const double c = (f == 0 || f == f_bins - 1) ? 1.0 : 2.0;
            const double rv = c * static_cast<double>(re[static_cast<size_t>(f) * frames + t]) / cfg.fft_len;
            const double iv = c * static_cast<double>(im[static_cast<size_t>(f) * frames + t]) / cfg.fft_len;
            const double* ct = &tab.cos_t[static_cast<size_t>(f) * cfg.win_len];
            const double* st = &tab.sin_t[static_cast<size_t>(f) * cfg.win_len];
            for (int n = 0; n < cfg.win_len; ++n) {
                frame[static_cast<size_t>(n)] += rv * ct[n] - iv * st[n];
            }
        }
        for (int n = 0; n < cfg.win_len; ++n) {
            buf[static_cast<size_t>(t * cfg.hop + n)] += frame[static_cast<size_t>(n)] * w[static_cast<size_t>(n)];
        }
    }

    Waveform out;
    out.sample_rate = 16000;
    out.samples.resize(static_cast<size_t>(orig_len));
    for (int64_t i = 0; i < orig_len; ++i) {
        const size_t p = static_cast<size_t>(pad + i);
        if (env[p] < kEnvelopeFloor) {
            throw ContractError("istft: synthesis envelope vanished inside the valid region");
        }
        out.samples[static_cast<size_t>(i)] = static_cast<float>(buf[p] / env[p]);
    }
    return out;
}

namespace {

// Overlap-add of windowed frames (win_len x T), envelope-normalized and
// trimmed to orig_len. Linear in its input, so the adjoint is a gather with
// the same envelope division.
Tensor ola_trim(const Tensor& synth, const StftConfig& cfg, int64_t orig_len) {
    const Shape& s = synth.shape();
    const int64_t frames = s[1];
    const int64_t pad = cfg.win_len / 2;
    const int64_t hop = cfg.hop;
    const int win = cfg.win_len;
    const std::vector<double> env = ola_envelope(cfg, frames);

    for (int64_t i = 0; i < orig_len; ++i) {
        if (env[static_cast<size_t>(pad + i)] < kEnvelopeFloor) {
            throw ContractError("istft: synthesis envelope vanished inside the valid region");
        }
    }

    const auto src = synth.data();
    std::vector<double> buf(env.size(), 0.0);
    for (int64_t t = 0; t < frames; ++t) {
        for (int n = 0; n < win; ++n) {
            buf[static_cast<size_t>(t * hop + n)] += src[static_cast<size_t>(n) * frames + t];
        }
    }
    std::vector<float> out(static_cast<size_t>(orig_len));
    std::vector<double> precise;
    for (int64_t i = 0; i < orig_len; ++i) {
        out[static_cast<size_t>(i)] =
            static_cast<float>(buf[static_cast<size_t>(pad + i)] / env[static_cast<size_t>(pad + i)]);
    }
    if (precise_enabled()) {
        std::vector<double> wide;
        const double* sp;
        if (synth.impl()->f64 && synth.impl()->f64->size() == src.size()) {
            sp = synth.impl()->f64->data();
        } else {
            wide.assign(src.begin(), src.end());
            sp = wide.data();
        }
        std::vector<double> pbuf(env.size(), 0.0);
        for (int64_t t = 0; t < frames; ++t) {
            for (int n = 0; n < win; ++n) {
                pbuf[static_cast<size_t>(t * hop + n)] += sp[static_cast<size_t>(n) * frames + t];
            }
        }
        precise.resize(static_cast<size_t>(orig_len));
        for (int64_t i = 0; i < orig_len; ++i) {
            precise[static_cast<size_t>(i)] =
                pbuf[static_cast<size_t>(pad + i)] / env[static_cast<size_t>(pad + i)];
        }
    }

    detail::GradFn fn = [frames, pad, hop, win, orig_len, env](const detail::TensorImpl&,
                                                               const std::vector<float>& g,
                                                               const std::vector<std::vector<float>*>& pg) {
        if (!pg[0]) return;
        std::vector<float>& gs = *pg[0];
        for (int64_t t = 0; t < frames; ++t) {
            for (int n = 0; n < win; ++n) {
                const int64_t j = t * hop + n - pad;
                if (j < 0 || j >= orig_len) continue;
                gs[static_cast<size_t>(n) * frames + t] += static_cast<float>(
                    static_cast<double>(g[static_cast<size_t>(j)]) / env[static_cast<size_t>(t * hop + n)]);
            }
        }
    };
    return detail::make_op({orig_len}, std::move(out), {synth}, std::move(fn), std::nullopt,
                           std::move(precise));
}

}  // namespace

Tensor istft_mag(const Tensor& mag, const Tensor& phase, const StftConfig& cfg, int64_t orig_len) {
    cfg.validate();
    const Shape& ms = mag.shape();
    const Shape& ps = phase.shape();
    if (ms.size() != 2 || ms[0] != cfg.freq_bins()) {
        throw DimError("istft_mag: magnitude must be F x T with F = " + std::to_string(cfg.freq_bins()));
    }
    if (ps.size() != 3 || ps[0] != ms[0] || ps[1] != ms[1] || ps[2] != 2) {
        throw DimError("istft_mag: phase " + shape_str(ps) + " does not match magnitude " + shape_str(ms));
    }
    if (orig_len <= 0) throw ContractError("istft_mag: orig_len must be positive");
    const int64_t frames = ms[1];
    const int64_t pad = cfg.win_len / 2;
    if ((frames - 1) * cfg.hop + cfg.win_len < pad + orig_len) {
        throw ContractError("istft_mag: too few frames for requested length");
    }

    // Constant synthesis basis (win_len x 2F): windowed inverse-DFT atoms for
    // the real and (negated) imaginary parts, with pair weights folded in.
    const int f_bins = cfg.freq_bins();
    const std::vector<double> w = hann_window(cfg.win_len);
    const DftTables tab = dft_tables(cfg);
    std::vector<float> basis(static_cast<size_t>(cfg.win_len) * 2 * f_bins);
    for (int n = 0; n < cfg.win_len; ++n) {
        for (int f = 0; f < f_bins; ++f) {
            const double c = (f == 0 || f == f_bins - 1) ? 1.0 : 2.0;
            const double wc = w[static_cast<size_t>(n)] * c / cfg.fft_len;
            basis[static_cast<size_t>(n) * 2 * f_bins + f] =
                static_cast<float>(wc * tab.cos_t[static_cast<size_t>(f) * cfg.win_len + n]);
            basis[static_cast<size_t>(n) * 2 * f_bins + f_bins + f] =
                static_cast<float>(-wc * tab.sin_t[static_cast<size_t>(f) * cfg.win_len + n]);
        }
    }
    const Tensor b_syn = Tensor::from_data({cfg.win_len, 2 * f_bins}, std::move(basis));

    const Tensor re = mul(mag, phase_part(phase, 0));
    const Tensor im = mul(mag, phase_part(phase, 1));
    const Tensor synth = matmul(b_syn, concat(re, im, 0));
    return ola_trim(synth, cfg, orig_len);
}

}  // namespace cffma
