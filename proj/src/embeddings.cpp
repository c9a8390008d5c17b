#include "cffma/embeddings.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "cffma/errors.hpp"
#include "cffma/ops.hpp"
#include "cffma/rng.hpp"
#include "dense.hpp"

namespace cffma {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'L', 'E'};
constexpr uint32_t kVersion = 1;
constexpr int kBands = 40;
constexpr int kFrameWin = 400;  // 25 ms at 16 kHz
constexpr int kFrameHop = 320;  // 20 ms

uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError(std::string("ssle: truncated ") + what);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_u32(std::ostream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void EmbeddingStack::validate() const {
    const Shape& s = layers.shape();
    if (s.size() != 3) throw FormatError("embedding stack: expected rank 3, got " + shape_str(s));
    if (s[0] < 1 || s[1] < 1 || s[2] < 1) {
        throw FormatError("embedding stack: degenerate dimensions " + shape_str(s));
    }
    if (frame_hop_s <= 0.0) throw FormatError("embedding stack: non-positive frame hop");
    for (float v : layers.data()) {
        if (!std::isfinite(v)) throw FormatError("embedding stack: non-finite value");
    }
}

WeightedSumParams weighted_sum_params(int64_t n_layers) {
    if (n_layers < 1) throw ContractError("weighted_sum_params: need at least one layer");
    WeightedSumParams p;
    p.logits = Tensor::param({1, n_layers}, std::vector<float>(static_cast<size_t>(n_layers), 0.0f));
    return p;
}

Tensor layer_weights(const WeightedSumParams& params) {
    return softmax(params.logits, 1);
}

void provider_save(const std::string& path, const EmbeddingStack& stack) {
    stack.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("ssle: cannot create " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<uint32_t>(stack.n_layers()));
    write_u32(out, static_cast<uint32_t>(stack.frames()));
    write_u32(out, static_cast<uint32_t>(stack.dim()));
    write_u32(out, static_cast<uint32_t>(std::llround(stack.frame_hop_s * 1e6)));
    const auto data = stack.layers.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw IoError("ssle: short write to " + path);
}

EmbeddingStack provider_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("ssle: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("ssle: bad magic in " + path);
    }
    const uint32_t version = read_u32(in, "version");
    if (version != kVersion) {
        throw FormatError("ssle: unsupported version " + std::to_string(version));
    }
    const uint32_t n = read_u32(in, "layer count");
    const uint32_t t = read_u32(in, "frame count");
    const uint32_t d = read_u32(in, "dim");
    const uint32_t hop_us = read_u32(in, "frame hop");
    if (n < 1 || t < 1 || d < 1 || hop_us == 0) {
        throw FormatError("ssle: degenerate header in " + path);
    }

    const size_t count = static_cast<size_t>(n) * t * d;
    std::vector<float> data(count);
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(count * sizeof(float)))) {
        throw FormatError("ssle: truncated payload in " + path);
    }

    EmbeddingStack stack;
    stack.layers = Tensor::from_data(
        {static_cast<int64_t>(n), static_cast<int64_t>(t), static_cast<int64_t>(d)}, std::move(data));
    stack.frame_hop_s = hop_us * 1e-6;
    stack.validate();
    return stack;
}

EmbeddingStack provider_synthetic(const Waveform& x, int64_t n_layers, int64_t dim, uint64_t seed) {
    if (n_layers < 1 || dim < 1) throw ContractError("provider_synthetic: need n_layers and dim >= 1");
    const int64_t len = static_cast<int64_t>(x.samples.size());
    if (len < kFrameWin) throw ContractError("provider_synthetic: waveform shorter than one frame");
    const int64_t frames = 1 + (len - kFrameWin) / kFrameHop;
    const int f_bins = kFrameWin / 2 + 1;

    // Hann-windowed per-frame spectrum, grouped into uniform log-energy bands.
    std::vector<double> window(kFrameWin);
    for (int n = 0; n < kFrameWin; ++n) {
        window[static_cast<size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / kFrameWin);
    }
    std::vector<double> cos_t(static_cast<size_t>(f_bins) * kFrameWin);
    std::vector<double> sin_t(static_cast<size_t>(f_bins) * kFrameWin);
    for (int f = 0; f < f_bins; ++f) {
        for (int n = 0; n < kFrameWin; ++n) {
            const double ang = 2.0 * M_PI * f * n / kFrameWin;
            cos_t[static_cast<size_t>(f) * kFrameWin + n] = std::cos(ang);
            sin_t[static_cast<size_t>(f) * kFrameWin + n] = std::sin(ang);
        }
    }

    std::vector<double> feats(static_cast<size_t>(frames) * kBands);
    std::vector<double> frame(kFrameWin);
    std::vector<double> power(static_cast<size_t>(f_bins));
    for (int64_t t = 0; t < frames; ++t) {
        for (int n = 0; n < kFrameWin; ++n) {
            frame[static_cast<size_t>(n)] =
                static_cast<double>(x.samples[static_cast<size_t>(t * kFrameHop + n)]) *
                window[static_cast<size_t>(n)];
        }
        for (int f = 0; f < f_bins; ++f) {
            double re = 0.0, im = 0.0;
            const double* ct = &cos_t[static_cast<size_t>(f) * kFrameWin];
            const double* st = &sin_t[static_cast<size_t>(f) * kFrameWin];
            for (int n = 0; n < kFrameWin; ++n) {
                re += frame[static_cast<size_t>(n)] * ct[n];
                im -= frame[static_cast<size_t>(n)] * st[n];
            }
            power[static_cast<size_t>(f)] = re * re + im * im;
        }
        for (int b = 0; b < kBands; ++b) {
            const int lo = b * f_bins / kBands;
            const int hi = (b + 1) * f_bins / kBands;
            double e = 0.0;
            for (int f = lo; f < hi; ++f) e += power[static_cast<size_t>(f)];
            feats[static_cast<size_t>(t) * kBands + b] = std::log(e + 1e-10);
        }
    }

    // One fixed random projection per layer, derived from the seed so the
    // layers are distinct but reproducible.
    std::vector<float> feats_f(feats.begin(), feats.end());
    std::vector<float> out(static_cast<size_t>(n_layers * frames * dim));
    std::vector<float> proj(static_cast<size_t>(kBands) * static_cast<size_t>(dim));
    const float bound = 1.0f / std::sqrt(static_cast<float>(kBands));
    for (int64_t layer = 0; layer < n_layers; ++layer) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(layer), 0x55e));
        for (auto& v : proj) v = rng.uniform(-bound, bound);
        dense::mm(feats_f.data(), proj.data(), out.data() + layer * frames * dim,
                  frames, kBands, dim, false);
    }

    EmbeddingStack stack;
    stack.layers = Tensor::from_data({n_layers, frames, dim}, std::move(out));
    stack.frame_hop_s = kFrameHop / 16000.0;
    return stack;
}

Tensor align_frames(const EmbeddingStack& stack, int64_t t_stft) {
    stack.validate();
    if (t_stft < 1) throw ContractError("align_frames: target frame count must be >= 1");
    const int64_t n = stack.n_layers();
    const int64_t t_ssl = stack.frames();
    const int64_t d = stack.dim();
    const auto src = stack.layers.data();

    std::vector<float> out(static_cast<size_t>(n * t_stft * d));
    for (int64_t t = 0; t < t_stft; ++t) {
        const int64_t s =
            t_stft > 1
                ? std::llround(static_cast<double>(t) * static_cast<double>(t_ssl - 1) /
                               static_cast<double>(t_stft - 1))
                : 0;
        for (int64_t layer = 0; layer < n; ++layer) {
            std::memcpy(out.data() + (layer * t_stft + t) * d, src.data() + (layer * t_ssl + s) * d,
                        static_cast<size_t>(d) * sizeof(float));
        }
    }
    return Tensor::from_data({n, t_stft, d}, std::move(out));
}

Tensor weighted_sum(const Tensor& aligned, const WeightedSumParams& params) {
    const Shape& s = aligned.shape();
    if (s.size() != 3) throw DimError("weighted_sum: expected rank-3 stack, got " + shape_str(s));
    const int64_t n = s[0];
    if (params.logits.shape() != Shape{1, n}) {
        throw DimError("weighted_sum: stack has " + std::to_string(n) + " layers, logits are " +
                       shape_str(params.logits.shape()));
    }
    const Tensor e = layer_weights(params);
    Tensor acc = mul(layer_of(aligned, 0), slice_cols(e, 0, 1));
    for (int64_t i = 1; i < n; ++i) {
        acc = add(acc, mul(layer_of(aligned, i), slice_cols(e, i, i + 1)));
    }
    return transpose(acc);
}

}  // namespace cffma
