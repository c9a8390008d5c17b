#pragma once

#include <cstdint>

#include "cffma/tensor.hpp"
#include "cffma/wav.hpp"

namespace cffma {

struct StftConfig {
    int fft_len = 400;
    int win_len = 400;
    int hop = 160;

    int freq_bins() const { return fft_len / 2 + 1; }
    void validate() const;
};

// Complex spectrum as two F x T planes.
struct ComplexSpec {
    Tensor re;
    Tensor im;
};

struct SpectroStack {
    Tensor mag;    // F x T, non-negative
    Tensor phase;  // F x T x 2 holding (cos, sin); (1, 0) where mag is zero
    StftConfig config;
    int64_t orig_len = 0;
};

// Frame count under the center convention: 1 + floor(len / hop).
int64_t stft_frames(int64_t len, const StftConfig& cfg);

// Center-padded (reflect) short-time transform with a periodic Hann window.
ComplexSpec stft_complex(const Waveform& x, const StftConfig& cfg);
SpectroStack stft(const Waveform& x, const StftConfig& cfg);

// One plane (0 = cos, 1 = sin) of a rank-3 phase tensor, as F x T.
Tensor phase_part(const Tensor& phase, int component);

// Re = mag * cos, Im = mag * sin, elementwise.
ComplexSpec reconstruct(const Tensor& mag, const Tensor& phase);

// Inverse real DFT per frame, synthesis-windowed overlap-add divided by the
// summed squared-window envelope (WOLA), trimmed to orig_len samples.
Waveform istft(const ComplexSpec& spec, const StftConfig& cfg, int64_t orig_len);

// Differentiable counterpart of istft(reconstruct(mag, phase), ...): returns
// a waveform tensor of shape [orig_len] with gradients flowing into mag.
// The phase is treated as fixed.
Tensor istft_mag(const Tensor& mag, const Tensor& phase, const StftConfig& cfg, int64_t orig_len);

}  // namespace cffma
