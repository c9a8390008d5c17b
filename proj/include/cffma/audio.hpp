#pragma once

#include "cffma/tensor.hpp"
#include "cffma/wav.hpp"

namespace cffma {

// Scales `noise` (tiled/cropped to clean's length) so the mixture sits at
// target_snr_db, then adds it to `clean`. If the mixture would clip, the
// whole mixture is scaled back to peak 1; the factor lands in *gain (1.0
// otherwise) so callers can rescale their clean reference to match.
Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double target_snr_db,
                    double* gain = nullptr);

// Plain SNR of est against ref in dB; +infinity when the residual is zero.
double snr_db(const Waveform& est, const Waveform& ref);

// Scale-invariant SNR in dB. Both signals are zero-meaned, ref is the
// projection target. Capped at +60 dB once the residual power vanishes.
double si_snr(const Waveform& est, const Waveform& ref);

// Differentiable SI-SNR over rank-1 tensors, uncapped; an epsilon inside the
// logs keeps the zero-residual case finite. Gradients flow into est only.
Tensor si_snr_soft(const Tensor& est, const Tensor& ref);

}  // namespace cffma
