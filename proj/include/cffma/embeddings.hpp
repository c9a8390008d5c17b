#pragma once

#include <cstdint>
#include <string>

#include "cffma/tensor.hpp"
#include "cffma/wav.hpp"

namespace cffma {

// A stack of per-layer feature sequences from a self-supervised speech
// encoder, loaded from disk or synthesized. Layout: N x T_ssl x D.
struct EmbeddingStack {
    Tensor layers;
    double frame_hop_s = 0.02;

    int64_t n_layers() const { return layers.shape()[0]; }
    int64_t frames() const { return layers.shape()[1]; }
    int64_t dim() const { return layers.shape()[2]; }
    void validate() const;
};

// Learnable layer-mixing weights, kept on the probability simplex by a
// softmax over raw logits (stored as a 1 x N row).
struct WeightedSumParams {
    Tensor logits;
};

// Zero logits: uniform mixing weights.
WeightedSumParams weighted_sum_params(int64_t n_layers);

// softmax(logits) as a 1 x N row.
Tensor layer_weights(const WeightedSumParams& params);

// SSLE container: "SSLE", u32 version=1, u32 N, u32 T_ssl, u32 D,
// u32 hop_microseconds, then N*T_ssl*D f32 little-endian (layer, frame, dim).
void provider_save(const std::string& path, const EmbeddingStack& stack);
EmbeddingStack provider_load(const std::string& path);

// Deterministic stand-in for a pretrained encoder: 25 ms / 20 ms framing,
// log-energies over 40 uniform frequency bands, one seeded fixed random
// projection to `dim` per layer.
EmbeddingStack provider_synthetic(const Waveform& x, int64_t n_layers, int64_t dim, uint64_t seed);

// Nearest-neighbor resampling along time to the spectrogram frame count:
// src = round(t * (T_ssl-1) / (T_stft-1)), endpoints preserved.
Tensor align_frames(const EmbeddingStack& stack, int64_t t_stft);

// F_ws = sum_i e_i * layer_i over an aligned N x T x D stack, returned as
// D x T. Differentiable w.r.t. the logits and (if it carries grad) the stack.
Tensor weighted_sum(const Tensor& aligned, const WeightedSumParams& params);

}  // namespace cffma
