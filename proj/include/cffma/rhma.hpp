#pragma once

#include <cstdint>
#include <string>

#include "cffma/adam.hpp"
#include "cffma/tensor.hpp"

namespace cffma {

class Rng;

// Fixed mix weights for the SCA/STA attention paths.
inline constexpr double kSctaAlphaMax = 0.25;
inline constexpr double kSctaAlphaAvg = 0.25;
inline constexpr double kSctaBeta = 0.5;

struct MhsaParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    int64_t n_heads = 1;
};

struct FfnParams {
    Tensor w1, b1, w2, b2;
};

struct LnAffine {
    Tensor gamma, beta;
};

// Channel attention: shared two-layer FC over time-pooled descriptors.
struct ScaParams {
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

// Time attention: one conv shared by the max/avg paths, one for the pair.
struct StaParams {
    Tensor single_w, single_b;  // (1,1,3) / (1)
    Tensor concat_w, concat_b;  // (1,2,5) / (1)
};

// One residual hybrid multi-attention block. Disabled sub-blocks carry no
// parameters and are replaced by identity pass-throughs in the forward,
// keeping the residual/normalization wiring intact.
struct RhmaParams {
    bool use_mhsa = true;
    bool use_scta = true;
    MhsaParams mhsa;
    FfnParams ffn1, ffn2;
    LnAffine postln_a, postln_b, postln_c, postln_d, ln_a, ln_b;
    ScaParams sca;
    StaParams sta;
    int64_t d_model = 0;
};

MhsaParams mhsa_params(int64_t d_model, int64_t n_heads, Rng& rng);
FfnParams ffn_params(int64_t d_model, int64_t d_ff, Rng& rng);
LnAffine ln_affine(int64_t d_model);
ScaParams sca_params(int64_t d_model, int64_t ratio, Rng& rng);
StaParams sta_params(Rng& rng);
RhmaParams rhma_params(int64_t d_model, int64_t n_heads, int64_t d_ff, int64_t sca_ratio,
                       bool use_mhsa, bool use_scta, Rng& rng);

void register_rhma(ParamSet& set, const std::string& prefix, const RhmaParams& params);

// Scaled dot-product attention over rows of z (T x C), softmax along keys,
// heads concatenated and projected. No positional encoding, no masking.
Tensor mhsa(const Tensor& z, const MhsaParams& params);

// The post-softmax T x T attention matrix of one head (introspection).
Tensor mhsa_attention(const Tensor& z, const MhsaParams& params, int64_t head);

// linear -> ReLU -> linear.
Tensor ffn(const Tensor& x, const FfnParams& params);

Tensor apply_ln(const Tensor& x, const LnAffine& affine);

// Channel attention over F (C x T): gate per channel from time pooling.
Tensor sca(const Tensor& f, const ScaParams& params);

// Time attention over F (C x T): gate per frame from channel pooling.
Tensor sta(const Tensor& f, const StaParams& params);

// SCA then STA on the transposed block layout (z is T x C).
Tensor scta(const Tensor& z, const ScaParams& sca_p, const StaParams& sta_p);

// The full block:
//   Z_mhsa = PostLN_a(MHSA(Z) + Z)
//   Z'     = LN_a(PostLN_b(FFN1(Z_mhsa) + Z_mhsa) + Z)
//   Z'_sc  = PostLN_c(SCTA(Z') + Z')
//   Z''    = LN_b(PostLN_d(FFN2(Z'_sc) + Z'_sc) + Z')
Tensor rhma_forward(const Tensor& z, const RhmaParams& params);

}  // namespace cffma
