#pragma once

#include <cstdint>
#include <string>

#include "cffma/adam.hpp"
#include "cffma/tensor.hpp"

namespace cffma {

class Rng;

// Multi-scale cross-domain feature fusion: a main branch (pointwise conv ->
// PReLU -> channel layer-norm) and three sigmoid gate branches that modulate
// the raw source features before the final cross-fusion.
struct MscffParams {
    // main branch, D+F -> D+F
    Tensor main_w;      // (D+F, D+F, 1)
    Tensor main_b;      // (D+F)
    Tensor main_slope;  // (1), PReLU
    Tensor main_gamma;  // (1, D+F)
    Tensor main_beta;   // (1, D+F)
    // gate branches, all dilation 1
    Tensor gate_spec_w;    // (F, D+F, 3)
    Tensor gate_spec_b;    // (F)
    Tensor gate_ssl_w;     // (D, D+F, 5)
    Tensor gate_ssl_b;     // (D)
    Tensor gate_concat_w;  // (D+F, D+F, 3)
    Tensor gate_concat_b;  // (D+F)

    int64_t ssl_dim = 0;    // D
    int64_t spec_bins = 0;  // F
};

// Conv weights uniform in +-1/sqrt(fan_in), biases zero, PReLU slope 0.25,
// layer-norm affine at identity.
MscffParams mscff_params(int64_t ssl_dim, int64_t spec_bins, Rng& rng);

// Registers every tensor under "<prefix>.": main.w, main.b, main.slope,
// main.gamma, main.beta, gate_spec.w, ... in a fixed order.
void register_mscff(ParamSet& set, const std::string& prefix, const MscffParams& params);

// conv -> PReLU -> layer-norm over channels per frame. Input (D+F) x T.
Tensor mscff_main_branch(const Tensor& f_concat, const MscffParams& params);

enum class GateKind { Spec, Ssl, Concat };

// sigmoid(dilated conv of the main-branch output); values in (0,1).
Tensor mscff_gate(const Tensor& f_prime, const MscffParams& params, GateKind kind);

// Full fusion: F'' = ReLU(concat(F'_spec, F'_ssl) + F'_concat), where each
// F'_x is the matching gate applied to the raw source feature.
Tensor mscff(const Tensor& f_ws_ssl, const Tensor& f_spec, const MscffParams& params);

}  // namespace cffma
