#include "cffma/mscff.hpp"

#include <cmath>

#include "cffma/errors.hpp"
#include "cffma/ops.hpp"
#include "cffma/rng.hpp"

namespace cffma {

namespace {

Tensor conv_init(int64_t c_out, int64_t c_in, int64_t k, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(c_in * k));
    return rand_uniform({c_out, c_in, k}, rng, -bound, bound, true);
}

Tensor zeros_param(Shape shape) {
    return Tensor::param(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 0.0f));
}

}  // namespace

MscffParams mscff_params(int64_t ssl_dim, int64_t spec_bins, Rng& rng) {
    if (ssl_dim < 1 || spec_bins < 1) throw ContractError("mscff_params: dims must be >= 1");
    const int64_t c = ssl_dim + spec_bins;
    MscffParams p;
    p.main_w = conv_init(c, c, 1, rng);
    p.main_b = zeros_param({c});
    p.main_slope = Tensor::param({1}, {0.25f});
    p.main_gamma = Tensor::param({1, c}, std::vector<float>(static_cast<size_t>(c), 1.0f));
    p.main_beta = zeros_param({1, c});
    p.gate_spec_w = conv_init(spec_bins, c, 3, rng);
    p.gate_spec_b = zeros_param({spec_bins});
    p.gate_ssl_w = conv_init(ssl_dim, c, 5, rng);
    p.gate_ssl_b = zeros_param({ssl_dim});
    p.gate_concat_w = conv_init(c, c, 3, rng);
    p.gate_concat_b = zeros_param({c});
    p.ssl_dim = ssl_dim;
    p.spec_bins = spec_bins;
    return p;
}

void register_mscff(ParamSet& set, const std::string& prefix, const MscffParams& params) {
    set.add(prefix + ".main.w", params.main_w);
    set.add(prefix + ".main.b", params.main_b);
    set.add(prefix + ".main.slope", params.main_slope);
    set.add(prefix + ".main.gamma", params.main_gamma);
    set.add(prefix + ".main.beta", params.main_beta);
    set.add(prefix + ".gate_spec.w", params.gate_spec_w);
    set.add(prefix + ".gate_spec.b", params.gate_spec_b);
    set.add(prefix + ".gate_ssl.w", params.gate_ssl_w);
    set.add(prefix + ".gate_ssl.b", params.gate_ssl_b);
    set.add(prefix + ".gate_concat.w", params.gate_concat_w);
    set.add(prefix + ".gate_concat.b", params.gate_concat_b);
}

Tensor mscff_main_branch(const Tensor& f_concat, const MscffParams& params) {
    const int64_t c = params.ssl_dim + params.spec_bins;
    if (f_concat.shape().size() != 2 || f_concat.shape()[0] != c) {
        throw DimError("mscff main branch: expected " + std::to_string(c) + " channels, got " +
                       shape_str(f_concat.shape()));
    }
    const Tensor y = prelu(conv1d(f_concat, params.main_w, params.main_b), params.main_slope);
    // layer_norm works on (T, C) rows; conv output is (C, T).
    return transpose(layer_norm(transpose(y), params.main_gamma, params.main_beta));
}

Tensor mscff_gate(const Tensor& f_prime, const MscffParams& params, GateKind kind) {
    switch (kind) {
        case GateKind::Spec:
            return sigmoid(conv1d(f_prime, params.gate_spec_w, params.gate_spec_b));
        case GateKind::Ssl:
            return sigmoid(conv1d(f_prime, params.gate_ssl_w, params.gate_ssl_b));
        case GateKind::Concat:
            return sigmoid(conv1d(f_prime, params.gate_concat_w, params.gate_concat_b));
    }
    throw ContractError("mscff_gate: unknown gate selector");
}

Tensor mscff(const Tensor& f_ws_ssl, const Tensor& f_spec, const MscffParams& params) {
    const Shape& ss = f_ws_ssl.shape();
    const Shape& ps = f_spec.shape();
    if (ss.size() != 2 || ss[0] != params.ssl_dim) {
        throw DimError("mscff: SSL feature must be D x T with D = " + std::to_string(params.ssl_dim));
    }
    if (ps.size() != 2 || ps[0] != params.spec_bins) {
        throw DimError("mscff: spectrogram must be F x T with F = " + std::to_string(params.spec_bins));
    }
    if (ss[1] != ps[1]) {
        throw DimError("mscff: frame counts differ, " + std::to_string(ss[1]) + " vs " +
                       std::to_string(ps[1]));
    }

    const Tensor f_concat = concat(f_ws_ssl, f_spec, 0);
    const Tensor f_prime = mscff_main_branch(f_concat, params);
    const Tensor gated_spec = mul(mscff_gate(f_prime, params, GateKind::Spec), f_spec);
    const Tensor gated_ssl = mul(mscff_gate(f_prime, params, GateKind::Ssl), f_ws_ssl);
    const Tensor gated_concat = mul(mscff_gate(f_prime, params, GateKind::Concat), f_concat);
    return relu(add(concat(gated_spec, gated_ssl, 0), gated_concat));
}

}  // namespace cffma
