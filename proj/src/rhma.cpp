#include "cffma/rhma.hpp"

#include <cmath>

#include "cffma/errors.hpp"
#include "cffma/ops.hpp"
#include "cffma/rng.hpp"

namespace cffma {

namespace {

Tensor linear_init(int64_t out, int64_t in, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    return rand_uniform({out, in}, rng, -bound, bound, true);
}

Tensor zeros_param(Shape shape) {
    return Tensor::param(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 0.0f));
}

Tensor ones_param(Shape shape) {
    return Tensor::param(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 1.0f));
}

}  // namespace

MhsaParams mhsa_params(int64_t d_model, int64_t n_heads, Rng& rng) {
    if (n_heads < 1 || d_model % n_heads != 0) {
        throw ContractError("mhsa_params: d_model must be divisible by n_heads");
    }
    MhsaParams p;
    p.wq = linear_init(d_model, d_model, rng);
    p.bq = zeros_param({1, d_model});
    p.wk = linear_init(d_model, d_model, rng);
    p.bk = zeros_param({1, d_model});
    p.wv = linear_init(d_model, d_model, rng);
    p.bv = zeros_param({1, d_model});
    p.wo = linear_init(d_model, d_model, rng);
    p.bo = zeros_param({1, d_model});
    p.n_heads = n_heads;
    return p;
}

FfnParams ffn_params(int64_t d_model, int64_t d_ff, Rng& rng) {
    if (d_ff < 1) throw ContractError("ffn_params: d_ff must be >= 1");
    FfnParams p;
    p.w1 = linear_init(d_ff, d_model, rng);
    p.b1 = zeros_param({1, d_ff});
    p.w2 = linear_init(d_model, d_ff, rng);
    p.b2 = zeros_param({1, d_model});
    return p;
}

LnAffine ln_affine(int64_t d_model) {
    LnAffine a;
    a.gamma = ones_param({1, d_model});
    a.beta = zeros_param({1, d_model});
    return a;
}

ScaParams sca_params(int64_t d_model, int64_t ratio, Rng& rng) {
    if (ratio < 1 || d_model % ratio != 0) {
        throw ContractError("sca_params: ratio must divide d_model");
    }
    const int64_t hidden = d_model / ratio;
    ScaParams p;
    p.fc1_w = linear_init(hidden, d_model, rng);
    p.fc1_b = zeros_param({1, hidden});
    p.fc2_w = linear_init(d_model, hidden, rng);
    p.fc2_b = zeros_param({1, d_model});
    return p;
}

StaParams sta_params(Rng& rng) {
    StaParams p;
    const float b3 = 1.0f / std::sqrt(3.0f);
    const float b10 = 1.0f / std::sqrt(10.0f);
    p.single_w = rand_uniform({1, 1, 3}, rng, -b3, b3, true);
    p.single_b = zeros_param({1});
    p.concat_w = rand_uniform({1, 2, 5}, rng, -b10, b10, true);
    p.concat_b = zeros_param({1});
    return p;
}

RhmaParams rhma_params(int64_t d_model, int64_t n_heads, int64_t d_ff, int64_t sca_ratio,
                       bool use_mhsa, bool use_scta, Rng& rng) {
    RhmaParams p;
    p.use_mhsa = use_mhsa;
    p.use_scta = use_scta;
    p.d_model = d_model;
    if (use_mhsa) p.mhsa = mhsa_params(d_model, n_heads, rng);
    p.ffn1 = ffn_params(d_model, d_ff, rng);
    p.ffn2 = ffn_params(d_model, d_ff, rng);
    p.postln_a = ln_affine(d_model);
    p.postln_b = ln_affine(d_model);
    p.postln_c = ln_affine(d_model);
    p.postln_d = ln_affine(d_model);
    p.ln_a = ln_affine(d_model);
    p.ln_b = ln_affine(d_model);
    if (use_scta) {
        p.sca = sca_params(d_model, sca_ratio, rng);
        p.sta = sta_params(rng);
    }
    return p;
}

void register_rhma(ParamSet& set, const std::string& prefix, const RhmaParams& params) {
    if (params.use_mhsa) {
        set.add(prefix + ".mhsa.wq", params.mhsa.wq);
        set.add(prefix + ".mhsa.bq", params.mhsa.bq);
        set.add(prefix + ".mhsa.wk", params.mhsa.wk);
        set.add(prefix + ".mhsa.bk", params.mhsa.bk);
        set.add(prefix + ".mhsa.wv", params.mhsa.wv);
        set.add(prefix + ".mhsa.bv", params.mhsa.bv);
        set.add(prefix + ".mhsa.wo", params.mhsa.wo);
        set.add(prefix + ".mhsa.bo", params.mhsa.bo);
    }
    auto add_ffn = [&](const std::string& name, const FfnParams& f) {
        set.add(prefix + "." + name + ".w1", f.w1);
        set.add(prefix + "." + name + ".b1", f.b1);
        set.add(prefix + "." + name + ".w2", f.w2);
        set.add(prefix + "." + name + ".b2", f.b2);
    };
    auto add_ln = [&](const std::string& name, const LnAffine& a) {
        set.add(prefix + "." + name + ".gamma", a.gamma);
        set.add(prefix + "." + name + ".beta", a.beta);
    };
    add_ffn("ffn1", params.ffn1);
    add_ffn("ffn2", params.ffn2);
    add_ln("postln_a", params.postln_a);
    add_ln("postln_b", params.postln_b);
    add_ln("postln_c", params.postln_c);
    add_ln("postln_d", params.postln_d);
    add_ln("ln_a", params.ln_a);
    add_ln("ln_b", params.ln_b);
    if (params.use_scta) {
        set.add(prefix + ".sca.fc1.w", params.sca.fc1_w);
        set.add(prefix + ".sca.fc1.b", params.sca.fc1_b);
        set.add(prefix + ".sca.fc2.w", params.sca.fc2_w);
        set.add(prefix + ".sca.fc2.b", params.sca.fc2_b);
        set.add(prefix + ".sta.single.w", params.sta.single_w);
        set.add(prefix + ".sta.single.b", params.sta.single_b);
        set.add(prefix + ".sta.concat.w", params.sta.concat_w);
        set.add(prefix + ".sta.concat.b", params.sta.concat_b);
    }
}

namespace {

void check_block_input(const Tensor& z, int64_t d_model, const char* who) {
    if (z.ndim() != 2 || z.dim(1) != d_model) {
        throw DimError(std::string(who) + ": expected T x " + std::to_string(d_model) + ", got " +
                       shape_str(z.shape()));
    }
}

}  // namespace

Tensor mhsa(const Tensor& z, const MhsaParams& params) {
    const int64_t c = params.wq.dim(0);
    check_block_input(z, c, "mhsa");
    const int64_t dh = c / params.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Tensor q = linear(z, params.wq, params.bq);
    const Tensor k = linear(z, params.wk, params.bk);
    const Tensor v = linear(z, params.wv, params.bv);

    Tensor merged;
    for (int64_t h = 0; h < params.n_heads; ++h) {
        const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        const Tensor attn = softmax(scale(matmul(qh, transpose(kh)), att_scale), 1);
        const Tensor oh = matmul(attn, vh);
        merged = h == 0 ? oh : concat(merged, oh, 1);
    }
    return linear(merged, params.wo, params.bo);
}

Tensor mhsa_attention(const Tensor& z, const MhsaParams& params, int64_t head) {
    const int64_t c = params.wq.dim(0);
    check_block_input(z, c, "mhsa_attention");
    if (head < 0 || head >= params.n_heads) throw ContractError("mhsa_attention: head out of range");
    const int64_t dh = c / params.n_heads;
    const Tensor qh = slice_cols(linear(z, params.wq, params.bq), head * dh, (head + 1) * dh);
    const Tensor kh = slice_cols(linear(z, params.wk, params.bk), head * dh, (head + 1) * dh);
    return softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))), 1);
}

Tensor ffn(const Tensor& x, const FfnParams& params) {
    return linear(relu(linear(x, params.w1, params.b1)), params.w2, params.b2);
}

Tensor apply_ln(const Tensor& x, const LnAffine& affine) {
    return layer_norm(x, affine.gamma, affine.beta);
}

Tensor sca(const Tensor& f, const ScaParams& params) {
    const Tensor f_max = transpose(pool_axis(f, 1, PoolMode::Max));  // (1,C)
    const Tensor f_avg = transpose(pool_axis(f, 1, PoolMode::Avg));
    const Tensor f_add = add(f_max, f_avg);
    auto fc = [&](const Tensor& x) {
        return sigmoid(linear(relu(linear(x, params.fc1_w, params.fc1_b)), params.fc2_w, params.fc2_b));
    };
    const Tensor mixed = add(add(scale(fc(f_max), kSctaAlphaMax), scale(fc(f_avg), kSctaAlphaAvg)),
                             scale(fc(f_add), kSctaBeta));
    const Tensor gate = sigmoid(mixed);        // (1,C)
    return mul(f, transpose(gate));            // broadcast over time
}

Tensor sta(const Tensor& f, const StaParams& params) {
    const Tensor f_max = pool_axis(f, 0, PoolMode::Max);  // (1,T)
    const Tensor f_avg = pool_axis(f, 0, PoolMode::Avg);
    const Tensor f_cat = concat(f_max, f_avg, 0);         // (2,T)
    const Tensor s_max = sigmoid(conv1d(f_max, params.single_w, params.single_b));
    const Tensor s_avg = sigmoid(conv1d(f_avg, params.single_w, params.single_b));
    const Tensor s_cat = sigmoid(conv1d(f_cat, params.concat_w, params.concat_b));
    const Tensor mixed = add(add(scale(s_max, kSctaAlphaMax), scale(s_avg, kSctaAlphaAvg)),
                             scale(s_cat, kSctaBeta));
    const Tensor gate = sigmoid(mixed);  // (1,T)
    return mul(f, gate);                 // broadcast over channels
}

Tensor scta(const Tensor& z, const ScaParams& sca_p, const StaParams& sta_p) {
    return transpose(sta(sca(transpose(z), sca_p), sta_p));
}

Tensor rhma_forward(const Tensor& z, const RhmaParams& params) {
    check_block_input(z, params.d_model, "rhma_forward");
    const Tensor attn = params.use_mhsa ? mhsa(z, params.mhsa) : z;
    const Tensor z_mhsa = apply_ln(add(attn, z), params.postln_a);
    const Tensor z_prime =
        apply_ln(add(apply_ln(add(ffn(z_mhsa, params.ffn1), z_mhsa), params.postln_b), z), params.ln_a);
    const Tensor sc = params.use_scta ? scta(z_prime, params.sca, params.sta) : z_prime;
    const Tensor z_scta = apply_ln(add(sc, z_prime), params.postln_c);
    return apply_ln(add(apply_ln(add(ffn(z_scta, params.ffn2), z_scta), params.postln_d), z_prime),
                    params.ln_b);
}

}  // namespace cffma
