#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cffma/errors.hpp"
#include "cffma/grad_check.hpp"
#include "cffma/ops.hpp"
#include "cffma/rhma.hpp"
#include "cffma/rng.hpp"
#include "test_util.hpp"

using namespace cffma;
using namespace tutil;

namespace {

constexpr int64_t kC = 16;     // tiny-config d_model
constexpr int64_t kHeads = 2;
constexpr int64_t kFf = 64;
constexpr int64_t kRatio = 2;

RhmaParams tiny_params(uint64_t seed, bool use_mhsa = true, bool use_scta = true) {
    Rng rng(seed);
    return rhma_params(kC, kHeads, kFf, kRatio, use_mhsa, use_scta, rng);
}

double ref_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("single-frame attention weight is exactly one") {
    Rng rng(1);
    MhsaParams p = mhsa_params(kC, kHeads, rng);
    Tensor z = rand_uniform({1, kC}, rng, -1.0f, 1.0f);

    for (int64_t h = 0; h < kHeads; ++h) {
        Tensor a = mhsa_attention(z, p, h);
        REQUIRE(a.shape() == Shape{1, 1});
        CHECK(a.data()[0] == 1.0f);
    }
    Tensor got = mhsa(z, p);
    Tensor want = linear(linear(z, p.wv, p.bv), p.wo, p.bo);
    const auto g = got.data();
    const auto w = want.data();
    for (size_t i = 0; i < g.size(); ++i) CHECK(std::fabs(g[i] - w[i]) <= 1e-7f);
}

TEST_CASE("attention rows are probability distributions") {
    Rng rng(2);
    MhsaParams p = mhsa_params(kC, kHeads, rng);
    Tensor z = rand_uniform({7, kC}, rng, -1.0f, 1.0f);
    for (int64_t h = 0; h < kHeads; ++h) {
        Tensor a = mhsa_attention(z, p, h);
        REQUIRE(a.shape() == Shape{7, 7});
        const auto d = a.data();
        for (int64_t r = 0; r < 7; ++r) {
            double total = 0.0;
            for (int64_t c = 0; c < 7; ++c) {
                const float v = d[static_cast<size_t>(r * 7 + c)];
                CHECK(v >= 0.0f);
                total += v;
            }
            CHECK(std::fabs(total - 1.0) <= 1e-6);
        }
    }
    CHECK_THROWS_AS(mhsa_attention(z, p, kHeads), ContractError);
}

TEST_CASE("attention is permutation-equivariant along time") {
    Rng rng(3);
    MhsaParams p = mhsa_params(kC, kHeads, rng);
    const int64_t t = 9;
    Tensor z = rand_uniform({t, kC}, rng, -1.0f, 1.0f);

    // Rotate rows by 3.
    std::vector<float> perm_data(static_cast<size_t>(t * kC));
    const auto zd = z.data();
    for (int64_t r = 0; r < t; ++r) {
        const int64_t src = (r + 3) % t;
        for (int64_t c = 0; c < kC; ++c) {
            perm_data[static_cast<size_t>(r * kC + c)] = zd[static_cast<size_t>(src * kC + c)];
        }
    }
    Tensor zp = Tensor::from_data({t, kC}, std::move(perm_data));

    Tensor y = mhsa(z, p);
    Tensor yp = mhsa(zp, p);
    const auto yd = y.data();
    const auto ypd = yp.data();
    for (int64_t r = 0; r < t; ++r) {
        const int64_t src = (r + 3) % t;
        for (int64_t c = 0; c < kC; ++c) {
            CHECK(std::fabs(ypd[static_cast<size_t>(r * kC + c)] -
                            yd[static_cast<size_t>(src * kC + c)]) <= 1e-6f);
        }
    }
}

TEST_CASE("ffn basics and composition oracle") {
    Rng rng(4);
    FfnParams zero = ffn_params(8, 12, rng);
    for (Tensor* t : {&zero.w1, &zero.w2}) {
        for (auto& v : t->mutable_data()) v = 0.0f;
    }
    Tensor out = ffn(rand_uniform({3, 8}, rng, -1.0f, 1.0f), zero);
    for (float v : out.data()) CHECK(v == 0.0f);

    FfnParams p = ffn_params(kC, kFf, rng);
    for (int64_t t : {int64_t{1}, int64_t{257}}) {
        CHECK(ffn(rand_uniform({t, kC}, rng, -1.0f, 1.0f), p).shape() == Shape{t, kC});
    }

    // f64 script on a 3x8 input.
    FfnParams q = ffn_params(8, 12, rng);
    for (Tensor* t : {&q.b1, &q.b2}) {
        for (auto& v : t->mutable_data()) v = rng.uniform(-0.3f, 0.3f);
    }
    Tensor x = rand_uniform({3, 8}, rng, -1.0f, 1.0f);
    Tensor got = ffn(x, q);
    const auto xd = x.data();
    const auto w1 = q.w1.data(), b1 = q.b1.data(), w2 = q.w2.data(), b2 = q.b2.data();
    const auto g = got.data();
    for (int64_t r = 0; r < 3; ++r) {
        std::vector<double> hidden(12);
        for (int64_t h = 0; h < 12; ++h) {
            double acc = b1[static_cast<size_t>(h)];
            for (int64_t c = 0; c < 8; ++c) {
                acc += static_cast<double>(w1[static_cast<size_t>(h * 8 + c)]) *
                       xd[static_cast<size_t>(r * 8 + c)];
            }
            hidden[static_cast<size_t>(h)] = std::max(0.0, acc);
        }
        for (int64_t c = 0; c < 8; ++c) {
            double acc = b2[static_cast<size_t>(c)];
            for (int64_t h = 0; h < 12; ++h) {
                acc += static_cast<double>(w2[static_cast<size_t>(c * 12 + h)]) *
                       hidden[static_cast<size_t>(h)];
            }
            CHECK(std::fabs(g[static_cast<size_t>(r * 8 + c)] - acc) <= 1e-6);
        }
    }
}

TEST_CASE("channel attention closed form and gating") {
    Rng rng(5);
    SUBCASE("zeroed FC gates uniformly at sigmoid(0.5)") {
        ScaParams p = sca_params(kC, kRatio, rng);
        for (Tensor* t : {&p.fc1_w, &p.fc2_w}) {
            for (auto& v : t->mutable_data()) v = 0.0f;
        }
        Tensor f = rand_uniform({kC, 6}, rng, -1.0f, 1.0f);
        Tensor out = sca(f, p);
        const double gate = ref_sigmoid(0.5);
        const auto fd = f.data();
        const auto od = out.data();
        for (size_t i = 0; i < od.size(); ++i) {
            CHECK(std::fabs(od[i] - gate * fd[i]) <= 1e-6);
        }
    }
    SUBCASE("gate strictly inside (0,1) per channel") {
        ScaParams p = sca_params(kC, kRatio, rng);
        Tensor f = rand_uniform({kC, 6}, rng, 0.5f, 1.5f);
        Tensor out = sca(f, p);
        const auto fd = f.data();
        const auto od = out.data();
        for (size_t i = 0; i < od.size(); ++i) {
            const float ratio = od[i] / fd[i];
            CHECK(ratio > 0.0f);
            CHECK(ratio < 1.0f);
        }
    }
    SUBCASE("constant-over-time input matches the scripted oracle") {
        ScaParams p = sca_params(4, 2, rng);
        for (Tensor* t : {&p.fc1_b, &p.fc2_b}) {
            for (auto& v : t->mutable_data()) v = rng.uniform(-0.3f, 0.3f);
        }
        std::vector<float> fd(4 * 5);
        std::vector<double> row = {0.7, -0.4, 1.2, 0.1};
        for (int64_t c = 0; c < 4; ++c) {
            for (int64_t t = 0; t < 5; ++t) fd[static_cast<size_t>(c * 5 + t)] = static_cast<float>(row[static_cast<size_t>(c)]);
        }
        Tensor f = Tensor::from_data({4, 5}, fd);
        Tensor out = sca(f, p);

        // max == avg == row value; add == 2x.
        auto fc = [&](const std::vector<double>& x) {
            const auto w1 = p.fc1_w.data(), b1 = p.fc1_b.data(), w2 = p.fc2_w.data(), b2 = p.fc2_b.data();
            std::vector<double> h(2);
            for (int64_t i = 0; i < 2; ++i) {
                double acc = b1[static_cast<size_t>(i)];
                for (int64_t c = 0; c < 4; ++c) acc += static_cast<double>(w1[static_cast<size_t>(i * 4 + c)]) * x[static_cast<size_t>(c)];
                h[static_cast<size_t>(i)] = std::max(0.0, acc);
            }
            std::vector<double> y(4);
            for (int64_t c = 0; c < 4; ++c) {
                double acc = b2[static_cast<size_t>(c)];
                for (int64_t i = 0; i < 2; ++i) acc += static_cast<double>(w2[static_cast<size_t>(c * 2 + i)]) * h[static_cast<size_t>(i)];
                y[static_cast<size_t>(c)] = ref_sigmoid(acc);
            }
            return y;
        };
        std::vector<double> twice = {1.4, -0.8, 2.4, 0.2};
        const auto s_max = fc(row), s_avg = fc(row), s_add = fc(twice);
        const auto od = out.data();
        for (int64_t c = 0; c < 4; ++c) {
            const double gate =
                ref_sigmoid(0.25 * s_max[static_cast<size_t>(c)] + 0.25 * s_avg[static_cast<size_t>(c)] +
                            0.5 * s_add[static_cast<size_t>(c)]);
            for (int64_t t = 0; t < 5; ++t) {
                CHECK(std::fabs(od[static_cast<size_t>(c * 5 + t)] - gate * row[static_cast<size_t>(c)]) <= 1e-6);
            }
        }
    }
}

TEST_CASE("time attention closed form and single-frame oracle") {
    Rng rng(6);
    SUBCASE("zeroed convs gate uniformly at sigmoid(0.5)") {
        StaParams p = sta_params(rng);
        for (Tensor* t : {&p.single_w, &p.concat_w}) {
            for (auto& v : t->mutable_data()) v = 0.0f;
        }
        Tensor f = rand_uniform({kC, 6}, rng, -1.0f, 1.0f);
        Tensor out = sta(f, p);
        const double gate = ref_sigmoid(0.5);
        const auto fd = f.data();
        const auto od = out.data();
        for (size_t i = 0; i < od.size(); ++i) {
            CHECK(std::fabs(od[i] - gate * fd[i]) <= 1e-6);
        }
    }
    SUBCASE("single-frame input reduces convs to their center taps") {
        StaParams p = sta_params(rng);
        for (Tensor* t : {&p.single_b, &p.concat_b}) {
            for (auto& v : t->mutable_data()) v = rng.uniform(-0.3f, 0.3f);
        }
        Tensor f = Tensor::from_data({3, 1}, {0.9f, -0.2f, 0.4f});
        Tensor out = sta(f, p);

        const double f_max = 0.9, f_avg = (0.9 - 0.2 + 0.4) / 3.0;
        const auto sw = p.single_w.data();
        const auto cw = p.concat_w.data();
        const double s_max = ref_sigmoid(sw[1] * f_max + p.single_b.data()[0]);
        const double s_avg = ref_sigmoid(sw[1] * f_avg + p.single_b.data()[0]);
        const double s_cat = ref_sigmoid(cw[2] * f_max + cw[7] * f_avg + p.concat_b.data()[0]);
        const double gate = ref_sigmoid(0.25 * s_max + 0.25 * s_avg + 0.5 * s_cat);

        const auto fd = f.data();
        const auto od = out.data();
        for (size_t i = 0; i < 3; ++i) {
            CHECK(std::fabs(od[i] - gate * fd[i]) <= 1e-6);
        }
    }
}

TEST_CASE("scta composes sca then sta and never grows magnitudes") {
    Rng rng(7);
    ScaParams sp = sca_params(kC, kRatio, rng);
    StaParams tp = sta_params(rng);
    Tensor z = rand_uniform({6, kC}, rng, -1.5f, 1.5f);

    Tensor got = scta(z, sp, tp);
    Tensor want = transpose(sta(sca(transpose(z), sp), tp));
    const auto g = got.data();
    const auto w = want.data();
    const auto zd = z.data();
    for (size_t i = 0; i < g.size(); ++i) {
        CHECK(g[i] == w[i]);
        CHECK(std::fabs(g[i]) <= std::fabs(zd[i]));
    }

    // Zero-initialized gates compose to sigmoid(0.5)^2.
    for (Tensor* t : {&sp.fc1_w, &sp.fc2_w, &tp.single_w, &tp.concat_w}) {
        for (auto& v : t->mutable_data()) v = 0.0f;
    }
    for (Tensor* t : {&sp.fc1_b, &sp.fc2_b, &tp.single_b, &tp.concat_b}) {
        for (auto& v : t->mutable_data()) v = 0.0f;
    }
    Tensor flat = scta(z, sp, tp);
    const double gate2 = ref_sigmoid(0.5) * ref_sigmoid(0.5);
    const auto fd = flat.data();
    for (size_t i = 0; i < fd.size(); ++i) {
        CHECK(std::fabs(fd[i] - gate2 * zd[i]) <= 1e-6);
    }
}

TEST_CASE("block keeps the T x C shape") {
    RhmaParams p = tiny_params(8);
    Rng rng(9);
    for (int64_t t : {int64_t{1}, int64_t{33}, int64_t{257}}) {
        Tensor z = rand_uniform({t, kC}, rng, -1.0f, 1.0f);
        CHECK(rhma_forward(z, p).shape() == Shape{t, kC});
    }
    CHECK_THROWS_AS(rhma_forward(Tensor::zeros({5, kC + 1}), p), DimError);
}

TEST_CASE("block equals the scripted equation chain") {
    RhmaParams p = tiny_params(10);
    Rng rng(11);
    Tensor z = rand_uniform({5, kC}, rng, -1.0f, 1.0f);

    Tensor z_mhsa = apply_ln(add(mhsa(z, p.mhsa), z), p.postln_a);
    Tensor z_prime =
        apply_ln(add(apply_ln(add(ffn(z_mhsa, p.ffn1), z_mhsa), p.postln_b), z), p.ln_a);
    Tensor z_scta = apply_ln(add(scta(z_prime, p.sca, p.sta), z_prime), p.postln_c);
    Tensor want = apply_ln(add(apply_ln(add(ffn(z_scta, p.ffn2), z_scta), p.postln_d), z_prime),
                           p.ln_b);

    Tensor got = rhma_forward(z, p);
    const auto g = got.data();
    const auto w = want.data();
    for (size_t i = 0; i < g.size(); ++i) CHECK(std::fabs(g[i] - w[i]) <= 1e-6f);
}

TEST_CASE("disabled sub-blocks become identity pass-throughs") {
    Rng rng(12);
    Tensor z = rand_uniform({5, kC}, rng, -1.0f, 1.0f);

    SUBCASE("without mhsa") {
        RhmaParams p = tiny_params(13, /*use_mhsa=*/false, /*use_scta=*/true);
        Tensor z_mhsa = apply_ln(add(z, z), p.postln_a);
        Tensor z_prime =
            apply_ln(add(apply_ln(add(ffn(z_mhsa, p.ffn1), z_mhsa), p.postln_b), z), p.ln_a);
        Tensor z_scta = apply_ln(add(scta(z_prime, p.sca, p.sta), z_prime), p.postln_c);
        Tensor want = apply_ln(add(apply_ln(add(ffn(z_scta, p.ffn2), z_scta), p.postln_d), z_prime),
                               p.ln_b);
        const Tensor got = rhma_forward(z, p);
        const auto g = got.data();
        const auto w = want.data();
        for (size_t i = 0; i < w.size(); ++i) CHECK(g[i] == w[i]);
    }
    SUBCASE("without scta") {
        RhmaParams p = tiny_params(14, /*use_mhsa=*/true, /*use_scta=*/false);
        Tensor z_mhsa = apply_ln(add(mhsa(z, p.mhsa), z), p.postln_a);
        Tensor z_prime =
            apply_ln(add(apply_ln(add(ffn(z_mhsa, p.ffn1), z_mhsa), p.postln_b), z), p.ln_a);
        Tensor z_scta = apply_ln(add(z_prime, z_prime), p.postln_c);
        Tensor want = apply_ln(add(apply_ln(add(ffn(z_scta, p.ffn2), z_scta), p.postln_d), z_prime),
                               p.ln_b);
        const Tensor got = rhma_forward(z, p);
        const auto g = got.data();
        const auto w = want.data();
        for (size_t i = 0; i < w.size(); ++i) CHECK(g[i] == w[i]);
    }
    SUBCASE("census drops exactly the disabled parameters") {
        ParamSet full, no_mhsa, no_scta;
        register_rhma(full, "b", tiny_params(15));
        register_rhma(no_mhsa, "b", tiny_params(15, false, true));
        register_rhma(no_scta, "b", tiny_params(15, true, false));
        CHECK(full.size() == no_mhsa.size() + 8);
        CHECK(full.size() == no_scta.size() + 8);
        CHECK(!no_mhsa.contains("b.mhsa.wq"));
        CHECK(!no_scta.contains("b.sca.fc1.w"));
        CHECK(no_mhsa.contains("b.postln_a.gamma"));
    }
}

TEST_CASE("without scta the block is permutation-equivariant") {
    // The attention, FFN and normalization stages are all frame-local or
    // permutation-equivariant; only STA's time convolutions look across
    // neighboring frames.
    RhmaParams p = tiny_params(16, true, false);
    Rng rng(17);
    const int64_t t = 7;
    Tensor z = rand_uniform({t, kC}, rng, -1.0f, 1.0f);

    std::vector<float> perm_data(static_cast<size_t>(t * kC));
    const auto zd = z.data();
    for (int64_t r = 0; r < t; ++r) {
        const int64_t src = (r + 2) % t;
        for (int64_t c = 0; c < kC; ++c) {
            perm_data[static_cast<size_t>(r * kC + c)] = zd[static_cast<size_t>(src * kC + c)];
        }
    }
    Tensor zp = Tensor::from_data({t, kC}, std::move(perm_data));

    const Tensor y_t = rhma_forward(z, p);
    const Tensor yp_t = rhma_forward(zp, p);
    const auto y = y_t.data();
    const auto yp = yp_t.data();
    for (int64_t r = 0; r < t; ++r) {
        const int64_t src = (r + 2) % t;
        for (int64_t c = 0; c < kC; ++c) {
            CHECK(std::fabs(yp[static_cast<size_t>(r * kC + c)] -
                            y[static_cast<size_t>(src * kC + c)]) <= 1e-5f);
        }
    }
}

namespace {

// Minimum distance of any pre-ReLU value from zero, and minimum top-2 gap of
// the pooled axes, measured on the scripted intermediates. Probes that stay
// below these margins cannot cross a kink or flip a max.
struct KinkMargins {
    float relu = 1e9f;
    float pool_gap = 1e9f;
};

float top2_gap(const float* row, int64_t n, int64_t stride) {
    float best = -1e9f, second = -1e9f;
    for (int64_t i = 0; i < n; ++i) {
        const float v = row[i * stride];
        if (v > best) {
            second = best;
            best = v;
        } else if (v > second) {
            second = v;
        }
    }
    return best - second;
}

KinkMargins measure_margins(const Tensor& z, const RhmaParams& p) {
    NoGradGuard ng;
    KinkMargins m;
    auto relu_margin = [&](const Tensor& pre) {
        for (float v : pre.data()) m.relu = std::min(m.relu, std::fabs(v));
    };

    Tensor z_mhsa = apply_ln(add(mhsa(z, p.mhsa), z), p.postln_a);
    relu_margin(linear(z_mhsa, p.ffn1.w1, p.ffn1.b1));
    Tensor z_prime =
        apply_ln(add(apply_ln(add(ffn(z_mhsa, p.ffn1), z_mhsa), p.postln_b), z), p.ln_a);

    Tensor f = transpose(z_prime);  // C x T
    const auto fd = f.data();
    const int64_t c = f.dim(0), t = f.dim(1);
    for (int64_t ci = 0; ci < c; ++ci) {
        m.pool_gap = std::min(m.pool_gap, top2_gap(fd.data() + ci * t, t, 1));
    }
    Tensor f_max = transpose(pool_axis(f, 1, PoolMode::Max));
    Tensor f_avg = transpose(pool_axis(f, 1, PoolMode::Avg));
    relu_margin(linear(f_max, p.sca.fc1_w, p.sca.fc1_b));
    relu_margin(linear(f_avg, p.sca.fc1_w, p.sca.fc1_b));
    relu_margin(linear(add(f_max, f_avg), p.sca.fc1_w, p.sca.fc1_b));

    Tensor after_sca = sca(f, p.sca);
    const auto ad = after_sca.data();
    for (int64_t ti = 0; ti < t; ++ti) {
        m.pool_gap = std::min(m.pool_gap, top2_gap(ad.data() + ti, c, t));
    }

    Tensor z_scta = apply_ln(add(scta(z_prime, p.sca, p.sta), z_prime), p.postln_c);
    relu_margin(linear(z_scta, p.ffn2.w1, p.ffn2.b1));
    return m;
}

}  // namespace

TEST_CASE("gradients of a block readout pass finite differences") {
    // With d_ff=64 the block evaluates ~650 pre-ReLU values, so the smallest
    // |pre-activation| over a random draw is tiny; probes use eps=1e-4 and the
    // seed search only has to clear a 0.004 margin (40x the probe reach).
    constexpr double kEps = 1e-4;
    RhmaParams p;
    Tensor z, readout;
    bool found = false;
    for (uint64_t seed = 0; seed < 400 && !found; ++seed) {
        p = tiny_params(derive_seed(91, seed, 0));
        Rng rng(derive_seed(91, seed, 1));
        z = rand_uniform({5, kC}, rng, -1.0f, 1.0f, true);
        readout = rand_uniform({5, kC}, rng, -1.0f, 1.0f);
        const KinkMargins m = measure_margins(z, p);
        found = m.relu > 0.004f && m.pool_gap > 0.04f;
    }
    REQUIRE(found);

    auto loss = [&](const Tensor&) { return sum(mul(rhma_forward(z, p), readout)); };

    // The key bias shifts every logit of an attention row by the same amount
    // and row-softmax is shift-invariant, so the loss is exactly flat along
    // bk. A relative-error check against a true zero is ill-posed; assert the
    // flatness itself, both analytically and by a wide probe.
    {
        p.mhsa.bk.zero_grad();
        Tensor y = loss(z);
        y.backward();
        for (float g : p.mhsa.bk.grad()) CHECK(std::fabs(g) <= 1e-6f);
        p.mhsa.bk.zero_grad();
        auto bk = p.mhsa.bk.mutable_data();
        for (size_t i : {size_t{0}, size_t{kC / 2}}) {
            const float orig = bk[i];
            double fhi, flo;
            bk[i] = orig + 1e-2f;
            {
                NoGradGuard ng;
                PreciseScope ps;
                fhi = loss(z).item_f64();
            }
            bk[i] = orig - 1e-2f;
            {
                NoGradGuard ng;
                PreciseScope ps;
                flo = loss(z).item_f64();
            }
            bk[i] = orig;
            CHECK(std::fabs(fhi - flo) <= 1e-10);
        }
    }

    std::vector<Tensor*> checked = {
        &p.mhsa.wq, &p.mhsa.bq, &p.mhsa.wk, &p.mhsa.wv, &p.mhsa.bv,
        &p.mhsa.wo, &p.mhsa.bo, &p.ffn1.w1, &p.ffn1.b1, &p.ffn1.w2, &p.ffn1.b2,
        &p.ffn2.w1, &p.ffn2.b1, &p.ffn2.w2, &p.ffn2.b2,
        &p.postln_a.gamma, &p.postln_a.beta, &p.postln_b.gamma, &p.postln_b.beta,
        &p.postln_c.gamma, &p.postln_c.beta, &p.postln_d.gamma, &p.postln_d.beta,
        &p.ln_a.gamma, &p.ln_a.beta, &p.ln_b.gamma, &p.ln_b.beta,
        &p.sca.fc1_w, &p.sca.fc1_b, &p.sca.fc2_w, &p.sca.fc2_b,
        &p.sta.single_w, &p.sta.single_b, &p.sta.concat_w, &p.sta.concat_b, &z};
    Rng sample_rng(derive_seed(91, 777, 2));
    for (Tensor* param : checked) {
        const int64_t n = shape_numel(param->shape());
        const double err = n > 300 ? grad_check_sampled(loss, *param, kEps, 128, sample_rng)
                                   : grad_check(loss, *param, kEps);
        CHECK(err < 1e-3);
    }
}
