#include "cffma/grad_audit.hpp"

#include <cmath>
#include <functional>
#include <utility>

#include "cffma/adam.hpp"
#include "cffma/embeddings.hpp"
#include "cffma/grad_check.hpp"
#include "cffma/mscff.hpp"
#include "cffma/ops.hpp"
#include "cffma/rhma.hpp"
#include "cffma/rng.hpp"
#include "cffma/stft.hpp"

namespace cffma {

namespace {

// Uniform values kept away from zero so kinked ops (relu, abs, prelu) see no
// sign flip within the probe reach.
Tensor away_from_zero(Shape shape, Rng& rng, float margin) {
    Tensor t = rand_uniform(std::move(shape), rng, -1.0f, 1.0f, true);
    for (auto& v : t.mutable_data()) {
        const float sign = v < 0.0f ? -1.0f : 1.0f;
        v = sign * (margin + (1.0f - margin) * std::fabs(v));
    }
    return t;
}

// Per-slice top-2 gap large enough that max-pool keeps its argmax under
// perturbation.
bool max_gap_ok(const Tensor& x, float need) {
    const auto d = x.data();
    const int64_t rows = x.dim(0), cols = x.dim(1);
    for (int axis = 0; axis < 2; ++axis) {
        const int64_t outer = axis == 0 ? cols : rows;
        const int64_t inner = axis == 0 ? rows : cols;
        for (int64_t o = 0; o < outer; ++o) {
            float top = -1e30f, second = -1e30f;
            for (int64_t i = 0; i < inner; ++i) {
                const float v = axis == 0 ? d[static_cast<size_t>(i * cols + o)]
                                          : d[static_cast<size_t>(o * cols + i)];
                if (v > top) {
                    second = top;
                    top = v;
                } else if (v > second) {
                    second = v;
                }
            }
            if (top - second < need) return false;
        }
    }
    return true;
}

// Scalar readout: weight the op output with a fixed probe and sum.
ScalarFn readout(const std::function<Tensor()>& op, const Tensor& w) {
    return [op, w](const Tensor&) { return sum(mul(op(), w)); };
}

// Max sampled error over every parameter of a ParamSet against one scalar fn.
// Key biases of attention are skipped: row-softmax is shift-invariant, so the
// loss is exactly flat there and a relative FD comparison is ill-posed.
double check_set(ParamSet& set, const ScalarFn& f, double eps, int64_t sample, Rng& rng) {
    double worst = 0.0;
    for (auto& item : set.items()) {
        if (item.name.size() >= 8 && item.name.rfind("mhsa.bk") == item.name.size() - 7) continue;
        const double err = item.tensor.numel() > sample
                               ? grad_check_sampled(f, item.tensor, eps, sample, rng)
                               : grad_check(f, item.tensor, eps);
        worst = std::max(worst, err);
    }
    return worst;
}

template <typename Body>
AuditEntry retry_module(const std::string& name, double tol, uint64_t seed, int attempts,
                        Body&& body) {
    AuditEntry entry{name, 0.0, tol};
    for (int k = 0; k < attempts; ++k) {
        entry.err = body(derive_seed(seed, 0xf00d + static_cast<uint64_t>(k), 0));
        if (entry.err < tol) break;
    }
    return entry;
}

}  // namespace

std::vector<AuditEntry> audit_primitives(uint64_t seed) {
    std::vector<AuditEntry> out;
    int op_index = 0;
    auto entry = [&](const std::string& name, const std::function<double(Rng&)>& body) {
        Rng rng(derive_seed(seed, 0xacc, static_cast<uint64_t>(op_index++)));
        out.push_back({name, body(rng), 1e-3});
    };

    entry("add", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, -1, 1, true);
        Tensor y = rand_uniform({3, 4}, rng, -1, 1, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        const ScalarFn f = readout([&] { return add(x, y); }, w);
        return std::max(grad_check(f, x), grad_check(f, y));
    });
    entry("sub", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, -1, 1, true);
        Tensor y = rand_uniform({3, 4}, rng, -1, 1, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        const ScalarFn f = readout([&] { return sub(x, y); }, w);
        return std::max(grad_check(f, x), grad_check(f, y));
    });
    entry("mul", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, -1, 1, true);
        Tensor y = rand_uniform({3, 4}, rng, 0.5, 1.5, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        const ScalarFn f = readout([&] { return mul(x, y); }, w);
        return std::max(grad_check(f, x), grad_check(f, y));
    });
    entry("scale", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, -1, 1, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        return grad_check(readout([&] { return scale(x, 1.7); }, w), x);
    });
    entry("add_scalar", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, -1, 1, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        return grad_check(readout([&] { return add_scalar(x, 0.3); }, w), x);
    });
    entry("relu", [](Rng& rng) {
        Tensor x = away_from_zero({4, 5}, rng, 0.1f);
        const Tensor w = rand_uniform({4, 5}, rng, -1, 1);
        return grad_check(readout([&] { return relu(x); }, w), x);
    });
    entry("sigmoid", [](Rng& rng) {
        Tensor x = rand_uniform({4, 5}, rng, -2, 2, true);
        const Tensor w = rand_uniform({4, 5}, rng, -1, 1);
        return grad_check(readout([&] { return sigmoid(x); }, w), x);
    });
    entry("prelu", [](Rng& rng) {
        Tensor x = away_from_zero({4, 5}, rng, 0.1f);
        Tensor slope = rand_uniform({1}, rng, 0.1, 0.4, true);
        const Tensor w = rand_uniform({4, 5}, rng, -1, 1);
        const ScalarFn f = readout([&] { return prelu(x, slope); }, w);
        return std::max(grad_check(f, x), grad_check(f, slope));
    });
    entry("abs", [](Rng& rng) {
        Tensor x = away_from_zero({4, 5}, rng, 0.1f);
        const Tensor w = rand_uniform({4, 5}, rng, -1, 1);
        return grad_check(readout([&] { return abs(x); }, w), x);
    });
    entry("log", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, 0.5, 2.0, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        return grad_check(readout([&] { return log(x); }, w), x);
    });
    entry("sqrt", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, 0.5, 2.0, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        return grad_check(readout([&] { return sqrt(x); }, w), x);
    });
    entry("reciprocal", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, 0.5, 2.0, true);
        const Tensor w = rand_uniform({3, 4}, rng, -1, 1);
        return grad_check(readout([&] { return reciprocal(x); }, w), x);
    });
    entry("transpose", [](Rng& rng) {
        Tensor x = rand_uniform({3, 5}, rng, -1, 1, true);
        const Tensor w = rand_uniform({5, 3}, rng, -1, 1);
        return grad_check(readout([&] { return transpose(x); }, w), x);
    });
    entry("reshape", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4}, rng, -1, 1, true);
        const Tensor w = rand_uniform({2, 6}, rng, -1, 1);
        return grad_check(readout([&] { return reshape(x, {2, 6}); }, w), x);
    });
    entry("concat", [](Rng& rng) {
        Tensor x = rand_uniform({2, 4}, rng, -1, 1, true);
        Tensor y = rand_uniform({3, 4}, rng, -1, 1, true);
        const Tensor w0 = rand_uniform({5, 4}, rng, -1, 1);
        const ScalarFn f0 = readout([&] { return concat(x, y, 0); }, w0);
        Tensor a = rand_uniform({3, 2}, rng, -1, 1, true);
        Tensor b = rand_uniform({3, 3}, rng, -1, 1, true);
        const Tensor w1 = rand_uniform({3, 5}, rng, -1, 1);
        const ScalarFn f1 = readout([&] { return concat(a, b, 1); }, w1);
        return std::max(std::max(grad_check(f0, x), grad_check(f0, y)),
                        std::max(grad_check(f1, a), grad_check(f1, b)));
    });
    entry("slice_cols", [](Rng& rng) {
        Tensor x = rand_uniform({3, 6}, rng, -1, 1, true);
        const Tensor w = rand_uniform({3, 3}, rng, -1, 1);
        return grad_check(readout([&] { return slice_cols(x, 1, 4); }, w), x);
    });
    entry("layer_of", [](Rng& rng) {
        Tensor x = rand_uniform({3, 4, 5}, rng, -1, 1, true);
        const Tensor w = rand_uniform({4, 5}, rng, -1, 1);
        return grad_check(readout([&] { return layer_of(x, 1); }, w), x);
    });
    entry("sum", [](Rng& rng) {
        Tensor x = rand_uniform({4, 6}, rng, -1, 1, true);
        return grad_check([&](const Tensor&) { return sum(x); }, x);
    });
    entry("mean", [](Rng& rng) {
        Tensor x = rand_uniform({4, 6}, rng, -1, 1, true);
        return grad_check([&](const Tensor&) { return mean(x); }, x);
    });
    entry("pool_max", [](Rng& rng) {
        Tensor x = rand_uniform({4, 6}, rng, -1, 1, true);
        while (!max_gap_ok(x, 0.05f)) x = rand_uniform({4, 6}, rng, -1, 1, true);
        const Tensor w0 = rand_uniform({1, 6}, rng, -1, 1);
        const Tensor w1 = rand_uniform({4, 1}, rng, -1, 1);
        const ScalarFn f0 = readout([&] { return pool_axis(x, 0, PoolMode::Max); }, w0);
        const ScalarFn f1 = readout([&] { return pool_axis(x, 1, PoolMode::Max); }, w1);
        return std::max(grad_check(f0, x), grad_check(f1, x));
    });
    entry("pool_avg", [](Rng& rng) {
        Tensor x = rand_uniform({4, 6}, rng, -1, 1, true);
        const Tensor w0 = rand_uniform({1, 6}, rng, -1, 1);
        const Tensor w1 = rand_uniform({4, 1}, rng, -1, 1);
        const ScalarFn f0 = readout([&] { return pool_axis(x, 0, PoolMode::Avg); }, w0);
        const ScalarFn f1 = readout([&] { return pool_axis(x, 1, PoolMode::Avg); }, w1);
        return std::max(grad_check(f0, x), grad_check(f1, x));
    });
    entry("softmax", [](Rng& rng) {
        Tensor x = rand_uniform({4, 6}, rng, -2, 2, true);
        const Tensor w = rand_uniform({4, 6}, rng, -1, 1);
        const ScalarFn f0 = readout([&] { return softmax(x, 0); }, w);
        const ScalarFn f1 = readout([&] { return softmax(x, 1); }, w);
        return std::max(grad_check(f0, x), grad_check(f1, x));
    });
    entry("matmul", [](Rng& rng) {
        Tensor a = rand_uniform({3, 4}, rng, -1, 1, true);
        Tensor b = rand_uniform({4, 5}, rng, -1, 1, true);
        const Tensor w = rand_uniform({3, 5}, rng, -1, 1);
        const ScalarFn f = readout([&] { return matmul(a, b); }, w);
        return std::max(grad_check(f, a), grad_check(f, b));
    });
    entry("conv1d", [](Rng& rng) {
        Tensor x = rand_uniform({3, 9}, rng, -1, 1, true);
        Tensor w = rand_uniform({4, 3, 3}, rng, -1, 1, true);
        Tensor b = rand_uniform({4}, rng, -1, 1, true);
        const Tensor probe = rand_uniform({4, 9}, rng, -1, 1);
        const ScalarFn f1 = readout([&] { return conv1d(x, w, b, 1); }, probe);
        const ScalarFn f2 = readout([&] { return conv1d(x, w, b, 2); }, probe);
        double err = 0.0;
        for (const ScalarFn& f : {f1, f2}) {
            err = std::max(err, grad_check(f, x));
            err = std::max(err, grad_check(f, w));
            err = std::max(err, grad_check(f, b));
        }
        return err;
    });
    entry("linear", [](Rng& rng) {
        Tensor x = rand_uniform({5, 4}, rng, -1, 1, true);
        Tensor w = rand_uniform({3, 4}, rng, -1, 1, true);
        Tensor b = rand_uniform({1, 3}, rng, -1, 1, true);
        const Tensor probe = rand_uniform({5, 3}, rng, -1, 1);
        const ScalarFn f = readout([&] { return linear(x, w, b); }, probe);
        return std::max(grad_check(f, x), std::max(grad_check(f, w), grad_check(f, b)));
    });
    entry("layer_norm", [](Rng& rng) {
        Tensor x = rand_uniform({4, 6}, rng, -1, 1, true);
        Tensor gamma = rand_uniform({1, 6}, rng, 0.5, 1.5, true);
        Tensor beta = rand_uniform({1, 6}, rng, -0.5, 0.5, true);
        const Tensor probe = rand_uniform({4, 6}, rng, -1, 1);
        const ScalarFn f = readout([&] { return layer_norm(x, gamma, beta); }, probe);
        return std::max(grad_check(f, x), std::max(grad_check(f, gamma), grad_check(f, beta)));
    });
    return out;
}

AuditEntry audit_weighted_sum(uint64_t seed) {
    Rng rng(derive_seed(seed, 0x75, 0));
    WeightedSumParams ws = weighted_sum_params(4);
    const Tensor aligned = rand_uniform({4, 6, 5}, rng, -1, 1);
    const Tensor probe = rand_uniform({5, 6}, rng, -1, 1);
    const ScalarFn f = readout([&] { return weighted_sum(aligned, ws); }, probe);
    return {"weighted_sum", grad_check(f, ws.logits), 1e-3};
}

AuditEntry audit_mscff(uint64_t seed) {
    return retry_module("mscff", 1e-3, seed, 20, [](uint64_t attempt_seed) {
        Rng rng(attempt_seed);
        MscffParams p = mscff_params(6, 4, rng);
        const Tensor f_ssl = rand_uniform({6, 7}, rng, -1, 1);
        const Tensor f_spec = rand_uniform({4, 7}, rng, 0, 1);
        const Tensor probe = rand_uniform({10, 7}, rng, -1, 1);
        ParamSet set;
        register_mscff(set, "mscff", p);
        const ScalarFn f = readout([&] { return mscff(f_ssl, f_spec, p); }, probe);
        Rng sample_rng(derive_seed(attempt_seed, 1, 0));
        return check_set(set, f, 1e-4, 64, sample_rng);
    });
}

AuditEntry audit_rhma(uint64_t seed) {
    return retry_module("rhma_block", 1e-3, seed, 15, [](uint64_t attempt_seed) {
        Rng rng(attempt_seed);
        RhmaParams p = rhma_params(16, 2, 32, 2, true, true, rng);
        const Tensor z = rand_uniform({9, 16}, rng, -1, 1);
        const Tensor probe = rand_uniform({9, 16}, rng, -1, 1);
        ParamSet set;
        register_rhma(set, "rhma", p);
        const ScalarFn f = readout([&] { return rhma_forward(z, p); }, probe);
        Rng sample_rng(derive_seed(attempt_seed, 2, 0));
        return check_set(set, f, 1e-4, 64, sample_rng);
    });
}

AuditEntry audit_pipeline(const ModelConfig& base, uint64_t seed) {
    return retry_module("pipeline", 1e-2, seed, 5, [&base](uint64_t attempt_seed) {
        ModelConfig cfg = base;
        cfg.seed = attempt_seed;
        ModelParams p = build_model(cfg);

        Rng rng(derive_seed(attempt_seed, 3, 0));
        const int64_t crop = 208;
        Waveform noisy, clean;
        noisy.samples.resize(crop);
        clean.samples.resize(crop);
        for (int64_t i = 0; i < crop; ++i) {
            const double t = static_cast<double>(i) / 16000.0;
            const float c = static_cast<float>(0.5 * std::sin(2 * 3.14159265 * 700.0 * t) +
                                               0.3 * std::sin(2 * 3.14159265 * 1900.0 * t));
            clean.samples[static_cast<size_t>(i)] = c;
            noisy.samples[static_cast<size_t>(i)] = c + rng.uniform(-0.2f, 0.2f);
        }
        const SpectroStack sp_noisy = stft(noisy, cfg.stft);
        const SpectroStack sp_clean = stft(clean, cfg.stft);
        const Tensor stack =
            rand_uniform({cfg.ssl_layers, sp_noisy.mag.dim(1), cfg.ssl_dim}, rng, -1, 1);
        const Tensor clean_wav = Tensor::from_data({crop}, clean.samples);

        const ScalarFn loss = [&](const Tensor&) {
            const ModelOutput out = model_forward(p, sp_noisy.mag, stack);
            const Tensor wav = istft_mag(out.enhanced, sp_noisy.phase, cfg.stft, crop);
            return model_loss(out.enhanced, sp_clean.mag, wav, clean_wav, cfg.lambda_mag,
                              cfg.lambda_sisnr);
        };

        std::vector<Tensor*> checked = {&p.ws.logits,         &p.mscff->main_w,
                                        &p.mscff->gate_ssl_w, &p.down_w,
                                        &p.rhma[0].mhsa.wq,   &p.rhma[0].sta.concat_w,
                                        &p.rhma[1].ffn2.w1,   &p.mask_w,
                                        &p.mask_b};
        Rng sample_rng(derive_seed(attempt_seed, 4, 0));
        double worst = 0.0;
        for (Tensor* param : checked) {
            const double err = param->numel() > 64
                                   ? grad_check_sampled(loss, *param, 1e-5, 48, sample_rng)
                                   : grad_check(loss, *param, 1e-5);
            worst = std::max(worst, err);
        }
        return worst;
    });
}

std::vector<AuditEntry> run_grad_audit(const ModelConfig& cfg, uint64_t seed) {
    std::vector<AuditEntry> entries = audit_primitives(seed);
    entries.push_back(audit_weighted_sum(seed));
    entries.push_back(audit_mscff(seed));
    entries.push_back(audit_rhma(seed));
    entries.push_back(audit_pipeline(cfg, seed));
    return entries;
}

}  // namespace cffma
