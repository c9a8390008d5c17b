#include "cffma/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "cffma/checkpoint.hpp"
#include "cffma/embeddings.hpp"
#include "cffma/errors.hpp"
#include "cffma/ops.hpp"
#include "cffma/rng.hpp"
#include "cffma/stft.hpp"

namespace cffma {

namespace {

constexpr int64_t kWarmupSteps = 500;

Waveform crop_waveform(const Waveform& w, int64_t start, int64_t len) {
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(static_cast<size_t>(len));
    const int64_t n = static_cast<int64_t>(w.samples.size());
    for (int64_t i = 0; i < len; ++i) {
        out.samples[static_cast<size_t>(i)] = w.samples[static_cast<size_t>((start + i) % n)];
    }
    return out;
}

}  // namespace

double lr_at(int64_t step, int64_t total_steps, double base_lr) {
    if (step < 0 || total_steps < 1) throw ContractError("lr_at: bad step/total");
    const int64_t warm = std::min<int64_t>(kWarmupSteps, total_steps);
    if (step < warm) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    }
    if (total_steps - 1 <= warm) return base_lr;
    const double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - 1 - warm);
    return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, t))));
}

std::vector<TrainItem> load_training_data(const std::vector<ManifestRow>& rows) {
    if (rows.empty()) throw ContractError("training data: empty manifest");
    std::vector<TrainItem> items;
    items.reserve(rows.size());
    for (const ManifestRow& r : rows) {
        TrainItem item;
        item.clean = read_wav(r.clean);
        item.noisy = read_wav(r.noisy);
        if (item.clean.samples.size() != item.noisy.samples.size()) {
            throw FormatError("training data: clean/noisy length mismatch for " + r.clean);
        }
        items.push_back(std::move(item));
    }
    return items;
}

Tensor train_item_loss(const ModelParams& params, const std::vector<TrainItem>& data,
                       int64_t step, int64_t slot) {
    if (data.empty()) throw ContractError("train_item_loss: empty dataset");
    const ModelConfig& cfg = params.config;

    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(step),
                        0x100 + static_cast<uint64_t>(slot)));
    const size_t pick = static_cast<size_t>(rng.below(data.size()));
    const TrainItem& item = data[pick];

    const int rate = item.noisy.sample_rate;
    const int64_t crop_len = std::llround(cfg.crop_seconds * rate);
    if (crop_len < 400) {
        throw ContractError("train_item_loss: crop shorter than the embedding frame window");
    }
    const int64_t n = static_cast<int64_t>(item.noisy.samples.size());
    const int64_t start = n > crop_len ? static_cast<int64_t>(rng.below(n - crop_len + 1))
                                       : static_cast<int64_t>(rng.below(n));
    const Waveform noisy = crop_waveform(item.noisy, start, crop_len);
    const Waveform clean = crop_waveform(item.clean, start, crop_len);

    const SpectroStack sp_noisy = stft(noisy, cfg.stft);
    const SpectroStack sp_clean = stft(clean, cfg.stft);
    const EmbeddingStack emb = provider_synthetic(noisy, cfg.ssl_layers, cfg.ssl_dim, cfg.seed);
    const Tensor aligned = align_frames(emb, sp_noisy.mag.dim(1));

    const ModelOutput out = model_forward(params, sp_noisy.mag, aligned);
    const Tensor enhanced_wav = istft_mag(out.enhanced, sp_noisy.phase, cfg.stft, crop_len);
    const Tensor clean_wav = Tensor::from_data({crop_len}, clean.samples);
    return model_loss(out.enhanced, sp_clean.mag, enhanced_wav, clean_wav, cfg.lambda_mag,
                      cfg.lambda_sisnr);
}

Tensor train_step_loss(const ModelParams& params, const std::vector<TrainItem>& data,
                       int64_t step) {
    const int64_t batch = params.config.batch;
    Tensor total = train_item_loss(params, data, step, 0);
    for (int64_t slot = 1; slot < batch; ++slot) {
        total = add(total, train_item_loss(params, data, step, slot));
    }
    return scale(total, 1.0 / static_cast<double>(batch));
}

std::vector<StepLog> train_model(ModelParams& params, AdamState& opt,
                                 const std::vector<TrainItem>& data, const TrainOptions& opts) {
    if (data.empty()) throw ContractError("train_model: empty dataset");
    if (opts.steps < 0 || opts.start_step < 0) throw ContractError("train_model: bad step counts");
    const ModelConfig& cfg = params.config;
    const int64_t total =
        opts.schedule_steps > 0 ? opts.schedule_steps : opts.start_step + opts.steps;
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(data.size()) + cfg.batch - 1) / cfg.batch;

    ParamSet set = model_param_set(params);
    std::vector<StepLog> logs;
    logs.reserve(static_cast<size_t>(opts.steps));

    for (int64_t k = 0; k < opts.steps; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        const int64_t step = opts.start_step + k;

        set.zero_grads();
        Tensor loss = train_step_loss(params, data, step);
        loss.backward();

        double sq = 0.0;
        for (const auto& item : set.items()) {
            for (float g : item.tensor.grad()) sq += static_cast<double>(g) * g;
        }
        const double lr = lr_at(step, total, cfg.lr);
        adam_step(set, opt, lr);
        set.zero_grads();

        StepLog log;
        log.step = step;
        log.loss = loss.item();
        log.lr = lr;
        log.grad_norm = std::sqrt(sq);
        log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                t0)
                          .count();
        logs.push_back(log);

        if (!opts.checkpoint_path.empty() &&
            ((step + 1) % steps_per_epoch == 0 || k + 1 == opts.steps)) {
            save_checkpoint(opts.checkpoint_path, params, step + 1, &opt);
        }
    }
    return logs;
}

void write_train_csv(const std::string& path, const std::vector<StepLog>& logs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create training log: " + path);
    out << "step,loss,lr,grad_norm,wall_ms\n";
    for (const StepLog& l : logs) {
        char line[160];
        std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%.9g,%.3f\n",
                      static_cast<long long>(l.step), l.loss, l.lr, l.grad_norm, l.wall_ms);
        out << line;
    }
    out.flush();
    if (!out) throw IoError("short write to training log: " + path);
}

}  // namespace cffma
