#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "cffma/adam.hpp"
#include "cffma/audio.hpp"
#include "cffma/checkpoint.hpp"
#include "cffma/embeddings.hpp"
#include "cffma/errors.hpp"
#include "cffma/evaluate.hpp"
#include "cffma/grad_audit.hpp"
#include "cffma/model.hpp"
#include "cffma/ops.hpp"
#include "cffma/rng.hpp"
#include "cffma/run_config.hpp"
#include "cffma/synth.hpp"
#include "cffma/train.hpp"
#include "cffma/wav.hpp"

using namespace cffma;

namespace {

// Desk-scale model by default; a config file scales it up to the full
// architecture (d_model=512 etc.) for anyone with the hardware.
ModelConfig resolve_config(const std::string& config_path) {
    ModelConfig cfg = tiny_model_config();
    if (!config_path.empty()) {
        KvMap kv = read_config_file(config_path);
        apply_model_keys(cfg, kv);
        if (!kv.empty()) {
            throw FormatError("config: unknown key '" + kv.begin()->first + "' in " + config_path);
        }
    }
    return cfg;
}

int run_synthdata(const std::string& out_dir, int64_t n_utts, double duration,
                  const std::vector<double>& snrs, uint64_t seed) {
    std::string manifest;
    const auto rows = synth_dataset(out_dir, n_utts, duration, snrs, seed, &manifest);
    std::printf("pairs=%zu\nmanifest=%s\n", rows.size(), manifest.c_str());
    return 0;
}

int run_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_ckpt, const std::string& resume_path,
              const std::string& log_path, int64_t steps, int64_t schedule_steps,
              bool has_seed, uint64_t seed, bool has_lr, double lr, bool has_batch, int64_t batch,
              bool verbose) {
    ModelParams params;
    AdamState opt;
    int64_t start_step = 0;

    if (!resume_path.empty()) {
        if (!config_path.empty() || has_seed || has_lr || has_batch) {
            throw ContractError(
                "train: --resume restores the checkpoint's configuration; "
                "drop --config/--seed/--lr/--batch");
        }
        CheckpointData ckpt = load_checkpoint(resume_path);
        params = std::move(ckpt.params);
        if (ckpt.has_optimizer) opt = std::move(ckpt.optimizer);
        start_step = ckpt.step;
    } else {
        ModelConfig cfg = resolve_config(config_path);
        if (has_seed) cfg.seed = seed;
        if (has_lr) cfg.lr = lr;
        if (has_batch) cfg.batch = batch;
        cfg.validate();
        params = build_model(cfg);
    }

    const std::vector<TrainItem> data = load_training_data(read_manifest(manifest_path));

    TrainOptions opts;
    opts.steps = steps;
    opts.start_step = start_step;
    opts.schedule_steps = schedule_steps;
    opts.checkpoint_path = out_ckpt;
    const std::vector<StepLog> logs = train_model(params, opt, data, opts);

    if (verbose) {
        for (const StepLog& l : logs) {
            std::fprintf(stderr, "step=%lld loss=%.6g lr=%.3g grad_norm=%.4g wall_ms=%.1f\n",
                         static_cast<long long>(l.step), l.loss, l.lr, l.grad_norm, l.wall_ms);
        }
    }
    const std::string csv = log_path.empty() ? out_ckpt + ".log.csv" : log_path;
    write_train_csv(csv, logs);
    std::printf("steps=%lld final_loss=%.9g checkpoint=%s log=%s\n",
                static_cast<long long>(logs.size() ? logs.back().step + 1 : start_step),
                logs.empty() ? 0.0 : logs.back().loss, out_ckpt.c_str(), csv.c_str());
    return 0;
}

int run_enhance(const std::string& ckpt_path, const std::string& in_path,
                const std::string& out_path, const std::string& ssle_path,
                const std::string& ref_path) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    const ModelConfig& cfg = ckpt.params.config;
    const Waveform noisy = read_wav(in_path);

    EmbeddingStack emb;
    if (!ssle_path.empty()) {
        emb = provider_load(ssle_path);
        if (emb.layers.dim(0) != cfg.ssl_layers || emb.layers.dim(2) != cfg.ssl_dim) {
            throw DimError("enhance: embedding file is " + std::to_string(emb.layers.dim(0)) +
                           " layers x " + std::to_string(emb.layers.dim(2)) +
                           " dims but the checkpoint expects " + std::to_string(cfg.ssl_layers) +
                           " x " + std::to_string(cfg.ssl_dim));
        }
    } else {
        emb = provider_synthetic(noisy, cfg.ssl_layers, cfg.ssl_dim, cfg.seed);
    }

    const Waveform enhanced = enhance(ckpt.params, noisy, emb);
    write_wav(out_path, enhanced);
    std::printf("wrote=%s samples=%zu\n", out_path.c_str(), enhanced.samples.size());
    if (!ref_path.empty()) {
        const Waveform ref = read_wav(ref_path);
        std::printf("si_snr_db=%.4f\n", si_snr(enhanced, ref));
    }
    return 0;
}

int run_evaluate(const std::string& ckpt_path, const std::string& manifest_path,
                 const std::string& csv_path, int threads) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    const EvalReport report = evaluate_manifest(ckpt.params, manifest_path, threads);
    std::fputs(format_eval_table(report).c_str(), stdout);
    if (!csv_path.empty()) write_eval_csv(csv_path, report);
    return report.failures > 0 ? 2 : 0;
}

int run_gradcheck(const std::string& config_path, uint64_t seed, bool inject_fault) {
    ModelConfig cfg = resolve_config(config_path);
    cfg.validate();
    debug::fault_injection = inject_fault;
    const std::vector<AuditEntry> entries = run_grad_audit(cfg, seed);
    debug::fault_injection = false;

    int failures = 0;
    for (const AuditEntry& e : entries) {
        failures += e.ok() ? 0 : 1;
        std::printf("%-14s max_rel_err=%-12.3g tol=%-8.1g %s\n", e.name.c_str(), e.err, e.tol,
                    e.ok() ? "ok" : "FAIL");
    }
    std::printf("checked=%zu failed=%d\n", entries.size(), failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Speech enhancement with fused self-supervised and spectral features.\n"
        "Subcommands: synthdata, train, enhance, evaluate, gradcheck."};
    app.require_subcommand(1);

    // Shared options, reachable from any subcommand position.
    std::string config_path;
    uint64_t seed = 0;
    bool verbose = false;
    app.add_option("--config", config_path, "key=value config file (model schema)");
    app.add_option("--seed", seed, "RNG seed override");
    app.add_flag("--verbose", verbose, "Per-step logging to stderr");

    auto* sd = app.add_subcommand("synthdata", "Generate a deterministic synthetic dataset");
    std::string sd_out;
    int64_t sd_n = 4;
    double sd_duration = 3.0;
    std::vector<double> sd_snrs = {0.0, 5.0, 10.0, 15.0};
    sd->add_option("--out", sd_out, "Output directory")->required();
    sd->add_option("--n-utts", sd_n, "Utterances to synthesize");
    sd->add_option("--duration", sd_duration, "Seconds per utterance");
    sd->add_option("--snrs", sd_snrs, "Mixing SNRs in dB")->delimiter(',');
    sd->fallthrough();

    auto* tr = app.add_subcommand("train", "Train on a clean/noisy manifest");
    std::string tr_data, tr_out, tr_resume, tr_log;
    int64_t tr_steps = 300, tr_schedule = 0, tr_batch = 0;
    double tr_lr = 0.0;
    tr->add_option("--data", tr_data, "manifest.tsv with clean/noisy pairs")->required();
    tr->add_option("--out", tr_out, "Checkpoint path (written every epoch)")->required();
    tr->add_option("--steps", tr_steps, "Optimizer steps to run");
    tr->add_option("--schedule-steps", tr_schedule,
                   "Total steps the LR schedule spans (default: start+steps)");
    tr->add_option("--resume", tr_resume, "Checkpoint to continue from");
    tr->add_option("--log", tr_log, "Training CSV path (default: <out>.log.csv)");
    tr->add_option("--lr", tr_lr, "Base learning rate override");
    tr->add_option("--batch", tr_batch, "Batch size override");
    tr->fallthrough();

    auto* en = app.add_subcommand("enhance", "Run one WAV through a checkpoint");
    std::string en_ckpt, en_in, en_out, en_emb, en_ref;
    en->add_option("--checkpoint", en_ckpt)->required();
    en->add_option("--in", en_in, "Noisy input WAV")->required();
    en->add_option("--out", en_out, "Enhanced output WAV")->required();
    en->add_option("--embeddings", en_emb, "SSLE embedding file (default: built-in provider)");
    en->add_option("--ref", en_ref, "Clean reference; prints si_snr_db");
    en->fallthrough();

    auto* ev = app.add_subcommand("evaluate", "Score every manifest row through a checkpoint");
    std::string ev_ckpt, ev_data, ev_csv;
    int ev_threads = 0;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data, "manifest.tsv")->required();
    ev->add_option("--csv", ev_csv, "Also write machine-readable rows here");
    ev->add_option("--threads", ev_threads, "Worker threads (0 = hardware)");
    ev->fallthrough();

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference audit of the autodiff rules");
    bool gc_fault = false;
    gc->add_flag("--inject-fault", gc_fault, "Corrupt one backward rule (negative test)");
    gc->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sd->parsed()) return run_synthdata(sd_out, sd_n, sd_duration, sd_snrs, seed);
        if (tr->parsed()) {
            return run_train(config_path, tr_data, tr_out, tr_resume, tr_log, tr_steps,
                             tr_schedule, app.count("--seed") > 0, seed,
                             tr->count("--lr") > 0, tr_lr, tr->count("--batch") > 0, tr_batch,
                             verbose);
        }
        if (en->parsed()) return run_enhance(en_ckpt, en_in, en_out, en_emb, en_ref);
        if (ev->parsed()) return run_evaluate(ev_ckpt, ev_data, ev_csv, ev_threads);
        if (gc->parsed()) return run_gradcheck(config_path, seed, gc_fault);
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
