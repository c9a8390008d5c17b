#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cffma/adam.hpp"
#include "cffma/model.hpp"
#include "cffma/synth.hpp"
#include "cffma/tensor.hpp"
#include "cffma/wav.hpp"

namespace cffma {

struct TrainItem {
    Waveform clean;
    Waveform noisy;
};

struct TrainOptions {
    int64_t steps = 0;           // steps to run now
    int64_t start_step = 0;      // global index of the first step (resume offset)
    int64_t schedule_steps = 0;  // schedule horizon; 0 means start_step + steps
    std::string checkpoint_path;  // written every epoch and at the end when set
};

struct StepLog {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
};

// Linear warmup over the first 500 steps, then cosine decay to 0.1 * base_lr
// at the final step.
double lr_at(int64_t step, int64_t total_steps, double base_lr);

// Loads every manifest row's WAV pair into memory (desk scale).
std::vector<TrainItem> load_training_data(const std::vector<ManifestRow>& rows);

// Loss of one batch slot at a global step: crop selection, features and
// embeddings are a pure function of (config.seed, step, slot).
Tensor train_item_loss(const ModelParams& params, const std::vector<TrainItem>& data,
                       int64_t step, int64_t slot);

// Mean of the per-slot losses for config.batch slots.
Tensor train_step_loss(const ModelParams& params, const std::vector<TrainItem>& data,
                       int64_t step);

// Runs the step loop: backward, gradient-norm logging, Adam with the schedule,
// per-epoch checkpointing (an epoch is ceil(items/batch) steps). Everything
// logged except wall_ms is a pure function of (seed, config, data).
std::vector<StepLog> train_model(ModelParams& params, AdamState& opt,
                                 const std::vector<TrainItem>& data, const TrainOptions& opts);

// CSV with header "step,loss,lr,grad_norm,wall_ms".
void write_train_csv(const std::string& path, const std::vector<StepLog>& logs);

}  // namespace cffma
