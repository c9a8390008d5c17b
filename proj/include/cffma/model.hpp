#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cffma/adam.hpp"
#include "cffma/embeddings.hpp"
#include "cffma/mscff.hpp"
#include "cffma/rhma.hpp"
#include "cffma/stft.hpp"
#include "cffma/tensor.hpp"
#include "cffma/wav.hpp"

namespace cffma {

// Everything that determines the network and its training run. Ablation flags
// mirror the module structure: disabling a module removes its parameters from
// the census and replaces it with the plain fallback (concat instead of the
// fusion block, identity instead of an attention stage).
struct ModelConfig {
    int64_t ssl_layers = 13;
    int64_t ssl_dim = 768;
    int64_t d_model = 512;
    int64_t n_heads = 8;
    int64_t d_ff = 2048;
    int64_t n_rhma = 2;
    int64_t sca_ratio = 8;
    StftConfig stft{};

    bool use_mscff = true;
    bool use_rhma = true;
    bool use_mhsa = true;
    bool use_scta = true;
    bool sqrt_mag = false;  // optional sqrt compression of the network input

    double lambda_mag = 1.0;
    double lambda_sisnr = 1.0;
    double lr = 1e-3;
    int64_t batch = 16;
    double crop_seconds = 2.56;
    uint64_t seed = 0;

    int64_t freq_bins() const { return stft.freq_bins(); }
    void validate() const;
};

// Desk-sized configuration used by the self-tests: 33 frequency bins, 16-dim
// embeddings, 16-dim blocks with 2 heads.
ModelConfig tiny_model_config();

struct ModelParams {
    ModelConfig config;
    WeightedSumParams ws;
    std::optional<MscffParams> mscff;
    Tensor down_w, down_b;  // (d_model, D+F) / (1, d_model)
    std::vector<RhmaParams> rhma;
    Tensor mask_w, mask_b;  // (F, d_model) / (1, F)
};

// Deterministic initialization: same config (including seed) twice gives
// bit-identical parameters.
ModelParams build_model(const ModelConfig& config);

// Registers every trainable tensor under a canonical name, in a fixed order.
// The returned set aliases the model's storage, so optimizer updates through
// it mutate the model.
ParamSet model_param_set(ModelParams& params);

struct ModelOutput {
    Tensor mask;      // (F, T), entries in [0,1]
    Tensor enhanced;  // mask * noisy_mag
};

// noisy_mag is (F, T); aligned_ssl is (N, T, D) already aligned to the
// spectrogram frames.
ModelOutput model_forward(const ModelParams& params, const Tensor& noisy_mag,
                          const Tensor& aligned_ssl);

// lambda_mag * mean|enhanced_mag - clean_mag|
//   + lambda_sisnr * (-soft SI-SNR(enhanced_wav, clean_wav) / 10)
Tensor model_loss(const Tensor& enhanced_mag, const Tensor& clean_mag,
                  const Tensor& enhanced_wav, const Tensor& clean_wav, double lambda_mag,
                  double lambda_sisnr);

// Full inference path: analyze, mask, resynthesize with the noisy phase, trim
// to the input length. The embedding stack is aligned internally.
Waveform enhance(const ModelParams& params, const Waveform& noisy, const EmbeddingStack& emb);

}  // namespace cffma
