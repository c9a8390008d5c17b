#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cffma/model.hpp"
#include "cffma/synth.hpp"

namespace cffma {

struct EvalRow {
    ManifestRow source;
    bool ok = false;
    std::string error;
    double si_noisy = 0.0;     // SI-SNR of the noisy file vs clean, dB
    double si_enhanced = 0.0;  // SI-SNR after enhancement, dB
    double rtf = 0.0;          // processing time / audio duration
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_noisy = 0.0;
    double mean_enhanced = 0.0;
    double mean_rtf = 0.0;
    int64_t failures = 0;
};

// Enhances every manifest row and scores it against its clean reference.
// Rows are independent, so they may run on several threads (`threads` 0 picks
// hardware concurrency; the CFFMA_THREADS environment variable caps it);
// row order in the report always matches the manifest. Rows whose files are
// missing or malformed are reported as failures, and the rest still complete.
EvalReport evaluate_manifest(const ModelParams& params, const std::string& manifest_path,
                             int threads = 0);

// Aligned text table, one row per file, means at the bottom. RTF printed with
// four decimals.
std::string format_eval_table(const EvalReport& report);

// CSV: clean,noisy,snr_db,si_snr_noisy_db,si_snr_enhanced_db,rtf,status
void write_eval_csv(const std::string& path, const EvalReport& report);

}  // namespace cffma
