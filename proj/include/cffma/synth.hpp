#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cffma/rng.hpp"
#include "cffma/wav.hpp"

namespace cffma {

// Seeded multi-tone signal with slow amplitude modulation, peak-normalized to
// 0.6. Tonal content gives spectral masks actual structure to learn.
Waveform synth_clean(double duration_s, int sample_rate, Rng& rng);

// Band-limited noise bursts: smoothed white noise under a blockwise gain
// envelope, peak-normalized to 0.9.
Waveform synth_noise(double duration_s, int sample_rate, Rng& rng);

struct ManifestRow {
    std::string clean;
    std::string noisy;
    double snr_db = 0.0;
};

// Writes n_utts x |snr_list| clean/noisy WAV pairs plus "manifest.tsv" into
// out_dir and returns the rows (paths relative to out_dir). The clean file
// carries any clip-rescue gain applied to its mixture, so the pair's measured
// SNR matches the manifest entry. Returns the manifest path via out param.
std::vector<ManifestRow> synth_dataset(const std::string& out_dir, int64_t n_utts,
                                       double duration_s, const std::vector<double>& snr_list,
                                       uint64_t seed, std::string* manifest_path = nullptr);

// One "clean<TAB>noisy<TAB>snr_db" line per row, paths written as given.
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

// Parses a manifest; relative paths are resolved against the manifest's
// directory.
std::vector<ManifestRow> read_manifest(const std::string& path);

}  // namespace cffma
