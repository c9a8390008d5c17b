#include "cffma/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cffma/audio.hpp"
#include "cffma/errors.hpp"
#include "cffma/run_config.hpp"

namespace cffma {

namespace {

void normalize_peak(std::vector<float>& x, float peak) {
    float max_abs = 0.0f;
    for (float v : x) max_abs = std::max(max_abs, std::fabs(v));
    if (max_abs <= 0.0f) throw ContractError("synth: generated silence");
    const float g = peak / max_abs;
    for (float& v : x) v *= g;
}

std::string snr_label(double snr) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", snr);
    std::string s(buf);
    for (char& c : s) {
        if (c == '.') c = 'p';
        if (c == '-') c = 'm';
    }
    return s;
}

}  // namespace

Waveform synth_clean(double duration_s, int sample_rate, Rng& rng) {
    if (duration_s <= 0.0 || sample_rate <= 0) {
        throw ContractError("synth_clean: duration and rate must be positive");
    }
    const int64_t n = static_cast<int64_t>(std::llround(duration_s * sample_rate));
    const int64_t tones = 3 + static_cast<int64_t>(rng.below(3));

    std::vector<double> freq(tones), amp(tones), phase(tones), am_freq(tones), am_phase(tones);
    for (int64_t k = 0; k < tones; ++k) {
        freq[static_cast<size_t>(k)] = rng.uniform(120.0f, 3400.0f);
        amp[static_cast<size_t>(k)] = rng.uniform(0.3f, 1.0f);
        phase[static_cast<size_t>(k)] = rng.uniform(0.0f, 6.2831853f);
        am_freq[static_cast<size_t>(k)] = rng.uniform(0.5f, 2.5f);
        am_phase[static_cast<size_t>(k)] = rng.uniform(0.0f, 6.2831853f);
    }

    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<size_t>(n));
    const double two_pi = 2.0 * std::numbers::pi;
    for (int64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        double acc = 0.0;
        for (int64_t k = 0; k < tones; ++k) {
            const size_t kk = static_cast<size_t>(k);
            const double env = 0.55 + 0.45 * std::sin(two_pi * am_freq[kk] * t + am_phase[kk]);
            acc += amp[kk] * env * std::sin(two_pi * freq[kk] * t + phase[kk]);
        }
        w.samples[static_cast<size_t>(i)] = static_cast<float>(acc);
    }
    normalize_peak(w.samples, 0.6f);
    return w;
}

Waveform synth_noise(double duration_s, int sample_rate, Rng& rng) {
    if (duration_s <= 0.0 || sample_rate <= 0) {
        throw ContractError("synth_noise: duration and rate must be positive");
    }
    const int64_t n = static_cast<int64_t>(std::llround(duration_s * sample_rate));

    std::vector<float> white(static_cast<size_t>(n));
    for (float& v : white) v = rng.uniform(-1.0f, 1.0f);

    // Moving average = crude low-pass; random width picks the band edge.
    const int64_t width = 2 + static_cast<int64_t>(rng.below(6));
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<size_t>(n));
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        acc += white[static_cast<size_t>(i)];
        if (i >= width) acc -= white[static_cast<size_t>(i - width)];
        w.samples[static_cast<size_t>(i)] =
            static_cast<float>(acc / static_cast<double>(std::min(i + 1, width)));
    }

    // Blockwise gain gates make it bursty; blocks never drop to zero so the
    // noise always has power to scale.
    const int64_t block = sample_rate / 5;  // 200 ms
    float gain = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
        if (i % block == 0) gain = rng.uniform(0.15f, 1.0f);
        w.samples[static_cast<size_t>(i)] *= gain;
    }
    normalize_peak(w.samples, 0.9f);
    return w;
}

std::vector<ManifestRow> synth_dataset(const std::string& out_dir, int64_t n_utts,
                                       double duration_s, const std::vector<double>& snr_list,
                                       uint64_t seed, std::string* manifest_path) {
    if (n_utts < 1) throw ContractError("synth_dataset: need at least one utterance");
    if (snr_list.empty()) throw ContractError("synth_dataset: empty SNR list");

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);

    std::vector<ManifestRow> rows;
    for (int64_t u = 0; u < n_utts; ++u) {
        Rng clean_rng(derive_seed(seed, static_cast<uint64_t>(u), 1));
        Rng noise_rng(derive_seed(seed, static_cast<uint64_t>(u), 2));
        const Waveform clean = synth_clean(duration_s, 16000, clean_rng);
        const Waveform noise = synth_noise(duration_s, 16000, noise_rng);

        for (double snr : snr_list) {
            double gain = 1.0;
            const Waveform noisy = mix_at_snr(clean, noise, snr, &gain);
            Waveform clean_out = clean;
            for (float& v : clean_out.samples) v = static_cast<float>(v * gain);

            char base[64];
            std::snprintf(base, sizeof(base), "%04lld_snr%s", static_cast<long long>(u),
                          snr_label(snr).c_str());
            ManifestRow row;
            row.clean = std::string("clean_") + base + ".wav";
            row.noisy = std::string("noisy_") + base + ".wav";
            row.snr_db = snr;
            write_wav((fs::path(out_dir) / row.clean).string(), clean_out);
            write_wav((fs::path(out_dir) / row.noisy).string(), noisy);
            rows.push_back(row);
        }
    }

    const std::string mpath = (fs::path(out_dir) / "manifest.tsv").string();
    write_manifest(mpath, rows);
    if (manifest_path) *manifest_path = mpath;
    return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create manifest: " + path);
    for (const ManifestRow& r : rows) {
        char snr[40];
        std::snprintf(snr, sizeof(snr), "%.17g", r.snr_db);
        out << r.clean << '\t' << r.noisy << '\t' << snr << '\n';
    }
    out.flush();
    if (!out) throw IoError("short write to manifest: " + path);
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();

    std::vector<ManifestRow> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": expected clean<TAB>noisy<TAB>snr_db");
        }
        ManifestRow row;
        const auto resolve = [&](const std::string& p) {
            const std::filesystem::path fp(p);
            return fp.is_absolute() ? fp.string() : (base / fp).string();
        };
        row.clean = resolve(line.substr(0, t1));
        row.noisy = resolve(line.substr(t1 + 1, t2 - t1 - 1));
        row.snr_db = parse_f64("snr_db", line.substr(t2 + 1));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace cffma
