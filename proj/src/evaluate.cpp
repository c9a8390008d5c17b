#include "cffma/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "cffma/audio.hpp"
#include "cffma/embeddings.hpp"
#include "cffma/errors.hpp"

namespace cffma {

namespace {

int resolve_threads(int requested, size_t n_rows) {
    int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("CFFMA_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return static_cast<int>(std::min<size_t>(static_cast<size_t>(n), std::max<size_t>(n_rows, 1)));
}

EvalRow score_row(const ModelParams& params, const ManifestRow& src) {
    EvalRow row;
    row.source = src;
    try {
        const Waveform clean = read_wav(src.clean);
        const Waveform noisy = read_wav(src.noisy);

        const auto t0 = std::chrono::steady_clock::now();
        const EmbeddingStack emb = provider_synthetic(noisy, params.config.ssl_layers,
                                                      params.config.ssl_dim, params.config.seed);
        const Waveform enhanced = enhance(params, noisy, emb);
        const double proc_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        row.si_noisy = si_snr(noisy, clean);
        row.si_enhanced = si_snr(enhanced, clean);
        row.rtf = proc_s / (static_cast<double>(noisy.samples.size()) / noisy.sample_rate);
        row.ok = true;
    } catch (const Error& e) {
        row.error = e.what();
    }
    return row;
}

}  // namespace

EvalReport evaluate_manifest(const ModelParams& params, const std::string& manifest_path,
                             int threads) {
    const std::vector<ManifestRow> manifest = read_manifest(manifest_path);
    if (manifest.empty()) throw ContractError("evaluate: manifest has no rows");

    EvalReport report;
    report.rows.resize(manifest.size());

    const int n_threads = resolve_threads(threads, manifest.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= manifest.size()) break;
            report.rows[i] = score_row(params, manifest[i]);
        }
    };
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    int64_t ok = 0;
    for (const EvalRow& r : report.rows) {
        if (!r.ok) {
            ++report.failures;
            continue;
        }
        ++ok;
        report.mean_noisy += r.si_noisy;
        report.mean_enhanced += r.si_enhanced;
        report.mean_rtf += r.rtf;
    }
    if (ok > 0) {
        report.mean_noisy /= static_cast<double>(ok);
        report.mean_enhanced /= static_cast<double>(ok);
        report.mean_rtf /= static_cast<double>(ok);
    }
    return report;
}

std::string format_eval_table(const EvalReport& report) {
    size_t width = 5;
    for (const EvalRow& r : report.rows) {
        width = std::max(width, std::filesystem::path(r.source.noisy).filename().string().size());
    }

    std::ostringstream out;
    char line[512];
    std::snprintf(line, sizeof(line), "%-*s  %8s  %12s  %12s  %8s\n", static_cast<int>(width),
                  "file", "snr_db", "si_noisy_db", "si_enh_db", "rtf");
    out << line;
    for (const EvalRow& r : report.rows) {
        const std::string name = std::filesystem::path(r.source.noisy).filename().string();
        if (!r.ok) {
            std::snprintf(line, sizeof(line), "%-*s  %8.1f  FAILED: %s\n", static_cast<int>(width),
                          name.c_str(), r.source.snr_db, r.error.c_str());
        } else {
            std::snprintf(line, sizeof(line), "%-*s  %8.1f  %12.2f  %12.2f  %8.4f\n",
                          static_cast<int>(width), name.c_str(), r.source.snr_db, r.si_noisy,
                          r.si_enhanced, r.rtf);
        }
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-*s  %8s  %12.2f  %12.2f  %8.4f\n", static_cast<int>(width),
                  "mean", "", report.mean_noisy, report.mean_enhanced, report.mean_rtf);
    out << line;
    if (report.failures > 0) {
        out << report.failures << " file(s) failed\n";
    }
    return out.str();
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create evaluation csv: " + path);
    out << "clean,noisy,snr_db,si_snr_noisy_db,si_snr_enhanced_db,rtf,status\n";
    for (const EvalRow& r : report.rows) {
        std::string status = r.ok ? "ok" : "error: " + r.error;
        std::replace(status.begin(), status.end(), ',', ';');
        char line[1024];
        if (r.ok) {
            std::snprintf(line, sizeof(line), "%s,%s,%.17g,%.6f,%.6f,%.4f,%s\n", r.source.clean.c_str(),
                          r.source.noisy.c_str(), r.source.snr_db, r.si_noisy, r.si_enhanced, r.rtf,
                          status.c_str());
        } else {
            std::snprintf(line, sizeof(line), "%s,%s,%.17g,,,,%s\n", r.source.clean.c_str(),
                          r.source.noisy.c_str(), r.source.snr_db, status.c_str());
        }
        out << line;
    }
    out.flush();
    if (!out) throw IoError("short write to evaluation csv: " + path);
}

}  // namespace cffma
