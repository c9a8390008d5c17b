#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

const std::string& binary() {
    static const std::string bin = [] {
        const char* env = std::getenv("CFFMA_BIN");
        REQUIRE_MESSAGE(env != nullptr, "CFFMA_BIN must point at the cffma binary");
        return std::string(env);
    }();
    return bin;
}

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "cffma_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in.good()) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run(const std::string& args) {
    const fs::path out = work_dir() / "stdout.txt";
    const fs::path err = work_dir() / "stderr.txt";
    const std::string cmd =
        binary() + " " + args + " > " + out.string() + " 2> " + err.string();
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

// Everything but the wall-clock column, which is honestly non-reproducible.
std::string strip_wall_ms(const std::string& csv) {
    std::ostringstream out;
    for (const std::string& line : lines_of(csv)) {
        const size_t cut = line.rfind(',');
        out << line.substr(0, cut) << "\n";
    }
    return out.str();
}

const fs::path& dataset() {
    static const fs::path dir = [] {
        const fs::path d = work_dir() / "ds";
        const RunResult r = run("synthdata --out " + d.string() +
                                " --n-utts 2 --duration 0.4 --snrs 5,10 --seed 3");
        REQUIRE(r.exit_code == 0);
        return d;
    }();
    return dir;
}

const fs::path& checkpoint() {
    static const fs::path ckpt = [] {
        const fs::path c = work_dir() / "model.ckpt";
        const RunResult r = run("train --data " + (dataset() / "manifest.tsv").string() +
                                " --out " + c.string() + " --steps 4");
        REQUIRE(r.exit_code == 0);
        return c;
    }();
    return ckpt;
}

}  // namespace

TEST_CASE("argument plumbing") {
    CHECK(run("").exit_code != 0);
    CHECK(run("--help").exit_code == 0);
    CHECK(run("no-such-command").exit_code != 0);
    const RunResult missing = run("train --out x.ckpt");  // --data required
    CHECK(missing.exit_code != 0);
}

TEST_CASE("synthdata is deterministic on disk") {
    const RunResult first = run("synthdata --out " + (work_dir() / "da").string() +
                                " --n-utts 2 --duration 0.3 --snrs 0,5 --seed 9");
    REQUIRE(first.exit_code == 0);
    CHECK(first.out.find("pairs=4") != std::string::npos);
    const RunResult second = run("synthdata --out " + (work_dir() / "db").string() +
                                 " --n-utts 2 --duration 0.3 --snrs 0,5 --seed 9");
    REQUIRE(second.exit_code == 0);
    CHECK(slurp(work_dir() / "da" / "manifest.tsv") == slurp(work_dir() / "db" / "manifest.tsv"));
    CHECK(slurp(work_dir() / "da" / "noisy_0001_snr0.wav") ==
          slurp(work_dir() / "db" / "noisy_0001_snr0.wav"));
    CHECK(!slurp(work_dir() / "da" / "noisy_0001_snr0.wav").empty());
}

TEST_CASE("train writes a checkpoint and a reproducible log") {
    REQUIRE(fs::exists(checkpoint()));
    const std::string log = slurp(checkpoint().string() + ".log.csv");
    const auto rows = lines_of(log);
    REQUIRE(rows.size() == 5);  // header + 4 steps
    CHECK(rows[0] == "step,loss,lr,grad_norm,wall_ms");

    // Re-train into a second location: identical except wall-clock timings.
    const fs::path ckpt2 = work_dir() / "model2.ckpt";
    const RunResult r = run("train --data " + (dataset() / "manifest.tsv").string() + " --out " +
                            ckpt2.string() + " --steps 4");
    REQUIRE(r.exit_code == 0);
    CHECK(strip_wall_ms(slurp(ckpt2.string() + ".log.csv")) == strip_wall_ms(log));
}

TEST_CASE("flag overrides beat config-file keys") {
    // Warmup spans all 4 steps, so lr at step 0 is base/4 — visible in the CSV.
    const fs::path cfg = work_dir() / "lr.cfg";
    std::ofstream(cfg) << "lr = 0.001\n";
    const fs::path ckpt = work_dir() / "prec.ckpt";
    const std::string base_args = " --data " + (dataset() / "manifest.tsv").string() + " --out " +
                                  ckpt.string() + " --steps 4 --config " + cfg.string();

    const RunResult from_file = run("train" + base_args);
    REQUIRE(from_file.exit_code == 0);
    auto lr_at_step0 = [&]() {
        const auto rows = lines_of(slurp(ckpt.string() + ".log.csv"));
        REQUIRE(rows.size() >= 2);
        std::istringstream ss(rows[1]);
        std::string field;
        for (int i = 0; i < 3; ++i) std::getline(ss, field, ',');
        return std::stod(field);
    };
    CHECK(lr_at_step0() == doctest::Approx(0.001 / 4).epsilon(1e-9));

    const RunResult from_flag = run("train" + base_args + " --lr 0.002");
    REQUIRE(from_flag.exit_code == 0);
    CHECK(lr_at_step0() == doctest::Approx(0.002 / 4).epsilon(1e-9));

    const fs::path bad = work_dir() / "bad.cfg";
    std::ofstream(bad) << "not_a_key = 1\n";
    CHECK(run("train --data " + (dataset() / "manifest.tsv").string() + " --out " +
              ckpt.string() + " --config " + bad.string())
              .exit_code == 1);
}

TEST_CASE("resume continues from the saved step") {
    const fs::path ckpt = work_dir() / "resume.ckpt";
    const std::string data = (dataset() / "manifest.tsv").string();
    REQUIRE(run("train --data " + data + " --out " + ckpt.string() +
                " --steps 2 --schedule-steps 4").exit_code == 0);
    const RunResult resumed = run("train --data " + data + " --out " + ckpt.string() +
                                  " --resume " + ckpt.string() +
                                  " --steps 2 --schedule-steps 4");
    REQUIRE(resumed.exit_code == 0);
    const auto rows = lines_of(slurp(ckpt.string() + ".log.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].rfind("2,", 0) == 0);  // global step numbering continues
    CHECK(rows[2].rfind("3,", 0) == 0);

    // Mixing --resume with config-ish flags is refused.
    CHECK(run("train --data " + data + " --out " + ckpt.string() + " --resume " +
              ckpt.string() + " --lr 0.1")
              .exit_code == 1);
}

TEST_CASE("enhance emits audio and an SI-SNR line") {
    const fs::path enh = work_dir() / "enh.wav";
    const std::string noisy = (dataset() / "noisy_0000_snr5.wav").string();
    const std::string clean = (dataset() / "clean_0000_snr5.wav").string();
    const RunResult r = run("enhance --checkpoint " + checkpoint().string() + " --in " + noisy +
                            " --out " + enh.string() + " --ref " + clean);
    REQUIRE(r.exit_code == 0);
    const size_t pos = r.out.find("si_snr_db=");
    REQUIRE(pos != std::string::npos);
    const double si = std::stod(r.out.substr(pos + 10));
    CHECK(std::isfinite(si));

    // Idempotent plumbing: the enhanced file goes through again unchanged in
    // length, and a missing input is an I/O error.
    const fs::path enh2 = work_dir() / "enh2.wav";
    CHECK(run("enhance --checkpoint " + checkpoint().string() + " --in " + enh.string() +
              " --out " + enh2.string())
              .exit_code == 0);
    CHECK(fs::file_size(enh2) == fs::file_size(enh));
    CHECK(run("enhance --checkpoint " + checkpoint().string() + " --in nope.wav --out x.wav")
              .exit_code == 2);
}

TEST_CASE("evaluate renders a table and honors failures") {
    const RunResult good = run("evaluate --checkpoint " + checkpoint().string() + " --data " +
                               (dataset() / "manifest.tsv").string() + " --csv " +
                               (work_dir() / "eval.csv").string());
    REQUIRE(good.exit_code == 0);
    CHECK(good.out.find("si_noisy_db") != std::string::npos);
    CHECK(good.out.find("mean") != std::string::npos);
    const auto csv_rows = lines_of(slurp(work_dir() / "eval.csv"));
    CHECK(csv_rows.size() == 5);  // header + 4 rows

    // Manifest rows resolve relative to the manifest itself, so the broken
    // copy must sit next to the audio for its valid rows to stay valid.
    const fs::path broken = dataset() / "broken.tsv";
    std::ofstream(broken) << slurp(dataset() / "manifest.tsv") << "gone.wav\tmissing.wav\t0\n";
    const RunResult partial = run("evaluate --checkpoint " + checkpoint().string() + " --data " +
                                  broken.string());
    CHECK(partial.exit_code == 2);
    CHECK(partial.out.find("FAILED") != std::string::npos);
    CHECK(partial.out.find("1 file(s) failed") != std::string::npos);
}

TEST_CASE("gradcheck audits every rule once") {
    const RunResult r = run("gradcheck");
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("checked=30 failed=0") != std::string::npos);
    // One report line per op, no repeats.
    const auto rows = lines_of(r.out);
    std::vector<std::string> names;
    for (const auto& line : rows) {
        if (line.rfind("checked=", 0) == 0) continue;
        names.push_back(line.substr(0, line.find(' ')));
    }
    std::vector<std::string> unique = names;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    CHECK(names.size() == 30);
    CHECK(unique.size() == names.size());

    const RunResult fault = run("gradcheck --inject-fault");
    CHECK(fault.exit_code == 1);
    CHECK(fault.out.find("sigmoid") != std::string::npos);
    CHECK(fault.out.find("FAIL") != std::string::npos);
}
