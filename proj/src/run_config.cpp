#include "cffma/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include "cffma/errors.hpp"

namespace cffma {

namespace {

std::string strip(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvMap parse_kv_text(const std::string& text, bool allow_comments) {
    KvMap out;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (allow_comments) {
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
        }
        line = strip(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty()) {
            throw FormatError("config line " + std::to_string(line_no) + ": empty key");
        }
        if (out.count(key)) {
            throw FormatError("config: duplicate key '" + key + "'");
        }
        out[key] = value;
    }
    return out;
}

KvMap read_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str(), /*allow_comments=*/true);
}

int64_t parse_i64(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw FormatError("config: key '" + key + "' needs an integer, got '" + value + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
        const uint64_t v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw FormatError("config: key '" + key + "' needs a non-negative integer, got '" + value +
                          "'");
    }
}

double parse_f64(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw FormatError("config: key '" + key + "' needs a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw FormatError("config: key '" + key + "' needs 0/1/true/false, got '" + value + "'");
}

void apply_model_keys(ModelConfig& cfg, KvMap& kv) {
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    if (auto v = take("ssl_layers")) cfg.ssl_layers = parse_i64("ssl_layers", *v);
    if (auto v = take("ssl_dim")) cfg.ssl_dim = parse_i64("ssl_dim", *v);
    if (auto v = take("d_model")) cfg.d_model = parse_i64("d_model", *v);
    if (auto v = take("n_heads")) cfg.n_heads = parse_i64("n_heads", *v);
    if (auto v = take("d_ff")) cfg.d_ff = parse_i64("d_ff", *v);
    if (auto v = take("n_rhma")) cfg.n_rhma = parse_i64("n_rhma", *v);
    if (auto v = take("sca_ratio")) cfg.sca_ratio = parse_i64("sca_ratio", *v);
    if (auto v = take("fft_len")) cfg.stft.fft_len = parse_i64("fft_len", *v);
    if (auto v = take("win_len")) cfg.stft.win_len = parse_i64("win_len", *v);
    if (auto v = take("hop")) cfg.stft.hop = parse_i64("hop", *v);
    if (auto v = take("use_mscff")) cfg.use_mscff = parse_bool("use_mscff", *v);
    if (auto v = take("use_rhma")) cfg.use_rhma = parse_bool("use_rhma", *v);
    if (auto v = take("use_mhsa")) cfg.use_mhsa = parse_bool("use_mhsa", *v);
    if (auto v = take("use_scta")) cfg.use_scta = parse_bool("use_scta", *v);
    if (auto v = take("sqrt_mag")) cfg.sqrt_mag = parse_bool("sqrt_mag", *v);
    if (auto v = take("lambda_mag")) cfg.lambda_mag = parse_f64("lambda_mag", *v);
    if (auto v = take("lambda_sisnr")) cfg.lambda_sisnr = parse_f64("lambda_sisnr", *v);
    if (auto v = take("lr")) cfg.lr = parse_f64("lr", *v);
    if (auto v = take("batch")) cfg.batch = parse_i64("batch", *v);
    if (auto v = take("crop_seconds")) cfg.crop_seconds = parse_f64("crop_seconds", *v);
    if (auto v = take("seed")) cfg.seed = parse_u64("seed", *v);
}

}  // namespace cffma
