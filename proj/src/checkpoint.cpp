#include "cffma/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cffma/errors.hpp"
#include "cffma/run_config.hpp"

namespace cffma {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'F', 'M'};

void write_u16(std::ostream& out, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw FormatError("checkpoint: truncated file");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::string fmt_f64(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_entry(std::ostream& out, const std::string& name, const Shape& shape,
                 const float* data, size_t count) {
    if (name.size() > 0xffff) throw ContractError("checkpoint: entry name too long");
    write_u16(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(shape.size()));
    for (int64_t d : shape) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(float)));
}

struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

Entry read_entry(std::istream& in) {
    Entry e;
    const uint16_t name_len = read_u16(in);
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    if (!in) throw FormatError("checkpoint: truncated entry name");
    const int ndim = in.get();
    if (ndim == EOF) throw FormatError("checkpoint: truncated file");
    int64_t numel = 1;
    for (int i = 0; i < ndim; ++i) {
        const uint32_t d = read_u32(in);
        if (d == 0) throw FormatError("checkpoint: zero dimension in entry " + e.name);
        e.shape.push_back(static_cast<int64_t>(d));
        numel *= d;
    }
    e.data.resize(static_cast<size_t>(numel));
    in.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    if (!in) throw FormatError("checkpoint: truncated data in entry " + e.name);
    return e;
}

}  // namespace

std::string serialize_config(const ModelConfig& cfg, int64_t step) {
    std::string s;
    auto kv = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
    kv("ssl_layers", std::to_string(cfg.ssl_layers));
    kv("ssl_dim", std::to_string(cfg.ssl_dim));
    kv("d_model", std::to_string(cfg.d_model));
    kv("n_heads", std::to_string(cfg.n_heads));
    kv("d_ff", std::to_string(cfg.d_ff));
    kv("n_rhma", std::to_string(cfg.n_rhma));
    kv("sca_ratio", std::to_string(cfg.sca_ratio));
    kv("fft_len", std::to_string(cfg.stft.fft_len));
    kv("win_len", std::to_string(cfg.stft.win_len));
    kv("hop", std::to_string(cfg.stft.hop));
    kv("use_mscff", cfg.use_mscff ? "1" : "0");
    kv("use_rhma", cfg.use_rhma ? "1" : "0");
    kv("use_mhsa", cfg.use_mhsa ? "1" : "0");
    kv("use_scta", cfg.use_scta ? "1" : "0");
    kv("sqrt_mag", cfg.sqrt_mag ? "1" : "0");
    kv("lambda_mag", fmt_f64(cfg.lambda_mag));
    kv("lambda_sisnr", fmt_f64(cfg.lambda_sisnr));
    kv("lr", fmt_f64(cfg.lr));
    kv("batch", std::to_string(cfg.batch));
    kv("crop_seconds", fmt_f64(cfg.crop_seconds));
    kv("seed", std::to_string(cfg.seed));
    kv("step", std::to_string(step));
    return s;
}

void save_checkpoint(const std::string& path, const ModelParams& params, int64_t step,
                     const AdamState* optimizer) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create checkpoint: " + path);

    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);
    const std::string cfg = serialize_config(params.config, step);
    write_u32(out, static_cast<uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    // model_param_set wants a mutable reference only to alias the tensors.
    ParamSet set = model_param_set(const_cast<ModelParams&>(params));
    write_u32(out, static_cast<uint32_t>(set.size()));
    for (const auto& item : set.items()) {
        const auto d = item.tensor.data();
        write_entry(out, item.name, item.tensor.shape(), d.data(), d.size());
    }

    if (optimizer) {
        write_u32(out, static_cast<uint32_t>(2 * set.size() + 1));
        const float opt_step = static_cast<float>(optimizer->step);
        write_entry(out, "adam.step", {1}, &opt_step, 1);
        for (const auto& item : set.items()) {
            auto mi = optimizer->m.find(item.name);
            auto vi = optimizer->v.find(item.name);
            if (mi == optimizer->m.end() || vi == optimizer->v.end()) {
                throw ContractError("checkpoint: optimizer state missing for " + item.name);
            }
            write_entry(out, "adam.m." + item.name, item.tensor.shape(), mi->second.data(),
                        mi->second.size());
            write_entry(out, "adam.v." + item.name, item.tensor.shape(), vi->second.data(),
                        vi->second.size());
        }
    }
    out.flush();
    if (!out) throw IoError("short write to checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic in " + path);
    }
    const uint32_t version = read_u32(in);
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const uint32_t cfg_len = read_u32(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    if (!in) throw FormatError("checkpoint: truncated config block");

    KvMap kv = parse_kv_text(cfg_text, /*allow_comments=*/false);
    ModelConfig cfg;
    apply_model_keys(cfg, kv);
    CheckpointData ck;
    if (auto it = kv.find("step"); it != kv.end()) {
        ck.step = parse_i64("step", it->second);
        kv.erase(it);
    } else {
        throw FormatError("checkpoint: config block lacks the training step");
    }
    if (!kv.empty()) {
        throw FormatError("checkpoint: unknown config key '" + kv.begin()->first + "'");
    }

    ck.params = build_model(cfg);
    ParamSet set = model_param_set(ck.params);

    const uint32_t n_params = read_u32(in);
    if (n_params != set.size()) {
        throw FormatError("checkpoint: parameter count does not match config");
    }
    for (uint32_t i = 0; i < n_params; ++i) {
        const Entry e = read_entry(in);
        if (!set.contains(e.name)) {
            throw FormatError("checkpoint: unexpected parameter '" + e.name + "'");
        }
        Tensor& t = set.at(e.name);
        if (t.shape() != e.shape) {
            throw FormatError("checkpoint: shape mismatch for '" + e.name + "'");
        }
        auto dst = t.mutable_data();
        std::memcpy(dst.data(), e.data.data(), e.data.size() * sizeof(float));
    }

    // Anything after the parameters is the optional optimizer section.
    if (in.peek() != std::char_traits<char>::eof()) {
        const uint32_t n_entries = read_u32(in);
        ck.has_optimizer = true;
        for (uint32_t i = 0; i < n_entries; ++i) {
            Entry e = read_entry(in);
            if (e.name == "adam.step") {
                if (e.data.size() != 1) throw FormatError("checkpoint: malformed adam.step");
                ck.optimizer.step = static_cast<int64_t>(e.data[0]);
            } else if (e.name.rfind("adam.m.", 0) == 0) {
                ck.optimizer.m[e.name.substr(7)] = std::move(e.data);
            } else if (e.name.rfind("adam.v.", 0) == 0) {
                ck.optimizer.v[e.name.substr(7)] = std::move(e.data);
            } else {
                throw FormatError("checkpoint: unexpected optimizer entry '" + e.name + "'");
            }
        }
        for (const auto& item : set.items()) {
            if (!ck.optimizer.m.count(item.name) || !ck.optimizer.v.count(item.name)) {
                throw FormatError("checkpoint: optimizer state incomplete");
            }
        }
    }
    return ck;
}

}  // namespace cffma
