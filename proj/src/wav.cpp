#include "cffma/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cffma/errors.hpp"

namespace cffma {

namespace {

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "RIFF", 4) != 0) throw FormatError(path + ": not a RIFF file");
    read_u32(in);  // riff size, unused
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "WAVE", 4) != 0) throw FormatError(path + ": not a WAVE file");

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    Waveform w;

    while (in.read(magic, 4)) {
        const uint32_t chunk_size = read_u32(in);
        if (!in) break;
        if (std::memcmp(magic, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw FormatError(path + ": truncated fmt chunk");
            format = read_u16(in);
            channels = read_u16(in);
            rate = read_u32(in);
            read_u32(in);  // byte rate
            read_u16(in);  // block align
            bits = read_u16(in);
            in.ignore(chunk_size - 16);
            have_fmt = true;
        } else if (std::memcmp(magic, "data", 4) == 0) {
            if (!have_fmt) throw FormatError(path + ": data chunk before fmt");
            if (channels != 1) {
                throw FormatError(path + ": " + std::to_string(channels) +
                                  " channels unsupported, mono required");
            }
            if (rate != 16000) {
                throw FormatError(path + ": sample rate " + std::to_string(rate) +
                                  " unsupported, 16000 required (no resampler)");
            }
            if (format == 1 && bits == 16) {
                const size_t n = chunk_size / 2;
                w.samples.resize(n);
                std::vector<unsigned char> raw(chunk_size);
                in.read(reinterpret_cast<char*>(raw.data()), chunk_size);
                if (!in) throw FormatError(path + ": truncated data chunk");
                for (size_t i = 0; i < n; ++i) {
                    const int16_t s = static_cast<int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
                    w.samples[i] = static_cast<float>(s) / 32768.0f;
                }
            } else if (format == 3 && bits == 32) {
                const size_t n = chunk_size / 4;
                w.samples.resize(n);
                in.read(reinterpret_cast<char*>(w.samples.data()), 4 * n);
                if (!in) throw FormatError(path + ": truncated data chunk");
            } else {
                throw FormatError(path + ": codec (format " + std::to_string(format) + ", " +
                                  std::to_string(bits) + " bit) unsupported");
            }
            w.sample_rate = static_cast<int>(rate);
            return w;
        } else {
            in.ignore(chunk_size + (chunk_size & 1));  // chunks are word aligned
        }
    }
    throw FormatError(path + ": no data chunk");
}

void write_wav(const std::string& path, const Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);

    const uint32_t n = static_cast<uint32_t>(w.samples.size());
    const uint32_t data_bytes = 2 * n;
    out.write("RIFF", 4);
    write_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, 1);  // PCM
    write_u16(out, 1);  // mono
    write_u32(out, static_cast<uint32_t>(w.sample_rate));
    write_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
    write_u16(out, 2);
    write_u16(out, 16);
    out.write("data", 4);
    write_u32(out, data_bytes);

    std::vector<char> raw(data_bytes);
    for (uint32_t i = 0; i < n; ++i) {
        const float clipped = std::clamp(w.samples[i], -1.0f, 1.0f - 1.0f / 32768.0f);
        const long q = std::lround(static_cast<double>(clipped) * 32768.0);
        const int16_t s = static_cast<int16_t>(std::clamp<long>(q, -32768, 32767));
        raw[2 * i] = static_cast<char>(s & 0xff);
        raw[2 * i + 1] = static_cast<char>((s >> 8) & 0xff);
    }
    out.write(raw.data(), raw.size());
    if (!out) throw IoError("short write to " + path);
}

}  // namespace cffma
