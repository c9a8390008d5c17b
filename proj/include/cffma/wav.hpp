#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cffma {

struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;
};

// RIFF/WAVE reader for mono 16 kHz files, PCM 16-bit (scaled by 1/32768) or
// IEEE float 32-bit. Anything else is a format error; there is no resampler.
Waveform read_wav(const std::string& path);

// Writes mono PCM 16-bit with round-to-nearest, clipping to [-1, 1-1/32768].
void write_wav(const std::string& path, const Waveform& w);

}  // namespace cffma
