#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cffma/audio.hpp"
#include "cffma/errors.hpp"
#include "cffma/grad_check.hpp"
#include "cffma/ops.hpp"
#include "cffma/rng.hpp"
#include "cffma/stft.hpp"
#include "test_util.hpp"

using namespace cffma;
using namespace tutil;

namespace {

Waveform sine(int64_t len, double freq_hz, double amp) {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i) {
        w.samples[static_cast<size_t>(i)] =
            static_cast<float>(amp * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(i) / 16000.0));
    }
    return w;
}

Waveform noise(int64_t len, uint64_t seed, double amp) {
    Rng rng(seed);
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(static_cast<size_t>(len));
    for (auto& s : w.samples) s = rng.uniform(static_cast<float>(-amp), static_cast<float>(amp));
    return w;
}

}  // namespace

TEST_CASE("frame count and shapes follow the center convention") {
    StftConfig cfg;
    CHECK(cfg.freq_bins() == 201);
    CHECK(stft_frames(40960, cfg) == 257);
    CHECK(stft_frames(16000, cfg) == 101);

    SpectroStack s = stft(noise(40960, 7, 0.5), cfg);
    CHECK(s.mag.shape() == Shape{201, 257});
    CHECK(s.phase.shape() == Shape{201, 257, 2});
    CHECK(s.orig_len == 40960);
}

TEST_CASE("config validation") {
    StftConfig cfg;
    cfg.hop = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = StftConfig{};
    cfg.win_len = 500;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = StftConfig{};
    cfg.hop = 401;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    CHECK_THROWS_AS(stft_frames(0, StftConfig{}), ContractError);
}

TEST_CASE("all-zero input gives zero magnitude and the (1,0) phase convention") {
    Waveform w;
    w.samples.assign(1600, 0.0f);
    SpectroStack s = stft(w, StftConfig{});
    for (float v : s.mag.data()) CHECK(v == 0.0f);
    const auto ph = s.phase.data();
    for (size_t i = 0; i < ph.size(); i += 2) {
        CHECK(ph[i] == 1.0f);
        CHECK(ph[i + 1] == 0.0f);
    }
}

namespace {

std::vector<int64_t> per_frame_argmax(const SpectroStack& s) {
    const auto mag = s.mag.data();
    const int64_t f_bins = s.mag.shape()[0];
    const int64_t frames = s.mag.shape()[1];
    std::vector<int64_t> best(static_cast<size_t>(frames), 0);
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t f = 1; f < f_bins; ++f) {
            if (mag[static_cast<size_t>(f * frames + t)] >
                mag[static_cast<size_t>(best[static_cast<size_t>(t)] * frames + t)]) {
                best[static_cast<size_t>(t)] = f;
            }
        }
    }
    return best;
}

}  // namespace

TEST_CASE("1 kHz sinusoid peaks at bin 25 in every frame") {
    // Cosine with 2L-2 a multiple of the 16-sample period: the reflect
    // padding then continues the sinusoid seamlessly at both edges, so each
    // frame is a pure windowed on-bin tone and the bin-25 peak is exact.
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(4001);
    for (size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<float>(0.7 * std::cos(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 16000.0));
    }
    for (int64_t best : per_frame_argmax(stft(w, StftConfig{}))) CHECK(best == 25);
}

TEST_CASE("boundary leakage never moves interior frames off bin 25") {
    // A generic sine whose mirror image is phase-discontinuous: the two edge
    // frames may smear, interior frames must not.
    const auto best = per_frame_argmax(stft(sine(4000, 1000.0, 0.7), StftConfig{}));
    for (size_t t = 1; t + 1 < best.size(); ++t) CHECK(best[t] == 25);
}

TEST_CASE("phase is unit-norm everywhere") {
    SpectroStack s = stft(noise(8000, 21, 0.5), StftConfig{});
    const auto ph = s.phase.data();
    for (size_t i = 0; i < ph.size(); i += 2) {
        const double n2 = static_cast<double>(ph[i]) * ph[i] + static_cast<double>(ph[i + 1]) * ph[i + 1];
        CHECK(std::fabs(n2 - 1.0) <= 1e-5);
    }
}

TEST_CASE("reconstruct applies magnitude to the phase unit vector") {
    Tensor mag = t2(1, 1, {1.0f});
    Tensor phase = Tensor::from_data({1, 1, 2}, {1.0f, 0.0f});
    ComplexSpec c = reconstruct(mag, phase);
    CHECK(c.re.data()[0] == 1.0f);
    CHECK(c.im.data()[0] == 0.0f);

    mag = t2(1, 1, {2.0f});
    phase = Tensor::from_data({1, 1, 2}, {0.0f, 1.0f});
    c = reconstruct(mag, phase);
    CHECK(c.re.data()[0] == 0.0f);
    CHECK(c.im.data()[0] == 2.0f);

    CHECK_THROWS_AS(reconstruct(t2(1, 1, {-0.5f}), phase), ContractError);
}

TEST_CASE("reconstruct(stft components) matches the raw complex transform") {
    Waveform w = noise(16000, 3, 0.5);
    StftConfig cfg;
    ComplexSpec raw = stft_complex(w, cfg);
    SpectroStack s = stft(w, cfg);
    ComplexSpec rec = reconstruct(s.mag, s.phase);
    const auto r0 = raw.re.data(), r1 = rec.re.data();
    const auto i0 = raw.im.data(), i1 = rec.im.data();
    for (size_t i = 0; i < r0.size(); ++i) {
        CHECK(std::fabs(r0[i] - r1[i]) <= 1e-5f);
        CHECK(std::fabs(i0[i] - i1[i]) <= 1e-5f);
    }
}

TEST_CASE("istft inverts stft above 60 dB") {
    Waveform w = noise(16000, 11, 0.5);
    StftConfig cfg;
    Waveform rec = istft(stft_complex(w, cfg), cfg, 16000);
    REQUIRE(rec.samples.size() == w.samples.size());
    CHECK(snr_db(rec, w) > 60.0);
}

TEST_CASE("round-trip property holds across seeds and lengths") {
    StftConfig cfg;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(derive_seed(99, seed, 0));
        const int64_t len = 600 + static_cast<int64_t>(rng.below(5400));
        Waveform w = noise(len, derive_seed(99, seed, 1), 0.5);
        Waveform rec = istft(stft_complex(w, cfg), cfg, len);
        CHECK(snr_db(rec, w) > 60.0);
    }
}

TEST_CASE("istft of a zero spectrum is silence, and it is linear") {
    StftConfig cfg;
    ComplexSpec zero;
    zero.re = Tensor::zeros({201, 21});
    zero.im = Tensor::zeros({201, 21});
    Waveform silence = istft(zero, cfg, 3200);
    for (float v : silence.samples) CHECK(v == 0.0f);

    Waveform w = noise(3200, 5, 0.5);
    ComplexSpec s = stft_complex(w, cfg);
    ComplexSpec scaled;
    scaled.re = scale(s.re, 0.37);
    scaled.im = scale(s.im, 0.37);
    Waveform y1 = istft(s, cfg, 3200);
    Waveform y2 = istft(scaled, cfg, 3200);
    for (size_t i = 0; i < y1.samples.size(); ++i) {
        CHECK(std::fabs(y2.samples[i] - 0.37f * y1.samples[i]) <= 1e-6f);
    }
}

TEST_CASE("istft rejects mismatched inputs") {
    StftConfig cfg;
    ComplexSpec s;
    s.re = Tensor::zeros({200, 10});
    s.im = Tensor::zeros({200, 10});
    CHECK_THROWS_AS(istft(s, cfg, 100), DimError);

    s.re = Tensor::zeros({201, 3});
    s.im = Tensor::zeros({201, 3});
    CHECK_THROWS_AS(istft(s, cfg, 600), ContractError);  // too few frames
    CHECK_THROWS_AS(istft(s, cfg, 0), ContractError);
}

TEST_CASE("vanishing synthesis envelope is reported") {
    // Non-overlapping periodic Hann frames leave zero-weight positions, so
    // WOLA cannot divide there.
    StftConfig cfg;
    cfg.fft_len = 4;
    cfg.win_len = 4;
    cfg.hop = 4;
    ComplexSpec s;
    s.re = Tensor::full({3, 3}, 1.0f);
    s.im = Tensor::zeros({3, 3});
    CHECK_THROWS_AS(istft(s, cfg, 4), ContractError);
}

TEST_CASE("differentiable synthesis matches the reference istft") {
    Waveform w = noise(3200, 13, 0.5);
    StftConfig cfg;
    SpectroStack s = stft(w, cfg);
    Waveform y_ref = istft(reconstruct(s.mag, s.phase), cfg, 3200);
    Tensor y = istft_mag(s.mag, s.phase, cfg, 3200);
    REQUIRE(y.shape() == Shape{3200});
    const auto yd = y.data();
    for (size_t i = 0; i < yd.size(); ++i) {
        CHECK(std::fabs(yd[i] - y_ref.samples[i]) <= 1e-5f);
    }
}

TEST_CASE("gradients flow through the synthesis path") {
    StftConfig cfg;
    cfg.fft_len = 16;
    cfg.win_len = 16;
    cfg.hop = 8;
    Waveform w = noise(40, 17, 0.5);
    SpectroStack s = stft(w, cfg);
    const Shape ms = s.mag.shape();

    Rng rng(31);
    Tensor mag = rand_param_kink_free(ms, rng, 0.1f);
    // Magnitudes must stay non-negative along both FD probes.
    for (auto& v : mag.mutable_data()) v = std::fabs(v) + 0.5f;
    Tensor weights = rand_uniform({40}, rng, -1.0f, 1.0f);
    Tensor phase = s.phase;
    auto f = [&](const Tensor& m) { return sum(mul(istft_mag(m, phase, cfg, 40), weights)); };
    CHECK(grad_check(f, mag) < 1e-3);
}
