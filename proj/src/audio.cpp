#include "cffma/audio.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "cffma/errors.hpp"
#include "cffma/ops.hpp"

namespace cffma {

namespace {

double mean_power(const std::vector<float>& x) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (float v : x) acc += static_cast<double>(v) * v;
    return acc / static_cast<double>(x.size());
}

}  // namespace

Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double target_snr_db,
                    double* gain) {
    if (clean.samples.empty()) throw ContractError("mix_at_snr: empty clean signal");
    if (noise.samples.empty()) throw ContractError("mix_at_snr: empty noise signal");
    if (clean.sample_rate != noise.sample_rate) {
        throw ContractError("mix_at_snr: sample rates differ");
    }

    const size_t len = clean.samples.size();
    std::vector<double> n(len);
    for (size_t i = 0; i < len; ++i) {
        // Tile short noise by wrapping; crop long noise from the start.
        n[i] = noise.samples[i % noise.samples.size()];
    }

    const double p_clean = mean_power(clean.samples);
    double p_noise = 0.0;
    for (double v : n) p_noise += v * v;
    p_noise /= static_cast<double>(len);
    if (p_clean <= 0.0) throw ContractError("mix_at_snr: silent clean signal");
    if (p_noise <= 0.0) throw ContractError("mix_at_snr: silent noise within the mixed span");

    const double scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, target_snr_db / 10.0)));
    std::vector<double> mixed(len);
    double peak = 0.0;
    for (size_t i = 0; i < len; ++i) {
        mixed[i] = static_cast<double>(clean.samples[i]) + scale * n[i];
        peak = std::max(peak, std::fabs(mixed[i]));
    }
    const double g = peak > 1.0 ? 1.0 / peak : 1.0;
    if (gain) *gain = g;

    Waveform out;
    out.sample_rate = clean.sample_rate;
    out.samples.resize(len);
    for (size_t i = 0; i < len; ++i) out.samples[i] = static_cast<float>(mixed[i] * g);
    return out;
}

double snr_db(const Waveform& est, const Waveform& ref) {
    if (est.samples.size() != ref.samples.size()) {
        throw DimError("snr_db: length mismatch");
    }
    double p_ref = 0.0;
    double p_res = 0.0;
    for (size_t i = 0; i < ref.samples.size(); ++i) {
        const double r = ref.samples[i];
        const double d = static_cast<double>(est.samples[i]) - r;
        p_ref += r * r;
        p_res += d * d;
    }
    if (p_res == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(p_ref / p_res);
}

double si_snr(const Waveform& est, const Waveform& ref) {
    if (est.samples.size() != ref.samples.size()) {
        throw DimError("si_snr: length mismatch");
    }
    const size_t len = ref.samples.size();
    if (len == 0) throw ContractError("si_snr: empty signals");

    double mean_e = 0.0;
    double mean_r = 0.0;
    for (size_t i = 0; i < len; ++i) {
        mean_e += est.samples[i];
        mean_r += ref.samples[i];
    }
    mean_e /= static_cast<double>(len);
    mean_r /= static_cast<double>(len);

    double dot = 0.0;
    double rr = 0.0;
    for (size_t i = 0; i < len; ++i) {
        const double e = static_cast<double>(est.samples[i]) - mean_e;
        const double r = static_cast<double>(ref.samples[i]) - mean_r;
        dot += e * r;
        rr += r * r;
    }
    if (rr <= 0.0) throw ContractError("si_snr: zero-power reference");

    const double alpha = dot / rr;
    double p_target = 0.0;
    double p_res = 0.0;
    for (size_t i = 0; i < len; ++i) {
        const double e = static_cast<double>(est.samples[i]) - mean_e;
        const double r = static_cast<double>(ref.samples[i]) - mean_r;
        const double t = alpha * r;
        p_target += t * t;
        p_res += (e - t) * (e - t);
    }
    if (p_res / static_cast<double>(len) < 1e-12) return 60.0;
    return std::min(60.0, 10.0 * std::log10(p_target / p_res));
}

Tensor si_snr_soft(const Tensor& est, const Tensor& ref) {
    if (est.shape() != ref.shape() || est.shape().size() != 1) {
        throw DimError("si_snr_soft: expected matching rank-1 tensors, got " +
                       shape_str(est.shape()) + " vs " + shape_str(ref.shape()));
    }
    constexpr double kEps = 1e-8;
    constexpr double kTenOverLn10 = 4.342944819032518;

    const Tensor est_c = sub(est, mean(est));
    const Tensor ref_c = sub(ref, mean(ref));
    const Tensor ref_power = sum(mul(ref_c, ref_c));
    if (ref_power.item() <= 0.0f) throw ContractError("si_snr_soft: zero-power reference");
    const Tensor alpha = mul(sum(mul(est_c, ref_c)), reciprocal(ref_power));
    const Tensor target = mul(alpha, ref_c);
    const Tensor residual = sub(est_c, target);
    const Tensor p_target = add_scalar(sum(mul(target, target)), kEps);
    const Tensor p_residual = add_scalar(sum(mul(residual, residual)), kEps);
    return scale(sub(log(p_target), log(p_residual)), kTenOverLn10);
}

}  // namespace cffma
