#include "dsu/perturb.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dsu/error.hpp"
#include "dsu/rng.hpp"

namespace dsu {

namespace {

// Windowed-sinc interpolator: zero crossings on each side of the kernel and
// Kaiser window shape.
constexpr double kZeroCrossings = 32.0;
constexpr double kKaiserBeta = 8.6;

double mean_power(const std::vector<float>& x) {
    double acc = 0.0;
    for (const float v : x) {
        acc += static_cast<double>(v) * v;
    }
    return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

double sinc(double x) {
    if (x == 0.0) {
        return 1.0;
    }
    const double px = M_PI * x;
    return std::sin(px) / px;
}

// Modified Bessel function I0 by its power series; for x <= 9 the terms fall
// below double precision well before k = 40.
double bessel_i0(double x) {
    const double q = 0.25 * x * x;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 40; ++k) {
        term *= q / (static_cast<double>(k) * k);
        sum += term;
        if (term < sum * 1e-17) {
            break;
        }
    }
    return sum;
}

double kaiser(double t, double i0_beta) {
    // t in [-1, 1]
    const double arg = 1.0 - t * t;
    if (arg <= 0.0) {
        return 0.0;
    }
    return bessel_i0(kKaiserBeta * std::sqrt(arg)) / i0_beta;
}

}  // namespace

std::string_view to_string(PerturbKind k) noexcept {
    switch (k) {
        case PerturbKind::Clean: return "clean";
        case PerturbKind::NoiseH: return "noise_h";
        case PerturbKind::NoiseL: return "noise_l";
        case PerturbKind::PitchShift: return "pitch_shift";
    }
    return "clean";
}

PerturbKind parse_perturb_kind(std::string_view s) {
    if (s == "clean") return PerturbKind::Clean;
    if (s == "noise_h" || s == "noise-h") return PerturbKind::NoiseH;
    if (s == "noise_l" || s == "noise-l") return PerturbKind::NoiseL;
    if (s == "pitch_shift" || s == "pitch-shift" || s == "pitch") return PerturbKind::PitchShift;
    throw Error(ErrorCode::InvalidConfig, "unknown perturbation '" + std::string(s) + "'");
}

PerturbSpec PerturbSpec::noise_h(std::uint64_t seed) {
    return {PerturbKind::NoiseH, {15.0, 20.0}, {0.95, 1.05}, seed};
}
PerturbSpec PerturbSpec::noise_l(std::uint64_t seed) {
    return {PerturbKind::NoiseL, {5.0, 10.0}, {0.95, 1.05}, seed};
}
PerturbSpec PerturbSpec::pitch(std::uint64_t seed) {
    return {PerturbKind::PitchShift, {15.0, 20.0}, {0.95, 1.05}, seed};
}
PerturbSpec PerturbSpec::clean() { return {}; }

void PerturbSpec::validate() const {
    if (!(snr_db_range.first <= snr_db_range.second)) {
        throw Error(ErrorCode::InvalidConfig, "SNR range must satisfy lo <= hi");
    }
    if (!(pitch_ratio_range.first <= pitch_ratio_range.second) || !(pitch_ratio_range.first > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "pitch ratios must be positive with lo <= hi");
    }
}

NoiseOutcome add_gaussian_noise(const Waveform& w, double snr_db, std::uint64_t seed) {
    const double p_signal = mean_power(w.samples);
    if (!(p_signal > 0.0)) {
        throw Error(ErrorCode::SilentInput, "cannot target an SNR on a silent waveform");
    }
    NoiseOutcome out;
    out.wave.sample_rate_hz = w.sample_rate_hz;
    if (snr_db == kNoNoise) {
        out.wave.samples = w.samples;
        return out;
    }
    out.noise_variance = p_signal / std::pow(10.0, snr_db / 10.0);
    const double sigma = std::sqrt(out.noise_variance);
    Rng rng(seed);
    out.wave.samples.resize(w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        double y = w.samples[i] + sigma * rng.normal();
        if (y > 1.0 || y < -1.0) {
            ++out.clamp_count;
            y = std::clamp(y, -1.0, 1.0);
        }
        out.wave.samples[i] = static_cast<float>(y);
    }
    return out;
}

Waveform pitch_shift(const Waveform& w, double ratio) {
    if (!(ratio >= 0.5 && ratio <= 2.0)) {
        throw Error(ErrorCode::RatioOutOfRange, "pitch ratio " + std::to_string(ratio) +
                                                    " outside [0.5, 2.0]");
    }
    const std::size_t n = w.samples.size();
    const auto m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / ratio));
    Waveform out;
    out.sample_rate_hz = w.sample_rate_hz;
    out.samples.assign(m, 0.0f);

    const double cutoff = std::min(1.0, 1.0 / ratio);
    const double half_width = kZeroCrossings / cutoff;
    const double i0_beta = bessel_i0(kKaiserBeta);
    const auto* x = w.samples.data();
    const auto n_signed = static_cast<std::int64_t>(n);

#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < static_cast<std::int64_t>(m); ++j) {
        const double pos = static_cast<double>(j) * ratio;
        const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(pos - half_width)));
        const auto hi = std::min<std::int64_t>(n_signed - 1, static_cast<std::int64_t>(std::floor(pos + half_width)));
        double acc = 0.0;
        for (std::int64_t i = lo; i <= hi; ++i) {
            const double t = pos - static_cast<double>(i);
            acc += x[i] * cutoff * sinc(cutoff * t) * kaiser(t / half_width, i0_beta);
        }
        out.samples[j] = static_cast<float>(acc);
    }
    return out;
}

double measure_snr(const Waveform& clean, const Waveform& noisy) {
    if (clean.samples.size() != noisy.samples.size() || clean.sample_rate_hz != noisy.sample_rate_hz) {
        throw Error(ErrorCode::LengthMismatch, "clean and noisy waveforms differ in length or rate");
    }
    double p_clean = 0.0;
    double p_noise = 0.0;
    for (std::size_t i = 0; i < clean.samples.size(); ++i) {
        const double c = clean.samples[i];
        const double d = static_cast<double>(noisy.samples[i]) - c;
        p_clean += c * c;
        p_noise += d * d;
    }
    if (p_noise == 0.0) {
        throw Error(ErrorCode::ZeroNoise, "noisy waveform equals the clean one");
    }
    return 10.0 * std::log10(p_clean / p_noise);
}

std::string PerturbRecord::to_json() const {
    nlohmann::json j;
    j["utt_id"] = utt_id;
    j["kind"] = std::string(to_string(kind));
    j["requested_snr_db"] = std::isfinite(requested_snr_db) ? nlohmann::json(requested_snr_db) : nullptr;
    j["achieved_snr_db"] = std::isfinite(achieved_snr_db) ? nlohmann::json(achieved_snr_db) : nullptr;
    j["pitch_ratio"] = pitch_ratio;
    j["clamp_count"] = clamp_count;
    j["duration_in_s"] = duration_in_s;
    j["duration_out_s"] = duration_out_s;
    return j.dump();
}

std::pair<Waveform, PerturbRecord> apply_perturbation(const Waveform& w, const PerturbSpec& spec,
                                                      std::uint64_t utt_index, std::string utt_id) {
    spec.validate();
    PerturbRecord rec;
    rec.utt_id = std::move(utt_id);
    rec.kind = spec.kind;
    rec.duration_in_s = w.duration_s();
    Rng draw(derive_seed(spec.seed, utt_index));
    Waveform out;
    switch (spec.kind) {
        case PerturbKind::Clean:
            out = w;
            break;
        case PerturbKind::NoiseH:
        case PerturbKind::NoiseL: {
            rec.requested_snr_db = draw.uniform(spec.snr_db_range.first, spec.snr_db_range.second);
            auto noisy = add_gaussian_noise(w, rec.requested_snr_db, draw.next_u64());
            rec.clamp_count = noisy.clamp_count;
            rec.achieved_snr_db = measure_snr(w, noisy.wave);
            out = std::move(noisy.wave);
            break;
        }
        case PerturbKind::PitchShift:
            rec.pitch_ratio = draw.uniform(spec.pitch_ratio_range.first, spec.pitch_ratio_range.second);
            out = pitch_shift(w, rec.pitch_ratio);
            break;
    }
    rec.duration_out_s = out.duration_s();
    return {std::move(out), std::move(rec)};
}

}  // namespace dsu
