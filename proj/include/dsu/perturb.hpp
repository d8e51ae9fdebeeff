#pragma once

// Acoustic perturbations on PCM waveforms: SNR-targeted white Gaussian noise
// and resampling-based pitch shift, plus SNR measurement.

#include <cstdint>
#include <limits>
#include <string>
#include <utility>

#include "dsu/corpusio.hpp"

namespace dsu {

enum class PerturbKind { Clean, NoiseH, NoiseL, PitchShift };

std::string_view to_string(PerturbKind k) noexcept;
PerturbKind parse_perturb_kind(std::string_view s);

/// Ranges as printed for the evaluation conditions: Noise-H draws SNR from
/// [15, 20] dB, Noise-L from [5, 10] dB, pitch shift ratios from [0.95, 1.05].
struct PerturbSpec {
    PerturbKind kind = PerturbKind::Clean;
    std::pair<double, double> snr_db_range{15.0, 20.0};
    std::pair<double, double> pitch_ratio_range{0.95, 1.05};
    std::uint64_t seed = 42;

    static PerturbSpec noise_h(std::uint64_t seed = 42);
    static PerturbSpec noise_l(std::uint64_t seed = 42);
    static PerturbSpec pitch(std::uint64_t seed = 42);
    static PerturbSpec clean();

    void validate() const;
};

/// Passing this as snr_db leaves the signal untouched.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

struct NoiseOutcome {
    Waveform wave;
    double noise_variance = 0.0;
    std::uint64_t clamp_count = 0;  // samples pushed outside [-1, 1] before clamping
};

/// w + n with n ~ N(0, P_signal / 10^(snr_db / 10)), P_signal the mean squared
/// sample; then clamped to [-1, 1]. Throws SilentInput when P_signal == 0.
NoiseOutcome add_gaussian_noise(const Waveform& w, double snr_db, std::uint64_t seed);

/// Resamples by 1 / ratio with windowed-sinc interpolation so every frequency
/// scales by `ratio`; the duration scales by 1 / ratio. ratio in [0.5, 2].
Waveform pitch_shift(const Waveform& w, double ratio);

/// 10 log10(P_clean / P_(noisy - clean)).
double measure_snr(const Waveform& clean, const Waveform& noisy);

struct PerturbRecord {
    std::string utt_id;
    PerturbKind kind = PerturbKind::Clean;
    double requested_snr_db = kNoNoise;
    double achieved_snr_db = kNoNoise;
    double pitch_ratio = 1.0;
    std::uint64_t clamp_count = 0;
    double duration_in_s = 0.0;
    double duration_out_s = 0.0;

    /// One JSON-lines record.
    std::string to_json() const;
};

/// Applies `spec` to utterance number `utt_index`; the SNR or ratio is drawn
/// uniformly from the configured range with a seed derived from (spec.seed, utt_index).
std::pair<Waveform, PerturbRecord> apply_perturbation(const Waveform& w, const PerturbSpec& spec,
                                                      std::uint64_t utt_index,
                                                      std::string utt_id = {});

}  // namespace dsu
