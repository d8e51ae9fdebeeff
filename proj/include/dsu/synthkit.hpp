#pragma once

// Synthetic corpora with known ground truth: an HMM over pseudo-phoneme
// states emitting Gaussian feature frames, the matching alignment tracks and
// 16 kHz waveforms that carry the same information as sinusoids.
//
// Waveform layout per frame (hop = sample_rate / frame_rate samples):
//   A * sin(2 pi f_state t)  +  b * sum_d eps_d * sin(2 pi g_d t)
// where f_state and g_d are distinct multiples of the frame rate, so every
// component completes an integer number of cycles per frame and the
// components are orthogonal within a frame. `features_from_waveform`
// inverts this mapping, which lets perturbations be applied to audio and the
// features be re-derived from the perturbed signal.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsu/corpusio.hpp"
#include "dsu/unitstream.hpp"

namespace dsu {

struct SynthSpec {
    std::uint32_t n_phonemes = 40;
    std::uint32_t dim = 32;
    float frame_rate_hz = 50.0f;
    double mean_dwell_frames = 5.0;
    double emission_sigma = 0.1;
    /// Standard deviation of the Gaussian draws that place phoneme means.
    double mean_scale = 1.0;
    /// Row-stochastic n_phonemes x n_phonemes jump matrix used when a state
    /// is left. Empty selects uniform over the other states.
    std::vector<double> transition;
    std::uint64_t seed = 42;
    std::uint32_t sample_rate_hz = 16000;

    void validate() const;
};

/// Resolved generator: phoneme means, jump matrix and labels.
struct SynthModel {
    SynthSpec spec;
    std::vector<double> means;       // n_phonemes x dim
    std::vector<double> transition;  // n_phonemes x n_phonemes
    std::vector<std::string> labels;

    std::uint32_t hop() const noexcept;
    /// DFT bin (multiple of frame_rate_hz) of the tone for state `s`.
    std::uint32_t state_bin(std::uint32_t s) const noexcept { return 4 + s; }
    /// DFT bin of the tone carrying emission dimension `d`.
    std::uint32_t detail_bin(std::uint32_t d) const noexcept { return 8 + spec.n_phonemes + d; }
};

inline constexpr double kToneAmplitude = 0.5;
inline constexpr double kDetailAmplitude = 0.01;

/// Draws means (rejection until min pairwise distance >= 8 sigma) and labels.
SynthModel build_synth_model(const SynthSpec& spec);

struct SynthCorpus {
    std::vector<FeatureMatrix> features;
    std::vector<AlignmentTrack> alignments;
    std::vector<Waveform> waveforms;                  // empty when audio was not requested
    std::vector<std::vector<std::uint32_t>> states;   // per-frame emitting state
};

/// Utterance i is generated from derive_seed(spec.seed, first_index + i) and
/// is identical regardless of thread count or of how the corpus is split.
SynthCorpus generate_corpus(const SynthModel& model, std::uint32_t n_utts,
                            std::uint32_t frames_per_utt, bool with_audio = true,
                            std::uint32_t first_index = 0);

inline SynthCorpus generate_corpus(const SynthSpec& spec, std::uint32_t n_utts,
                                   std::uint32_t frames_per_utt, bool with_audio = true) {
    return generate_corpus(build_synth_model(spec), n_utts, frames_per_utt, with_audio);
}

/// Inverse of the waveform layout: per frame, state weights from tone power
/// and emission offsets from the detail tones.
FeatureMatrix features_from_waveform(const Waveform& w, const SynthModel& model,
                                     std::string utt_id = {});

/// Frame-weighted purity: sum over units of the frame count of the unit's
/// most frequent state, over the total frame count. Frame states are read
/// from the alignment at each frame's midpoint.
double state_purity_oracle(std::span<const AlignmentTrack> alignments,
                           std::span<const UnitSequence> unit_seqs);

// SynthModel persistence (JSON) so later stages can decode synthetic audio.
std::string synth_model_to_json(const SynthModel& m);
SynthModel synth_model_from_json(std::string_view json);

}  // namespace dsu
