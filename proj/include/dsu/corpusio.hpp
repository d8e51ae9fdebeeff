#pragma once

// On-disk artifacts: binary feature files (.fea), 16-bit PCM WAV, Praat
// TextGrid / CSV phoneme alignments, unit-stream files (.units) and
// tab-separated dataset manifests.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsu/unitstream.hpp"

namespace dsu {

namespace fs = std::filesystem;

/// Frame-level continuous features, T x dim, row-major. Frame i covers
/// [i / frame_rate_hz, (i + 1) / frame_rate_hz).
struct FeatureMatrix {
    std::string utt_id;
    float frame_rate_hz = 50.0f;
    std::uint32_t dim = 0;
    std::vector<float> frames;

    std::size_t n_frames() const noexcept { return dim == 0 ? 0 : frames.size() / dim; }
    std::span<const float> row(std::size_t i) const noexcept {
        return {frames.data() + i * dim, dim};
    }
    std::span<float> row(std::size_t i) noexcept { return {frames.data() + i * dim, dim}; }

    bool operator==(const FeatureMatrix&) const = default;
};

/// Throws NonFiniteValue / DimMismatch if `m` violates the FeatureMatrix invariants.
void validate(const FeatureMatrix& m);

inline constexpr std::size_t kFeatureHeaderBytes = 24;

FeatureMatrix read_feature_file(const fs::path& path);
void write_feature_file(const fs::path& path, const FeatureMatrix& m);

/// Parses .fea bytes; `utt_id` is not stored in the file and is left empty.
FeatureMatrix parse_feature_bytes(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_feature(const FeatureMatrix& m);

struct Waveform {
    std::uint32_t sample_rate_hz = 16000;
    std::vector<float> samples;

    double duration_s() const noexcept {
        return static_cast<double>(samples.size()) / sample_rate_hz;
    }
};

/// RIFF/WAVE, 16-bit PCM, mono only. Samples are scaled by 1/32768.
Waveform read_wav(const fs::path& path);
/// Clamps to [-1, 1] and rounds to the nearest 16-bit level.
void write_wav(const fs::path& path, const Waveform& w);

Waveform parse_wav_bytes(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_wav(const Waveform& w);

struct Interval {
    double start_s = 0.0;
    double end_s = 0.0;
    std::string label;

    bool operator==(const Interval&) const = default;
};

struct AlignmentTrack {
    std::string utt_id;
    std::vector<Interval> intervals;
};

/// Sorted, non-overlapping, start < end, labels non-empty.
void validate(const AlignmentTrack& a);

/// Long-form Praat TextGrid. Intervals with empty text are dropped (silence
/// gaps); explicit labels such as "sil" are kept.
AlignmentTrack parse_textgrid(std::string_view text, std::string_view tier_name);

/// Alignment CSV with header `utt_id,start_s,end_s,phoneme`. Returns one
/// track per distinct utt_id, in order of first appearance.
std::vector<AlignmentTrack> parse_alignment_csv(std::string_view text);
std::string format_alignment_csv(std::span<const AlignmentTrack> tracks);

/// Loads a .TextGrid (tier "phones" unless given) or .csv alignment by extension.
/// For CSV files the track for `utt_id` is returned (or the single track).
AlignmentTrack load_alignment(const fs::path& path, std::string_view utt_id,
                              std::string_view tier_name = "phones");

struct ManifestEntry {
    std::string utt_id;
    std::string feature_path;
    std::optional<std::string> wav_path;
    std::optional<std::string> alignment_path;
    std::string split;
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    /// Entries whose split tag equals `split`, in file order.
    std::vector<ManifestEntry> split(std::string_view split) const;
};

/// Relative paths inside a manifest are resolved against the manifest's directory.
Manifest load_manifest(const fs::path& path);
Manifest parse_manifest(std::string_view text, const fs::path& base_dir = {});
std::string format_manifest(const Manifest& m);
void write_manifest(const fs::path& path, const Manifest& m);

// Unit streams: one utterance per line, `utt_id|u1 u2 u3 ...`.
std::vector<UnitSequence> parse_units(std::string_view text, float frame_rate_hz = 50.0f);
std::string format_units(std::span<const UnitSequence> seqs);
std::vector<UnitSequence> read_units_file(const fs::path& path, float frame_rate_hz = 50.0f);
void write_units_file(const fs::path& path, std::span<const UnitSequence> seqs);

// Small file helpers shared by the binary formats.
std::vector<std::uint8_t> read_file_bytes(const fs::path& path);
std::string read_text_file(const fs::path& path);
void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const fs::path& path, std::string_view text);

}  // namespace dsu
