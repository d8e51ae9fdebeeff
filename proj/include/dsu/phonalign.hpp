#pragma once

// Temporal overlap between discrete units and forced-aligned phonemes, the
// P(phoneme | unit) matrix built from it, purity scores and heatmap export.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsu/corpusio.hpp"
#include "dsu/unitstream.hpp"

namespace dsu {

/// Column absorbing frame time that no alignment interval covers.
inline constexpr std::string_view kUnalignedLabel = "<unaligned>";

/// Seconds of overlap per (unit, phoneme label), k x labels.size() row-major.
struct OverlapTable {
    std::uint32_t k = 0;
    std::vector<std::string> labels;
    std::vector<double> mass;

    explicit OverlapTable(std::uint32_t k_ = 0) : k(k_) {}

    std::size_t n_labels() const noexcept { return labels.size(); }
    double at(Unit u, std::size_t col) const { return mass[u * labels.size() + col]; }
    /// Column index for `label`, appending a new column if needed.
    std::size_t column(std::string_view label);
    double unit_mass(Unit u) const;
    double total() const;

    /// Elementwise merge matched by label; columns new to *this are appended.
    OverlapTable& operator+=(const OverlapTable& other);
};

/// Adds the overlap of every frame of `s` with every interval of `a`.
/// Frames straddling a boundary split their duration proportionally.
void accumulate_overlap(OverlapTable& table, const UnitSequence& s, const AlignmentTrack& a);

OverlapTable accumulate_overlap(const UnitSequence& s, const AlignmentTrack& a, std::uint32_t k);

/// Per-utterance accumulation merged in utterance order.
OverlapTable accumulate_corpus(std::span<const UnitSequence> seqs,
                               std::span<const AlignmentTrack> tracks, std::uint32_t k);

/// Row-stochastic P(phoneme | unit); rows with zero support are absent.
struct PhonemeUnitMatrix {
    std::uint32_t k = 0;
    std::vector<std::string> labels;
    std::vector<double> prob;     // k x labels.size()
    std::vector<double> support;  // seconds of audio per unit

    bool present(Unit u) const { return support[u] > 0.0; }
    double at(Unit u, std::size_t col) const { return prob[u * labels.size() + col]; }
};

PhonemeUnitMatrix build_confusion(const OverlapTable& t);

/// Mass-weighted mean over units of each row's largest probability.
double purity(const PhonemeUnitMatrix& m, const OverlapTable& t);

/// `unit_id,phoneme,probability,support_seconds`, every unit x label.
std::string confusion_csv(const PhonemeUnitMatrix& m);
PhonemeUnitMatrix parse_confusion_csv(std::string_view text);

struct Heatmap {
    std::string svg;
    std::string csv;
    /// Present units, grouped by dominant phoneme then by descending peak probability.
    std::vector<Unit> unit_order;
};

/// Rows are phonemes, columns are units; darker cells mean higher probability.
Heatmap render_heatmap(const PhonemeUnitMatrix& m);

}  // namespace dsu
