#pragma once

// Discrete unit sequences, their mapping into an expanded token vocabulary,
// and corpus-level unit statistics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dsu {

using Unit = std::uint32_t;
using Token = std::uint32_t;

struct UnitSequence {
    std::string utt_id;
    float frame_rate_hz = 50.0f;
    std::vector<Unit> units;

    bool operator==(const UnitSequence&) const = default;
};

/// Unit u maps to token base_size + u. Special ids live below base_size.
struct VocabMap {
    std::uint32_t base_size = 3;
    std::uint32_t k = 0;
    Token bos = 0;
    Token eos = 1;
    Token pad = 2;

    std::uint32_t vocab_size() const noexcept { return base_size + k; }
    void validate() const;
};

std::vector<Token> to_tokens(const UnitSequence& s, const VocabMap& v, bool add_bos_eos);

/// Inverse of to_tokens; BOS/EOS/PAD are skipped, other base tokens rejected.
UnitSequence from_tokens(std::span<const Token> tokens, const VocabMap& v,
                         std::string utt_id = {}, float frame_rate_hz = 50.0f);

/// Collapses adjacent repeats. Off by default everywhere in the toolkit.
UnitSequence dedup(const UnitSequence& s);

struct UnitDistribution {
    std::uint32_t k = 0;
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    UnitDistribution& operator+=(const UnitDistribution& other);
    bool operator==(const UnitDistribution&) const = default;
};

UnitDistribution unit_histogram(std::span<const UnitSequence> corpus, std::uint32_t k);

struct ClusterPerplexity {
    double perplexity = 0.0;       // exp(entropy in nats)
    double utilization_pct = 0.0;  // perplexity / k * 100
};

/// Perplexity of the empirical unit distribution. Zero-count clusters
/// contribute nothing to the entropy. Throws EmptyDistribution if total == 0.
ClusterPerplexity cluster_perplexity(const UnitDistribution& d);

/// `unit_id,count` rows, one per unit.
std::string histogram_csv(const UnitDistribution& d);

}  // namespace dsu
