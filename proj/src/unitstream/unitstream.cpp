#include "dsu/unitstream.hpp"

#include <cmath>
#include <sstream>

#include "dsu/error.hpp"

namespace dsu {

void VocabMap::validate() const {
    if (bos >= base_size || eos >= base_size || pad >= base_size) {
        throw Error(ErrorCode::InvalidConfig, "special token ids must be below base_size");
    }
    if (bos == eos || bos == pad || eos == pad) {
        throw Error(ErrorCode::InvalidConfig, "special token ids must be distinct");
    }
}

std::vector<Token> to_tokens(const UnitSequence& s, const VocabMap& v, bool add_bos_eos) {
    std::vector<Token> out;
    out.reserve(s.units.size() + 2);
    if (add_bos_eos) {
        out.push_back(v.bos);
    }
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        const Unit u = s.units[i];
        if (u >= v.k) {
            throw Error(ErrorCode::UnitOutOfRange, s.utt_id + ": unit " + std::to_string(u) +
                                                       " at position " + std::to_string(i) +
                                                       " >= k=" + std::to_string(v.k));
        }
        out.push_back(v.base_size + u);
    }
    if (add_bos_eos) {
        out.push_back(v.eos);
    }
    return out;
}

UnitSequence from_tokens(std::span<const Token> tokens, const VocabMap& v, std::string utt_id,
                         float frame_rate_hz) {
    UnitSequence s{std::move(utt_id), frame_rate_hz, {}};
    s.units.reserve(tokens.size());
    for (const Token t : tokens) {
        if (t == v.bos || t == v.eos || t == v.pad) {
            continue;
        }
        if (t < v.base_size || t >= v.vocab_size()) {
            throw Error(ErrorCode::TokenOutOfRange,
                        "token " + std::to_string(t) + " is not a unit token");
        }
        s.units.push_back(t - v.base_size);
    }
    return s;
}

UnitSequence dedup(const UnitSequence& s) {
    UnitSequence out{s.utt_id, s.frame_rate_hz, {}};
    for (const Unit u : s.units) {
        if (out.units.empty() || out.units.back() != u) {
            out.units.push_back(u);
        }
    }
    return out;
}

UnitDistribution& UnitDistribution::operator+=(const UnitDistribution& other) {
    if (other.k != k) {
        throw Error(ErrorCode::ShapeMismatch, "cannot merge histograms with different k");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        counts[i] += other.counts[i];
    }
    total += other.total;
    return *this;
}

UnitDistribution unit_histogram(std::span<const UnitSequence> corpus, std::uint32_t k) {
    UnitDistribution d{k, std::vector<std::uint64_t>(k, 0), 0};
    for (const auto& s : corpus) {
        for (const Unit u : s.units) {
            if (u >= k) {
                throw Error(ErrorCode::UnitOutOfRange, s.utt_id + ": unit " + std::to_string(u) +
                                                           " >= k=" + std::to_string(k));
            }
            ++d.counts[u];
        }
        d.total += s.units.size();
    }
    return d;
}

ClusterPerplexity cluster_perplexity(const UnitDistribution& d) {
    if (d.total == 0 || d.k == 0) {
        throw Error(ErrorCode::EmptyDistribution, "no unit occurrences to measure");
    }
    const double total = static_cast<double>(d.total);
    double entropy = 0.0;
    for (const auto c : d.counts) {
        if (c == 0) {
            continue;
        }
        const double p = static_cast<double>(c) / total;
        entropy -= p * std::log(p);
    }
    const double h = std::exp(entropy);
    return {h, h / static_cast<double>(d.k) * 100.0};
}

std::string histogram_csv(const UnitDistribution& d) {
    std::ostringstream out;
    out << "unit_id,count\n";
    for (std::size_t u = 0; u < d.counts.size(); ++u) {
        out << u << ',' << d.counts[u] << '\n';
    }
    return out.str();
}

}  // namespace dsu
