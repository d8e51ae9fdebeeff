#pragma once

// Autoregressive models over the unit vocabulary and their per-token
// negative log-likelihood, L = -sum_t log p(x_t | x_<t), reported in nats.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsu/unitstream.hpp"

namespace dsu {

using TokenStream = std::vector<Token>;

/// Scores token streams. The first token of a stream (normally BOS) is
/// conditioning context and is never scored.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual std::uint32_t vocab_size() const = 0;
    /// -log p(x_t | x_<t) for t = 1 .. seq.size() - 1.
    virtual std::vector<double> token_nll(std::span<const Token> seq) const = 0;
};

/// p(x) = 1 / V for every token.
class UniformModel final : public LanguageModel {
public:
    explicit UniformModel(std::uint32_t vocab) : vocab_(vocab) {}
    std::uint32_t vocab_size() const override { return vocab_; }
    std::vector<double> token_nll(std::span<const Token> seq) const override;

private:
    std::uint32_t vocab_;
};

/// Add-alpha smoothed n-gram model. Contexts shorter than order - 1 (at the
/// start of a stream) use the counts table of their own length:
///   p(x | ctx) = (c(ctx, x) + alpha) / (c(ctx) + alpha * V)
class NGramModel final : public LanguageModel {
public:
    struct ContextCounts {
        std::uint64_t total = 0;
        std::map<Token, std::uint64_t> next;
        bool operator==(const ContextCounts&) const = default;
    };
    using Table = std::map<std::vector<Token>, ContextCounts>;

    NGramModel(std::uint32_t order, std::uint32_t vocab, double alpha);

    std::uint32_t order() const noexcept { return order_; }
    double alpha() const noexcept { return alpha_; }
    std::uint32_t vocab_size() const override { return vocab_; }

    /// Counts every position of the stream with its available history.
    void add_stream(std::span<const Token> stream);
    /// Adds `count` observations of `next` after `context` (length < order).
    void add_count(std::span<const Token> context, Token next, std::uint64_t count);

    double prob(std::span<const Token> context, Token next) const;
    std::vector<double> token_nll(std::span<const Token> seq) const override;

    /// Counts tables indexed by context length 0 .. order - 1.
    const std::vector<Table>& tables() const noexcept { return tables_; }

    bool operator==(const NGramModel& o) const {
        return order_ == o.order_ && vocab_ == o.vocab_ && alpha_ == o.alpha_ && tables_ == o.tables_;
    }

private:
    std::uint32_t order_;
    std::uint32_t vocab_;
    double alpha_;
    std::vector<Table> tables_;
};

NGramModel train_ngram(std::span<const TokenStream> streams, std::uint32_t order, std::uint32_t vocab,
                       double alpha);

std::vector<std::uint8_t> serialize_ngram(const NGramModel& m);
NGramModel parse_ngram_bytes(std::span<const std::uint8_t> bytes);
void save_ngram(const std::filesystem::path& path, const NGramModel& m);
NGramModel load_ngram(const std::filesystem::path& path);

struct UtteranceNLL {
    std::string utt_id;
    double sum_nll = 0.0;
    std::uint64_t tokens = 0;

    double mean() const noexcept { return tokens ? sum_nll / static_cast<double>(tokens) : 0.0; }
};

struct NLLReport {
    double mean_nll = 0.0;  // nats per scored token
    std::uint64_t token_count = 0;
    std::vector<UtteranceNLL> per_utterance;

    /// Concatenation; the result's mean is the token-weighted mean of the parts.
    static NLLReport merge(const NLLReport& a, const NLLReport& b);
};

/// Evaluates every stream; `ids`, when given, labels the per-utterance entries.
NLLReport eval_nll(const LanguageModel& model, std::span<const TokenStream> streams,
                   std::span<const std::string> ids = {});

/// Tokenizes unit sequences as [BOS, units..., EOS].
std::vector<TokenStream> tokenize_corpus(std::span<const UnitSequence> corpus, const VocabMap& v);

}  // namespace dsu
