#include <exception>

#include "dsu/error.hpp"
#include "dsu/unitlm.hpp"

namespace dsu {

NLLReport NLLReport::merge(const NLLReport& a, const NLLReport& b) {
    NLLReport out;
    out.per_utterance = a.per_utterance;
    out.per_utterance.insert(out.per_utterance.end(), b.per_utterance.begin(), b.per_utterance.end());
    out.token_count = a.token_count + b.token_count;
    const double sum = a.mean_nll * static_cast<double>(a.token_count) +
                       b.mean_nll * static_cast<double>(b.token_count);
    out.mean_nll = out.token_count ? sum / static_cast<double>(out.token_count) : 0.0;
    return out;
}

NLLReport eval_nll(const LanguageModel& model, std::span<const TokenStream> streams,
                   std::span<const std::string> ids) {
    if (!ids.empty() && ids.size() != streams.size()) {
        throw Error(ErrorCode::LengthMismatch, "one id per evaluated stream is required");
    }
    const auto n = static_cast<std::int64_t>(streams.size());
    NLLReport report;
    report.per_utterance.resize(streams.size());
    std::vector<std::exception_ptr> errors(streams.size());

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            const auto nll = model.token_nll(streams[i]);
            double sum = 0.0;
            for (const double v : nll) {
                sum += v;
            }
            auto& u = report.per_utterance[i];
            u.utt_id = ids.empty() ? std::to_string(i) : ids[i];
            u.sum_nll = sum;
            u.tokens = nll.size();
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }

    double sum = 0.0;
    for (const auto& u : report.per_utterance) {
        sum += u.sum_nll;
        report.token_count += u.tokens;
    }
    if (report.token_count == 0) {
        throw Error(ErrorCode::EmptyEval, "evaluation set has no scored tokens");
    }
    report.mean_nll = sum / static_cast<double>(report.token_count);
    return report;
}

std::vector<TokenStream> tokenize_corpus(std::span<const UnitSequence> corpus, const VocabMap& v) {
    std::vector<TokenStream> out;
    out.reserve(corpus.size());
    for (const auto& seq : corpus) {
        out.push_back(to_tokens(seq, v, true));
    }
    return out;
}

}  // namespace dsu
