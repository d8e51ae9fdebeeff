#include <cmath>
#include <cstring>

#include "dsu/binio.hpp"
#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "dsu/unitlm.hpp"

namespace dsu {

namespace {
constexpr char kNGramMagic[4] = {'N', 'G', 'R', '1'};
}

std::vector<double> UniformModel::token_nll(std::span<const Token> seq) const {
    const double nll = std::log(static_cast<double>(vocab_));
    for (const Token t : seq) {
        if (t >= vocab_) {
            throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(t) + " >= V");
        }
    }
    return std::vector<double>(seq.empty() ? 0 : seq.size() - 1, nll);
}

NGramModel::NGramModel(std::uint32_t order, std::uint32_t vocab, double alpha)
    : order_(order), vocab_(vocab), alpha_(alpha), tables_(order) {
    if (order == 0) {
        throw Error(ErrorCode::InvalidConfig, "n-gram order must be >= 1");
    }
    if (vocab == 0) {
        throw Error(ErrorCode::InvalidConfig, "vocabulary must be non-empty");
    }
    if (!(alpha > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "smoothing alpha must be > 0");
    }
}

void NGramModel::add_stream(std::span<const Token> stream) {
    for (std::size_t t = 0; t < stream.size(); ++t) {
        if (stream[t] >= vocab_) {
            throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(stream[t]) +
                                                        " >= V=" + std::to_string(vocab_));
        }
        const std::size_t len = std::min<std::size_t>(order_ - 1, t);
        std::vector<Token> ctx(stream.begin() + static_cast<std::ptrdiff_t>(t - len),
                               stream.begin() + static_cast<std::ptrdiff_t>(t));
        auto& counts = tables_[len][std::move(ctx)];
        ++counts.total;
        ++counts.next[stream[t]];
    }
}

void NGramModel::add_count(std::span<const Token> context, Token next, std::uint64_t count) {
    if (context.size() >= order_) {
        throw Error(ErrorCode::MalformedRecord, "n-gram context longer than order - 1");
    }
    if (next >= vocab_) {
        throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(next) + " >= V");
    }
    auto& counts = tables_[context.size()][std::vector<Token>(context.begin(), context.end())];
    counts.total += count;
    counts.next[next] += count;
}

double NGramModel::prob(std::span<const Token> context, Token next) const {
    const std::size_t len = std::min<std::size_t>(order_ - 1, context.size());
    const std::vector<Token> ctx(context.end() - static_cast<std::ptrdiff_t>(len), context.end());
    const auto& table = tables_[len];
    const auto it = table.find(ctx);
    double c_ctx = 0.0;
    double c_next = 0.0;
    if (it != table.end()) {
        c_ctx = static_cast<double>(it->second.total);
        const auto jt = it->second.next.find(next);
        if (jt != it->second.next.end()) {
            c_next = static_cast<double>(jt->second);
        }
    }
    return (c_next + alpha_) / (c_ctx + alpha_ * vocab_);
}

std::vector<double> NGramModel::token_nll(std::span<const Token> seq) const {
    std::vector<double> out;
    if (seq.empty()) {
        return out;
    }
    if (seq[0] >= vocab_) {
        throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(seq[0]) + " >= V");
    }
    out.reserve(seq.size() - 1);
    for (std::size_t t = 1; t < seq.size(); ++t) {
        if (seq[t] >= vocab_) {
            throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(seq[t]) + " >= V");
        }
        out.push_back(-std::log(prob(seq.first(t), seq[t])));
    }
    return out;
}

NGramModel train_ngram(std::span<const TokenStream> streams, std::uint32_t order, std::uint32_t vocab,
                       double alpha) {
    std::size_t total = 0;
    for (const auto& s : streams) {
        total += s.size();
    }
    if (total == 0) {
        throw Error(ErrorCode::EmptyCorpus, "n-gram training corpus has no tokens");
    }
    NGramModel m(order, vocab, alpha);
    for (const auto& s : streams) {
        m.add_stream(s);
    }
    return m;
}

std::vector<std::uint8_t> serialize_ngram(const NGramModel& m) {
    binio::Writer w;
    w.put_bytes({kNGramMagic, 4});
    w.put(m.order());
    w.put(m.vocab_size());
    w.put(m.alpha());
    std::uint64_t entries = 0;
    for (const auto& table : m.tables()) {
        for (const auto& [ctx, counts] : table) {
            entries += counts.next.size();
        }
    }
    w.put(entries);
    for (const auto& table : m.tables()) {
        for (const auto& [ctx, counts] : table) {
            for (const auto& [next, c] : counts.next) {
                w.put(static_cast<std::uint32_t>(ctx.size()));
                for (const Token t : ctx) {
                    w.put(t);
                }
                w.put(next);
                w.put(c);
            }
        }
    }
    return std::move(w.bytes());
}

NGramModel parse_ngram_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kNGramMagic, 4) != 0) {
        throw Error(ErrorCode::BadMagic, "n-gram file does not start with NGR1");
    }
    binio::Reader r(bytes.subspan(4));
    const auto order = r.get<std::uint32_t>();
    const auto vocab = r.get<std::uint32_t>();
    const auto alpha = r.get<double>();
    NGramModel m(order, vocab, alpha);
    const auto entries = r.get<std::uint64_t>();
    for (std::uint64_t e = 0; e < entries; ++e) {
        const auto len = r.get<std::uint32_t>();
        if (len >= order) {
            throw Error(ErrorCode::MalformedRecord, "n-gram context longer than order - 1");
        }
        std::vector<Token> ctx(len);
        for (auto& t : ctx) {
            t = r.get<Token>();
        }
        const auto next = r.get<Token>();
        const auto c = r.get<std::uint64_t>();
        m.add_count(ctx, next, c);
    }
    if (r.remaining() != 0) {
        throw Error(ErrorCode::MalformedRecord, "trailing bytes in n-gram file");
    }
    return m;
}

void save_ngram(const std::filesystem::path& path, const NGramModel& m) {
    write_file_bytes(path, serialize_ngram(m));
}

NGramModel load_ngram(const std::filesystem::path& path) {
    return parse_ngram_bytes(read_file_bytes(path));
}

}  // namespace dsu
