#include <cmath>

#include "dsu/rng.hpp"
#include "dsu/unitlm.hpp"
#include "helpers.hpp"

using namespace dsu;

namespace {

std::vector<TokenStream> random_streams(std::uint32_t v, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenStream> out(n);
    for (auto& s : out) {
        const auto len = 2 + rng.below(30);
        for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<Token>(rng.below(v)));
    }
    return out;
}

}  // namespace

TEST_CASE("unigram add-one arithmetic") {
    const std::vector<TokenStream> corpus{{0, 0, 1}};
    const auto m = train_ngram(corpus, 1, 2, 1.0);
    CHECK(m.prob({}, 0) == doctest::Approx(3.0 / 5.0).epsilon(1e-15));
    CHECK(m.prob({}, 1) == doctest::Approx(2.0 / 5.0).epsilon(1e-15));

    // Held-out [0, 1, 0]: the first token is context, the other two are scored.
    const std::vector<TokenStream> held{{0, 1, 0}};
    const auto rep = eval_nll(m, held);
    CHECK(rep.token_count == 2);
    const double want = (-std::log(2.0 / 5.0) - std::log(3.0 / 5.0)) / 2.0;
    CHECK(rep.mean_nll == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("bigram with vanishing smoothing is deterministic on a b a b") {
    const std::vector<TokenStream> corpus{{0, 1, 0, 1}};
    const auto m = train_ngram(corpus, 2, 2, 1e-12);
    CHECK(m.prob(std::vector<Token>{0}, 1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(m.prob(std::vector<Token>{1}, 0) == doctest::Approx(1.0).epsilon(1e-9));
    // A near-certain model scores ~0 nats per token.
    const std::vector<TokenStream> held{{0, 1, 0, 1, 0, 1}};
    CHECK(eval_nll(m, held).mean_nll < 1e-9);
}

TEST_CASE("conditionals sum to one for random contexts") {
    const auto streams = random_streams(7, 40, 1);
    for (std::uint32_t order : {1u, 2u, 3u, 4u}) {
        const auto m = train_ngram(streams, order, 7, 0.3);
        Rng rng(order);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<Token> ctx;
            const auto len = rng.below(order);
            for (std::size_t i = 0; i < len; ++i) ctx.push_back(static_cast<Token>(rng.below(7)));
            double total = 0.0;
            for (Token x = 0; x < 7; ++x) total += m.prob(ctx, x);
            CHECK(std::abs(total - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("counts are exact") {
    const std::vector<TokenStream> corpus{{2, 0, 2, 0, 1}};
    const auto m = train_ngram(corpus, 2, 3, 1.0);
    const auto& t1 = m.tables()[1];
    CHECK(t1.at({2}).total == 2);
    CHECK(t1.at({2}).next.at(0) == 2);
    CHECK(t1.at({0}).next.at(2) == 1);
    CHECK(t1.at({0}).next.at(1) == 1);
    // Each position is counted once, in the table of its history length.
    CHECK(m.tables()[0].at({}).total == 1);
    CHECK(t1.count({1}) == 0);
    // p(0 | 2) = (2 + 1) / (2 + 3)
    CHECK(m.prob(std::vector<Token>{2}, 0) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("uniform model scores ln V") {
    for (std::uint32_t v : {125u, 500u, 5000u}) {
        const auto streams = random_streams(v, 20, v);
        const auto rep = eval_nll(UniformModel(v), streams);
        CHECK(std::abs(rep.mean_nll - std::log(static_cast<double>(v))) <= 1e-9);
    }
}

TEST_CASE("report merge is the token-weighted mean") {
    const auto streams = random_streams(9, 30, 3);
    const auto m = train_ngram(streams, 3, 9, 0.5);
    const auto a = eval_nll(m, std::span(streams).first(11));
    const auto b = eval_nll(m, std::span(streams).subspan(11));
    const auto whole = eval_nll(m, streams);
    const auto merged = NLLReport::merge(a, b);
    CHECK(merged.token_count == whole.token_count);
    CHECK(merged.mean_nll == doctest::Approx(whole.mean_nll).epsilon(1e-12));
    CHECK(merged.mean_nll == doctest::Approx((a.mean_nll * a.token_count + b.mean_nll * b.token_count) /
                                             (a.token_count + b.token_count))
                                 .epsilon(1e-12));
    CHECK(merged.per_utterance.size() == streams.size());
    double sum = 0.0;
    std::uint64_t n = 0;
    for (const auto& u : whole.per_utterance) {
        CHECK(u.sum_nll >= 0.0);
        sum += u.sum_nll;
        n += u.tokens;
    }
    CHECK(whole.mean_nll == doctest::Approx(sum / n).epsilon(1e-12));
}

TEST_CASE("eval errors") {
    const auto m = train_ngram(random_streams(4, 3, 1), 2, 4, 1.0);
    const std::vector<TokenStream> bad{{0, 4}};
    CHECK_THROWS_CODE(eval_nll(m, bad), ErrorCode::TokenOutOfRange);
    const std::vector<TokenStream> single{{0}, {}};
    CHECK_THROWS_CODE(eval_nll(m, single), ErrorCode::EmptyEval);
    const std::vector<TokenStream> two{{0, 1}, {1, 2}};
    const std::vector<std::string> one_id{"a"};
    CHECK_THROWS_CODE(eval_nll(m, two, one_id), ErrorCode::LengthMismatch);
    CHECK_THROWS_CODE(train_ngram(std::vector<TokenStream>{}, 2, 4, 1.0), ErrorCode::EmptyCorpus);
    CHECK_THROWS(train_ngram(two, 0, 4, 1.0));
    CHECK_THROWS(train_ngram(two, 2, 4, 0.0));
}

TEST_CASE("eval labels utterances in order") {
    const std::vector<TokenStream> s{{0, 1, 2}, {1, 1}};
    const std::vector<std::string> ids{"first", "second"};
    const auto rep = eval_nll(UniformModel(3), s, ids);
    REQUIRE(rep.per_utterance.size() == 2);
    CHECK(rep.per_utterance[0].utt_id == "first");
    CHECK(rep.per_utterance[0].tokens == 2);
    CHECK(rep.per_utterance[1].tokens == 1);
}

TEST_CASE("n-gram file round-trip") {
    const auto m = train_ngram(random_streams(11, 25, 8), 3, 11, 0.25);
    CHECK(parse_ngram_bytes(serialize_ngram(m)) == m);
    testutil::TempDir dir("ngram");
    save_ngram(dir / "m.ngr", m);
    CHECK(load_ngram(dir / "m.ngr") == m);
    auto bytes = serialize_ngram(m);
    bytes[0] = 'X';
    CHECK_THROWS_CODE(parse_ngram_bytes(bytes), ErrorCode::BadMagic);
    bytes = serialize_ngram(m);
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_CODE(parse_ngram_bytes(bytes), ErrorCode::TruncatedFile);
}

TEST_CASE("tokenize_corpus wraps each utterance in BOS/EOS") {
    UnitSequence s;
    s.units = {0, 4};
    VocabMap v;
    v.k = 5;
    const auto t = tokenize_corpus(std::span(&s, 1), v);
    CHECK(t[0] == TokenStream{v.bos, 3, 7, v.eos});
}
