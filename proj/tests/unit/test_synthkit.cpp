#include <cmath>
#include <set>

#include "dsu/kernels.hpp"
#include "dsu/rng.hpp"
#include "dsu/synthkit.hpp"
#include "helpers.hpp"

using namespace dsu;

namespace {

SynthSpec small_spec(std::uint64_t seed = 42) {
    SynthSpec s;
    s.n_phonemes = 8;
    s.dim = 4;
    s.emission_sigma = 0.1;
    s.seed = seed;
    return s;
}

UnitSequence as_units(const std::vector<std::uint32_t>& states, const std::string& id) {
    UnitSequence u;
    u.utt_id = id;
    u.units.assign(states.begin(), states.end());
    return u;
}

}  // namespace

TEST_CASE("single-state chain gives one interval per utterance") {
    SynthSpec s = small_spec();
    s.n_phonemes = 1;
    const auto c = generate_corpus(s, 5, 37, false);
    for (const auto& a : c.alignments) {
        REQUIRE(a.intervals.size() == 1);
        CHECK(a.intervals[0].start_s == 0.0);
        CHECK(a.intervals[0].end_s == doctest::Approx(37 / 50.0).epsilon(1e-12));
    }
}

TEST_CASE("zero emission noise reproduces the state means") {
    SynthSpec s = small_spec();
    s.emission_sigma = 0.0;
    const auto model = build_synth_model(s);
    const auto c = generate_corpus(model, 3, 40, false);
    for (std::size_t u = 0; u < 3; ++u) {
        for (std::size_t t = 0; t < 40; ++t) {
            const auto st = c.states[u][t];
            for (std::uint32_t d = 0; d < s.dim; ++d) {
                CHECK(c.features[u].frames[t * s.dim + d] == static_cast<float>(model.means[st * s.dim + d]));
            }
        }
    }
}

TEST_CASE("alignments tile each utterance and record the emitting state") {
    const auto model = build_synth_model(small_spec());
    const auto c = generate_corpus(model, 10, 120, false);
    for (std::size_t u = 0; u < c.alignments.size(); ++u) {
        const auto& iv = c.alignments[u].intervals;
        REQUIRE_FALSE(iv.empty());
        CHECK(iv.front().start_s == 0.0);
        CHECK(iv.back().end_s == doctest::Approx(120 / 50.0).epsilon(1e-12));
        for (std::size_t i = 1; i < iv.size(); ++i) {
            CHECK(iv[i].start_s == iv[i - 1].end_s);
        }
        for (std::size_t t = 0; t < 120; ++t) {
            const double mid = (t + 0.5) / 50.0;
            for (const auto& x : iv) {
                if (x.start_s <= mid && mid < x.end_s) {
                    CHECK(x.label == model.labels[c.states[u][t]]);
                }
            }
        }
    }
}

TEST_CASE("means are at least 8 sigma apart") {
    const auto model = build_synth_model(small_spec());
    const auto& s = model.spec;
    for (std::uint32_t a = 0; a < s.n_phonemes; ++a) {
        for (std::uint32_t b = a + 1; b < s.n_phonemes; ++b) {
            double d = 0.0;
            for (std::uint32_t j = 0; j < s.dim; ++j) {
                const double x = model.means[a * s.dim + j] - model.means[b * s.dim + j];
                d += x * x;
            }
            CHECK(std::sqrt(d) >= 8.0 * s.emission_sigma);
        }
    }
}

TEST_CASE("mean dwell matches the geometric parameter") {
    SynthSpec s = small_spec();
    s.mean_dwell_frames = 5.0;
    const auto c = generate_corpus(s, 200, 200, false);
    std::size_t changes = 0, steps = 0;
    for (const auto& st : c.states) {
        for (std::size_t t = 1; t < st.size(); ++t) {
            changes += st[t] != st[t - 1];
            ++steps;
        }
    }
    // The default jump matrix never self-loops, so a leave event always changes state.
    CHECK(static_cast<double>(changes) / steps == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("same seed gives bit-identical corpora, any thread count or split") {
    const auto model = build_synth_model(small_spec(7));
    kernels::set_threads(1);
    const auto a = generate_corpus(model, 12, 50, true);
    kernels::set_threads(4);
    const auto b = generate_corpus(model, 12, 50, true);
    kernels::set_threads(1);
    const auto tail = generate_corpus(model, 4, 50, true, 8);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(a.features[i] == b.features[i]);
        CHECK(a.waveforms[i].samples == b.waveforms[i].samples);
        CHECK(a.alignments[i].intervals == b.alignments[i].intervals);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(tail.features[i] == a.features[8 + i]);
    }
    const auto other = generate_corpus(build_synth_model(small_spec(8)), 1, 50, false);
    CHECK_FALSE(other.features[0] == a.features[0]);
}

TEST_CASE("waveform decodes back to the generated features") {
    const auto model = build_synth_model(small_spec());
    const auto c = generate_corpus(model, 3, 30, true);
    for (std::size_t u = 0; u < 3; ++u) {
        CHECK(c.waveforms[u].samples.size() == 30u * model.hop());
        const auto f = features_from_waveform(c.waveforms[u], model);
        REQUIRE(f.frames.size() == c.features[u].frames.size());
        double worst = 0.0;
        for (std::size_t i = 0; i < f.frames.size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(f.frames[i]) - c.features[u].frames[i]));
        }
        // Residual error comes from float32 sample storage only.
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("state tones have distinct frequencies") {
    const auto model = build_synth_model(small_spec());
    std::set<std::uint32_t> bins;
    for (std::uint32_t s = 0; s < model.spec.n_phonemes; ++s) {
        bins.insert(model.state_bin(s));
    }
    for (std::uint32_t d = 0; d < model.spec.dim; ++d) {
        bins.insert(model.detail_bin(d));
    }
    CHECK(bins.size() == model.spec.n_phonemes + model.spec.dim);
}

TEST_CASE("purity oracle: analytic cases") {
    const auto model = build_synth_model(small_spec());
    const auto c = generate_corpus(model, 20, 100, false);

    // Identical to the state sequence under a relabeling.
    std::vector<UnitSequence> relabeled;
    for (std::size_t u = 0; u < c.states.size(); ++u) {
        auto seq = as_units(c.states[u], c.alignments[u].utt_id);
        for (auto& x : seq.units) {
            x = (x * 5 + 3) % model.spec.n_phonemes;
        }
        relabeled.push_back(seq);
    }
    CHECK(state_purity_oracle(c.alignments, relabeled) == doctest::Approx(1.0).epsilon(1e-12));

    // One unit, two states of equal duration.
    AlignmentTrack a;
    a.utt_id = "x";
    a.intervals = {{0.0, 0.2, "A"}, {0.2, 0.4, "B"}};
    UnitSequence one;
    one.utt_id = "x";
    one.units.assign(20, 0);
    CHECK(state_purity_oracle(std::span(&a, 1), std::span(&one, 1)) == doctest::Approx(0.5).epsilon(1e-12));

    one.units.pop_back();
    CHECK_THROWS_CODE(state_purity_oracle(std::span(&a, 1), std::span(&one, 1)), ErrorCode::LengthMismatch);
    CHECK_THROWS_CODE(state_purity_oracle(c.alignments, std::span(&one, 1)), ErrorCode::LengthMismatch);
}

TEST_CASE("purity oracle: random units approach 1/n") {
    SynthSpec s = small_spec();
    s.n_phonemes = 10;
    const auto c = generate_corpus(s, 100, 400, false);
    Rng rng(3);
    std::vector<UnitSequence> random;
    for (std::size_t u = 0; u < c.states.size(); ++u) {
        UnitSequence seq;
        seq.utt_id = c.alignments[u].utt_id;
        for (std::size_t t = 0; t < 400; ++t) {
            seq.units.push_back(static_cast<Unit>(rng.below(10)));
        }
        random.push_back(seq);
    }
    CHECK(std::abs(state_purity_oracle(c.alignments, random) - 0.1) <= 0.05);
}

TEST_CASE("synth model survives JSON round-trip") {
    const auto model = build_synth_model(small_spec(11));
    const auto back = synth_model_from_json(synth_model_to_json(model));
    CHECK(back.means == model.means);
    CHECK(back.transition == model.transition);
    CHECK(back.labels == model.labels);
    CHECK(back.spec.seed == model.spec.seed);
    CHECK(back.spec.emission_sigma == model.spec.emission_sigma);
    CHECK_THROWS_CODE(synth_model_from_json("{"), ErrorCode::InvalidSpec);
}

TEST_CASE("invalid specs are rejected") {
    SynthSpec s = small_spec();
    s.n_phonemes = 0;
    CHECK_THROWS_CODE(build_synth_model(s), ErrorCode::InvalidSpec);
    s = small_spec();
    s.emission_sigma = -1.0;
    CHECK_THROWS_CODE(build_synth_model(s), ErrorCode::InvalidSpec);
    s = small_spec();
    s.transition.assign(64, 0.1);
    CHECK_THROWS_CODE(build_synth_model(s), ErrorCode::InvalidSpec);
    s = small_spec();
    s.mean_dwell_frames = 0.5;
    CHECK_THROWS_CODE(build_synth_model(s), ErrorCode::InvalidSpec);
}
