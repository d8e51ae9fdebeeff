#include <cmath>

#include "dsu/phonalign.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/rng.hpp"
#include "dsu/synthkit.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dsu;

namespace {

UnitSequence units(std::vector<Unit> u, float rate = 50.0f) {
    UnitSequence s;
    s.utt_id = "x";
    s.frame_rate_hz = rate;
    s.units = std::move(u);
    return s;
}

AlignmentTrack track(std::vector<Interval> iv) {
    AlignmentTrack a;
    a.utt_id = "x";
    a.intervals = std::move(iv);
    return a;
}

double mass_of(const OverlapTable& t, Unit u, const std::string& label) {
    for (std::size_t c = 0; c < t.labels.size(); ++c) {
        if (t.labels[c] == label) return t.at(u, c);
    }
    return 0.0;
}

// Random utterance with jittered interval boundaries and gaps.
std::pair<UnitSequence, AlignmentTrack> random_utt(Rng& rng, std::uint32_t k) {
    UnitSequence s = units({});
    const auto frames = 5 + rng.below(30);
    for (std::size_t i = 0; i < frames; ++i) s.units.push_back(static_cast<Unit>(rng.below(k)));
    AlignmentTrack a = track({});
    double t = rng.uniform(0.0, 0.03);
    const double end = frames / 50.0;
    const char* labels[] = {"AH", "S", "T", "sil"};
    while (t < end) {
        const double len = rng.uniform(0.005, 0.09);
        a.intervals.push_back({t, std::min(end + 0.02, t + len), labels[rng.below(4)]});
        t += len + (rng.uniform() < 0.3 ? rng.uniform(0.0, 0.02) : 0.0);
    }
    return {s, a};
}

}  // namespace

TEST_CASE("overlap: straddling frame splits proportionally") {
    // Frame 5 spans [0.10, 0.12).
    std::vector<Unit> u(6, 0);
    u[5] = 7;
    const auto t = accumulate_overlap(units(u), track({{0.05, 0.115, "AH"}, {0.115, 0.20, "S"}}), 8);
    CHECK(mass_of(t, 7, "AH") == doctest::Approx(0.015).epsilon(1e-9));
    CHECK(mass_of(t, 7, "S") == doctest::Approx(0.005).epsilon(1e-9));
    const auto m = build_confusion(t);
    const auto ah = std::find(m.labels.begin(), m.labels.end(), "AH") - m.labels.begin();
    CHECK(m.at(7, ah) == doctest::Approx(0.75).epsilon(1e-9));
}

TEST_CASE("overlap: tiling alignment conserves duration; gaps go to <unaligned>") {
    const auto s = units({0, 1, 1, 0, 2});
    auto t = accumulate_overlap(s, track({{0.0, 0.03, "A"}, {0.03, 0.1, "B"}}), 3);
    CHECK(t.total() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(mass_of(t, 0, std::string(kUnalignedLabel)) == 0.0);

    t = accumulate_overlap(s, track({{0.02, 0.05, "A"}}), 3);
    CHECK(t.total() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(mass_of(t, 0, std::string(kUnalignedLabel)) == doctest::Approx(0.02 + 0.02).epsilon(1e-9));
    CHECK(mass_of(t, 2, std::string(kUnalignedLabel)) == doctest::Approx(0.02).epsilon(1e-9));
}

TEST_CASE("overlap: matches fine-grid oracle on random utterances") {
    Rng rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        auto [s, a] = random_utt(rng, 5);
        const auto t = accumulate_overlap(s, a, 5);
        std::vector<oracle::Interval> ivs;
        for (const auto& iv : a.intervals) ivs.push_back({iv.start_s, iv.end_s, iv.label});
        const auto want = oracle::grid_overlap(s.units, 50.0, ivs, std::string(kUnalignedLabel));
        for (const auto& [key, v] : want) {
            // The grid misplaces at most one cell per boundary.
            CHECK(std::abs(mass_of(t, key.first, key.second) - v) <= 2 * 1e-5 * a.intervals.size() + 1e-6);
        }
        CHECK(t.total() == doctest::Approx(s.units.size() / 50.0).epsilon(1e-9));
    }
}

TEST_CASE("overlap: additive across utterances") {
    Rng rng(3);
    std::vector<UnitSequence> seqs;
    std::vector<AlignmentTrack> tracks;
    for (int i = 0; i < 6; ++i) {
        auto [s, a] = random_utt(rng, 4);
        seqs.push_back(s);
        tracks.push_back(a);
    }
    const auto whole = accumulate_corpus(seqs, tracks, 4);
    OverlapTable merged(4);
    merged.mass.clear();
    for (std::size_t i = 0; i < seqs.size(); ++i) merged += accumulate_overlap(seqs[i], tracks[i], 4);
    for (Unit u = 0; u < 4; ++u) {
        for (const auto& l : merged.labels) {
            CHECK(mass_of(whole, u, l) == doctest::Approx(mass_of(merged, u, l)).epsilon(1e-12));
        }
    }
    CHECK_THROWS_CODE(accumulate_corpus(seqs, std::span(tracks).first(2), 4), ErrorCode::LengthMismatch);
}

TEST_CASE("overlap: error cases") {
    CHECK_THROWS_CODE(accumulate_overlap(units({0}), track({{0.1, 0.05, "A"}}), 2), ErrorCode::NegativeInterval);
    CHECK_THROWS_CODE(accumulate_overlap(units({2}), track({{0.0, 0.02, "A"}}), 2), ErrorCode::UnitOutOfRange);
}

TEST_CASE("confusion: single cell, absent rows, normalization") {
    auto m = build_confusion(accumulate_overlap(units({0, 0}), track({{0.0, 0.04, "A"}}), 3));
    CHECK(m.labels == std::vector<std::string>{"A"});
    CHECK(m.at(0, 0) == 1.0);
    CHECK(m.present(0));
    CHECK_FALSE(m.present(1));
    CHECK(m.support[0] == doctest::Approx(0.04));

    Rng rng(9);
    std::vector<UnitSequence> seqs;
    std::vector<AlignmentTrack> tracks;
    for (int i = 0; i < 10; ++i) {
        auto [s, a] = random_utt(rng, 6);
        seqs.push_back(s);
        tracks.push_back(a);
    }
    m = build_confusion(accumulate_corpus(seqs, tracks, 6));
    for (Unit u = 0; u < 6; ++u) {
        if (!m.present(u)) continue;
        double row = 0.0;
        for (std::size_t c = 0; c < m.labels.size(); ++c) row += m.at(u, c);
        CHECK(std::abs(row - 1.0) <= 1e-9);
    }
}

TEST_CASE("purity: diagonal, uniform, permutation invariance") {
    // Unit u always overlaps phoneme u: purity 1.
    std::vector<Unit> diag{0, 0, 1, 1, 2, 2};
    const auto a = track({{0.0, 0.04, "A"}, {0.04, 0.08, "B"}, {0.08, 0.12, "C"}});
    auto t = accumulate_overlap(units(diag), a, 3);
    CHECK(purity(build_confusion(t), t) == doctest::Approx(1.0).epsilon(1e-12));

    // One unit spread evenly over P = 3 phonemes: purity 1/3.
    t = accumulate_overlap(units({0, 0, 0, 0, 0, 0}), a, 3);
    CHECK(purity(build_confusion(t), t) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Rng rng(4);
    auto [s, tr] = random_utt(rng, 5);
    const auto base = accumulate_overlap(s, tr, 5);
    auto perm = s;
    for (auto& u : perm.units) u = (u + 2) % 5;
    const auto moved = accumulate_overlap(perm, tr, 5);
    CHECK(purity(build_confusion(moved), moved) ==
          doctest::Approx(purity(build_confusion(base), base)).epsilon(1e-12));

    const auto other = accumulate_overlap(units({0}), a, 4);
    CHECK_THROWS_CODE(purity(build_confusion(t), other), ErrorCode::ShapeMismatch);
}

TEST_CASE("purity: synthetic corpus with k = n_phonemes recovers the states") {
    SynthSpec spec;
    spec.n_phonemes = 12;
    spec.dim = 8;
    spec.emission_sigma = 0.05;
    const auto c = generate_corpus(spec, 30, 100, false);
    FitConfig cfg;
    cfg.n_init = 5;
    const auto cb = fit(pool_frames(c.features), 12, cfg);
    std::vector<UnitSequence> seqs;
    for (const auto& f : c.features) seqs.push_back(quantize(f, cb));
    const auto t = accumulate_corpus(seqs, c.alignments, 12);
    const double p = purity(build_confusion(t), t);
    CHECK(p >= 0.95);
    CHECK(p == doctest::Approx(state_purity_oracle(c.alignments, seqs)).epsilon(1e-9));
}

TEST_CASE("heatmap: diagonal shading, ordering and determinism") {
    const auto a = track({{0.0, 0.04, "A"}, {0.04, 0.08, "B"}});
    const auto t = accumulate_overlap(units({1, 1, 0, 0}), a, 2);
    const auto m = build_confusion(t);
    const auto h1 = render_heatmap(m);
    const auto h2 = render_heatmap(m);
    CHECK(h1.svg == h2.svg);
    CHECK(h1.csv == h2.csv);
    // Unit 1 is dominated by A (first label), so it comes first.
    CHECK(h1.unit_order == std::vector<Unit>{1, 0});
    CHECK(h1.svg.find("<svg") != std::string::npos);
    // Two black diagonal cells; white cells are left to the background.
    std::size_t cells = 0;
    for (auto pos = h1.svg.find("<title>"); pos != std::string::npos; pos = h1.svg.find("<title>", pos + 1)) {
        ++cells;
    }
    CHECK(cells == 2);
    CHECK(h1.svg.find("fill=\"#000000\"><title>unit 1 / A: 1</title>") != std::string::npos);
    CHECK(h1.svg.find("fill=\"#000000\"><title>unit 0 / B: 1</title>") != std::string::npos);
    CHECK(h1.svg.find("x=\"90\" y=\"20\"") < h1.svg.find("x=\"98\" y=\"34\""));
}

TEST_CASE("confusion csv round-trips at 1e-9") {
    Rng rng(21);
    std::vector<UnitSequence> seqs;
    std::vector<AlignmentTrack> tracks;
    for (int i = 0; i < 8; ++i) {
        auto [s, a] = random_utt(rng, 7);
        seqs.push_back(s);
        tracks.push_back(a);
    }
    const auto m = build_confusion(accumulate_corpus(seqs, tracks, 7));
    const auto back = parse_confusion_csv(confusion_csv(m));
    REQUIRE(back.labels == m.labels);
    REQUIRE(back.k == m.k);
    for (std::size_t i = 0; i < m.prob.size(); ++i) CHECK(std::abs(back.prob[i] - m.prob[i]) <= 1e-9);
    for (std::size_t u = 0; u < m.k; ++u) CHECK(std::abs(back.support[u] - m.support[u]) <= 1e-9);
    CHECK(confusion_csv(m).rfind("unit_id,phoneme,probability,support_seconds\n", 0) == 0);
}
