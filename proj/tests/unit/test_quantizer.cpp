#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dsu/kernels.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/rng.hpp"
#include "dsu/synthkit.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dsu;

namespace {

PooledFrames frames_of(std::initializer_list<float> v, std::uint32_t dim) {
    return PooledFrames{dim, std::vector<float>(v)};
}

PooledFrames random_frames(std::size_t n, std::uint32_t dim, std::uint64_t seed) {
    Rng rng(seed);
    PooledFrames p{dim, {}};
    for (std::size_t i = 0; i < n * dim; ++i) {
        p.data.push_back(static_cast<float>(rng.normal()));
    }
    return p;
}

FeatureMatrix matrix_of(const PooledFrames& p) {
    FeatureMatrix m;
    m.dim = p.dim;
    m.frames = p.data;
    return m;
}

Codebook codebook_of(std::vector<float> c, std::uint32_t dim) {
    Codebook cb;
    cb.dim = dim;
    cb.k = static_cast<std::uint32_t>(c.size() / dim);
    cb.centroids = std::move(c);
    return cb;
}

}  // namespace

TEST_CASE("kmeans++: N == k returns a permutation of the frames") {
    const auto p = random_frames(6, 3, 1);
    const auto cb = kmeanspp_init(p, 6, 42);
    std::vector<std::vector<float>> got, want;
    for (std::size_t i = 0; i < 6; ++i) {
        got.emplace_back(cb.centroid(i).begin(), cb.centroid(i).end());
        want.emplace_back(p.data.begin() + i * 3, p.data.begin() + (i + 1) * 3);
    }
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK(got == want);
    CHECK(cb.meta.inertia == 0.0);
}

TEST_CASE("kmeans++: k = 1 picks an input frame; seed determines it") {
    const auto p = random_frames(50, 2, 2);
    std::set<std::vector<float>> picks;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto cb = kmeanspp_init(p, 1, seed);
        const std::vector<float> c(cb.centroids.begin(), cb.centroids.end());
        bool found = false;
        for (std::size_t i = 0; i < 50; ++i) {
            found |= std::equal(c.begin(), c.end(), p.data.begin() + i * 2);
        }
        CHECK(found);
        picks.insert(c);
        CHECK(kmeanspp_init(p, 1, seed) == cb);
    }
    CHECK(picks.size() > 1);
}

TEST_CASE("kmeans++: error cases") {
    CHECK_THROWS_CODE(kmeanspp_init(random_frames(3, 2, 1), 4, 0), ErrorCode::TooFewFrames);
    CHECK_THROWS_CODE(kmeanspp_init(frames_of({1, 1, 1, 1, 2, 2}, 2), 3, 0), ErrorCode::DegenerateData);
    CHECK_THROWS_CODE(fit(frames_of({1, NAN, 0, 0}, 2), 1, {}), ErrorCode::NonFiniteValue);
}

TEST_CASE("fit: analytic small cases") {
    const auto two = fit(frames_of({0, 0, 3, 4}, 2), 2, {});
    CHECK(two.meta.inertia == 0.0);
    std::vector<float> c = two.centroids;
    if (c[0] != 0.0f) {
        std::swap_ranges(c.begin(), c.begin() + 2, c.begin() + 2);
    }
    CHECK(c == std::vector<float>{0, 0, 3, 4});

    const auto square = fit(frames_of({0, 0, 1, 0, 0, 1, 1, 1}, 2), 1, {});
    CHECK(square.centroids == std::vector<float>{0.5f, 0.5f});
    // Each corner sits 0.5 (squared) from the centre.
    CHECK(square.meta.inertia == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(square.meta.n_training_frames == 4);
}

TEST_CASE("fit: matches exhaustive 2-partition optimum on small instances") {
    Rng rng(2024);
    FitConfig cfg;
    cfg.n_init = 10;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        const std::uint32_t dim = 1 + static_cast<std::uint32_t>(rng.below(3));
        PooledFrames p{dim, {}};
        std::vector<double> pts;
        for (std::size_t i = 0; i < n * dim; ++i) {
            p.data.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
            pts.push_back(p.data.back());
        }
        cfg.seed = trial;
        const auto cb = fit(p, 2, cfg);
        CHECK(cb.meta.inertia == doctest::Approx(oracle::best_two_partition(pts, dim)).epsilon(1e-9));
    }
}

TEST_CASE("fit: single-point refinement never raises inertia") {
    Rng rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        const auto p = random_frames(40 + rng.below(200), 2, 100 + trial);
        FitConfig plain;
        plain.refine_passes = 0;
        plain.seed = trial;
        FitConfig refined = plain;
        refined.refine_passes = 10;
        const auto k = static_cast<std::uint32_t>(2 + rng.below(8));
        CHECK(fit(p, k, refined).meta.inertia <= fit(p, k, plain).meta.inertia * (1.0 + 1e-12));
    }
}

TEST_CASE("fit: full-batch inertia never increases") {
    const auto p = random_frames(2000, 4, 5);
    FitConfig cfg;
    cfg.tol = 0.0;
    cfg.max_iters = 40;
    const auto r = fit_detailed(p, 16, cfg);
    REQUIRE(r.inertia_history.size() >= 2);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
        CHECK(r.inertia_history[i] <= r.inertia_history[i - 1]);
    }
    CHECK(r.codebook.meta.inertia == doctest::Approx(inertia(p, r.codebook)).epsilon(1e-12));
}

TEST_CASE("fit: reported inertia equals the sum of nearest squared distances") {
    const auto p = random_frames(300, 3, 8);
    const auto cb = fit(p, 7, {});
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto c = oracle::nearest(p.data.data() + i * 3, cb.centroids, 3);
        for (std::size_t j = 0; j < 3; ++j) {
            const double d = static_cast<double>(p.data[i * 3 + j]) - cb.centroids[c * 3 + j];
            total += d * d;
        }
    }
    CHECK(cb.meta.inertia == doctest::Approx(total).epsilon(1e-10));
}

TEST_CASE("fit: empty clusters are reseeded so all k units exist") {
    // Eight copies of two distinct points plus one outlier; k = 3 forces a reseed
    // whenever two seeds land on the same copy group.
    PooledFrames p{1, {}};
    for (int i = 0; i < 8; ++i) {
        p.data.push_back(0.0f);
        p.data.push_back(10.0f);
    }
    p.data.push_back(100.0f);
    const auto r = fit_detailed(p, 3, {});
    std::vector<float> c = r.codebook.centroids;
    std::sort(c.begin(), c.end());
    CHECK(c == std::vector<float>{0.0f, 10.0f, 100.0f});
}

TEST_CASE("fit: mini-batch converges near the full-batch solution") {
    const auto model = build_synth_model([] {
        SynthSpec s;
        s.n_phonemes = 6;
        s.dim = 4;
        return s;
    }());
    const auto c = generate_corpus(model, 20, 100, false);
    const auto p = pool_frames(c.features);
    FitConfig full;
    FitConfig mb;
    mb.batch_size = 256;
    mb.max_iters = 200;
    const double a = fit(p, 6, full).meta.inertia;
    const double b = fit(p, 6, mb).meta.inertia;
    CHECK(b <= a * 1.05);
}

TEST_CASE("fit: identical result for any thread count") {
    const auto p = random_frames(5000, 8, 3);
    FitConfig cfg;
    cfg.max_iters = 15;
    kernels::set_threads(1);
    const auto a = fit(p, 20, cfg);
    kernels::set_threads(3);
    const auto b = fit(p, 20, cfg);
    kernels::set_threads(1);
    CHECK(a == b);
}

TEST_CASE("fit: recovers synthetic means within 3 sigma") {
    SynthSpec s;
    s.n_phonemes = 10;
    s.dim = 8;
    s.emission_sigma = 0.1;
    const auto model = build_synth_model(s);
    const auto c = generate_corpus(model, 40, 100, false);
    FitConfig cfg;
    cfg.n_init = 5;
    const auto cb = fit(pool_frames(c.features), 10, cfg);
    // Greedy matching is optimal here because the means are 8 sigma apart.
    for (std::uint32_t st = 0; st < 10; ++st) {
        double best = 1e300;
        for (std::uint32_t u = 0; u < 10; ++u) {
            double d = 0.0;
            for (std::uint32_t j = 0; j < 8; ++j) {
                const double x = model.means[st * 8 + j] - cb.centroids[u * 8 + j];
                d += x * x;
            }
            best = std::min(best, std::sqrt(d));
        }
        CHECK(best <= 3.0 * s.emission_sigma);
    }
}

TEST_CASE("quantize: identity, tie-break and linear-scan oracle") {
    const auto cb = codebook_of({0, 0, 1, 1, 2, 2, 3, 3, 1, 0}, 2);
    FeatureMatrix m;
    m.dim = 2;
    m.frames = {3, 3, 0, 0, 3, 3};
    m.frame_rate_hz = 25.0f;
    const auto s = quantize(m, cb);
    CHECK(s.units == std::vector<Unit>{3, 0, 3});
    CHECK(s.frame_rate_hz == 25.0f);

    // Equidistant from centroids 1 (1,1) and 4 (1,0).
    m.frames = {1.0f, 0.5f};
    CHECK(quantize(m, cb).units == std::vector<Unit>{1});

    const auto p = random_frames(50, 5, 4);
    const auto big = fit(random_frames(400, 5, 5), 9, {});
    const auto q = quantize(matrix_of(p), big);
    REQUIRE(q.units.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(q.units[i] == oracle::nearest(p.data.data() + i * 5, big.centroids, 5));
    }

    FeatureMatrix wrong;
    wrong.dim = 3;
    wrong.frames = {1, 2, 3};
    CHECK_THROWS_CODE(quantize(wrong, cb), ErrorCode::DimMismatch);
}

TEST_CASE("quantize: shifting frames and centroids together keeps assignments") {
    const auto p = random_frames(200, 3, 6);
    auto cb = fit(random_frames(300, 3, 7), 5, {});
    const auto before = quantize(matrix_of(p), cb).units;
    auto shifted = p;
    for (std::size_t i = 0; i < shifted.data.size(); ++i) {
        shifted.data[i] += static_cast<float>(i % 3) * 0.25f + 1.0f;
    }
    for (std::size_t i = 0; i < cb.centroids.size(); ++i) {
        cb.centroids[i] += static_cast<float>(i % 3) * 0.25f + 1.0f;
    }
    CHECK(quantize(matrix_of(shifted), cb).units == before);
}

TEST_CASE("kmcb: round-trip and rejection") {
    auto cb = fit(random_frames(100, 4, 9), 6, {}, "wavlm");
    const auto bytes = serialize_codebook(cb);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KMCB");
    CHECK(parse_codebook_bytes(bytes) == cb);

    testutil::TempDir dir("kmcb");
    save_codebook(dir / "c.kmcb", cb);
    CHECK(load_codebook(dir / "c.kmcb") == cb);

    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_CODE(parse_codebook_bytes(bad), ErrorCode::BadMagic);
    CHECK_THROWS_CODE(parse_codebook_bytes(std::span(bytes).first(20)), ErrorCode::TruncatedFile);

    Codebook dup = codebook_of({1, 1, 1, 1}, 2);
    CHECK_THROWS(dup.validate());
}

TEST_CASE("FitConfig validation") {
    FitConfig c;
    c.max_iters = 0;
    CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
    c = {};
    c.tol = -1;
    CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
}
