#include <cstring>

#include "dsu/kernels.hpp"
#include "dsu/rng.hpp"
#include "helpers.hpp"

using namespace dsu;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

std::vector<double> random_doubles(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct ThreadGuard {
    ~ThreadGuard() { kernels::set_threads(1); }
};

}  // namespace

TEST_CASE("assign_nearest: OpenMP matches serial at every thread count") {
    ThreadGuard guard;
    const std::size_t dim = 6, n = 5000, k = 37;
    const auto pts = random_floats(n * dim, 1);
    const auto cen = random_doubles(k * dim, 2);
    kernels::Assignment ref;
    kernels::serial::assign_nearest(pts, cen, dim, ref);
    for (int t = 1; t <= 4; ++t) {
        kernels::set_threads(t);
        kernels::Assignment got;
        kernels::omp::assign_nearest(pts, cen, dim, got);
        CHECK(got.labels == ref.labels);
        CHECK(same_bits(got.sq_dist, ref.sq_dist));
    }
}

TEST_CASE("assign_nearest: ties go to the lowest index") {
    const std::vector<float> pts{0.0f};
    const std::vector<double> cen{1.0, -1.0, 1.0};
    kernels::Assignment a;
    kernels::omp::assign_nearest(pts, cen, 1, a);
    CHECK(a.labels[0] == 0);
    kernels::serial::assign_nearest(pts, cen, 1, a);
    CHECK(a.labels[0] == 0);
}

TEST_CASE("accumulate and sum: thread-count independent bits") {
    ThreadGuard guard;
    const std::size_t dim = 3, n = 10007, k = 11;
    const auto pts = random_floats(n * dim, 3);
    std::vector<std::uint32_t> labels(n);
    Rng rng(4);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(k));
    kernels::set_threads(1);
    const auto ref = kernels::omp::accumulate(pts, labels, k, dim);
    const auto values = random_doubles(n, 5);
    const double ref_sum = kernels::omp::sum(values);
    for (int t = 2; t <= 4; ++t) {
        kernels::set_threads(t);
        const auto got = kernels::omp::accumulate(pts, labels, k, dim);
        CHECK(got.counts == ref.counts);
        CHECK(same_bits(got.sums, ref.sums));
        CHECK(kernels::omp::sum(values) == ref_sum);
    }
    // Same chunked order as the serial reference within rounding.
    const auto serial = kernels::serial::accumulate(pts, labels, k, dim);
    CHECK(serial.counts == ref.counts);
    for (std::size_t i = 0; i < serial.sums.size(); ++i) {
        CHECK(serial.sums[i] == doctest::Approx(ref.sums[i]).epsilon(1e-12));
    }
    CHECK(kernels::serial::sum(values) == doctest::Approx(ref_sum).epsilon(1e-12));
}

TEST_CASE("update_min_dist agrees with serial") {
    ThreadGuard guard;
    const auto pts = random_floats(3000 * 4, 6);
    const auto c = random_doubles(4, 7);
    std::vector<double> a(3000, 2.0), b(3000, 2.0);
    kernels::serial::update_min_dist(pts, c, a);
    kernels::set_threads(3);
    kernels::omp::update_min_dist(pts, c, b);
    CHECK(same_bits(a, b));
}

TEST_CASE("matmul variants match a naive triple loop") {
    ThreadGuard guard;
    const std::size_t m = 17, n = 13, k = 29;
    const auto a = random_doubles(m * k, 8);
    const auto bt = random_doubles(n * k, 9);
    const auto b = random_doubles(k * n, 10);
    const auto at = random_doubles(k * m, 11);

    std::vector<double> want_nt(m * n, 0.0), want_nn(m * n, 0.0), want_tn(m * n, 1.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t p = 0; p < k; ++p) {
                want_nt[i * n + j] += a[i * k + p] * bt[j * k + p];
                want_nn[i * n + j] += a[i * k + p] * b[p * n + j];
                want_tn[i * n + j] += at[p * m + i] * b[p * n + j];
            }
        }
    }
    for (int t = 1; t <= 3; ++t) {
        kernels::set_threads(t);
        std::vector<double> nt(m * n), nn(m * n, 7.0), tn(m * n, 1.0);
        std::vector<double> snt(m * n), snn(m * n, 7.0), stn(m * n, 1.0);
        kernels::omp::matmul_nt(a.data(), bt.data(), nt.data(), m, n, k);
        kernels::omp::matmul_nn(a.data(), b.data(), nn.data(), m, n, k);
        kernels::omp::matmul_tn_acc(at.data(), b.data(), tn.data(), m, n, k);
        kernels::serial::matmul_nt(a.data(), bt.data(), snt.data(), m, n, k);
        kernels::serial::matmul_nn(a.data(), b.data(), snn.data(), m, n, k);
        kernels::serial::matmul_tn_acc(at.data(), b.data(), stn.data(), m, n, k);
        for (std::size_t i = 0; i < m * n; ++i) {
            CHECK(nt[i] == doctest::Approx(want_nt[i]).epsilon(1e-12));
            CHECK(nn[i] == doctest::Approx(want_nn[i]).epsilon(1e-12));
            CHECK(tn[i] == doctest::Approx(want_tn[i]).epsilon(1e-12));
        }
        CHECK(same_bits(nt, snt));
        CHECK(same_bits(nn, snn));
        CHECK(same_bits(tn, stn));
    }
}
