// Serial reference vs OpenMP kernels. The second range argument of each OMP
// benchmark is the thread count.

#include <benchmark/benchmark.h>

#include "dsu/kernels.hpp"
#include "dsu/rng.hpp"

namespace k = dsu::kernels;

namespace {

std::vector<float> points(std::size_t n, std::size_t dim) {
    dsu::Rng rng(1);
    std::vector<float> v(n * dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

std::vector<double> matrix(std::size_t n, std::uint64_t seed) {
    dsu::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

constexpr std::size_t kFrames = 20000;
constexpr std::size_t kDim = 32;

template <bool Omp>
void BM_assign(benchmark::State& st) {
    const auto kc = static_cast<std::size_t>(st.range(0));
    if (Omp) k::set_threads(static_cast<int>(st.range(1)));
    const auto p = points(kFrames, kDim);
    const auto c = matrix(kc * kDim, 2);
    k::Assignment a;
    for (auto _ : st) {
        if constexpr (Omp) {
            k::omp::assign_nearest(p, c, kDim, a);
        } else {
            k::serial::assign_nearest(p, c, kDim, a);
        }
        benchmark::DoNotOptimize(a.labels.data());
    }
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * kFrames * kc));
    k::set_threads(1);
}

template <bool Omp>
void BM_accumulate(benchmark::State& st) {
    const auto kc = static_cast<std::size_t>(st.range(0));
    if (Omp) k::set_threads(static_cast<int>(st.range(1)));
    const auto p = points(kFrames, kDim);
    dsu::Rng rng(3);
    std::vector<std::uint32_t> labels(kFrames);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(kc));
    for (auto _ : st) {
        auto s = Omp ? k::omp::accumulate(p, labels, kc, kDim) : k::serial::accumulate(p, labels, kc, kDim);
        benchmark::DoNotOptimize(s.sums.data());
    }
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * kFrames));
    k::set_threads(1);
}

// Shapes of one transformer layer: (batch * seq) x d_model times d_model x d_ff.
template <bool Omp>
void BM_matmul_nt(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    if (Omp) k::set_threads(static_cast<int>(st.range(1)));
    const std::size_t m = 1024, kk = 64;
    const auto a = matrix(m * kk, 4);
    const auto b = matrix(n * kk, 5);
    std::vector<double> c(m * n);
    for (auto _ : st) {
        if constexpr (Omp) {
            k::omp::matmul_nt(a.data(), b.data(), c.data(), m, n, kk);
        } else {
            k::serial::matmul_nt(a.data(), b.data(), c.data(), m, n, kk);
        }
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * m * n * kk));
    k::set_threads(1);
}

template <bool Omp>
void BM_matmul_nn(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    if (Omp) k::set_threads(static_cast<int>(st.range(1)));
    const std::size_t m = 1024, kk = 64;
    const auto a = matrix(m * kk, 6);
    const auto b = matrix(kk * n, 7);
    std::vector<double> c(m * n);
    for (auto _ : st) {
        if constexpr (Omp) {
            k::omp::matmul_nn(a.data(), b.data(), c.data(), m, n, kk);
        } else {
            k::serial::matmul_nn(a.data(), b.data(), c.data(), m, n, kk);
        }
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * m * n * kk));
    k::set_threads(1);
}

template <bool Omp>
void BM_matmul_tn_acc(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    if (Omp) k::set_threads(static_cast<int>(st.range(1)));
    const std::size_t m = 64, kk = 1024;
    const auto a = matrix(kk * m, 8);
    const auto b = matrix(kk * n, 9);
    std::vector<double> c(m * n, 0.0);
    for (auto _ : st) {
        if constexpr (Omp) {
            k::omp::matmul_tn_acc(a.data(), b.data(), c.data(), m, n, kk);
        } else {
            k::serial::matmul_tn_acc(a.data(), b.data(), c.data(), m, n, kk);
        }
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * m * n * kk));
    k::set_threads(1);
}

void thread_args(benchmark::internal::Benchmark* b, std::initializer_list<std::int64_t> sizes) {
    const int maxt = k::max_threads();
    for (auto s : sizes) {
        for (int t = 1; t <= maxt; t *= 2) b->Args({s, t});
        if ((maxt & (maxt - 1)) != 0) b->Args({s, maxt});
    }
}

}  // namespace

BENCHMARK(BM_assign<false>)->Name("assign_nearest/serial")->Arg(125)->Arg(500)->Arg(2500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_assign<true>)->Name("assign_nearest/omp")->Apply([](auto* b) { thread_args(b, {125, 500, 2500}); })->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_accumulate<false>)->Name("accumulate/serial")->Arg(500)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_accumulate<true>)->Name("accumulate/omp")->Apply([](auto* b) { thread_args(b, {500}); })->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_matmul_nt<false>)->Name("matmul_nt/serial")->Arg(256)->Arg(2503)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_matmul_nt<true>)->Name("matmul_nt/omp")->Apply([](auto* b) { thread_args(b, {256, 2503}); })->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_matmul_nn<false>)->Name("matmul_nn/serial")->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_matmul_nn<true>)->Name("matmul_nn/omp")->Apply([](auto* b) { thread_args(b, {256}); })->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_matmul_tn_acc<false>)->Name("matmul_tn_acc/serial")->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_matmul_tn_acc<true>)->Name("matmul_tn_acc/omp")->Apply([](auto* b) { thread_args(b, {256}); })->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
