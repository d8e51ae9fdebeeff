#include <limits>

#include "dsu/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dsu::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n < 1 ? 1 : n);
#else
    (void)n;
#endif
}

namespace omp {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

std::size_t n_chunks(std::size_t n) { return (n + kChunk - 1) / kChunk; }
}  // namespace

void assign_nearest(std::span<const float> points, std::span<const double> centroids,
                    std::size_t dim, Assignment& out) {
    const std::size_t n = points.size() / dim;
    const std::size_t k = centroids.size() / dim;
    out.labels.assign(n, 0);
    out.sq_dist.assign(n, 0.0);
    const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * dim > kParallelWork)
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
        const float* x = points.data() + i * dim;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double* mu = centroids.data() + c * dim;
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = static_cast<double>(x[j]) - mu[j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_c = static_cast<std::uint32_t>(c);
            }
        }
        out.labels[i] = best_c;
        out.sq_dist[i] = best;
    }
}

void update_min_dist(std::span<const float> points, std::span<const double> centroid,
                     std::span<double> mindist) {
    const std::size_t dim = centroid.size();
    const auto ni = static_cast<std::ptrdiff_t>(mindist.size());
#pragma omp parallel for schedule(static) if (mindist.size() * dim > kParallelWork)
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
        const float* x = points.data() + i * dim;
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double diff = static_cast<double>(x[j]) - centroid[j];
            d += diff * diff;
        }
        if (d < mindist[i]) {
            mindist[i] = d;
        }
    }
}

ClusterSums accumulate(std::span<const float> points, std::span<const std::uint32_t> labels,
                       std::size_t k, std::size_t dim) {
    const std::size_t n = labels.size();
    const std::size_t chunks = n_chunks(n);
    std::vector<ClusterSums> partial(chunks);
    const auto nc = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(dynamic, 1) if (n * dim > kParallelWork)
    for (std::ptrdiff_t c = 0; c < nc; ++c) {
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(n, begin + kChunk);
        partial[c] = serial::accumulate(points.subspan(begin * dim, (end - begin) * dim),
                                        labels.subspan(begin, end - begin), k, dim);
    }
    ClusterSums total{std::vector<double>(k * dim, 0.0), std::vector<std::uint64_t>(k, 0)};
    for (const auto& p : partial) {
        for (std::size_t i = 0; i < total.sums.size(); ++i) {
            total.sums[i] += p.sums[i];
        }
        for (std::size_t i = 0; i < k; ++i) {
            total.counts[i] += p.counts[i];
        }
    }
    return total;
}

double sum(std::span<const double> values) {
    const std::size_t chunks = n_chunks(values.size());
    std::vector<double> partial(chunks, 0.0);
    const auto nc = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(static) if (values.size() > kParallelWork)
    for (std::ptrdiff_t c = 0; c < nc; ++c) {
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(values.size(), begin + kChunk);
        partial[c] = serial::sum(values.subspan(begin, end - begin));
    }
    return serial::sum(partial);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k) {
    const auto mi = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (std::ptrdiff_t i = 0; i < mi; ++i) {
        serial::matmul_nt(a + i * k, b, c + i * n, 1, n, k);
    }
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k) {
    const auto mi = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (std::ptrdiff_t i = 0; i < mi; ++i) {
        serial::matmul_nn(a + i * k, b, c + i * n, 1, n, k);
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k) {
    const auto mi = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (std::ptrdiff_t i = 0; i < mi; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace omp
}  // namespace dsu::kernels
