#include <limits>

#include "dsu/kernels.hpp"

namespace dsu::kernels::serial {

void assign_nearest(std::span<const float> points, std::span<const double> centroids,
                    std::size_t dim, Assignment& out) {
    const std::size_t n = points.size() / dim;
    const std::size_t k = centroids.size() / dim;
    out.labels.assign(n, 0);
    out.sq_dist.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
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
    for (std::size_t i = 0; i < mindist.size(); ++i) {
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
    ClusterSums s{std::vector<double>(k * dim, 0.0), std::vector<std::uint64_t>(k, 0)};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::uint32_t c = labels[i];
        ++s.counts[c];
        for (std::size_t j = 0; j < dim; ++j) {
            s.sums[c * dim + j] += points[i * dim + j];
        }
    }
    return s;
}

double sum(std::span<const double> values) {
    double total = 0.0;
    for (const double v : values) {
        total += v;
    }
    return total;
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[j * k + p];
            }
            c[i * n + j] = acc;
        }
    }
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] = 0.0;
        }
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
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

}  // namespace dsu::kernels::serial
