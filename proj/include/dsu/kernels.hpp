#pragma once

// Data-parallel inner loops. Every kernel has a plain serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp`. The OpenMP
// versions give bit-identical results for any thread count: each output
// element is reduced by exactly one thread in a fixed order, and cross-point
// reductions go through fixed-size chunks combined in chunk-index order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dsu::kernels {

/// Reduction chunk size; independent of the thread count.
inline constexpr std::size_t kChunk = 2048;

struct Assignment {
    std::vector<std::uint32_t> labels;
    std::vector<double> sq_dist;
};

/// Per-cluster coordinate sums (k x dim) and member counts.
struct ClusterSums {
    std::vector<double> sums;
    std::vector<std::uint64_t> counts;
};

namespace serial {

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
void assign_nearest(std::span<const float> points, std::span<const double> centroids,
                    std::size_t dim, Assignment& out);

/// mindist[i] = min(mindist[i], |points_i - centroid|^2)
void update_min_dist(std::span<const float> points, std::span<const double> centroid,
                     std::span<double> mindist);

ClusterSums accumulate(std::span<const float> points, std::span<const std::uint32_t> labels,
                       std::size_t k, std::size_t dim);

double sum(std::span<const double> values);

// Row-major dense products in binary64.
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k);
// C[m x n] = A[m x k] * B[k x n]
void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k);
// C[m x n] += A[k x m]^T * B[k x n]
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k);

}  // namespace serial

namespace omp {

void assign_nearest(std::span<const float> points, std::span<const double> centroids,
                    std::size_t dim, Assignment& out);
void update_min_dist(std::span<const float> points, std::span<const double> centroid,
                     std::span<double> mindist);
ClusterSums accumulate(std::span<const float> points, std::span<const std::uint32_t> labels,
                       std::size_t k, std::size_t dim);
double sum(std::span<const double> values);

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k);
void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k);
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k);

}  // namespace omp

/// Current OpenMP worker count (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace dsu::kernels
