#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "dsu/error.hpp"
#include "dsu/kernels.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/rng.hpp"

namespace dsu {

namespace {

std::vector<double> widen(std::span<const float> v) { return {v.begin(), v.end()}; }

void check_frames(const PooledFrames& frames, std::uint32_t k) {
    if (frames.dim == 0 || frames.data.size() % frames.dim != 0) {
        throw Error(ErrorCode::DimMismatch, "pooled frames have inconsistent dim");
    }
    if (k == 0) {
        throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
    }
    if (frames.size() < k) {
        throw Error(ErrorCode::TooFewFrames, std::to_string(frames.size()) +
                                                 " frames cannot seed k=" + std::to_string(k));
    }
    for (const float v : frames.data) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteValue, "non-finite value in training frames");
        }
    }
}

/// k-means++ in binary64; returns k x dim centroids.
std::vector<double> seed_centroids(const PooledFrames& frames, std::uint32_t k, std::uint64_t seed) {
    const std::size_t n = frames.size();
    const std::size_t dim = frames.dim;
    Rng rng(seed);
    std::vector<double> centroids;
    centroids.reserve(static_cast<std::size_t>(k) * dim);

    auto take = [&](std::size_t idx) {
        for (std::size_t j = 0; j < dim; ++j) {
            centroids.push_back(frames.data[idx * dim + j]);
        }
    };

    std::size_t first = rng.below(n);
    take(first);
    std::vector<double> mindist(n, std::numeric_limits<double>::infinity());
    kernels::omp::update_min_dist(frames.data, std::span<const double>(centroids).last(dim), mindist);

    for (std::uint32_t c = 1; c < k; ++c) {
        const double total = kernels::omp::sum(mindist);
        if (!(total > 0.0)) {
            throw Error(ErrorCode::DegenerateData, "only " + std::to_string(c) +
                                                       " distinct frames available for k=" +
                                                       std::to_string(k));
        }
        const double target = rng.uniform() * total;
        std::size_t chosen = n;
        std::size_t last_positive = n;
        double cum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mindist[i] <= 0.0) {
                continue;
            }
            last_positive = i;
            cum += mindist[i];
            if (cum > target) {
                chosen = i;
                break;
            }
        }
        if (chosen == n) {
            chosen = last_positive;  // rounding: target landed past the running sum
        }
        take(chosen);
        kernels::omp::update_min_dist(frames.data, std::span<const double>(centroids).last(dim),
                                      mindist);
    }
    return centroids;
}

/// Moves each empty cluster onto the point currently farthest from its own
/// centroid; each reseed consumes that point. Returns the number reseeded.
std::uint32_t reseed_empty(const PooledFrames& frames, const std::vector<std::uint64_t>& counts,
                           std::vector<double>& sq_dist, std::vector<double>& centroids) {
    const std::size_t dim = frames.dim;
    std::uint32_t reseeded = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] != 0) {
            continue;
        }
        const auto it = std::max_element(sq_dist.begin(), sq_dist.end());
        const auto idx = static_cast<std::size_t>(it - sq_dist.begin());
        for (std::size_t j = 0; j < dim; ++j) {
            centroids[c * dim + j] = frames.data[idx * dim + j];
        }
        sq_dist[idx] = 0.0;
        ++reseeded;
    }
    return reseeded;
}

/// Single-point moves after Lloyd: a point leaves cluster a for cluster b when
///   n_b / (n_b + 1) |x - c_b|^2  <  n_a / (n_a - 1) |x - c_a|^2,
/// which strictly lowers inertia; both means are updated in place. Lloyd can
/// stall at partitions that such a move still improves. Returns the moves made.
std::uint64_t refine_moves(const PooledFrames& frames, std::uint32_t k, std::vector<std::uint32_t>& labels,
                           std::vector<double>& centroids, std::uint32_t max_passes) {
    const std::size_t n = frames.size();
    const std::size_t dim = frames.dim;
    std::vector<double> count(k, 0.0);
    std::fill(centroids.begin(), centroids.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        count[labels[i]] += 1.0;
        for (std::size_t j = 0; j < dim; ++j) {
            centroids[labels[i] * dim + j] += frames.data[i * dim + j];
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (count[c] == 0.0) {
            continue;
        }
        for (std::size_t j = 0; j < dim; ++j) {
            centroids[c * dim + j] /= count[c];
        }
    }
    auto sq = [&](std::size_t i, std::size_t c) {
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double e = frames.data[i * dim + j] - centroids[c * dim + j];
            d += e * e;
        }
        return d;
    };
    std::uint64_t moves = 0;
    for (std::uint32_t pass = 0; pass < max_passes; ++pass) {
        std::uint64_t moved = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t a = labels[i];
            if (count[a] <= 1.0) {
                continue;
            }
            const double leave = count[a] / (count[a] - 1.0) * sq(i, a);
            double best = leave;
            std::uint32_t to = a;
            for (std::uint32_t b = 0; b < k; ++b) {
                if (b == a) {
                    continue;
                }
                const double join = count[b] / (count[b] + 1.0) * sq(i, b);
                // Relative margin keeps rounding noise from cycling a point.
                if (join < best * (1.0 - 1e-12)) {
                    best = join;
                    to = b;
                }
            }
            if (to == a) {
                continue;
            }
            for (std::size_t j = 0; j < dim; ++j) {
                const double x = frames.data[i * dim + j];
                centroids[a * dim + j] = (centroids[a * dim + j] * count[a] - x) / (count[a] - 1.0);
                centroids[to * dim + j] = (centroids[to * dim + j] * count[to] + x) / (count[to] + 1.0);
            }
            count[a] -= 1.0;
            count[to] += 1.0;
            labels[i] = to;
            ++moved;
        }
        moves += moved;
        if (moved == 0) {
            break;
        }
    }
    return moves;
}

struct RunResult {
    std::vector<double> centroids;
    std::vector<double> history;
    std::uint32_t iterations = 0;
    bool converged = false;
    std::uint32_t reseeded = 0;
};

RunResult lloyd(const PooledFrames& frames, std::uint32_t k, const FitConfig& cfg,
                std::uint64_t seed) {
    const std::size_t dim = frames.dim;
    RunResult run;
    run.centroids = seed_centroids(frames, k, seed);

    kernels::Assignment a;
    kernels::omp::assign_nearest(frames.data, run.centroids, dim, a);
    double prev = kernels::omp::sum(a.sq_dist);
    run.history.push_back(prev);

    for (std::uint32_t it = 1; it <= cfg.max_iters; ++it) {
        const auto sums = kernels::omp::accumulate(frames.data, a.labels, k, dim);
        for (std::size_t c = 0; c < k; ++c) {
            if (sums.counts[c] == 0) {
                continue;
            }
            const double inv = 1.0 / static_cast<double>(sums.counts[c]);
            for (std::size_t j = 0; j < dim; ++j) {
                run.centroids[c * dim + j] = sums.sums[c * dim + j] * inv;
            }
        }
        run.reseeded += reseed_empty(frames, sums.counts, a.sq_dist, run.centroids);

        kernels::omp::assign_nearest(frames.data, run.centroids, dim, a);
        const double cur = kernels::omp::sum(a.sq_dist);
        run.history.push_back(cur);
        run.iterations = it;
        if (cur <= 0.0 || (prev - cur) <= cfg.tol * prev) {
            run.converged = true;
            break;
        }
        prev = cur;
    }
    if (cfg.refine_passes > 0 && refine_moves(frames, k, a.labels, run.centroids, cfg.refine_passes) > 0) {
        kernels::omp::assign_nearest(frames.data, run.centroids, dim, a);
        run.history.push_back(kernels::omp::sum(a.sq_dist));
    }
    return run;
}

RunResult minibatch(const PooledFrames& frames, std::uint32_t k, const FitConfig& cfg,
                    std::uint64_t seed) {
    const std::size_t n = frames.size();
    const std::size_t dim = frames.dim;
    RunResult run;
    run.centroids = seed_centroids(frames, k, seed);
    Rng rng(derive_seed(seed, 0xBA7C4));
    // The seed point counts as one observation of its cluster.
    std::vector<double> seen(k, 1.0);

    std::vector<float> batch(static_cast<std::size_t>(cfg.batch_size) * dim);
    kernels::Assignment a;
    double smoothed = -1.0;
    for (std::uint32_t it = 1; it <= cfg.max_iters; ++it) {
        for (std::uint32_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t idx = rng.below(n);
            std::copy_n(frames.data.begin() + idx * dim, dim, batch.begin() + b * dim);
        }
        kernels::omp::assign_nearest(batch, run.centroids, dim, a);
        const double batch_inertia = kernels::serial::sum(a.sq_dist) / cfg.batch_size;
        // Per-center learning rate 1/count (Sculley-style), applied in batch order.
        for (std::uint32_t b = 0; b < cfg.batch_size; ++b) {
            const std::uint32_t c = a.labels[b];
            seen[c] += 1.0;
            const double eta = 1.0 / seen[c];
            for (std::size_t j = 0; j < dim; ++j) {
                double& mu = run.centroids[c * dim + j];
                mu += eta * (static_cast<double>(batch[b * dim + j]) - mu);
            }
        }
        const double prev = smoothed;
        smoothed = prev < 0.0 ? batch_inertia : 0.9 * prev + 0.1 * batch_inertia;
        run.history.push_back(smoothed);
        run.iterations = it;
        if (it > 10 && prev > 0.0 && std::abs(prev - smoothed) <= cfg.tol * prev) {
            run.converged = true;
            break;
        }
    }

    kernels::omp::assign_nearest(frames.data, run.centroids, dim, a);
    const auto sums = kernels::omp::accumulate(frames.data, a.labels, k, dim);
    run.reseeded += reseed_empty(frames, sums.counts, a.sq_dist, run.centroids);
    return run;
}

}  // namespace

void FitConfig::validate() const {
    if (max_iters < 1) {
        throw Error(ErrorCode::InvalidConfig, "max_iters must be >= 1");
    }
    if (!(tol >= 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "tol must be >= 0");
    }
    if (n_init < 1) {
        throw Error(ErrorCode::InvalidConfig, "n_init must be >= 1");
    }
}

PooledFrames pool_frames(std::span<const FeatureMatrix> corpus) {
    PooledFrames p;
    std::size_t total = 0;
    for (const auto& m : corpus) {
        if (m.n_frames() == 0) {
            continue;
        }
        if (p.dim == 0) {
            p.dim = m.dim;
        } else if (m.dim != p.dim) {
            throw Error(ErrorCode::DimMismatch, m.utt_id + ": dim " + std::to_string(m.dim) +
                                                    " differs from " + std::to_string(p.dim));
        }
        total += m.frames.size();
    }
    p.data.reserve(total);
    for (const auto& m : corpus) {
        p.data.insert(p.data.end(), m.frames.begin(), m.frames.end());
    }
    return p;
}

Codebook kmeanspp_init(const PooledFrames& frames, std::uint32_t k, std::uint64_t seed) {
    check_frames(frames, k);
    const auto centroids = seed_centroids(frames, k, seed);
    Codebook cb{k, frames.dim, std::vector<float>(centroids.begin(), centroids.end()),
                {{}, seed, frames.size(), 0.0}};
    cb.meta.inertia = inertia(frames, cb);
    return cb;
}

FitResult fit_detailed(const PooledFrames& frames, std::uint32_t k, const FitConfig& cfg,
                       std::string source_tag) {
    cfg.validate();
    check_frames(frames, k);

    FitResult best;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (std::uint32_t r = 0; r < cfg.n_init; ++r) {
        const std::uint64_t seed = r == 0 ? cfg.seed : derive_seed(cfg.seed, r);
        RunResult run = cfg.batch_size == 0 ? lloyd(frames, k, cfg, seed)
                                            : minibatch(frames, k, cfg, seed);
        Codebook cb{k, frames.dim, std::vector<float>(run.centroids.begin(), run.centroids.end()),
                    {source_tag, cfg.seed, frames.size(), 0.0}};
        // Inertia is reported for the stored binary32 centroids.
        cb.meta.inertia = inertia(frames, cb);
        if (cb.meta.inertia < best_inertia) {
            best_inertia = cb.meta.inertia;
            best.codebook = std::move(cb);
            best.inertia_history = std::move(run.history);
            best.iterations = run.iterations;
            best.converged = run.converged;
            best.reseeded_clusters = run.reseeded;
        }
    }
    best.codebook.validate();
    return best;
}

double inertia(const PooledFrames& frames, const Codebook& cb) {
    if (frames.dim != cb.dim) {
        throw Error(ErrorCode::DimMismatch, "frames and codebook dims differ");
    }
    kernels::Assignment a;
    kernels::omp::assign_nearest(frames.data, widen(cb.centroids), cb.dim, a);
    return kernels::omp::sum(a.sq_dist);
}

UnitSequence quantize(const FeatureMatrix& m, const Codebook& cb) {
    if (m.n_frames() > 0 && m.dim != cb.dim) {
        throw Error(ErrorCode::DimMismatch, m.utt_id + ": feature dim " + std::to_string(m.dim) +
                                                " != codebook dim " + std::to_string(cb.dim));
    }
    UnitSequence s{m.utt_id, m.frame_rate_hz, {}};
    if (m.n_frames() == 0) {
        return s;
    }
    kernels::Assignment a;
    kernels::omp::assign_nearest(m.frames, widen(cb.centroids), cb.dim, a);
    s.units = std::move(a.labels);
    return s;
}

void Codebook::validate() const {
    if (k == 0 || dim == 0) {
        throw Error(ErrorCode::InvalidConfig, "codebook needs k >= 1 and dim >= 1");
    }
    if (centroids.size() != static_cast<std::size_t>(k) * dim) {
        throw Error(ErrorCode::DimMismatch, "centroid buffer does not match k x dim");
    }
    for (const float v : centroids) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteValue, "non-finite centroid value");
        }
    }
    std::set<std::vector<float>> distinct;
    for (std::size_t c = 0; c < k; ++c) {
        const auto row = centroid(c);
        if (!distinct.emplace(row.begin(), row.end()).second) {
            throw Error(ErrorCode::DegenerateData, "centroid " + std::to_string(c) + " is a duplicate");
        }
    }
}

}  // namespace dsu
