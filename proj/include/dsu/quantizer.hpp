#pragma once

// k-means codebooks over pooled feature frames and nearest-centroid
// quantization of utterances into unit sequences.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dsu/corpusio.hpp"
#include "dsu/unitstream.hpp"

namespace dsu {

struct CodebookMeta {
    std::string source_tag;
    std::uint64_t seed = 42;
    std::uint64_t n_training_frames = 0;
    double inertia = 0.0;

    bool operator==(const CodebookMeta&) const = default;
};

/// k centroids in dim-dimensional space, row-major, stored at binary32.
struct Codebook {
    std::uint32_t k = 0;
    std::uint32_t dim = 0;
    std::vector<float> centroids;
    CodebookMeta meta;

    std::span<const float> centroid(std::size_t c) const noexcept {
        return {centroids.data() + c * dim, dim};
    }
    /// Throws on k == 0, shape errors, non-finite or duplicate centroids.
    void validate() const;

    bool operator==(const Codebook&) const = default;
};

struct FitConfig {
    std::uint32_t max_iters = 100;
    double tol = 1e-4;          // relative inertia change that stops Lloyd iterations
    std::uint32_t batch_size = 0;  // 0 means full batch
    std::uint64_t seed = 42;
    std::uint32_t n_init = 1;
    /// Passes of single-point moves after full-batch Lloyd; 0 disables.
    std::uint32_t refine_passes = 10;

    void validate() const;
};

/// All frames of a corpus, concatenated; utterance boundaries are ignored.
struct PooledFrames {
    std::uint32_t dim = 0;
    std::vector<float> data;

    std::size_t size() const noexcept { return dim == 0 ? 0 : data.size() / dim; }
};

PooledFrames pool_frames(std::span<const FeatureMatrix> corpus);

/// k-means++ seeding: first centroid uniform, each next one sampled with
/// probability proportional to squared distance to the nearest chosen one.
Codebook kmeanspp_init(const PooledFrames& frames, std::uint32_t k, std::uint64_t seed);

struct FitResult {
    Codebook codebook;
    /// Inertia after every assignment step of the selected run (full batch) or
    /// the smoothed mini-batch inertia (mini-batch).
    std::vector<double> inertia_history;
    std::uint32_t iterations = 0;
    bool converged = false;
    std::uint32_t reseeded_clusters = 0;
};

FitResult fit_detailed(const PooledFrames& frames, std::uint32_t k, const FitConfig& cfg,
                       std::string source_tag = {});

inline Codebook fit(const PooledFrames& frames, std::uint32_t k, const FitConfig& cfg,
                    std::string source_tag = {}) {
    return fit_detailed(frames, k, cfg, std::move(source_tag)).codebook;
}

/// Sum over frames of squared distance to the nearest centroid.
double inertia(const PooledFrames& frames, const Codebook& cb);

/// Nearest centroid per frame, lowest index on ties.
UnitSequence quantize(const FeatureMatrix& m, const Codebook& cb);

// .kmcb codebook files.
std::vector<std::uint8_t> serialize_codebook(const Codebook& cb);
Codebook parse_codebook_bytes(std::span<const std::uint8_t> bytes);
void save_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace dsu
