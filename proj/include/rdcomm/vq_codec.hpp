#ifndef RDCOMM_VQ_CODEC_HPP_
#define RDCOMM_VQ_CODEC_HPP_

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "rdcomm/types.hpp"

namespace rdcomm
{

/// x -> linear * x + offset, applied to row vectors.
struct AffineMap
{
    Mat linear;
    Vec offset;

    static AffineMap identity(Eigen::Index n);

    [[nodiscard]] Eigen::Index in_dim() const { return linear.cols(); }
    [[nodiscard]] Eigen::Index out_dim() const { return linear.rows(); }
    [[nodiscard]] RowMat apply(const RowMat& points) const;
    [[nodiscard]] bool is_identity() const;
};

/// Random orthogonal projector and its exact inverse, for exercising the
/// projection path with d == c.
std::pair<AffineMap, AffineMap> random_orthogonal_pair(Eigen::Index dim, std::uint64_t seed);

struct Codebook
{
    RowMat embeddings;  // n x d
    Vec conf_freq;
    Vec occ_freq;

    Codebook() = default;
    explicit Codebook(RowMat e);

    [[nodiscard]] int size() const { return static_cast<int>(embeddings.rows()); }
    [[nodiscard]] Eigen::Index dim() const { return embeddings.cols(); }
};

struct LayeredCodebook
{
    Codebook base;
    Codebook res;
    AffineMap proj_in;   // c -> d
    AffineMap proj_out;  // d -> c

    [[nodiscard]] Eigen::Index feature_dim() const { return proj_in.in_dim(); }
    void validate() const;
};

struct IndexGrid
{
    int h = 0;
    int w = 0;
    IndexArray2 base_idx;
    IndexArray2 res_idx;

    IndexGrid() = default;
    IndexGrid(int rows, int cols) : h(rows), w(cols), base_idx(IndexArray2::Zero(rows, cols)), res_idx(IndexArray2::Zero(rows, cols)) {}

    bool operator==(const IndexGrid& o) const
    {
        return h == o.h && w == o.w && (base_idx == o.base_idx).all() && (res_idx == o.res_idx).all();
    }
};

/// Row of `embeddings` closest to `x` in Euclidean distance; ties go to the
/// lowest index.
template <typename Derived>
Eigen::Index nearest_row(const RowMat& embeddings, const Eigen::MatrixBase<Derived>& x)
{
    Eigen::Index best = 0;
    Scalar best_d = std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
        const Scalar d = (embeddings.row(i) - x.derived()).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

struct KMeansResult
{
    RowMat initial_centroids;  // k-means++ seeding
    RowMat centroids;
    std::vector<int> assignment;
    std::vector<double> sse_history;  // within-cluster SSE after each iteration
};

/// Lloyd's algorithm from k-means++ seeding. An empty cluster is re-seeded at
/// the point farthest from its current centroid.
KMeansResult kmeans(const RowMat& points, int k, int iters, std::uint64_t seed);

/// Lloyd's algorithm from given initial centroids.
KMeansResult kmeans_from(const RowMat& points, RowMat initial, int iters);

/// Base codebook by k-means on proj_in(features); residual codebook by
/// k-means on the base residuals. Frequencies start at zero.
LayeredCodebook train_codebooks(const RowMat& features, int n_base, int n_res, int iters, std::uint64_t seed,
                                std::optional<std::pair<AffineMap, AffineMap>> projectors = std::nullopt);

struct Quantized
{
    IndexGrid idx;
    FeatureGrid recon;
};

Quantized quantize(const FeatureGrid& grid, const LayeredCodebook& cb);

/// Reconstruction using only the base layer (f_out of the base embedding).
FeatureGrid quantize_base_only(const FeatureGrid& grid, const LayeredCodebook& cb);

/// f_out(base + res) for every cell of `idx`.
FeatureGrid reconstruct(const IndexGrid& idx, const LayeredCodebook& cb);

/// f_out(base) for every cell: the abstract handed to the receiver.
FeatureGrid base_reconstruction(const IndexGrid& idx, const LayeredCodebook& cb);

/// Adds confidence mass and occurrence counts of every cell to the base and
/// residual embeddings it was quantized to. Not thread-safe on `cb`.
void accumulate_conf_freq(LayeredCodebook& cb, const IndexGrid& idx, const ConfidenceGrid& conf);

void write_codebook(std::ostream& out, const LayeredCodebook& cb);
LayeredCodebook read_codebook(std::istream& in);

} // namespace rdcomm

#endif // RDCOMM_VQ_CODEC_HPP_
