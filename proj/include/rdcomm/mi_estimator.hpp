#ifndef RDCOMM_MI_ESTIMATOR_HPP_
#define RDCOMM_MI_ESTIMATOR_HPP_

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "rdcomm/types.hpp"

namespace rdcomm
{

/// T(s, r): [s r] -> 64 -> 64 -> 1 with ReLU hidden units and a raw output.
struct Discriminator
{
    Mat w1;
    Vec b1;
    Mat w2;
    Vec b2;
    Vec w3;
    Scalar b3 = 0;

    static Discriminator init(int c, int hidden, std::uint64_t seed);
    static Discriminator zeros(int c, int hidden);

    [[nodiscard]] int channels() const { return static_cast<int>(w1.cols() / 2); }
    [[nodiscard]] int hidden() const { return static_cast<int>(w1.rows()); }
    [[nodiscard]] bool all_finite() const;

    /// Scores for row-aligned pairs.
    [[nodiscard]] Vec forward(const RowMat& s, const RowMat& r) const;

    /// All parameters in a fixed order: w1, b1, w2, b2, w3, b3.
    [[nodiscard]] Vec flatten() const;
    void assign(const Vec& flat);
};

inline constexpr int kDefaultHidden = 64;

/// Means over pairs are weighted by `joint_w` / `marginal_w` when those are
/// nonempty (weights sum to 1).
struct PairBatch
{
    RowMat joint_s;
    RowMat joint_r;
    RowMat marginal_s;
    RowMat marginal_r;
    Vec joint_w;
    Vec marginal_w;
};

/// Joint pairs are the rows as given; marginal pairs recombine `r` by a
/// seeded shuffle of row indices.
PairBatch make_pairs(const RowMat& s, const RowMat& r, std::uint64_t seed);

/// Merges identical pairs into one weighted row. Same loss, fewer rows.
PairBatch deduplicate(const PairBatch& batch);

/// mean softplus(-T) over joint pairs + mean softplus(T) over marginal pairs.
double loss(const Discriminator& d, const PairBatch& batch);

/// Gradient of `loss` in `flatten` order.
Vec loss_gradient(const Discriminator& d, const PairBatch& batch);

/// One full-batch gradient step; returns the loss before the step.
double train_step(Discriminator& d, const PairBatch& batch, double lr);

/// Loss before each of `steps` updates.
std::vector<double> train(Discriminator& d, const PairBatch& batch, int steps, double lr);

/// 2 ln 2 - loss, in nats: zero for T = 0, at most 2 ln 2. A
/// Jensen-Shannon-type score, not an unbiased MI estimate.
double mi_lower_bound(const Discriminator& d, const PairBatch& batch);

/// Mean T over joint pairs. At the optimal discriminator T = log(p_joint /
/// p_marginal), so this estimates the mutual information in nats.
double mi_score(const Discriminator& d, const PairBatch& batch);

/// Per-cell T(abstract_uv, local_uv).
Array2 redundancy_map(const Discriminator& d, const FeatureGrid& abstract, const FeatureGrid& local);

/// 1[R < tau].
Mask select_mask(const Array2& rmap, double tau_mi);

void write_discriminator(std::ostream& out, const Discriminator& d);
Discriminator read_discriminator(std::istream& in);

} // namespace rdcomm

#endif // RDCOMM_MI_ESTIMATOR_HPP_
