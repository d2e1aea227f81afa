#ifndef RDCOMM_TYPES_HPP_
#define RDCOMM_TYPES_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace rdcomm
{

using Scalar = double;

using Vec = Eigen::VectorX<Scalar>;
using Mat = Eigen::MatrixX<Scalar>;
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Array2 = Eigen::ArrayXX<Scalar>;
using IndexArray2 = Eigen::ArrayXX<int>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Thrown on contract violations detectable from arguments alone.
class InvalidArgument : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a serialized artifact cannot be parsed.
class FormatError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when a computation produces non-finite values.
class NumericalError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// h x w x c real-valued grid. Cells are stored as rows of `data` in raster
/// order (row u, column v -> row u * w + v), so a grid is directly a point set
/// for the quantizer.
template <typename S>
struct FeatureGridT
{
    int h = 0;
    int w = 0;
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data;

    FeatureGridT() = default;
    FeatureGridT(int rows, int cols, int channels)
        : h(rows), w(cols), data(Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(
                                static_cast<Eigen::Index>(rows) * cols, channels))
    {
    }

    [[nodiscard]] int channels() const { return static_cast<int>(data.cols()); }
    [[nodiscard]] Eigen::Index cells() const { return data.rows(); }
    [[nodiscard]] Eigen::Index index(int u, int v) const { return static_cast<Eigen::Index>(u) * w + v; }

    auto cell(int u, int v) { return data.row(index(u, v)); }
    auto cell(int u, int v) const { return data.row(index(u, v)); }

    [[nodiscard]] bool cell_is_zero(Eigen::Index i) const { return (data.row(i).array() == S(0)).all(); }

    bool operator==(const FeatureGridT& o) const { return h == o.h && w == o.w && data == o.data; }
};

using FeatureGrid = FeatureGridT<Scalar>;

/// h x w confidence scores in [0, 1].
using ConfidenceGrid = Array2;

/// h x w class labels in [0, K).
using LabelGrid = IndexArray2;

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw InvalidArgument(what);
}

} // namespace rdcomm

#endif // RDCOMM_TYPES_HPP_
