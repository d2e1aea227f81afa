#ifndef RDCOMM_INFOTHEORY_HPP_
#define RDCOMM_INFOTHEORY_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rdcomm/types.hpp"

namespace rdcomm
{

enum class Units
{
    Bits,
    Nats
};

struct InfoQuantity
{
    double value = 0.0;
    Units units = Units::Bits;

    [[nodiscard]] double bits() const;
    [[nodiscard]] double nats() const;
    [[nodiscard]] InfoQuantity in(Units u) const { return {u == Units::Bits ? bits() : nats(), u}; }
};

struct Axis
{
    std::string name;
    std::size_t size = 0;

    bool operator==(const Axis&) const = default;
};

/// Exact finite joint distribution over named axes. The pmf is stored flat in
/// row-major order of the axis product (last axis varies fastest).
class JointTable
{
public:
    JointTable(std::vector<Axis> axes, Eigen::ArrayXd pmf);

    [[nodiscard]] const std::vector<Axis>& axes() const { return axes_; }
    [[nodiscard]] const Eigen::ArrayXd& pmf() const { return pmf_; }
    [[nodiscard]] std::size_t rank() const { return axes_.size(); }

    [[nodiscard]] std::size_t axis_index(const std::string& name) const;
    [[nodiscard]] bool has_axis(const std::string& name) const;
    [[nodiscard]] std::size_t axis_size(const std::string& name) const { return axes_[axis_index(name)].size; }

    [[nodiscard]] double prob(const std::vector<std::size_t>& symbols) const;
    [[nodiscard]] std::size_t flat_index(const std::vector<std::size_t>& symbols) const;
    [[nodiscard]] std::vector<std::size_t> unflatten(std::size_t flat) const;

    /// Marginal over `names`, in the order given.
    [[nodiscard]] JointTable marginal(const std::vector<std::string>& names) const;

    /// Appends axis `new_axis` with p(new | from) given by row-stochastic
    /// `channel` (rows indexed by the `from` symbol).
    [[nodiscard]] JointTable with_channel(const std::string& from, const Axis& new_axis, const Eigen::MatrixXd& channel) const;

    /// Dirichlet(1, ..., 1) over the flattened product alphabet.
    static JointTable random(std::vector<Axis> axes, std::uint64_t seed);

    /// Fixture text format: `name:size ...` header, then one `s1 s2 ... prob`
    /// line per nonzero atom. Lines starting with '#' are comments.
    static JointTable read_text(std::istream& in);
    void write_text(std::ostream& out) const;

private:
    std::vector<Axis> axes_;
    std::vector<std::size_t> strides_;
    Eigen::ArrayXd pmf_;
};

/// Shannon entropy of a pmf vector, 0 log 0 = 0.
double entropy_of(const Eigen::Ref<const Eigen::ArrayXd>& p, Units units = Units::Bits);

InfoQuantity entropy(const JointTable& t, const std::string& axis, Units units = Units::Bits);
InfoQuantity joint_entropy(const JointTable& t, const std::vector<std::string>& axes, Units units = Units::Bits);
InfoQuantity conditional_entropy(const JointTable& t, const std::string& target, const std::vector<std::string>& given,
                                 Units units = Units::Bits);
InfoQuantity mutual_information(const JointTable& t, const std::string& a, const std::string& b, Units units = Units::Bits);
InfoQuantity conditional_mi(const JointTable& t, const std::string& a, const std::string& b,
                            const std::vector<std::string>& given, Units units = Units::Bits);
InfoQuantity interaction_information(const JointTable& t, const std::string& a, const std::string& b, const std::string& c,
                                     Units units = Units::Bits);

JointTable plugin_from_samples(const std::vector<std::vector<std::size_t>>& samples, const std::vector<Axis>& axes);

/// Draws `n` iid tuples from `t`.
std::vector<std::vector<std::size_t>> sample_table(const JointTable& t, std::size_t n, std::uint64_t seed);

} // namespace rdcomm

#endif // RDCOMM_INFOTHEORY_HPP_
