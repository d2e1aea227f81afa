#ifndef RDCOMM_RD_ORACLE_HPP_
#define RDCOMM_RD_ORACLE_HPP_

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "rdcomm/infotheory.hpp"

// Exhaustive rate-distortion checks on sources with axes "Y", "X_s", "X_r".
// Rates are in bits, distortions in nats.
namespace rdcomm
{

/// Encoder p(Z | X_s). Deterministic encoders keep their symbol map.
class EncoderSpec
{
public:
    enum class Kind
    {
        Deterministic,
        Stochastic
    };

    static EncoderSpec deterministic(std::vector<std::size_t> map, std::size_t z_size);
    static EncoderSpec stochastic(Eigen::MatrixXd channel);

    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] const Eigen::MatrixXd& channel() const { return channel_; }
    [[nodiscard]] const std::vector<std::size_t>& map() const { return map_; }
    [[nodiscard]] std::size_t z_size() const { return static_cast<std::size_t>(channel_.cols()); }
    [[nodiscard]] std::size_t x_size() const { return static_cast<std::size_t>(channel_.rows()); }

    /// The deterministic encoder numbered `id` in enumeration order: symbol x
    /// maps to digit x of `id` written in base z_size (digit 0 least significant).
    static EncoderSpec from_id(std::uint64_t id, std::size_t x_size, std::size_t z_size);

private:
    Kind kind_ = Kind::Deterministic;
    std::vector<std::size_t> map_;
    Eigen::MatrixXd channel_;
};

/// Source table with the message axis "Z" appended.
JointTable compose(const JointTable& source, const EncoderSpec& enc);

struct RDPoint
{
    std::uint64_t encoder_id = 0;
    double rate_bits = 0.0;
    double distortion_nats = 0.0;
    double cond_h_z_given_y = 0.0;
    double mi_z_xr = 0.0;
    double bound_bits = 0.0;
    bool pareto = false;
};

/// Maximum |X_s| accepted by enumerate_frontier.
inline constexpr std::size_t kMaxEnumeratedAlphabet = 6;

/// One point per deterministic encoder, ordered by encoder id, with the
/// Pareto-minimal (rate, distortion) points flagged. `jobs` > 1 splits the id
/// range across threads; the result does not depend on `jobs`.
std::vector<RDPoint> enumerate_frontier(const JointTable& source, std::size_t z_alphabet_size, unsigned jobs = 1);

/// max(0, I(Y; X_s | X_r) - delta) in bits, delta given in nats.
double theoretical_bound(const JointTable& source, double delta_nats);

struct ConditionReport
{
    double h_z_given_y = 0.0;   // bits
    double mi_z_xr = 0.0;       // bits
    double gap_to_bound = 0.0;  // rate - bound(achieved distortion), bits
    double distortion_nats = 0.0;
    double rate_bits = 0.0;
};

ConditionReport check_conditions(const JointTable& source, const EncoderSpec& enc);

struct MarkovReport
{
    double mi_z_xr_given_xs = 0.0;
    double mi_z_y_given_xs = 0.0;
};

/// I(Z; X_r | X_s) and I(Z; Y | X_s) on the composite table, in bits.
MarkovReport markov_premise(const JointTable& composite);

/// X_s = (Y, N) packed as y * n_noise + n, with Y, N, X_r mutually independent
/// and drawn from Dirichlet(1) marginals.
JointTable constructed_source(std::size_t n_y, std::size_t n_noise, std::size_t n_r, std::uint64_t seed);

/// The encoder Z = Y-component of a constructed source.
EncoderSpec y_component_encoder(std::size_t n_y, std::size_t n_noise);

void write_frontier_csv(std::ostream& out, const std::vector<RDPoint>& points);

} // namespace rdcomm

#endif // RDCOMM_RD_ORACLE_HPP_
