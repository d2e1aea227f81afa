#ifndef RDCOMM_PIPELINE_HPP_
#define RDCOMM_PIPELINE_HPP_

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rdcomm/entropy_coder.hpp"
#include "rdcomm/mi_estimator.hpp"
#include "rdcomm/simworld.hpp"
#include "rdcomm/vq_codec.hpp"

namespace rdcomm
{

enum class Selector
{
    Mi,
    ConfidenceOnly,
    None
};

std::string_view to_string(Selector s);
Selector selector_from_string(std::string_view s);

struct CodebookParams
{
    int n_base = 4;
    int n_res = 64;
    int iters = 30;
    int max_points = 20000;
};

struct DiscriminatorParams
{
    int hidden = kDefaultHidden;
    int steps = 300;
    double lr = 0.1;
    int max_pairs = 4096;
};

struct TrainConfig
{
    WorldConfig world;
    int n_worlds = 8;
    std::uint64_t seed = 0;
    CodebookParams codebook;
    DiscriminatorParams discriminator;
    std::vector<double> tau_c_grid{0.3, 0.5, 0.7, 0.9};
};

struct Model
{
    LayeredCodebook codebook;
    Discriminator discriminator;
    std::vector<double> tau_c_draws;      // one per directed training pair
    std::vector<double> score_quantiles;  // T on joint training pairs at 0, 0.1, ..., 1
    std::vector<double> loss_history;
};

/// Training in the order codebooks, confidence frequencies, discriminator.
/// Each stage refuses to run before its predecessors.
class TrainingSession
{
public:
    explicit TrainingSession(TrainConfig cfg);

    void fit_codebooks();
    void accumulate_frequencies();
    [[nodiscard]] CodeTables build_codes(CoderVariant v) const;
    void fit_discriminator();

    [[nodiscard]] const Model& model() const { return model_; }
    [[nodiscard]] const std::vector<World>& worlds() const { return worlds_; }

private:
    TrainConfig cfg_;
    std::vector<World> worlds_;
    std::vector<FeatureGrid> features_;  // per world, per agent
    Model model_;
    int stage_ = 0;
};

Model train_all(const TrainConfig& cfg);

/// Seed of the i-th training world; disjoint in practice from sweep seeds.
std::uint64_t training_world_seed(std::uint64_t seed, int i);

struct RoundSpec
{
    double tau_c = 0.5;
    double tau_mi = std::numeric_limits<double>::infinity();
    CoderVariant coder = CoderVariant::TaskEntropy;
    Selector selector = Selector::Mi;
};

struct RoundResult
{
    std::uint64_t seed = 0;
    RoundSpec spec;
    std::size_t total_bits = 0;
    std::size_t payload_bits = 0;   // full payload: base and residual codes
    std::size_t abstract_bits = 0;  // base payload handed over first
    std::size_t mask_bits = 0;
    std::size_t messages = 0;
    std::size_t selected_cells = 0;  // M_c, summed over messages
    double bpp = 0;                  // total_bits per cell per directed message
    double bpp_no_mask = 0;          // same, without mask bits
    double mean_iou = 0;
    std::vector<double> class_iou;
    double distortion_nats = 0;
    std::vector<std::vector<std::uint8_t>> bitstreams;  // one per directed message
};

/// One collaboration round: every agent sends to every other agent, each
/// receiver fuses everything it gets and predicts. IoU is pooled over
/// receivers. Cells with only the abstract use the base reconstruction. When
/// tau_c separates background observations from all others, a cleared
/// confidence bit inside the sender's view reads as a background observation.
RoundResult run_round(const World& world, const WorldConfig& cfg, const Model& model, const CodeTables& codes,
                      const RoundSpec& spec, bool keep_bitstreams = false);

enum class Reference
{
    NoCollaboration,
    RawFeatures
};

/// IoU without messages, or with raw features fused directly.
IoUResult reference_iou(const World& world, const WorldConfig& cfg, Reference ref);

/// Bits for sending raw features of every cell: 32 per channel.
std::size_t raw_feature_bits(const WorldConfig& cfg);

struct SweepConfig
{
    std::vector<double> tau_c{0.5};
    std::vector<double> tau_mi{std::numeric_limits<double>::infinity()};
    std::vector<std::uint64_t> seeds{0};
    CoderVariant coder = CoderVariant::TaskEntropy;
    Selector selector = Selector::Mi;
    bool keep_bitstreams = false;

    void validate() const;
};

struct Stat
{
    double mean = 0;
    double stddev = 0;
};

struct SweepPoint
{
    double tau_c = 0;
    double tau_mi = 0;
    std::size_t n = 0;
    Stat total_bits, bpp, bpp_no_mask, mean_iou, distortion_nats, abstract_fraction;
    bool pareto = false;
};

struct SweepResult
{
    std::vector<RoundResult> rounds;  // ordered by (tau_c, tau_mi, seed)
    std::vector<SweepPoint> points;   // ordered by (tau_c, tau_mi)
};

SweepResult run_sweep(const WorldConfig& world, const Model& model, const SweepConfig& cfg, int jobs = 1);

/// Flags points that no other point beats on both bpp (lower) and IoU (higher).
void mark_pareto(std::vector<SweepPoint>& points);

/// Threshold from a token: a number, "inf", or "qP" for the P-quantile of
/// the trained redundancy scores (q1 maps to +inf).
double resolve_tau_mi(const std::string& token, const Model& model);

void write_rounds_csv(std::ostream& out, const std::vector<RoundResult>& rounds, int classes);
void write_summary_csv(std::ostream& out, const std::vector<SweepPoint>& points, CoderVariant coder, Selector selector);

} // namespace rdcomm

#endif // RDCOMM_PIPELINE_HPP_
