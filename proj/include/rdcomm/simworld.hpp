#ifndef RDCOMM_SIMWORLD_HPP_
#define RDCOMM_SIMWORLD_HPP_

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "rdcomm/types.hpp"

namespace rdcomm
{

inline constexpr int kUnobserved = -1;

/// Field of view: a half-open rectangle [u0, u1) x [v0, v1), or a sector of
/// cells within `radius` of (cu, cv) whose bearing lies in [theta0, theta1]
/// degrees (0 = +v, counter-clockwise towards -u).
struct Fov
{
    enum class Kind
    {
        Rect,
        Sector
    };
    Kind kind = Kind::Rect;
    int u0 = 0, v0 = 0, u1 = 0, v1 = 0;
    double cu = 0, cv = 0, radius = 0, theta0 = 0, theta1 = 360;

    static Fov rect(int u0, int v0, int u1, int v1) { return {Kind::Rect, u0, v0, u1, v1, 0, 0, 0, 0, 360}; }
    static Fov sector(double cu, double cv, double radius, double theta0, double theta1)
    {
        return {Kind::Sector, 0, 0, 0, 0, cu, cv, radius, theta0, theta1};
    }
};

Mask fov_mask(const Fov& f, int h, int w);

struct WorldConfig
{
    int h = 32;
    int w = 32;
    int classes = 4;  // K, background is class 0
    int n_agents = 2;
    std::vector<Fov> fovs;       // one per agent; empty means default split
    std::vector<double> noise{0.1};  // flip probability per true class; one value broadcasts
    double density = 0.3;
    int obj_min = 2;
    int obj_max = 5;
    std::uint64_t seed = 0;

    void validate() const;
    [[nodiscard]] Fov fov(int agent) const;
    [[nodiscard]] double epsilon(int cls) const;
    [[nodiscard]] Vec prior() const;
    [[nodiscard]] int channels() const { return 2 * classes; }
};

/// Agents split the grid into overlapping vertical bands.
std::vector<Fov> default_fovs(int h, int w, int n_agents);

struct World
{
    LabelGrid truth;
    std::vector<LabelGrid> obs;  // kUnobserved outside the agent's FoV
    std::vector<Mask> fov;
};

World generate(const WorldConfig& cfg);

/// Labels inside `fov` pass through the symmetric flip channel.
LabelGrid observe(const LabelGrid& truth, const Mask& fov, const WorldConfig& cfg, std::mt19937_64& rng);

/// P(observed = o | true = y).
double likelihood(const WorldConfig& cfg, int observed, int truth);

/// Channels [0, K): one-hot of the observed class. Channels [K, 2K): counts of
/// observed classes in the 3x3 window divided by 9. Zero where unobserved.
FeatureGrid extract_features(const LabelGrid& obs, int classes);

/// Per-cell posterior over classes (cells x K) given all listed observations.
FeatureGrid posterior_from_observations(const std::vector<LabelGrid>& obs, const WorldConfig& cfg);

/// Per-cell posterior treating the first K feature channels, clamped to
/// [0, 1], as soft observation counts.
FeatureGrid posterior_from_features(const FeatureGrid& features, const WorldConfig& cfg);

ConfidenceGrid confidence(const FeatureGrid& features, const WorldConfig& cfg);

FeatureGrid fuse(const FeatureGrid& local, const FeatureGrid& received);

/// Each all-zero cell with nonzero 8-neighbours takes half their mean.
FeatureGrid smooth(const FeatureGrid& sparse);

/// Argmax per cell, lowest class on ties.
LabelGrid predict(const FeatureGrid& posterior);

/// Mean over cells of the posterior entropy in nats.
double mean_entropy(const FeatureGrid& posterior);

struct IoUCounts
{
    std::vector<long> inter;
    std::vector<long> uni;

    explicit IoUCounts(int classes = 0) : inter(static_cast<std::size_t>(classes), 0), uni(static_cast<std::size_t>(classes), 0) {}
    void add(const LabelGrid& pred, const LabelGrid& truth);
    IoUCounts& operator+=(const IoUCounts& o);
};

struct IoUResult
{
    std::vector<double> per_class;  // NaN for classes absent from both
    double mean = 0;
};

IoUResult iou_from(const IoUCounts& c);
IoUResult score_iou(const LabelGrid& pred, const LabelGrid& truth, int classes);

/// "rdcomm-grid 1", then "h w", then h rows of labels.
void write_grid(std::ostream& out, const LabelGrid& g);
LabelGrid read_grid(std::istream& in);

} // namespace rdcomm

#endif // RDCOMM_SIMWORLD_HPP_
