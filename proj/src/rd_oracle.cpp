#include "rdcomm/rd_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <thread>

#include "rdcomm/bayes_risk.hpp"

namespace rdcomm
{

namespace
{

constexpr double kParetoEps = 1e-12;

void require_source_axes(const JointTable& source)
{
    for (const char* a : {"Y", "X_s", "X_r"})
        if (!source.has_axis(a)) throw InvalidArgument(std::string("source table needs axis ") + a);
    require(!source.has_axis("Z"), "source table already has a Z axis");
}

RDPoint evaluate(const JointTable& source, const EncoderSpec& enc, std::uint64_t id)
{
    const auto t = compose(source, enc);
    RDPoint p;
    p.encoder_id = id;
    p.rate_bits = mutual_information(t, "X_s", "Z").bits();
    p.distortion_nats = pragmatic_distortion(t, Task::Segmentation, RiskParams{});
    p.cond_h_z_given_y = conditional_entropy(t, "Z", {"Y"}).bits();
    p.mi_z_xr = mutual_information(t, "Z", "X_r").bits();
    p.bound_bits = theoretical_bound(source, std::max(0.0, p.distortion_nats));
    return p;
}

} // namespace

EncoderSpec EncoderSpec::deterministic(std::vector<std::size_t> map, std::size_t z_size)
{
    require(!map.empty(), "deterministic encoder needs a nonempty map");
    require(z_size >= 1, "message alphabet must be nonempty");
    EncoderSpec e;
    e.kind_ = Kind::Deterministic;
    e.channel_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(map.size()), static_cast<Eigen::Index>(z_size));
    for (std::size_t x = 0; x < map.size(); ++x) {
        require(map[x] < z_size, "encoder maps outside the message alphabet");
        e.channel_(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(map[x])) = 1.0;
    }
    e.map_ = std::move(map);
    return e;
}

EncoderSpec EncoderSpec::stochastic(Eigen::MatrixXd channel)
{
    require(channel.rows() >= 1 && channel.cols() >= 1, "stochastic encoder needs a nonempty channel");
    require((channel.array() >= 0.0).all() && channel.allFinite(), "channel entries must be finite and nonnegative");
    for (Eigen::Index r = 0; r < channel.rows(); ++r)
        require(std::abs(channel.row(r).sum() - 1.0) <= 1e-12, "stochastic encoder rows must sum to 1");
    EncoderSpec e;
    e.kind_ = Kind::Stochastic;
    e.channel_ = std::move(channel);
    return e;
}

EncoderSpec EncoderSpec::from_id(std::uint64_t id, std::size_t x_size, std::size_t z_size)
{
    std::vector<std::size_t> map(x_size);
    for (auto& m : map) {
        m = static_cast<std::size_t>(id % z_size);
        id /= z_size;
    }
    return deterministic(std::move(map), z_size);
}

JointTable compose(const JointTable& source, const EncoderSpec& enc)
{
    require(enc.x_size() == source.axis_size("X_s"), "encoder input alphabet does not match X_s");
    return source.with_channel("X_s", Axis{"Z", enc.z_size()}, enc.channel());
}

std::vector<RDPoint> enumerate_frontier(const JointTable& source, std::size_t z_alphabet_size, unsigned jobs)
{
    require_source_axes(source);
    const std::size_t nx = source.axis_size("X_s");
    if (nx > kMaxEnumeratedAlphabet)
        throw InvalidArgument("alphabet too large: |X_s| = " + std::to_string(nx) + " exceeds " +
                              std::to_string(kMaxEnumeratedAlphabet));
    if (z_alphabet_size < 1 || z_alphabet_size > nx)
        throw InvalidArgument("alphabet too large: message alphabet must lie in [1, |X_s|]");

    std::uint64_t count = 1;
    for (std::size_t i = 0; i < nx; ++i) count *= z_alphabet_size;

    std::vector<RDPoint> points(count);
    const auto run = [&](std::uint64_t lo, std::uint64_t hi) {
        for (std::uint64_t id = lo; id < hi; ++id)
            points[id] = evaluate(source, EncoderSpec::from_id(id, nx, z_alphabet_size), id);
    };
    const std::uint64_t n_jobs = std::clamp<std::uint64_t>(jobs, 1, count);
    if (n_jobs == 1) {
        run(0, count);
    } else {
        std::vector<std::jthread> workers;
        for (std::uint64_t j = 0; j < n_jobs; ++j)
            workers.emplace_back(run, count * j / n_jobs, count * (j + 1) / n_jobs);
    }

    for (auto& p : points) {
        p.pareto = std::none_of(points.begin(), points.end(), [&](const RDPoint& q) {
            const bool no_worse = q.rate_bits <= p.rate_bits + kParetoEps && q.distortion_nats <= p.distortion_nats + kParetoEps;
            const bool better = q.rate_bits < p.rate_bits - kParetoEps || q.distortion_nats < p.distortion_nats - kParetoEps;
            return no_worse && better;
        });
    }
    return points;
}

double theoretical_bound(const JointTable& source, double delta_nats)
{
    require(delta_nats >= 0.0, "distortion budget must be nonnegative");
    const double cmi = conditional_mi(source, "Y", "X_s", {"X_r"}).bits();
    return std::max(0.0, cmi - delta_nats / std::numbers::ln2);
}

ConditionReport check_conditions(const JointTable& source, const EncoderSpec& enc)
{
    require_source_axes(source);
    const auto t = compose(source, enc);
    ConditionReport r;
    r.h_z_given_y = conditional_entropy(t, "Z", {"Y"}).bits();
    r.mi_z_xr = mutual_information(t, "Z", "X_r").bits();
    r.rate_bits = mutual_information(t, "X_s", "Z").bits();
    r.distortion_nats = pragmatic_distortion(t, Task::Segmentation, RiskParams{});
    r.gap_to_bound = r.rate_bits - theoretical_bound(source, std::max(0.0, r.distortion_nats));
    return r;
}

MarkovReport markov_premise(const JointTable& composite)
{
    return {conditional_mi(composite, "Z", "X_r", {"X_s"}).bits(), conditional_mi(composite, "Z", "Y", {"X_s"}).bits()};
}

JointTable constructed_source(std::size_t n_y, std::size_t n_noise, std::size_t n_r, std::uint64_t seed)
{
    const auto py = JointTable::random({{"Y", n_y}}, seed).pmf();
    const auto pn = JointTable::random({{"N", n_noise}}, seed + 1).pmf();
    const auto pr = JointTable::random({{"X_r", n_r}}, seed + 2).pmf();
    const std::size_t nx = n_y * n_noise;
    Eigen::ArrayXd pmf = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(n_y * nx * n_r));
    for (std::size_t y = 0; y < n_y; ++y)
        for (std::size_t n = 0; n < n_noise; ++n)
            for (std::size_t r = 0; r < n_r; ++r) {
                const std::size_t x = y * n_noise + n;
                pmf[static_cast<Eigen::Index>((y * nx + x) * n_r + r)] =
                    py[static_cast<Eigen::Index>(y)] * pn[static_cast<Eigen::Index>(n)] * pr[static_cast<Eigen::Index>(r)];
            }
    pmf /= pmf.sum();
    return JointTable({{"Y", n_y}, {"X_s", nx}, {"X_r", n_r}}, std::move(pmf));
}

EncoderSpec y_component_encoder(std::size_t n_y, std::size_t n_noise)
{
    std::vector<std::size_t> map(n_y * n_noise);
    for (std::size_t x = 0; x < map.size(); ++x) map[x] = x / n_noise;
    return EncoderSpec::deterministic(std::move(map), n_y);
}

void write_frontier_csv(std::ostream& out, const std::vector<RDPoint>& points)
{
    out << "encoder_id,rate_bits,distortion_nats,h_z_given_y,mi_z_xr,bound_bits,pareto_flag\n";
    out << std::setprecision(17);
    for (const auto& p : points)
        out << p.encoder_id << ',' << p.rate_bits << ',' << p.distortion_nats << ',' << p.cond_h_z_given_y << ','
            << p.mi_z_xr << ',' << p.bound_bits << ',' << (p.pareto ? 1 : 0) << '\n';
}

} // namespace rdcomm
