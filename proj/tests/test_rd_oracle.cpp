#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "rdcomm/rd_oracle.hpp"

using namespace rdcomm;

namespace
{

JointTable xor_triple()
{
    Eigen::ArrayXd p = Eigen::ArrayXd::Zero(8);
    for (int s = 0; s < 2; ++s)
        for (int r = 0; r < 2; ++r) p[((s ^ r) * 2 + s) * 2 + r] = 0.25;
    return JointTable({{"Y", 2}, {"X_s", 2}, {"X_r", 2}}, p);
}

std::uint64_t identity_id(std::size_t n)
{
    std::uint64_t id = 0, place = 1;
    for (std::size_t x = 0; x < n; ++x, place *= n) id += x * place;
    return id;
}

} // namespace

TEST_CASE("frontier endpoints")
{
    const auto src = JointTable::random({{"Y", 3}, {"X_s", 4}, {"X_r", 3}}, 12);
    const auto pts = enumerate_frontier(src, 4);
    REQUIRE(pts.size() == 256);

    const auto& id = pts[identity_id(4)];
    CHECK(id.rate_bits == doctest::Approx(entropy(src, "X_s").value).epsilon(1e-12));
    CHECK(std::abs(id.distortion_nats) < 1e-12);
    CHECK(id.pareto);

    const auto& constant = pts[0];
    CHECK(std::abs(constant.rate_bits) < 1e-12);
    CHECK(constant.distortion_nats ==
          doctest::Approx(oracle::conditional_mi_bits(src, "Y", "X_s", {"X_r"}) * std::numbers::ln2).epsilon(1e-10));
    CHECK(constant.pareto);
}

TEST_CASE("copy of a binary target attains one bit at zero distortion")
{
    // X_s = Y uniform binary, X_r independent uniform binary.
    Eigen::ArrayXd p = Eigen::ArrayXd::Zero(8);
    for (int y = 0; y < 2; ++y)
        for (int r = 0; r < 2; ++r) p[(y * 2 + y) * 2 + r] = 0.25;
    const JointTable src({{"Y", 2}, {"X_s", 2}, {"X_r", 2}}, p);
    const auto pts = enumerate_frontier(src, 2);
    const bool found = std::any_of(pts.begin(), pts.end(), [](const RDPoint& q) {
        return std::abs(q.rate_bits - 1.0) < 1e-12 && std::abs(q.distortion_nats) < 1e-12;
    });
    CHECK(found);
}

TEST_CASE("enumeration guards the alphabet size")
{
    const auto big = JointTable::random({{"Y", 2}, {"X_s", 7}, {"X_r", 2}}, 1);
    CHECK_THROWS_AS(enumerate_frontier(big, 2), InvalidArgument);
    const auto small = JointTable::random({{"Y", 2}, {"X_s", 3}, {"X_r", 2}}, 1);
    CHECK_THROWS_AS(enumerate_frontier(small, 4), InvalidArgument);
    CHECK_THROWS_AS(enumerate_frontier(small, 0), InvalidArgument);
}

TEST_CASE("enumeration is independent of the job count")
{
    const auto src = JointTable::random({{"Y", 3}, {"X_s", 5}, {"X_r", 2}}, 9);
    const auto a = enumerate_frontier(src, 3, 1);
    const auto b = enumerate_frontier(src, 3, 4);
    REQUIRE(a.size() == b.size());
    std::ostringstream sa, sb;
    write_frontier_csv(sa, a);
    write_frontier_csv(sb, b);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("theoretical bound")
{
    CHECK(theoretical_bound(xor_triple(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(theoretical_bound(xor_triple(), std::numbers::ln2) == 0.0);
    CHECK(theoretical_bound(xor_triple(), 5.0) == 0.0);

    // X_r = X_s exactly.
    const auto ys = JointTable::random({{"Y", 3}, {"X_s", 3}}, 4);
    Eigen::MatrixXd copy = Eigen::MatrixXd::Identity(3, 3);
    const auto src = ys.with_channel("X_s", {"X_r", 3}, copy);
    CHECK(theoretical_bound(src, 0.0) < 1e-12);

    const auto r = JointTable::random({{"Y", 3}, {"X_s", 4}, {"X_r", 2}}, 5);
    double prev = theoretical_bound(r, 0.0);
    for (double d = 0.01; d < 1.5; d += 0.01) {
        const double b = theoretical_bound(r, d);
        CHECK(b <= prev);
        prev = b;
    }
    CHECK_THROWS_AS(theoretical_bound(r, -0.1), InvalidArgument);
}

TEST_CASE("optimality conditions on constructed sources")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto src = constructed_source(2, 2, 3, seed);
        const auto rep = check_conditions(src, y_component_encoder(2, 2));
        CHECK(rep.h_z_given_y <= 1e-9);
        CHECK(rep.mi_z_xr <= 1e-9);
        CHECK(std::abs(rep.gap_to_bound) <= 1e-9);
        CHECK(std::abs(rep.distortion_nats) <= 1e-12);

        // Exhaustive search for the cheapest zero-distortion encoder agrees.
        const auto pts = enumerate_frontier(src, 2);
        double best = 1e9;
        for (const auto& p : pts)
            if (p.distortion_nats <= 1e-12) best = std::min(best, p.rate_bits);
        CHECK(best == doctest::Approx(rep.rate_bits).epsilon(1e-12));
        CHECK(best - theoretical_bound(src, 0.0) <= 1e-9);
    }
}

TEST_CASE("stochastic encoders are accepted by the condition check")
{
    const auto src = JointTable::random({{"Y", 2}, {"X_s", 3}, {"X_r", 2}}, 3);
    Eigen::MatrixXd ch(3, 2);
    ch << 0.7, 0.3, 0.5, 0.5, 0.1, 0.9;
    const auto rep = check_conditions(src, EncoderSpec::stochastic(ch));
    CHECK(rep.gap_to_bound >= -1e-9);
    CHECK(rep.h_z_given_y > 0.0);

    Eigen::MatrixXd bad(3, 2);
    bad << 0.7, 0.2, 0.5, 0.5, 0.1, 0.9;
    CHECK_THROWS_AS(EncoderSpec::stochastic(bad), InvalidArgument);
    CHECK_THROWS_AS(EncoderSpec::deterministic({0, 2}, 2), InvalidArgument);
}

TEST_CASE("soundness, markov premise and pareto flags on random sources")
{
    std::size_t sources = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const std::size_t ny = 2 + seed % 3, nx = 2 + (seed / 3) % 3, nr = 2 + (seed / 9) % 3;
        const auto src = JointTable::random({{"Y", ny}, {"X_s", nx}, {"X_r", nr}}, 7000 + seed);
        const auto pts = enumerate_frontier(src, std::min<std::size_t>(nx, 4));
        for (const auto& p : pts) {
            CHECK(p.rate_bits >= theoretical_bound(src, std::max(0.0, p.distortion_nats)) - 1e-9);
            CHECK(p.rate_bits <= entropy(src, "X_s").value + 1e-9);
            CHECK(p.cond_h_z_given_y >= -1e-9);
            CHECK(p.mi_z_xr >= -1e-9);
        }
        const auto mid = pts[pts.size() / 2];
        const auto composite = compose(src, EncoderSpec::from_id(mid.encoder_id, nx, std::min<std::size_t>(nx, 4)));
        const auto m = markov_premise(composite);
        CHECK(std::abs(m.mi_z_xr_given_xs) < 1e-10);
        CHECK(std::abs(m.mi_z_y_given_xs) < 1e-10);

        // No flagged point is dominated by another.
        for (const auto& p : pts) {
            if (!p.pareto) continue;
            for (const auto& q : pts)
                CHECK_FALSE((q.rate_bits < p.rate_bits - 1e-9 && q.distortion_nats < p.distortion_nats - 1e-9));
        }
        ++sources;
    }
    CHECK(sources == 60);
}
