#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "rdcomm/bayes_risk.hpp"
#include "rdcomm/simworld.hpp"

using namespace rdcomm;

namespace
{

WorldConfig small(std::uint64_t seed)
{
    WorldConfig c;
    c.h = 16;
    c.w = 16;
    c.classes = 4;
    c.seed = seed;
    return c;
}

double entropy_nats(const Eigen::RowVectorXd& p)
{
    double h = 0;
    for (double x : p)
        if (x > 0) h -= x * std::log(x);
    return h;
}

} // namespace

TEST_CASE("generation examples")
{
    auto cfg = small(3);
    cfg.density = 0.0;
    CHECK((generate(cfg).truth == 0).all());

    cfg = small(4);
    cfg.noise = {0.0};
    cfg.n_agents = 1;
    cfg.fovs = {Fov::rect(0, 0, 16, 16)};
    const auto w = generate(cfg);
    CHECK((w.obs[0] == w.truth).all());
    CHECK((w.truth != 0).count() >= std::ceil(0.3 * 256));

    const auto a = generate(small(9)), b = generate(small(9));
    CHECK((a.truth == b.truth).all());
    CHECK((a.obs[1] == b.obs[1]).all());
    CHECK_FALSE((generate(small(10)).truth == a.truth).all());

    CHECK(((a.truth >= 0) && (a.truth < 4)).all());
    for (std::size_t i = 0; i < a.obs.size(); ++i) CHECK(((a.obs[i] == kUnobserved) == !a.fov[i]).all());
}

TEST_CASE("invalid configurations")
{
    auto cfg = small(1);
    cfg.fovs = {Fov::rect(0, 0, 17, 4), Fov::rect(0, 0, 4, 4)};
    CHECK_THROWS_AS(generate(cfg), InvalidArgument);
    cfg = small(1);
    cfg.noise = {0.5};
    CHECK_THROWS_AS(generate(cfg), InvalidArgument);
    cfg = small(1);
    cfg.classes = 1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small(1);
    cfg.fovs = {Fov::sector(3, 3, 0, 0, 90), Fov::rect(0, 0, 4, 4)};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("fields of view")
{
    const auto d = default_fovs(32, 32, 2);
    CHECK(fov_mask(d[0], 32, 32).count() == 32 * 24);
    CHECK((fov_mask(d[0], 32, 32) && fov_mask(d[1], 32, 32)).count() == 32 * 16);
    CHECK((fov_mask(d[0], 32, 32) || fov_mask(d[1], 32, 32)).all());

    // Quarter disc facing +v and -u.
    const auto m = fov_mask(Fov::sector(5, 5, 3, 0, 90), 11, 11);
    CHECK(m(5, 5));
    CHECK(m(5, 8));
    CHECK(m(2, 5));
    CHECK_FALSE(m(8, 5));
    CHECK_FALSE(m(5, 2));
    CHECK_FALSE(m(5, 9));
    CHECK(m(4, 7));
    CHECK_FALSE(m(6, 7));
    CHECK(fov_mask(Fov::sector(5, 5, 2.5, 0, 360), 11, 11).count() == 21);
}

TEST_CASE("feature extraction")
{
    LabelGrid obs = LabelGrid::Constant(5, 5, kUnobserved);
    obs(2, 2) = 3;
    const auto f = extract_features(obs, 4);
    CHECK(f.channels() == 8);
    CHECK(f.cell_is_zero(f.index(0, 0)));
    Eigen::RowVectorXd want = Eigen::RowVectorXd::Zero(8);
    want[3] = 1;
    want[7] = 1.0 / 9;
    CHECK(f.cell(2, 2).isApprox(want));

    // Hand fixture: window around (1, 1) holds classes
    //   0 1 1
    //   2 1 -
    //   0 0 3
    LabelGrid g(3, 3);
    g << 0, 1, 1, 2, 1, kUnobserved, 0, 0, 3;
    const auto h = extract_features(g, 4);
    Eigen::RowVectorXd centre(8);
    centre << 0, 1, 0, 0, 3.0 / 9, 3.0 / 9, 1.0 / 9, 1.0 / 9;
    CHECK((h.cell(1, 1) - centre).norm() < 1e-15);
    Eigen::RowVectorXd corner(8);
    corner << 1, 0, 0, 0, 1.0 / 9, 2.0 / 9, 1.0 / 9, 0;
    CHECK((h.cell(0, 0) - corner).norm() < 1e-15);
    CHECK(h.cell_is_zero(h.index(1, 2)));
}

TEST_CASE("posterior examples")
{
    auto cfg = small(0);
    cfg.noise = {0.0};
    LabelGrid o = LabelGrid::Constant(1, 2, kUnobserved);
    o(0, 0) = 2;
    const auto p = posterior_from_observations({o}, cfg);
    CHECK(p.cell(0, 0)[2] == doctest::Approx(1.0));
    CHECK(p.cell(0, 1).transpose().isApprox(cfg.prior()));
    const auto pf = posterior_from_features(extract_features(o, 4), cfg);
    CHECK((pf.data - p.data).norm() < 1e-12);

    // Agreeing noisy agents sharpen the posterior.
    cfg.noise = {0.2};
    LabelGrid one = LabelGrid::Constant(1, 1, 1);
    const auto single = posterior_from_observations({one}, cfg);
    const auto both = posterior_from_observations({one, one}, cfg);
    CHECK(entropy_nats(both.cell(0, 0)) < entropy_nats(single.cell(0, 0)));
    // Closed form: prior (0.7, 0.1, 0.1, 0.1), likelihood of o = 1 is (0.2/3, 0.8, 0.2/3, 0.2/3).
    const double z = 0.7 * std::pow(0.2 / 3, 2) + 0.1 * 0.64 + 2 * 0.1 * std::pow(0.2 / 3, 2);
    CHECK(both.cell(0, 0)[1] == doctest::Approx(0.1 * 0.64 / z).epsilon(1e-12));
}

TEST_CASE("confidence examples")
{
    auto cfg = small(0);
    cfg.noise = {0.0};
    LabelGrid o(1, 2);
    o << 0, 2;
    const auto c0 = confidence(extract_features(o, 4), cfg);
    CHECK(c0(0, 0) == doctest::Approx(0.0));
    CHECK(c0(0, 1) == doctest::Approx(1.0));

    cfg.noise = {0.1};
    LabelGrid s = LabelGrid::Constant(1, 1, 3);
    const double pb = 0.7 * 0.1 / 3, po = 0.1 * 0.9, pother = 2 * 0.1 * 0.1 / 3;
    CHECK(confidence(extract_features(s, 4), cfg)(0, 0) == doctest::Approx(1.0 - pb / (pb + po + pother)).epsilon(1e-12));
    const auto c = confidence(extract_features(generate(small(5)).obs[0], 4), cfg);
    CHECK((c >= 0.0).all());
    CHECK((c <= 1.0).all());
}

TEST_CASE("fusion")
{
    FeatureGrid a(2, 2, 2), z(2, 2, 2);
    a.data << 1, 0, 0, 0, 0.5, 0.2, 0, 0;
    CHECK(fuse(a, z) == a);
    CHECK(fuse(a, a) == a);
    FeatureGrid b(2, 2, 2);
    b.data << 0, 0, 0.3, 0.1, 0, 0, 0, 0.9;
    const auto f = fuse(a, b);
    auto nonzero = [](const FeatureGrid& g) {
        long n = 0;
        for (Eigen::Index i = 0; i < g.cells(); ++i) n += !g.cell_is_zero(i);
        return n;
    };
    CHECK(nonzero(f) == nonzero(a) + nonzero(b));
    CHECK_THROWS_AS(fuse(a, FeatureGrid(2, 2, 3)), InvalidArgument);
}

TEST_CASE("smoothing")
{
    FeatureGrid dense(3, 3, 1);
    dense.data.setConstant(2.0);
    CHECK(smooth(dense) == dense);

    FeatureGrid one(3, 3, 2);
    one.cell(1, 1) << 4.0, 2.0;
    const auto s = smooth(one);
    for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) {
            const Eigen::RowVector2d want = (u == 1 && v == 1) ? Eigen::RowVector2d(4.0, 2.0) : Eigen::RowVector2d(2.0, 1.0);
            CHECK((s.cell(u, v) - want).norm() == 0.0);
        }

    // Two sources: the shared neighbour takes half their mean.
    FeatureGrid two(1, 3, 1);
    two.data << 2.0, 0.0, 6.0;
    CHECK(smooth(two).data(1, 0) == 2.0);
}

TEST_CASE("IoU examples")
{
    LabelGrid g(1, 4);
    g << 0, 1, 1, 2;
    const auto same = score_iou(g, g, 3);
    CHECK(same.mean == 1.0);

    LabelGrid a(1, 2), b(1, 2);
    a << 1, 1;
    b << 2, 2;
    const auto dis = score_iou(a, b, 3);
    CHECK(dis.per_class[1] == 0.0);
    CHECK(dis.per_class[2] == 0.0);
    CHECK(std::isnan(dis.per_class[0]));
    CHECK(dis.mean == 0.0);

    LabelGrid p(1, 4), t(1, 4);
    p << 1, 1, 1, 0;
    t << 0, 1, 1, 1;
    const auto half = score_iou(p, t, 2);
    CHECK(half.per_class[1] == doctest::Approx(0.5));
    LabelGrid p3(1, 4), t3(1, 4);
    p3 << 1, 1, 0, 0;
    t3 << 0, 1, 1, 0;
    CHECK(score_iou(p3, t3, 2).per_class[1] == doctest::Approx(1.0 / 3));
}

TEST_CASE("exact posteriors match the conditional-entropy Bayes risk")
{
    auto cfg = small(0);
    cfg.noise = {0.05, 0.2, 0.15, 0.3};
    cfg.density = 0.4;
    const Vec prior = cfg.prior();

    // Analytic joint table of (Y, O).
    Eigen::ArrayXd p(16);
    for (int y = 0; y < 4; ++y)
        for (int o = 0; o < 4; ++o) p[y * 4 + o] = prior[y] * likelihood(cfg, o, y);
    const JointTable table({{"Y", 4}, {"O", 4}}, p);
    const double risk = bayes_risk_ce(table, "Y", {"O"});

    // 10^4 iid cells drawn from the prior and observed through the channel.
    std::mt19937_64 rng(123);
    std::discrete_distribution<int> py(prior.data(), prior.data() + prior.size());
    LabelGrid truth(100, 100);
    for (Eigen::Index i = 0; i < truth.size(); ++i) truth.data()[i] = py(rng);
    const auto obs = observe(truth, Mask::Constant(100, 100, true), cfg, rng);
    const auto post = posterior_from_features(extract_features(obs, 4), cfg);
    double sum = 0, sq = 0;
    for (int u = 0; u < 100; ++u)
        for (int v = 0; v < 100; ++v) {
            const double l = -std::log(post.cell(u, v)[truth(u, v)]);
            sum += l;
            sq += l * l;
        }
    const double n = static_cast<double>(truth.size()), mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    CHECK(std::abs(mean - risk) < 4 * se);
}

TEST_CASE("collaboration does not hurt under exact posteriors")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto cfg = small(100 + seed);
        cfg.h = cfg.w = 24;
        const auto w = generate(cfg);
        const double solo = score_iou(predict(posterior_from_observations({w.obs[1]}, cfg)), w.truth, 4).mean;
        const double pair = score_iou(predict(posterior_from_observations(w.obs, cfg)), w.truth, 4).mean;
        CHECK(pair >= solo - 0.01);
    }
}

TEST_CASE("cells outside every field of view decode to the prior argmax")
{
    auto cfg = small(7);
    cfg.fovs = {Fov::rect(0, 0, 8, 8), Fov::sector(12, 12, 3, 0, 180)};
    for (double density : {0.3, 0.8}) {
        cfg.density = density;
        const auto w = generate(cfg);
        Eigen::Index best = 0;
        cfg.prior().maxCoeff(&best);
        const auto pred = predict(posterior_from_observations(w.obs, cfg));
        const Mask seen = w.fov[0] || w.fov[1];
        for (Eigen::Index i = 0; i < pred.size(); ++i)
            if (!seen.data()[i]) CHECK(pred.data()[i] == best);
    }
}

TEST_CASE("grid snapshots round trip")
{
    const auto w = generate(small(2));
    for (const auto& g : {w.truth, w.obs[0]}) {
        std::stringstream ss;
        write_grid(ss, g);
        const auto back = read_grid(ss);
        CHECK((back == g).all());
    }
    std::istringstream bad("rdcomm-grid 1\n2 2\n0 1\n3\n");
    CHECK_THROWS_AS(read_grid(bad), FormatError);
}
