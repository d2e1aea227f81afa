#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "doctest.h"
#include "rdcomm/pipeline.hpp"

using namespace rdcomm;

namespace
{

const double kInf = std::numeric_limits<double>::infinity();

TrainConfig small_training(std::uint64_t seed)
{
    TrainConfig t;
    t.world.h = 24;
    t.world.w = 24;
    t.n_worlds = 3;
    t.seed = seed;
    t.codebook.n_res = 16;
    t.codebook.iters = 15;
    t.discriminator.steps = 60;
    t.discriminator.max_pairs = 1024;
    return t;
}

const Model& shared_model()
{
    static const Model m = train_all(small_training(11));
    return m;
}

WorldConfig world_cfg(std::uint64_t seed)
{
    auto c = small_training(0).world;
    c.seed = seed;
    return c;
}

// Base layer {0}, residual layer holding every distinct feature vector, so
// reconstruction is exact.
LayeredCodebook lossless_codebook(const World& world, const WorldConfig& cfg)
{
    std::set<std::vector<double>> rows;
    for (const auto& o : world.obs) {
        const auto f = extract_features(o, cfg.classes);
        for (Eigen::Index i = 0; i < f.cells(); ++i) rows.emplace(f.data.row(i).begin(), f.data.row(i).end());
    }
    RowMat res(static_cast<Eigen::Index>(rows.size()), cfg.channels());
    Eigen::Index i = 0;
    for (const auto& r : rows) res.row(i++) = Eigen::Map<const Eigen::RowVectorXd>(r.data(), cfg.channels());
    LayeredCodebook cb;
    cb.base = Codebook(RowMat::Zero(1, cfg.channels()));
    cb.res = Codebook(res);
    cb.proj_in = AffineMap::identity(cfg.channels());
    cb.proj_out = AffineMap::identity(cfg.channels());
    return cb;
}

} // namespace

TEST_CASE("training stages run in order")
{
    TrainingSession s(small_training(1));
    CHECK_THROWS_AS((void)s.build_codes(CoderVariant::TaskEntropy), InvalidArgument);
    CHECK_THROWS_AS(s.fit_discriminator(), InvalidArgument);
    CHECK_THROWS_AS(s.accumulate_frequencies(), InvalidArgument);
    s.fit_codebooks();
    CHECK_THROWS_AS((void)s.build_codes(CoderVariant::Fixed), InvalidArgument);
    CHECK_THROWS_AS(s.fit_codebooks(), InvalidArgument);
    s.accumulate_frequencies();
    CHECK_NOTHROW((void)s.build_codes(CoderVariant::TaskEntropy));
    s.fit_discriminator();
    const auto& m = s.model();
    CHECK(m.score_quantiles.size() == 11);
    CHECK(std::is_sorted(m.score_quantiles.begin(), m.score_quantiles.end()));
    CHECK(m.tau_c_draws.size() == 3u * 2u);
    CHECK(m.loss_history.size() == 60u);
    CHECK(m.loss_history.back() < m.loss_history.front());
}

TEST_CASE("training is deterministic in the seed")
{
    const auto a = train_all(small_training(5));
    const auto b = train_all(small_training(5));
    CHECK(a.codebook.base.embeddings == b.codebook.base.embeddings);
    CHECK(a.codebook.res.embeddings == b.codebook.res.embeddings);
    CHECK(a.discriminator.flatten() == b.discriminator.flatten());
    CHECK(a.tau_c_draws == b.tau_c_draws);
    const auto c = train_all(small_training(6));
    CHECK(c.discriminator.flatten() != a.discriminator.flatten());
}

TEST_CASE("confidence frequencies favour object embeddings")
{
    const auto& m = shared_model();
    const auto& base = m.codebook.base;
    CHECK(base.conf_freq.sum() > 0);
    // Confidence mass per occurrence is highest on embeddings whose class
    // block points away from background.
    Eigen::Index best = 0;
    (base.conf_freq.array() / base.occ_freq.array().max(1.0)).maxCoeff(&best);
    const auto e = m.codebook.proj_out.apply(base.embeddings.row(best)).row(0);
    CHECK(e(0) < e.head(4).tail(3).maxCoeff());
}

TEST_CASE("tau_c above every confidence sends nothing")
{
    const auto& m = shared_model();
    const auto codes = make_code_tables(m.codebook, CoderVariant::TaskEntropy);
    const auto cfg = world_cfg(40);
    const auto world = generate(cfg);
    for (auto sel : {Selector::Mi, Selector::ConfidenceOnly}) {
        const auto r = run_round(world, cfg, m, codes, {1.5, kInf, CoderVariant::TaskEntropy, sel});
        CHECK(r.payload_bits == 0);
        CHECK(r.abstract_bits == 0);
        CHECK(r.selected_cells == 0);
        CHECK(r.mean_iou == doctest::Approx(reference_iou(world, cfg, Reference::NoCollaboration).mean).epsilon(1e-12));
    }
}

TEST_CASE("lossless codes at tau_c 0 match raw feature sharing")
{
    const auto cfg = world_cfg(41);
    const auto world = generate(cfg);
    Model m;
    m.codebook = lossless_codebook(world, cfg);
    for (const auto& o : world.obs) {
        const auto f = extract_features(o, cfg.classes);
        accumulate_conf_freq(m.codebook, quantize(f, m.codebook).idx, confidence(f, cfg));
    }
    m.discriminator = Discriminator::init(cfg.channels(), 8, 1);
    const auto codes = make_code_tables(m.codebook, CoderVariant::TaskEntropy);
    const auto raw = reference_iou(world, cfg, Reference::RawFeatures);
    for (auto sel : {Selector::Mi, Selector::ConfidenceOnly, Selector::None}) {
        const auto r = run_round(world, cfg, m, codes, {0.0, kInf, CoderVariant::TaskEntropy, sel});
        CHECK(r.mean_iou == doctest::Approx(raw.mean).epsilon(1e-12));
        CHECK(r.class_iou.size() == raw.per_class.size());
    }
}

TEST_CASE("cleared confidence bits stand in for background features")
{
    const auto cfg = world_cfg(47);
    const auto world = generate(cfg);
    Model m;
    m.codebook = lossless_codebook(world, cfg);
    m.discriminator = Discriminator::init(cfg.channels(), 8, 1);
    const auto codes = make_code_tables(m.codebook, CoderVariant::Fixed);
    const auto raw = reference_iou(world, cfg, Reference::RawFeatures);
    const auto solo = reference_iou(world, cfg, Reference::NoCollaboration);
    for (auto sel : {Selector::Mi, Selector::ConfidenceOnly}) {
        const auto r = run_round(world, cfg, m, codes, {0.5, kInf, CoderVariant::Fixed, sel});
        CHECK(r.selected_cells < static_cast<std::size_t>(cfg.h * cfg.w));
        CHECK(r.mean_iou == doctest::Approx(raw.mean).epsilon(1e-12));
    }
    // Above every object confidence the mask says nothing about background.
    const auto r = run_round(world, cfg, m, codes, {0.95, kInf, CoderVariant::Fixed, Selector::ConfidenceOnly});
    CHECK(r.mean_iou == doctest::Approx(solo.mean).epsilon(1e-12));
}

TEST_CASE("rounds are reproducible and bitstreams round-trip")
{
    const auto& m = shared_model();
    const auto codes = make_code_tables(m.codebook, CoderVariant::TaskEntropy);
    const auto cfg = world_cfg(42);
    const auto world = generate(cfg);
    const RoundSpec spec{0.5, resolve_tau_mi("q0.5", m), CoderVariant::TaskEntropy, Selector::Mi};
    const auto a = run_round(world, cfg, m, codes, spec, true);
    const auto b = run_round(generate(cfg), cfg, m, codes, spec, true);
    CHECK(a.bitstreams == b.bitstreams);
    CHECK(a.total_bits == b.total_bits);
    CHECK(a.mean_iou == b.mean_iou);
    REQUIRE(a.bitstreams.size() == 2);
    for (const auto& bytes : a.bitstreams) CHECK(serialize(deserialize(bytes)) == bytes);
    CHECK(a.abstract_bits > 0);
    CHECK(a.total_bits == a.payload_bits + a.abstract_bits + a.mask_bits);
    CHECK(a.bpp == doctest::Approx(static_cast<double>(a.total_bits) / (2.0 * cfg.h * cfg.w)));
    CHECK(a.bpp_no_mask == doctest::Approx(static_cast<double>(a.total_bits - a.mask_bits) / (2.0 * cfg.h * cfg.w)));
}

TEST_CASE("bit volume matches a length oracle")
{
    const auto& m = shared_model();
    const auto cfg = world_cfg(43);
    const auto world = generate(cfg);
    for (auto v : {CoderVariant::TaskEntropy, CoderVariant::Occurrence, CoderVariant::Fixed}) {
        const auto codes = make_code_tables(m.codebook, v);
        const double tau = 0.6;
        std::size_t oracle = 0;
        for (const auto& o : world.obs) {
            const auto f = extract_features(o, cfg.classes);
            const auto idx = quantize(f, m.codebook).idx;
            const auto conf = confidence(f, cfg);
            oracle += static_cast<std::size_t>(cfg.h * cfg.w);
            for (int u = 0; u < cfg.h; ++u)
                for (int c = 0; c < cfg.w; ++c)
                    if (conf(u, c) >= tau)
                        oracle += 1 + 2 * codes.base.lengths[static_cast<std::size_t>(idx.base_idx(u, c))] +
                                  codes.res.lengths[static_cast<std::size_t>(idx.res_idx(u, c))];
        }
        const auto r = run_round(world, cfg, m, codes, {tau, kInf, v, Selector::Mi});
        CHECK(r.total_bits == oracle);
    }
}

TEST_CASE("rate does not grow with tau_c")
{
    const auto& m = shared_model();
    const auto codes = make_code_tables(m.codebook, CoderVariant::TaskEntropy);
    const auto cfg = world_cfg(44);
    const auto world = generate(cfg);
    for (auto sel : {Selector::Mi, Selector::ConfidenceOnly}) {
        std::size_t prev = std::numeric_limits<std::size_t>::max();
        for (double t : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2}) {
            const auto r = run_round(world, cfg, m, codes, {t, kInf, CoderVariant::TaskEntropy, sel});
            CHECK(r.total_bits <= prev);
            prev = r.total_bits;
        }
    }
}

TEST_CASE("rate does not grow as tau_mi falls")
{
    const auto& m = shared_model();
    const auto codes = make_code_tables(m.codebook, CoderVariant::TaskEntropy);
    const auto cfg = world_cfg(45);
    const auto world = generate(cfg);
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (const char* q : {"q1", "q0.9", "q0.5", "q0.1", "q0"}) {
        const auto r = run_round(world, cfg, m, codes, {0.3, resolve_tau_mi(q, m), CoderVariant::TaskEntropy, Selector::Mi});
        CHECK(r.payload_bits <= prev);
        prev = r.payload_bits;
    }
}

TEST_CASE("sweeps")
{
    const auto& m = shared_model();
    const auto world = world_cfg(0);

    SUBCASE("a singleton sweep equals one round")
    {
        SweepConfig sc;
        sc.seeds = {7};
        const auto s = run_sweep(world, m, sc);
        REQUIRE(s.rounds.size() == 1);
        REQUIRE(s.points.size() == 1);
        auto wc = world;
        wc.seed = 7;
        const auto r = run_round(generate(wc), wc, m, make_code_tables(m.codebook, sc.coder), RoundSpec{});
        CHECK(s.rounds[0].total_bits == r.total_bits);
        CHECK(s.points[0].mean_iou.mean == r.mean_iou);
        CHECK(s.points[0].mean_iou.stddev == 0);
        CHECK(s.points[0].pareto);
    }

    SUBCASE("row counts, ordering and thread independence")
    {
        SweepConfig sc;
        sc.tau_c = {0.3, 0.7};
        sc.tau_mi = {kInf, resolve_tau_mi("q0.5", m), 0.0};
        sc.seeds = {1, 2};
        const auto a = run_sweep(world, m, sc, 1);
        const auto b = run_sweep(world, m, sc, 3);
        REQUIRE(a.rounds.size() == 12);
        CHECK(a.points.size() == 6);
        CHECK(a.rounds[0].spec.tau_c == 0.3);
        CHECK(a.rounds[1].seed == 2);
        CHECK(a.rounds[2].spec.tau_mi == sc.tau_mi[1]);
        std::ostringstream ra, rb, sa, sb;
        write_rounds_csv(ra, a.rounds, world.classes);
        write_rounds_csv(rb, b.rounds, world.classes);
        write_summary_csv(sa, a.points, sc.coder, sc.selector);
        write_summary_csv(sb, b.points, sc.coder, sc.selector);
        CHECK(ra.str() == rb.str());
        CHECK(sa.str() == sb.str());
        const auto rounds_csv = ra.str(), summary_csv = sa.str();
        CHECK(std::count(rounds_csv.begin(), rounds_csv.end(), '\n') == 13);
        CHECK(std::count(summary_csv.begin(), summary_csv.end(), '\n') == 7);
        CHECK(ra.str().rfind("seed,tau_c,tau_mi,coder,selector,total_bits,payload_bits,abstract_bits,mask_bits,bpp,mean_iou,"
                             "iou_class_0,iou_class_1,iou_class_2,iou_class_3,distortion_nats\n",
                             0) == 0);
        CHECK(ra.str().find(",inf,task_entropy,mi,") != std::string::npos);
    }

    SUBCASE("invalid grids")
    {
        SweepConfig sc;
        sc.seeds.clear();
        CHECK_THROWS_AS(run_sweep(world, m, sc), InvalidArgument);
        sc.seeds = {1};
        sc.tau_c = {std::nan("")};
        CHECK_THROWS_AS(run_sweep(world, m, sc), InvalidArgument);
    }
}

TEST_CASE("pareto flags")
{
    std::vector<SweepPoint> p(4);
    const double bpp[] = {1, 2, 2, 3}, iou[] = {0.5, 0.6, 0.4, 0.6};
    for (int i = 0; i < 4; ++i) {
        p[static_cast<std::size_t>(i)].bpp.mean = bpp[i];
        p[static_cast<std::size_t>(i)].mean_iou.mean = iou[i];
    }
    mark_pareto(p);
    CHECK(p[0].pareto);
    CHECK(p[1].pareto);
    CHECK_FALSE(p[2].pareto);
    CHECK_FALSE(p[3].pareto);
}

TEST_CASE("tau_mi tokens")
{
    Model m;
    for (int i = 0; i <= 10; ++i) m.score_quantiles.push_back(i);
    CHECK(resolve_tau_mi("0.25", m) == 0.25);
    CHECK(std::isinf(resolve_tau_mi("inf", m)));
    CHECK(std::isinf(resolve_tau_mi("q1", m)));
    CHECK(resolve_tau_mi("q0.35", m) == doctest::Approx(3.5));
    CHECK(resolve_tau_mi("q0", m) == 0.0);
    CHECK_THROWS_AS(resolve_tau_mi("q1.5", m), InvalidArgument);
    CHECK_THROWS_AS(resolve_tau_mi("abc", m), InvalidArgument);
    CHECK_THROWS_AS(resolve_tau_mi("0.5x", m), InvalidArgument);
    CHECK_THROWS_AS(resolve_tau_mi("q0.5", Model{}), InvalidArgument);
}

TEST_CASE("round preconditions")
{
    const auto cfg = world_cfg(46);
    const auto world = generate(cfg);
    Model m = shared_model();
    const auto codes = make_code_tables(m.codebook, CoderVariant::TaskEntropy);
    CHECK_THROWS_AS(run_round(world, cfg, m, codes, {std::nan(""), kInf, CoderVariant::TaskEntropy, Selector::Mi}),
                    InvalidArgument);
    m.discriminator = Discriminator{};
    CHECK_THROWS_AS(run_round(world, cfg, m, codes, RoundSpec{}), InvalidArgument);
    CHECK_NOTHROW(run_round(world, cfg, m, codes, {0.5, kInf, CoderVariant::TaskEntropy, Selector::ConfidenceOnly}));
}
