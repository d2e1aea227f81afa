#include "rdcomm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <mutex>
#include <thread>

namespace rdcomm
{

std::string_view to_string(Selector s)
{
    switch (s) {
    case Selector::Mi: return "mi";
    case Selector::ConfidenceOnly: return "confidence_only";
    case Selector::None: return "none";
    }
    return "none";
}

Selector selector_from_string(std::string_view s)
{
    if (s == "mi") return Selector::Mi;
    if (s == "confidence_only") return Selector::ConfidenceOnly;
    if (s == "none") return Selector::None;
    throw InvalidArgument("unknown selector '" + std::string(s) + "'");
}

namespace
{

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Mask confidence_mask(const ConfidenceGrid& c, double tau) { return c >= tau; }

// Base reconstruction on the selected cells, zero elsewhere.
FeatureGrid masked_abstract(const IndexGrid& idx, const LayeredCodebook& cb, const Mask& sel)
{
    FeatureGrid a = base_reconstruction(idx, cb);
    for (int u = 0; u < a.h; ++u)
        for (int v = 0; v < a.w; ++v)
            if (!sel(u, v)) a.cell(u, v).setZero();
    return a;
}

// Full reconstruction where both layers arrived, the abstract where only the
// base did, zero elsewhere.
FeatureGrid received_features(const DecodedMessage& d, const LayeredCodebook& cb)
{
    IndexGrid safe = d.idx;
    safe.base_idx = d.has_base.select(d.idx.base_idx, 0);
    safe.res_idx = d.has_full.select(d.idx.res_idx, 0);
    FeatureGrid f = reconstruct(safe, cb);
    const FeatureGrid base = base_reconstruction(safe, cb);
    for (int u = 0; u < f.h; ++u)
        for (int v = 0; v < f.w; ++v) {
            if (!d.has_base(u, v))
                f.cell(u, v).setZero();
            else if (!d.has_full(u, v))
                f.cell(u, v) = base.cell(u, v);
        }
    return f;
}

// True when the only observation whose confidence falls below tau_c is
// background, so a cleared mask bit inside the sender's view reports it.
bool clears_report_background(const WorldConfig& cfg, double tau_c)
{
    const int k = cfg.classes;
    FeatureGrid probe(1, k, cfg.channels());
    for (int o = 0; o < k; ++o) probe.cell(0, o)(o) = 1.0;
    const auto conf = confidence(probe, cfg);
    for (int o = 0; o < k; ++o)
        if ((conf(0, o) < tau_c) != (o == 0)) return false;
    return true;
}

std::vector<FeatureGrid> agent_features(const World& world, const WorldConfig& cfg)
{
    std::vector<FeatureGrid> f;
    for (const auto& o : world.obs) f.push_back(extract_features(o, cfg.classes));
    return f;
}

} // namespace

std::uint64_t training_world_seed(std::uint64_t seed, int i)
{
    return splitmix64(splitmix64(seed ^ 0x747261696e696e67ULL) + static_cast<std::uint64_t>(i));
}

TrainingSession::TrainingSession(TrainConfig cfg) : cfg_(std::move(cfg))
{
    cfg_.world.validate();
    require(cfg_.n_worlds >= 1, "need at least one training world");
    require(!cfg_.tau_c_grid.empty(), "training needs a nonempty tau_c grid");
    require(cfg_.world.n_agents >= 2, "training needs at least two agents");
    for (int i = 0; i < cfg_.n_worlds; ++i) {
        auto wc = cfg_.world;
        wc.seed = training_world_seed(cfg_.seed, i);
        worlds_.push_back(generate(wc));
        for (auto& f : agent_features(worlds_.back(), cfg_.world)) features_.push_back(std::move(f));
    }
}

void TrainingSession::fit_codebooks()
{
    require(stage_ == 0, "codebooks are already trained");
    const auto& p = cfg_.codebook;
    Eigen::Index total = 0;
    for (const auto& f : features_) total += f.cells();
    RowMat all(total, cfg_.world.channels());
    Eigen::Index o = 0;
    for (const auto& f : features_) {
        all.middleRows(o, f.cells()) = f.data;
        o += f.cells();
    }
    RowMat points = all;
    if (p.max_points > 0 && total > p.max_points) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(splitmix64(cfg_.seed ^ 0x636f6465626f6f6bULL));
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(static_cast<std::size_t>(p.max_points));
        std::sort(order.begin(), order.end());
        points.resize(p.max_points, all.cols());
        for (Eigen::Index i = 0; i < p.max_points; ++i) points.row(i) = all.row(order[static_cast<std::size_t>(i)]);
    }
    model_.codebook = train_codebooks(points, p.n_base, p.n_res, p.iters, cfg_.seed);
    stage_ = 1;
}

void TrainingSession::accumulate_frequencies()
{
    require(stage_ == 1, "confidence frequencies need trained codebooks and are accumulated once");
    for (const auto& f : features_)
        accumulate_conf_freq(model_.codebook, quantize(f, model_.codebook).idx, confidence(f, cfg_.world));
    stage_ = 2;
}

CodeTables TrainingSession::build_codes(CoderVariant v) const
{
    require(stage_ >= 2, "codes can only be built after confidence frequencies are accumulated");
    return make_code_tables(model_.codebook, v);
}

void TrainingSession::fit_discriminator()
{
    require(stage_ == 2, "the discriminator is trained after codebooks and confidence frequencies");
    const auto& p = cfg_.discriminator;
    const int c = cfg_.world.channels();
    const int n_agents = cfg_.world.n_agents;
    std::mt19937_64 rng(splitmix64(cfg_.seed ^ 0x6469736372696d69ULL));
    std::uniform_int_distribution<std::size_t> pick(0, cfg_.tau_c_grid.size() - 1);

    std::vector<Eigen::RowVectorXd> s_rows, r_rows;
    for (std::size_t w = 0; w < worlds_.size(); ++w)
        for (int s = 0; s < n_agents; ++s) {
            const auto& fs = features_[w * static_cast<std::size_t>(n_agents) + static_cast<std::size_t>(s)];
            const auto idx = quantize(fs, model_.codebook).idx;
            const auto conf = confidence(fs, cfg_.world);
            for (int r = 0; r < n_agents; ++r) {
                if (r == s) continue;
                const double tau = cfg_.tau_c_grid[pick(rng)];
                model_.tau_c_draws.push_back(tau);
                const Mask sel = confidence_mask(conf, tau);
                const auto abstract = masked_abstract(idx, model_.codebook, sel);
                const auto& fr = features_[w * static_cast<std::size_t>(n_agents) + static_cast<std::size_t>(r)];
                for (int u = 0; u < fs.h; ++u)
                    for (int v = 0; v < fs.w; ++v)
                        if (sel(u, v)) {
                            s_rows.emplace_back(abstract.cell(u, v));
                            r_rows.emplace_back(fr.cell(u, v));
                        }
            }
        }

    model_.discriminator = Discriminator::init(c, p.hidden, splitmix64(cfg_.seed ^ 0x696e6974ULL));
    if (s_rows.size() >= 2) {
        std::vector<std::size_t> order(s_rows.size());
        std::iota(order.begin(), order.end(), 0);
        if (p.max_pairs > 0 && order.size() > static_cast<std::size_t>(p.max_pairs)) {
            std::shuffle(order.begin(), order.end(), rng);
            order.resize(static_cast<std::size_t>(p.max_pairs));
            std::sort(order.begin(), order.end());
        }
        RowMat s(static_cast<Eigen::Index>(order.size()), c), r(static_cast<Eigen::Index>(order.size()), c);
        for (std::size_t i = 0; i < order.size(); ++i) {
            s.row(static_cast<Eigen::Index>(i)) = s_rows[order[i]];
            r.row(static_cast<Eigen::Index>(i)) = r_rows[order[i]];
        }
        const auto batch = make_pairs(s, r, splitmix64(cfg_.seed ^ 0x7061697273ULL));
        model_.loss_history = train(model_.discriminator, deduplicate(batch), p.steps, p.lr);

        Vec t = model_.discriminator.forward(batch.joint_s, batch.joint_r);
        std::sort(t.begin(), t.end());
        for (int q = 0; q <= 10; ++q)
            model_.score_quantiles.push_back(t[static_cast<Eigen::Index>(std::lround(q / 10.0 * static_cast<double>(t.size() - 1)))]);
    } else {
        model_.score_quantiles.assign(11, 0.0);
    }
    stage_ = 3;
}

Model train_all(const TrainConfig& cfg)
{
    TrainingSession s(cfg);
    s.fit_codebooks();
    s.accumulate_frequencies();
    s.fit_discriminator();
    return s.model();
}

IoUResult reference_iou(const World& world, const WorldConfig& cfg, Reference ref)
{
    const auto f = agent_features(world, cfg);
    IoUCounts counts(cfg.classes);
    for (std::size_t r = 0; r < f.size(); ++r) {
        FeatureGrid fused = f[r];
        if (ref == Reference::RawFeatures)
            for (std::size_t s = 0; s < f.size(); ++s)
                if (s != r) fused = fuse(fused, smooth(f[s]));
        counts.add(predict(posterior_from_features(fused, cfg)), world.truth);
    }
    return iou_from(counts);
}

std::size_t raw_feature_bits(const WorldConfig& cfg)
{
    return static_cast<std::size_t>(cfg.h) * static_cast<std::size_t>(cfg.w) * 32u * static_cast<std::size_t>(cfg.channels());
}

RoundResult run_round(const World& world, const WorldConfig& cfg, const Model& model, const CodeTables& codes,
                      const RoundSpec& spec, bool keep_bitstreams)
{
    require(!std::isnan(spec.tau_c) && !std::isnan(spec.tau_mi), "thresholds must not be NaN");
    require(static_cast<int>(world.obs.size()) == cfg.n_agents, "world does not match the configuration");
    const auto& cb = model.codebook;
    require(cb.feature_dim() == cfg.channels(), "codebook does not match the feature width");
    if (spec.selector == Selector::Mi)
        require(model.discriminator.w1.size() > 0 && model.discriminator.channels() == cfg.channels(),
                "mi selection needs a trained discriminator");

    const auto f = agent_features(world, cfg);
    std::vector<ConfidenceGrid> conf;
    std::vector<IndexGrid> idx;
    for (const auto& g : f) {
        conf.push_back(confidence(g, cfg));
        idx.push_back(quantize(g, cb).idx);
    }
    const double h_exact = mean_entropy(posterior_from_observations(world.obs, cfg));

    RoundResult res;
    res.spec = spec;
    res.seed = cfg.seed;
    IoUCounts counts(cfg.classes);
    double distortion = 0;
    const Mask all = Mask::Constant(cfg.h, cfg.w, true);
    EncodeOptions opt;
    opt.send_conf_mask = spec.selector != Selector::None;
    opt.send_redund_mask = spec.selector == Selector::Mi;
    opt.send_abstract = spec.selector == Selector::Mi;

    const bool background_reports = spec.selector != Selector::None && clears_report_background(cfg, spec.tau_c);

    for (int r = 0; r < cfg.n_agents; ++r) {
        FeatureGrid fused = f[static_cast<std::size_t>(r)];
        for (int s = 0; s < cfg.n_agents; ++s) {
            if (s == r) continue;
            const auto si = static_cast<std::size_t>(s);
            const Mask mc = spec.selector == Selector::None ? all : confidence_mask(conf[si], spec.tau_c);
            Mask mmi = all;
            if (spec.selector == Selector::Mi) {
                const auto abstract = masked_abstract(idx[si], cb, mc);
                mmi = select_mask(redundancy_map(model.discriminator, abstract, f[static_cast<std::size_t>(r)]), spec.tau_mi);
            }
            const auto msg = encode(idx[si], mc, mmi, codes, opt);
            auto bytes = serialize(msg);
            const auto delivered = deserialize(bytes);
            const auto decoded = decode(delivered, codes);
            auto received = received_features(decoded, cb);
            if (background_reports)
                for (int u = 0; u < cfg.h; ++u)
                    for (int v = 0; v < cfg.w; ++v)
                        if (world.fov[si](u, v) && !delivered.conf_mask(u, v)) received.cell(u, v)(0) = 1.0;
            fused = fuse(fused, smooth(received));

            res.payload_bits += msg.full_payload.size();
            res.abstract_bits += msg.base_payload.size();
            res.mask_bits += msg.mask_bits();
            res.selected_cells += static_cast<std::size_t>(msg.conf_mask.count());
            ++res.messages;
            if (keep_bitstreams) res.bitstreams.push_back(std::move(bytes));
        }
        const auto post = posterior_from_features(fused, cfg);
        counts.add(predict(post), world.truth);
        distortion += mean_entropy(post) - h_exact;
    }
    res.total_bits = res.payload_bits + res.abstract_bits + res.mask_bits;
    const double cells = static_cast<double>(cfg.h) * cfg.w * static_cast<double>(std::max<std::size_t>(res.messages, 1));
    res.bpp = static_cast<double>(res.total_bits) / cells;
    res.bpp_no_mask = static_cast<double>(res.payload_bits + res.abstract_bits) / cells;
    const auto iou = iou_from(counts);
    res.mean_iou = iou.mean;
    res.class_iou = iou.per_class;
    res.distortion_nats = distortion / cfg.n_agents;
    return res;
}

void SweepConfig::validate() const
{
    require(!tau_c.empty() && !tau_mi.empty() && !seeds.empty(), "sweep grids must be nonempty");
    for (double t : tau_c) require(std::isfinite(t), "tau_c values must be finite");
    for (double t : tau_mi) require(!std::isnan(t), "tau_mi values must not be NaN");
}

namespace
{

Stat stat_of(const std::vector<double>& xs)
{
    Stat s;
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

} // namespace

void mark_pareto(std::vector<SweepPoint>& points)
{
    for (auto& p : points) {
        p.pareto = true;
        for (const auto& q : points) {
            const bool no_worse = q.bpp.mean <= p.bpp.mean && q.mean_iou.mean >= p.mean_iou.mean;
            const bool better = q.bpp.mean < p.bpp.mean || q.mean_iou.mean > p.mean_iou.mean;
            if (no_worse && better) {
                p.pareto = false;
                break;
            }
        }
    }
}

SweepResult run_sweep(const WorldConfig& world, const Model& model, const SweepConfig& cfg, int jobs)
{
    cfg.validate();
    require(jobs >= 1, "jobs must be at least 1");
    std::vector<WorldConfig> wcfg;
    std::vector<World> worlds;
    for (auto s : cfg.seeds) {
        wcfg.push_back(world);
        wcfg.back().seed = s;
        worlds.push_back(generate(wcfg.back()));
    }
    const auto codes = make_code_tables(model.codebook, cfg.coder);
    const std::size_t n_seed = cfg.seeds.size(), n_mi = cfg.tau_mi.size();
    const std::size_t n_jobs = cfg.tau_c.size() * n_mi * n_seed;

    SweepResult out;
    out.rounds.resize(n_jobs);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_lock;
    const auto worker = [&] {
        for (std::size_t j = next++; j < n_jobs; j = next++) {
            try {
                const std::size_t is = j % n_seed, im = (j / n_seed) % n_mi, ic = j / (n_seed * n_mi);
                RoundSpec spec{cfg.tau_c[ic], cfg.tau_mi[im], cfg.coder, cfg.selector};
                out.rounds[j] = run_round(worlds[is], wcfg[is], model, codes, spec, cfg.keep_bitstreams);
            } catch (...) {
                std::lock_guard lock(error_lock);
                if (!error) error = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), n_jobs);
        for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
        worker();
    }
    if (error) std::rethrow_exception(error);

    for (std::size_t p = 0; p < n_jobs / n_seed; ++p) {
        SweepPoint pt;
        pt.tau_c = cfg.tau_c[p / n_mi];
        pt.tau_mi = cfg.tau_mi[p % n_mi];
        pt.n = n_seed;
        std::vector<double> bits, bpp, bare, iou, dist, frac;
        for (std::size_t s = 0; s < n_seed; ++s) {
            const auto& r = out.rounds[p * n_seed + s];
            bits.push_back(static_cast<double>(r.total_bits));
            bpp.push_back(r.bpp);
            bare.push_back(r.bpp_no_mask);
            iou.push_back(r.mean_iou);
            dist.push_back(r.distortion_nats);
            frac.push_back(r.total_bits ? static_cast<double>(r.abstract_bits) / static_cast<double>(r.total_bits) : 0.0);
        }
        pt.total_bits = stat_of(bits);
        pt.bpp = stat_of(bpp);
        pt.bpp_no_mask = stat_of(bare);
        pt.mean_iou = stat_of(iou);
        pt.distortion_nats = stat_of(dist);
        pt.abstract_fraction = stat_of(frac);
        out.points.push_back(pt);
    }
    mark_pareto(out.points);
    return out;
}

double resolve_tau_mi(const std::string& token, const Model& model)
{
    if (token == "inf" || token == "+inf") return std::numeric_limits<double>::infinity();
    if (token == "-inf") return -std::numeric_limits<double>::infinity();
    const bool quantile = !token.empty() && token[0] == 'q';
    const std::string num = quantile ? token.substr(1) : token;
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(num, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (num.empty() || used != num.size()) throw InvalidArgument("bad tau_mi value '" + token + "'");
    if (!quantile) return x;
    require(x >= 0.0 && x <= 1.0, "tau_mi quantile must lie in [0, 1]");
    require(model.score_quantiles.size() == 11, "model has no redundancy score calibration");
    if (x >= 1.0) return std::numeric_limits<double>::infinity();
    const double pos = x * 10.0;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    return model.score_quantiles[lo] + frac * (model.score_quantiles[lo + 1] - model.score_quantiles[lo]);
}

namespace
{

std::string num(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(12) << x;
    return s.str();
}

} // namespace

void write_rounds_csv(std::ostream& out, const std::vector<RoundResult>& rounds, int classes)
{
    out << "seed,tau_c,tau_mi,coder,selector,total_bits,payload_bits,abstract_bits,mask_bits,bpp,mean_iou";
    for (int k = 0; k < classes; ++k) out << ",iou_class_" << k;
    out << ",distortion_nats\n";
    for (const auto& r : rounds) {
        out << r.seed << ',' << num(r.spec.tau_c) << ',' << num(r.spec.tau_mi) << ',' << to_string(r.spec.coder) << ','
            << to_string(r.spec.selector) << ',' << r.total_bits << ',' << r.payload_bits << ',' << r.abstract_bits << ','
            << r.mask_bits << ',' << num(r.bpp) << ',' << num(r.mean_iou);
        for (int k = 0; k < classes; ++k)
            out << ',' << num(k < static_cast<int>(r.class_iou.size()) ? r.class_iou[static_cast<std::size_t>(k)]
                                                                      : std::numeric_limits<double>::quiet_NaN());
        out << ',' << num(r.distortion_nats) << '\n';
    }
}

void write_summary_csv(std::ostream& out, const std::vector<SweepPoint>& points, CoderVariant coder, Selector selector)
{
    out << "tau_c,tau_mi,coder,selector,n_seeds,total_bits_mean,total_bits_std,bpp_mean,bpp_std,bpp_no_mask_mean,"
           "bpp_no_mask_std,mean_iou_mean,"
           "mean_iou_std,distortion_nats_mean,distortion_nats_std,abstract_fraction_mean,abstract_fraction_std,pareto_flag\n";
    for (const auto& p : points) {
        out << num(p.tau_c) << ',' << num(p.tau_mi) << ',' << to_string(coder) << ',' << to_string(selector) << ',' << p.n;
        for (const Stat* s : {&p.total_bits, &p.bpp, &p.bpp_no_mask, &p.mean_iou, &p.distortion_nats, &p.abstract_fraction})
            out << ',' << num(s->mean) << ',' << num(s->stddev);
        out << ',' << (p.pareto ? 1 : 0) << '\n';
    }
}

} // namespace rdcomm
