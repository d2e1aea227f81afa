#include "rdcomm/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

namespace rdcomm
{

Mask fov_mask(const Fov& f, int h, int w)
{
    Mask m = Mask::Constant(h, w, false);
    if (f.kind == Fov::Kind::Rect) {
        require(f.u0 >= 0 && f.v0 >= 0 && f.u1 <= h && f.v1 <= w && f.u0 < f.u1 && f.v0 < f.v1,
                "rectangular field of view must be a nonempty box inside the grid");
        m.block(f.u0, f.v0, f.u1 - f.u0, f.v1 - f.v0).setConstant(true);
        return m;
    }
    require(f.cu >= 0 && f.cu < h && f.cv >= 0 && f.cv < w, "sector centre must lie inside the grid");
    require(f.radius > 0 && f.theta0 <= f.theta1, "sector needs a positive radius and theta0 <= theta1");
    const bool full = f.theta1 - f.theta0 >= 360.0;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const double du = u - f.cu, dv = v - f.cv;
            if (du * du + dv * dv > f.radius * f.radius) continue;
            if (full || (du == 0 && dv == 0)) {
                m(u, v) = true;
                continue;
            }
            double a = std::atan2(-du, dv) * 180.0 / std::numbers::pi;
            a = f.theta0 + std::fmod(std::fmod(a - f.theta0, 360.0) + 360.0, 360.0);
            m(u, v) = a <= f.theta1;
        }
    return m;
}

std::vector<Fov> default_fovs(int h, int w, int n_agents)
{
    const int span = std::max(1, (3 * w + 3) / 4);
    std::vector<Fov> out;
    for (int a = 0; a < n_agents; ++a) {
        const int start = n_agents == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(a) * (w - span) / (n_agents - 1)));
        out.push_back(Fov::rect(0, start, h, start + span));
    }
    return out;
}

void WorldConfig::validate() const
{
    require(h >= 1 && w >= 1, "grid dimensions must be positive");
    require(h <= 0xffff && w <= 0xffff, "grid dimensions must fit in 16 bits");
    require(classes >= 2, "need at least two classes");
    require(n_agents >= 1, "need at least one agent");
    require(fovs.empty() || static_cast<int>(fovs.size()) == n_agents, "need one field of view per agent");
    require(noise.size() == 1 || static_cast<int>(noise.size()) == classes, "noise needs one value or one per class");
    for (double e : noise) require(e >= 0.0 && e < 0.5, "flip probability must lie in [0, 0.5)");
    require(density >= 0.0 && density < 1.0, "density must lie in [0, 1)");
    require(obj_min >= 1 && obj_min <= obj_max, "object sizes must satisfy 1 <= obj_min <= obj_max");
    for (int a = 0; a < n_agents; ++a) (void)fov_mask(fov(a), h, w);
}

Fov WorldConfig::fov(int agent) const
{
    if (!fovs.empty()) return fovs[static_cast<std::size_t>(agent)];
    return default_fovs(h, w, n_agents)[static_cast<std::size_t>(agent)];
}

double WorldConfig::epsilon(int cls) const { return noise.size() == 1 ? noise[0] : noise[static_cast<std::size_t>(cls)]; }

Vec WorldConfig::prior() const
{
    Vec p = Vec::Constant(classes, density / (classes - 1));
    p[0] = 1.0 - density;
    return p;
}

double likelihood(const WorldConfig& cfg, int observed, int truth)
{
    const double e = cfg.epsilon(truth);
    return observed == truth ? 1.0 - e : e / (cfg.classes - 1);
}

LabelGrid observe(const LabelGrid& truth, const Mask& fov, const WorldConfig& cfg, std::mt19937_64& rng)
{
    require(fov.rows() == truth.rows() && fov.cols() == truth.cols(), "field of view shape must match the grid");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> other(1, cfg.classes - 1);
    LabelGrid o = LabelGrid::Constant(truth.rows(), truth.cols(), kUnobserved);
    for (Eigen::Index u = 0; u < truth.rows(); ++u)
        for (Eigen::Index v = 0; v < truth.cols(); ++v) {
            if (!fov(u, v)) continue;
            const int y = truth(u, v);
            const bool flip = unit(rng) < cfg.epsilon(y);
            o(u, v) = flip ? (y + other(rng)) % cfg.classes : y;
        }
    return o;
}

World generate(const WorldConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    World world;
    world.truth = LabelGrid::Zero(cfg.h, cfg.w);
    const long target = std::lround(std::ceil(cfg.density * cfg.h * cfg.w));
    std::uniform_int_distribution<int> size(cfg.obj_min, cfg.obj_max), cls(1, cfg.classes - 1);
    std::uniform_int_distribution<int> ru(0, cfg.h - 1), rv(0, cfg.w - 1);
    long covered = 0;
    for (int guard = 0; covered < target && guard < 100000; ++guard) {
        const int a = std::min(size(rng), cfg.h), b = std::min(size(rng), cfg.w);
        const int u = std::min(ru(rng), cfg.h - a), v = std::min(rv(rng), cfg.w - b);
        world.truth.block(u, v, a, b).setConstant(cls(rng));
        covered = (world.truth != 0).count();
    }
    for (int a = 0; a < cfg.n_agents; ++a) {
        world.fov.push_back(fov_mask(cfg.fov(a), cfg.h, cfg.w));
        world.obs.push_back(observe(world.truth, world.fov.back(), cfg, rng));
    }
    return world;
}

FeatureGrid extract_features(const LabelGrid& obs, int classes)
{
    const int h = static_cast<int>(obs.rows()), w = static_cast<int>(obs.cols());
    FeatureGrid f(h, w, 2 * classes);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const int o = obs(u, v);
            if (o == kUnobserved) continue;
            require(o >= 0 && o < classes, "observed label out of range");
            auto cell = f.cell(u, v);
            cell[o] = 1.0;
            for (int du = -1; du <= 1; ++du)
                for (int dv = -1; dv <= 1; ++dv) {
                    const int uu = u + du, vv = v + dv;
                    if (uu < 0 || vv < 0 || uu >= h || vv >= w || obs(uu, vv) == kUnobserved) continue;
                    cell[classes + obs(uu, vv)] += 1.0 / 9.0;
                }
        }
    return f;
}

namespace
{

// Keeps 0 * log 0 finite when an evidence weight is zero.
double safe_log(double p) { return std::log(std::max(p, 1e-300)); }

Vec log_prior(const WorldConfig& cfg) { return cfg.prior().unaryExpr([](double p) { return safe_log(p); }); }

Mat log_likelihood_table(const WorldConfig& cfg)
{
    Mat t(cfg.classes, cfg.classes);  // (observed, truth)
    for (int o = 0; o < cfg.classes; ++o)
        for (int y = 0; y < cfg.classes; ++y) t(o, y) = safe_log(likelihood(cfg, o, y));
    return t;
}

void normalize_log_rows(RowMat& lp)
{
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
        const double m = lp.row(i).maxCoeff();
        lp.row(i) = (lp.row(i).array() - m).exp().matrix();
        lp.row(i) /= lp.row(i).sum();
    }
}

} // namespace

FeatureGrid posterior_from_observations(const std::vector<LabelGrid>& obs, const WorldConfig& cfg)
{
    require(!obs.empty(), "need at least one observation grid");
    const int h = static_cast<int>(obs[0].rows()), w = static_cast<int>(obs[0].cols());
    const Mat ll = log_likelihood_table(cfg);
    const Vec lprior = log_prior(cfg);
    FeatureGrid p(h, w, cfg.classes);
    p.data.rowwise() = lprior.transpose();
    for (const auto& o : obs) {
        require(o.rows() == h && o.cols() == w, "observation grids must share a shape");
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < w; ++v)
                if (o(u, v) != kUnobserved) p.cell(u, v) += ll.row(o(u, v));
    }
    normalize_log_rows(p.data);
    return p;
}

FeatureGrid posterior_from_features(const FeatureGrid& features, const WorldConfig& cfg)
{
    require(features.channels() >= cfg.classes, "features need at least K channels");
    const Mat ll = log_likelihood_table(cfg);
    const Vec lprior = log_prior(cfg);
    FeatureGrid p(features.h, features.w, cfg.classes);
    const RowMat evidence = features.data.leftCols(cfg.classes).cwiseMax(0.0).cwiseMin(1.0);
    p.data = evidence * ll;
    p.data.rowwise() += lprior.transpose();
    normalize_log_rows(p.data);
    return p;
}

ConfidenceGrid confidence(const FeatureGrid& features, const WorldConfig& cfg)
{
    const auto p = posterior_from_features(features, cfg);
    ConfidenceGrid c(features.h, features.w);
    for (int u = 0; u < features.h; ++u)
        for (int v = 0; v < features.w; ++v) c(u, v) = std::clamp(1.0 - p.cell(u, v)[0], 0.0, 1.0);
    return c;
}

FeatureGrid fuse(const FeatureGrid& local, const FeatureGrid& received)
{
    require(local.h == received.h && local.w == received.w && local.channels() == received.channels(),
            "fusion needs aligned grids");
    FeatureGrid out = local;
    out.data = local.data.cwiseMax(received.data);
    return out;
}

FeatureGrid smooth(const FeatureGrid& sparse)
{
    FeatureGrid out = sparse;
    for (int u = 0; u < sparse.h; ++u)
        for (int v = 0; v < sparse.w; ++v) {
            if (!sparse.cell_is_zero(sparse.index(u, v))) continue;
            Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(sparse.channels());
            int n = 0;
            for (int du = -1; du <= 1; ++du)
                for (int dv = -1; dv <= 1; ++dv) {
                    const int uu = u + du, vv = v + dv;
                    if ((du == 0 && dv == 0) || uu < 0 || vv < 0 || uu >= sparse.h || vv >= sparse.w) continue;
                    if (sparse.cell_is_zero(sparse.index(uu, vv))) continue;
                    acc += sparse.cell(uu, vv);
                    ++n;
                }
            if (n > 0) out.cell(u, v) = 0.5 * acc / n;
        }
    return out;
}

LabelGrid predict(const FeatureGrid& posterior)
{
    LabelGrid l(posterior.h, posterior.w);
    for (int u = 0; u < posterior.h; ++u)
        for (int v = 0; v < posterior.w; ++v) {
            Eigen::Index k = 0;
            posterior.cell(u, v).maxCoeff(&k);
            l(u, v) = static_cast<int>(k);
        }
    return l;
}

double mean_entropy(const FeatureGrid& posterior)
{
    const auto& p = posterior.data.array();
    return -(p > 0.0).select(p * p.log(), 0.0).sum() / static_cast<double>(posterior.cells());
}

void IoUCounts::add(const LabelGrid& pred, const LabelGrid& truth)
{
    require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), "prediction and truth shapes differ");
    const int k = static_cast<int>(inter.size());
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const int p = pred.data()[i], t = truth.data()[i];
        require(p >= 0 && p < k && t >= 0 && t < k, "label out of range");
        if (p == t) {
            ++inter[static_cast<std::size_t>(p)];
            ++uni[static_cast<std::size_t>(p)];
        } else {
            ++uni[static_cast<std::size_t>(p)];
            ++uni[static_cast<std::size_t>(t)];
        }
    }
}

IoUCounts& IoUCounts::operator+=(const IoUCounts& o)
{
    for (std::size_t i = 0; i < inter.size(); ++i) {
        inter[i] += o.inter[i];
        uni[i] += o.uni[i];
    }
    return *this;
}

IoUResult iou_from(const IoUCounts& c)
{
    IoUResult r;
    double sum = 0;
    int n = 0;
    for (std::size_t i = 0; i < c.inter.size(); ++i) {
        if (c.uni[i] == 0) {
            r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        r.per_class.push_back(static_cast<double>(c.inter[i]) / static_cast<double>(c.uni[i]));
        sum += r.per_class.back();
        ++n;
    }
    r.mean = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    return r;
}

IoUResult score_iou(const LabelGrid& pred, const LabelGrid& truth, int classes)
{
    IoUCounts c(classes);
    c.add(pred, truth);
    return iou_from(c);
}

void write_grid(std::ostream& out, const LabelGrid& g)
{
    out << "rdcomm-grid 1\n" << g.rows() << ' ' << g.cols() << '\n';
    for (Eigen::Index u = 0; u < g.rows(); ++u) {
        for (Eigen::Index v = 0; v < g.cols(); ++v) out << (v ? " " : "") << g(u, v);
        out << '\n';
    }
}

LabelGrid read_grid(std::istream& in)
{
    std::string magic;
    int version = 0;
    long h = 0, w = 0;
    if (!(in >> magic >> version) || magic != "rdcomm-grid" || version != 1) throw FormatError("grid: bad header");
    if (!(in >> h >> w) || h < 1 || w < 1) throw FormatError("grid: bad dimensions");
    LabelGrid g(h, w);
    for (Eigen::Index u = 0; u < h; ++u)
        for (Eigen::Index v = 0; v < w; ++v)
            if (!(in >> g(u, v)) || g(u, v) < kUnobserved) throw FormatError("grid: bad or missing label");
    std::string extra;
    if (in >> extra) throw FormatError("grid: trailing data");
    return g;
}

} // namespace rdcomm
