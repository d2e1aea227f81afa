#include "rdcomm/mi_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <tuple>

namespace rdcomm
{

namespace
{

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

RowMat concat(const RowMat& s, const RowMat& r)
{
    require(s.rows() == r.rows() && s.cols() == r.cols(), "pair halves must have equal shapes");
    RowMat x(s.rows(), s.cols() + r.cols());
    x << s, r;
    return x;
}

struct Activations
{
    Mat z1, z2, a1, a2;
    Vec t;
};

Activations run(const Discriminator& d, const RowMat& x)
{
    require(x.cols() == d.w1.cols(), "input width does not match the discriminator");
    Activations a;
    a.z1 = (x * d.w1.transpose()).rowwise() + d.b1.transpose();
    a.a1 = a.z1.cwiseMax(0.0);
    a.z2 = (a.a1 * d.w2.transpose()).rowwise() + d.b2.transpose();
    a.a2 = a.z2.cwiseMax(0.0);
    a.t = (a.a2 * d.w3).array() + d.b3;
    return a;
}

// Accumulates dL/dparams for one set of pairs given dL/dT.
void backprop(const Discriminator& d, const RowMat& x, const Activations& a, const Vec& gt, Discriminator& g)
{
    g.w3 += a.a2.transpose() * gt;
    g.b3 += gt.sum();
    Mat gz2 = (gt * d.w3.transpose()).cwiseProduct((a.z2.array() > 0.0).cast<double>().matrix());
    g.w2 += gz2.transpose() * a.a1;
    g.b2 += gz2.colwise().sum().transpose();
    Mat gz1 = (gz2 * d.w2).cwiseProduct((a.z1.array() > 0.0).cast<double>().matrix());
    g.w1 += gz1.transpose() * x;
    g.b1 += gz1.colwise().sum().transpose();
}

void check_batch(const PairBatch& b)
{
    require(b.joint_s.rows() > 0 && b.marginal_s.rows() > 0, "pair batch needs joint and marginal pairs");
    require(b.joint_w.size() == 0 || b.joint_w.size() == b.joint_s.rows(), "joint weight count mismatch");
    require(b.marginal_w.size() == 0 || b.marginal_w.size() == b.marginal_s.rows(), "marginal weight count mismatch");
}

Vec weights_or_uniform(const Vec& w, Eigen::Index n)
{
    return w.size() ? w : Vec::Constant(n, 1.0 / static_cast<double>(n));
}

std::pair<RowMat, RowMat> merge_rows(const RowMat& s, const RowMat& r, const Vec& w, Vec& merged_w)
{
    std::map<std::vector<double>, Eigen::Index> seen;
    std::vector<Eigen::Index> first;
    std::vector<double> acc;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        std::vector<double> key(s.row(i).begin(), s.row(i).end());
        key.insert(key.end(), r.row(i).begin(), r.row(i).end());
        const auto [it, fresh] = seen.try_emplace(std::move(key), static_cast<Eigen::Index>(first.size()));
        if (fresh) {
            first.push_back(i);
            acc.push_back(0.0);
        }
        acc[static_cast<std::size_t>(it->second)] += w[i];
    }
    const auto m = static_cast<Eigen::Index>(first.size());
    RowMat ms(m, s.cols()), mr(m, r.cols());
    merged_w.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        ms.row(k) = s.row(first[static_cast<std::size_t>(k)]);
        mr.row(k) = r.row(first[static_cast<std::size_t>(k)]);
        merged_w[k] = acc[static_cast<std::size_t>(k)];
    }
    return {ms, mr};
}

} // namespace

Discriminator Discriminator::zeros(int c, int hidden)
{
    require(c >= 1 && hidden >= 1, "discriminator dimensions must be positive");
    Discriminator d;
    d.w1 = Mat::Zero(hidden, 2 * c);
    d.b1 = Vec::Zero(hidden);
    d.w2 = Mat::Zero(hidden, hidden);
    d.b2 = Vec::Zero(hidden);
    d.w3 = Vec::Zero(hidden);
    return d;
}

Discriminator Discriminator::init(int c, int hidden, std::uint64_t seed)
{
    auto d = zeros(c, hidden);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto fill = [&](auto& m, double fan_in) {
        const double sd = std::sqrt(2.0 / fan_in);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * n(rng);
    };
    fill(d.w1, 2.0 * c);
    fill(d.w2, hidden);
    fill(d.w3, hidden);
    return d;
}

bool Discriminator::all_finite() const
{
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && w3.allFinite() && std::isfinite(b3);
}

Vec Discriminator::forward(const RowMat& s, const RowMat& r) const { return run(*this, concat(s, r)).t; }

Vec Discriminator::flatten() const
{
    Vec f(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + 1);
    f << w1.reshaped(), b1, w2.reshaped(), b2, w3, b3;
    return f;
}

void Discriminator::assign(const Vec& flat)
{
    require(flat.size() == flatten().size(), "parameter vector has the wrong length");
    Eigen::Index o = 0;
    const auto take = [&](auto& m) {
        m.reshaped() = flat.segment(o, m.size());
        o += m.size();
    };
    take(w1);
    take(b1);
    take(w2);
    take(b2);
    take(w3);
    b3 = flat[o];
}

PairBatch make_pairs(const RowMat& s, const RowMat& r, std::uint64_t seed)
{
    require(s.rows() == r.rows() && s.rows() > 0, "pairs need equal, nonzero row counts");
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(r.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    PairBatch b{s, r, s, RowMat(r.rows(), r.cols()), Vec(), Vec()};
    for (Eigen::Index i = 0; i < r.rows(); ++i) b.marginal_r.row(i) = r.row(perm[static_cast<std::size_t>(i)]);
    return b;
}

namespace
{

struct Evaluation
{
    double loss = 0;
    Vec grad;
};

Evaluation evaluate(const Discriminator& d, const PairBatch& batch, bool with_grad)
{
    check_batch(batch);
    const RowMat xj = concat(batch.joint_s, batch.joint_r);
    const RowMat xm = concat(batch.marginal_s, batch.marginal_r);
    const auto aj = run(d, xj);
    const auto am = run(d, xm);
    const Vec wj = weights_or_uniform(batch.joint_w, xj.rows());
    const Vec wm = weights_or_uniform(batch.marginal_w, xm.rows());
    Evaluation e;
    e.loss = wj.dot(aj.t.unaryExpr([](double t) { return softplus(-t); })) +
             wm.dot(am.t.unaryExpr([](double t) { return softplus(t); }));
    if (with_grad) {
        auto g = Discriminator::zeros(d.channels(), d.hidden());
        backprop(d, xj, aj, wj.cwiseProduct(aj.t.unaryExpr([](double t) { return sigmoid(t) - 1.0; })), g);
        backprop(d, xm, am, wm.cwiseProduct(am.t.unaryExpr([](double t) { return sigmoid(t); })), g);
        e.grad = g.flatten();
    }
    return e;
}

} // namespace

PairBatch deduplicate(const PairBatch& batch)
{
    check_batch(batch);
    PairBatch out;
    std::tie(out.joint_s, out.joint_r) =
        merge_rows(batch.joint_s, batch.joint_r, weights_or_uniform(batch.joint_w, batch.joint_s.rows()), out.joint_w);
    std::tie(out.marginal_s, out.marginal_r) = merge_rows(
        batch.marginal_s, batch.marginal_r, weights_or_uniform(batch.marginal_w, batch.marginal_s.rows()), out.marginal_w);
    return out;
}

double loss(const Discriminator& d, const PairBatch& batch) { return evaluate(d, batch, false).loss; }

Vec loss_gradient(const Discriminator& d, const PairBatch& batch) { return evaluate(d, batch, true).grad; }

double train_step(Discriminator& d, const PairBatch& batch, double lr)
{
    require(lr > 0.0, "learning rate must be positive");
    const auto e = evaluate(d, batch, true);
    d.assign(d.flatten() - lr * e.grad);
    if (!d.all_finite() || !std::isfinite(e.loss))
        throw NumericalError("discriminator diverged: non-finite parameters after a step with lr " + std::to_string(lr) +
                             ", loss before " + std::to_string(e.loss));
    return e.loss;
}

std::vector<double> train(Discriminator& d, const PairBatch& batch, int steps, double lr)
{
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(std::max(steps, 0)));
    for (int i = 0; i < steps; ++i) history.push_back(train_step(d, batch, lr));
    return history;
}

double mi_lower_bound(const Discriminator& d, const PairBatch& batch) { return 2.0 * std::numbers::ln2 - loss(d, batch); }

double mi_score(const Discriminator& d, const PairBatch& batch)
{
    check_batch(batch);
    return weights_or_uniform(batch.joint_w, batch.joint_s.rows()).dot(d.forward(batch.joint_s, batch.joint_r));
}

Array2 redundancy_map(const Discriminator& d, const FeatureGrid& abstract, const FeatureGrid& local)
{
    require(abstract.h == local.h && abstract.w == local.w && abstract.channels() == local.channels(),
            "redundancy map needs aligned grids");
    const Vec t = d.forward(abstract.data, local.data);
    Array2 m(abstract.h, abstract.w);
    for (int u = 0; u < abstract.h; ++u)
        for (int v = 0; v < abstract.w; ++v) m(u, v) = t[abstract.index(u, v)];
    return m;
}

Mask select_mask(const Array2& rmap, double tau_mi) { return rmap < tau_mi; }

void write_discriminator(std::ostream& out, const Discriminator& d)
{
    out << "rdcomm-discriminator 1\n" << d.w1.cols() << ' ' << d.hidden() << ' ' << d.hidden() << " 1\n";
    out << std::setprecision(17);
    const auto rows = [&](const Mat& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
            out << '\n';
        }
    };
    rows(d.w1);
    rows(d.b1.transpose());
    rows(d.w2);
    rows(d.b2.transpose());
    rows(d.w3.transpose());
    out << d.b3 << '\n';
}

Discriminator read_discriminator(std::istream& in)
{
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "rdcomm-discriminator" || version != 1)
        throw FormatError("discriminator: bad header");
    long n_in = 0, h1 = 0, h2 = 0, n_out = 0;
    if (!(in >> n_in >> h1 >> h2 >> n_out) || n_in < 2 || n_in % 2 || h1 < 1 || h1 != h2 || n_out != 1)
        throw FormatError("discriminator: unsupported layer dims");
    auto d = Discriminator::zeros(static_cast<int>(n_in / 2), static_cast<int>(h1));
    // Text order is row-major per tensor; flatten order is column-major.
    Mat w1(h1, n_in), w2(h1, h1);
    Vec b1(h1), b2(h1), w3(h1);
    const auto get = [&](double& x) {
        if (!(in >> x)) throw FormatError("discriminator: truncated weights");
    };
    for (Eigen::Index i = 0; i < w1.rows(); ++i)
        for (Eigen::Index j = 0; j < w1.cols(); ++j) get(w1(i, j));
    for (auto& x : b1) get(x);
    for (Eigen::Index i = 0; i < w2.rows(); ++i)
        for (Eigen::Index j = 0; j < w2.cols(); ++j) get(w2(i, j));
    for (auto& x : b2) get(x);
    for (auto& x : w3) get(x);
    get(d.b3);
    d.w1 = w1;
    d.b1 = b1;
    d.w2 = w2;
    d.b2 = b2;
    d.w3 = w3;
    if (!d.all_finite()) throw FormatError("discriminator: non-finite weights");
    return d;
}

} // namespace rdcomm
