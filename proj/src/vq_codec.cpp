#include "rdcomm/vq_codec.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/QR>

namespace rdcomm
{

namespace
{

void assign(const RowMat& points, const RowMat& centroids, std::vector<int>& assignment)
{
    assignment.resize(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        assignment[static_cast<std::size_t>(i)] = static_cast<int>(nearest_row(centroids, points.row(i)));
}

double sse(const RowMat& points, const RowMat& centroids, const std::vector<int>& assignment)
{
    double s = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        s += (points.row(i) - centroids.row(assignment[static_cast<std::size_t>(i)])).squaredNorm();
    return s;
}

void reseed_empty(const RowMat& points, RowMat& centroids, std::vector<int>& assignment)
{
    std::vector<int> counts(static_cast<std::size_t>(centroids.rows()), 0);
    for (int a : assignment) ++counts[static_cast<std::size_t>(a)];
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) continue;
        // Farthest point from its own centroid, taken from a cluster that keeps
        // at least one member.
        Eigen::Index far = -1;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            const int a = assignment[static_cast<std::size_t>(i)];
            if (counts[static_cast<std::size_t>(a)] < 2) continue;
            const double d = (points.row(i) - centroids.row(a)).squaredNorm();
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        if (far < 0) continue;
        --counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(far)])];
        assignment[static_cast<std::size_t>(far)] = static_cast<int>(c);
        counts[static_cast<std::size_t>(c)] = 1;
        centroids.row(c) = points.row(far);
    }
}

void update(const RowMat& points, RowMat& centroids, const std::vector<int>& assignment)
{
    RowMat sums = RowMat::Zero(centroids.rows(), centroids.cols());
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(centroids.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const int a = assignment[static_cast<std::size_t>(i)];
        sums.row(a) += points.row(i);
        ++counts[a];
    }
    for (Eigen::Index c = 0; c < centroids.rows(); ++c)
        if (counts[c] > 0) centroids.row(c) = sums.row(c) / static_cast<Scalar>(counts[c]);
}

RowMat kmeanspp(const RowMat& points, int k, std::mt19937_64& rng)
{
    const Eigen::Index n = points.rows();
    RowMat c(k, points.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    c.row(0) = points.row(pick(rng));
    Eigen::ArrayXd d2(n);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = (points.row(i) - c.row(0)).squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int j = 1; j < k; ++j) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        c.row(j) = points.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points.row(i) - c.row(j)).squaredNorm());
    }
    return c;
}

void write_row(std::ostream& out, const Eigen::Ref<const Eigen::RowVectorXd>& r)
{
    for (Eigen::Index j = 0; j < r.size(); ++j) out << (j ? " " : "") << r[j];
    out << '\n';
}

double read_scalar(std::istream& in)
{
    std::string tok;
    if (!(in >> tok)) throw FormatError("codebook: unexpected end of file");
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw FormatError("codebook: bad number '" + tok + "'");
        return v;
    } catch (const std::logic_error&) {
        throw FormatError("codebook: bad number '" + tok + "'");
    }
}

template <typename M>
void read_into(std::istream& in, M& m)
{
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = read_scalar(in);
}

} // namespace

AffineMap AffineMap::identity(Eigen::Index n) { return {Mat::Identity(n, n), Vec::Zero(n)}; }

RowMat AffineMap::apply(const RowMat& points) const
{
    require(points.cols() == in_dim(), "affine map input dimension mismatch");
    RowMat out = points * linear.transpose();
    out.rowwise() += offset.transpose();
    return out;
}

bool AffineMap::is_identity() const
{
    return linear.rows() == linear.cols() && linear.isIdentity(0.0) && (offset.array() == 0.0).all();
}

std::pair<AffineMap, AffineMap> random_orthogonal_pair(Eigen::Index dim, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> n;
    Mat g(dim, dim);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
    const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
    Vec b(dim);
    for (auto& x : b) x = n(rng);
    AffineMap in{q, b};
    AffineMap out{q.transpose(), -(q.transpose() * b)};
    return {in, out};
}

Codebook::Codebook(RowMat e)
    : embeddings(std::move(e)), conf_freq(Vec::Zero(embeddings.rows())), occ_freq(Vec::Zero(embeddings.rows()))
{
}

void LayeredCodebook::validate() const
{
    require(base.size() >= 1 && res.size() >= 1, "codebooks must be nonempty");
    require(base.dim() == res.dim(), "base and residual codebooks must share dimension");
    require(proj_in.out_dim() == base.dim() && proj_out.in_dim() == base.dim(), "projector shapes do not match codebook dimension");
    require(proj_in.in_dim() == proj_out.out_dim(), "projectors must be inverse in shape");
    require(base.embeddings.allFinite() && res.embeddings.allFinite(), "codebook rows must be finite");
    for (const auto* cb : {&base, &res})
        require(cb->conf_freq.size() == cb->size() && cb->occ_freq.size() == cb->size() && (cb->conf_freq.array() >= 0).all() &&
                    (cb->occ_freq.array() >= 0).all(),
                "codebook frequencies must be nonnegative and sized to the codebook");
}

KMeansResult kmeans_from(const RowMat& points, RowMat initial, int iters)
{
    require(points.rows() >= 1, "k-means needs points");
    require(initial.rows() >= 1 && initial.cols() == points.cols(), "k-means initial centroids have the wrong shape");
    KMeansResult r;
    r.initial_centroids = initial;
    r.centroids = std::move(initial);
    std::vector<int> previous;
    for (int it = 0; it < iters; ++it) {
        assign(points, r.centroids, r.assignment);
        reseed_empty(points, r.centroids, r.assignment);
        update(points, r.centroids, r.assignment);
        r.sse_history.push_back(sse(points, r.centroids, r.assignment));
        if (r.assignment == previous) break;
        previous = r.assignment;
    }
    assign(points, r.centroids, r.assignment);
    return r;
}

KMeansResult kmeans(const RowMat& points, int k, int iters, std::uint64_t seed)
{
    require(k >= 1, "k-means needs k >= 1");
    require(points.rows() >= k, "k-means needs at least k points");
    std::mt19937_64 rng(seed);
    return kmeans_from(points, kmeanspp(points, k, rng), iters);
}

LayeredCodebook train_codebooks(const RowMat& features, int n_base, int n_res, int iters, std::uint64_t seed,
                                std::optional<std::pair<AffineMap, AffineMap>> projectors)
{
    require(features.rows() >= 1, "codebook training needs features");
    require(n_base >= 1 && n_base <= n_res, "codebook volumes must satisfy 1 <= n_base <= n_res");
    require(n_res <= features.rows(), "residual codebook volume exceeds the number of training features");

    LayeredCodebook cb;
    if (projectors) {
        cb.proj_in = projectors->first;
        cb.proj_out = projectors->second;
    } else {
        cb.proj_in = AffineMap::identity(features.cols());
        cb.proj_out = AffineMap::identity(features.cols());
    }
    const RowMat projected = cb.proj_in.apply(features);
    const auto base = kmeans(projected, n_base, iters, seed);
    RowMat residual(projected.rows(), projected.cols());
    for (Eigen::Index i = 0; i < projected.rows(); ++i)
        residual.row(i) = projected.row(i) - base.centroids.row(base.assignment[static_cast<std::size_t>(i)]);
    const auto res = kmeans(residual, n_res, iters, seed ^ 0x9e3779b97f4a7c15ULL);
    cb.base = Codebook(base.centroids);
    cb.res = Codebook(res.centroids);
    cb.validate();
    return cb;
}

Quantized quantize(const FeatureGrid& grid, const LayeredCodebook& cb)
{
    require(grid.channels() == cb.feature_dim(), "feature grid channels do not match the codebook projector");
    const RowMat projected = cb.proj_in.apply(grid.data);
    Quantized q{IndexGrid(grid.h, grid.w), FeatureGrid()};
    RowMat latent(projected.rows(), projected.cols());
    for (int u = 0; u < grid.h; ++u)
        for (int v = 0; v < grid.w; ++v) {
            const auto i = grid.index(u, v);
            const auto b = nearest_row(cb.base.embeddings, projected.row(i));
            const RowMat r = projected.row(i) - cb.base.embeddings.row(b);
            const auto e = nearest_row(cb.res.embeddings, r.row(0));
            q.idx.base_idx(u, v) = static_cast<int>(b);
            q.idx.res_idx(u, v) = static_cast<int>(e);
            latent.row(i) = cb.base.embeddings.row(b) + cb.res.embeddings.row(e);
        }
    q.recon.h = grid.h;
    q.recon.w = grid.w;
    q.recon.data = cb.proj_out.apply(latent);
    return q;
}

FeatureGrid quantize_base_only(const FeatureGrid& grid, const LayeredCodebook& cb)
{
    require(grid.channels() == cb.feature_dim(), "feature grid channels do not match the codebook projector");
    const RowMat projected = cb.proj_in.apply(grid.data);
    RowMat latent(projected.rows(), projected.cols());
    for (Eigen::Index i = 0; i < projected.rows(); ++i) latent.row(i) = cb.base.embeddings.row(nearest_row(cb.base.embeddings, projected.row(i)));
    FeatureGrid out;
    out.h = grid.h;
    out.w = grid.w;
    out.data = cb.proj_out.apply(latent);
    return out;
}

FeatureGrid reconstruct(const IndexGrid& idx, const LayeredCodebook& cb)
{
    RowMat latent(static_cast<Eigen::Index>(idx.h) * idx.w, cb.base.dim());
    for (int u = 0; u < idx.h; ++u)
        for (int v = 0; v < idx.w; ++v)
            latent.row(static_cast<Eigen::Index>(u) * idx.w + v) =
                cb.base.embeddings.row(idx.base_idx(u, v)) + cb.res.embeddings.row(idx.res_idx(u, v));
    FeatureGrid out;
    out.h = idx.h;
    out.w = idx.w;
    out.data = cb.proj_out.apply(latent);
    return out;
}

FeatureGrid base_reconstruction(const IndexGrid& idx, const LayeredCodebook& cb)
{
    RowMat latent(static_cast<Eigen::Index>(idx.h) * idx.w, cb.base.dim());
    for (int u = 0; u < idx.h; ++u)
        for (int v = 0; v < idx.w; ++v)
            latent.row(static_cast<Eigen::Index>(u) * idx.w + v) = cb.base.embeddings.row(idx.base_idx(u, v));
    FeatureGrid out;
    out.h = idx.h;
    out.w = idx.w;
    out.data = cb.proj_out.apply(latent);
    return out;
}

void accumulate_conf_freq(LayeredCodebook& cb, const IndexGrid& idx, const ConfidenceGrid& conf)
{
    require(conf.rows() == idx.h && conf.cols() == idx.w, "confidence grid shape does not match the index grid");
    for (int u = 0; u < idx.h; ++u)
        for (int v = 0; v < idx.w; ++v) {
            const int b = idx.base_idx(u, v);
            const int r = idx.res_idx(u, v);
            require(b >= 0 && b < cb.base.size() && r >= 0 && r < cb.res.size(), "index outside codebook");
            require(conf(u, v) >= 0.0, "confidence must be nonnegative");
            cb.base.conf_freq[b] += conf(u, v);
            cb.base.occ_freq[b] += 1.0;
            cb.res.conf_freq[r] += conf(u, v);
            cb.res.occ_freq[r] += 1.0;
        }
}

void write_codebook(std::ostream& out, const LayeredCodebook& cb)
{
    cb.validate();
    out << "rdcomm-codebook 1\n";
    out << cb.base.size() + cb.res.size() << ' ' << cb.base.dim() << ' ' << cb.base.size() << ' ' << cb.res.size() << ' '
        << cb.feature_dim() << '\n';
    out << std::setprecision(17);
    for (const auto* cbk : {&cb.base, &cb.res})
        for (Eigen::Index i = 0; i < cbk->embeddings.rows(); ++i) write_row(out, cbk->embeddings.row(i));
    Eigen::RowVectorXd conf(cb.base.size() + cb.res.size()), occ(conf.size());
    conf << cb.base.conf_freq.transpose(), cb.res.conf_freq.transpose();
    occ << cb.base.occ_freq.transpose(), cb.res.occ_freq.transpose();
    write_row(out, conf);
    write_row(out, occ);
    for (const auto* p : {&cb.proj_in, &cb.proj_out}) {
        for (Eigen::Index i = 0; i < p->linear.rows(); ++i) write_row(out, p->linear.row(i));
        write_row(out, p->offset.transpose());
    }
}

LayeredCodebook read_codebook(std::istream& in)
{
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "rdcomm-codebook" || version != 1) throw FormatError("codebook: bad header");
    long n = 0, d = 0, nb = 0, nr = 0, c = 0;
    if (!(in >> n >> d >> nb >> nr >> c)) throw FormatError("codebook: bad size line");
    if (nb < 1 || nr < 1 || d < 1 || c < 1 || n != nb + nr) throw FormatError("codebook: inconsistent sizes");
    RowMat base(nb, d), res(nr, d);
    read_into(in, base);
    read_into(in, res);
    Eigen::RowVectorXd conf(n), occ(n);
    read_into(in, conf);
    read_into(in, occ);
    LayeredCodebook cb;
    cb.base = Codebook(base);
    cb.res = Codebook(res);
    cb.base.conf_freq = conf.head(nb).transpose();
    cb.res.conf_freq = conf.tail(nr).transpose();
    cb.base.occ_freq = occ.head(nb).transpose();
    cb.res.occ_freq = occ.tail(nr).transpose();
    cb.proj_in = {Mat(d, c), Vec(d)};
    cb.proj_out = {Mat(c, d), Vec(c)};
    for (auto* p : {&cb.proj_in, &cb.proj_out}) {
        read_into(in, p->linear);
        Eigen::RowVectorXd off(p->linear.rows());
        read_into(in, off);
        p->offset = off.transpose();
    }
    try {
        cb.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("codebook: ") + e.what());
    }
    return cb;
}

} // namespace rdcomm
