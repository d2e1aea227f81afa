#include "rdcomm/infotheory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace rdcomm
{

namespace
{

constexpr double kZeroMass = 1e-15;
constexpr double kSumTolerance = 1e-12;

std::vector<std::size_t> compute_strides(const std::vector<Axis>& axes)
{
    std::vector<std::size_t> strides(axes.size(), 1);
    for (std::size_t i = axes.size(); i-- > 1;)
        strides[i - 1] = strides[i] * axes[i].size;
    return strides;
}

std::size_t product_size(const std::vector<Axis>& axes)
{
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.size;
    return n;
}

void check_distinct(const std::vector<std::string>& names)
{
    std::set<std::string> seen;
    for (const auto& n : names)
        if (!seen.insert(n).second) throw InvalidArgument("axis named more than once: " + n);
}

} // namespace

double InfoQuantity::bits() const { return units == Units::Bits ? value : value / std::numbers::ln2; }
double InfoQuantity::nats() const { return units == Units::Nats ? value : value * std::numbers::ln2; }

JointTable::JointTable(std::vector<Axis> axes, Eigen::ArrayXd pmf) : axes_(std::move(axes)), pmf_(std::move(pmf))
{
    require(!axes_.empty(), "joint table needs at least one axis");
    std::vector<std::string> names;
    for (const auto& a : axes_) {
        require(a.size >= 1, "axis '" + a.name + "' has size 0");
        require(!a.name.empty(), "axis name must be nonempty");
        names.push_back(a.name);
    }
    check_distinct(names);
    require(static_cast<std::size_t>(pmf_.size()) == product_size(axes_), "pmf size does not match axis product");
    require((pmf_ >= 0.0).all() && pmf_.allFinite(), "pmf entries must be finite and nonnegative");
    require(std::abs(pmf_.sum() - 1.0) <= kSumTolerance, "pmf must sum to 1");
    strides_ = compute_strides(axes_);
}

std::size_t JointTable::axis_index(const std::string& name) const
{
    for (std::size_t i = 0; i < axes_.size(); ++i)
        if (axes_[i].name == name) return i;
    throw InvalidArgument("unknown axis: " + name);
}

bool JointTable::has_axis(const std::string& name) const
{
    return std::any_of(axes_.begin(), axes_.end(), [&](const Axis& a) { return a.name == name; });
}

std::size_t JointTable::flat_index(const std::vector<std::size_t>& symbols) const
{
    require(symbols.size() == axes_.size(), "symbol tuple has wrong arity");
    std::size_t flat = 0;
    for (std::size_t i = 0; i < axes_.size(); ++i) {
        if (symbols[i] >= axes_[i].size)
            throw InvalidArgument("symbol " + std::to_string(symbols[i]) + " outside alphabet of '" + axes_[i].name + "'");
        flat += symbols[i] * strides_[i];
    }
    return flat;
}

std::vector<std::size_t> JointTable::unflatten(std::size_t flat) const
{
    std::vector<std::size_t> s(axes_.size());
    for (std::size_t i = 0; i < axes_.size(); ++i) {
        s[i] = flat / strides_[i];
        flat %= strides_[i];
    }
    return s;
}

double JointTable::prob(const std::vector<std::size_t>& symbols) const
{
    return pmf_[static_cast<Eigen::Index>(flat_index(symbols))];
}

JointTable JointTable::marginal(const std::vector<std::string>& names) const
{
    require(!names.empty(), "marginal over an empty axis list");
    check_distinct(names);
    std::vector<std::size_t> idx;
    std::vector<Axis> out_axes;
    for (const auto& n : names) {
        idx.push_back(axis_index(n));
        out_axes.push_back(axes_[idx.back()]);
    }
    const auto out_strides = compute_strides(out_axes);
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(product_size(out_axes)));

    std::vector<std::size_t> sym(axes_.size(), 0);
    for (Eigen::Index f = 0; f < pmf_.size(); ++f) {
        std::size_t o = 0;
        for (std::size_t k = 0; k < idx.size(); ++k) o += sym[idx[k]] * out_strides[k];
        out[static_cast<Eigen::Index>(o)] += pmf_[f];
        for (std::size_t i = axes_.size(); i-- > 0;) {
            if (++sym[i] < axes_[i].size) break;
            sym[i] = 0;
        }
    }
    // Summation reorders terms; renormalize so the result satisfies the table invariant.
    out /= out.sum();
    return JointTable(std::move(out_axes), std::move(out));
}

JointTable JointTable::with_channel(const std::string& from, const Axis& new_axis, const Eigen::MatrixXd& channel) const
{
    const std::size_t src = axis_index(from);
    require(!has_axis(new_axis.name), "axis already present: " + new_axis.name);
    require(static_cast<std::size_t>(channel.rows()) == axes_[src].size, "channel rows must match source alphabet");
    require(static_cast<std::size_t>(channel.cols()) == new_axis.size, "channel columns must match new alphabet");
    require((channel.array() >= 0.0).all(), "channel entries must be nonnegative");
    for (Eigen::Index r = 0; r < channel.rows(); ++r)
        require(std::abs(channel.row(r).sum() - 1.0) <= 1e-12, "channel rows must sum to 1");

    auto axes = axes_;
    axes.push_back(new_axis);
    const auto n_new = static_cast<Eigen::Index>(new_axis.size);
    Eigen::ArrayXd out(pmf_.size() * n_new);
    for (Eigen::Index f = 0; f < pmf_.size(); ++f) {
        const auto s = (static_cast<std::size_t>(f) / strides_[src]) % axes_[src].size;
        for (Eigen::Index z = 0; z < n_new; ++z) out[f * n_new + z] = pmf_[f] * channel(static_cast<Eigen::Index>(s), z);
    }
    out /= out.sum();
    return JointTable(std::move(axes), std::move(out));
}

JointTable JointTable::random(std::vector<Axis> axes, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> expo(1.0);
    Eigen::ArrayXd p(static_cast<Eigen::Index>(product_size(axes)));
    for (auto& x : p) x = expo(rng);
    p /= p.sum();
    return JointTable(std::move(axes), std::move(p));
}

JointTable JointTable::read_text(std::istream& in)
{
    std::string line;
    std::vector<Axis> axes;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            return true;
        }
        return false;
    };
    if (!next_line()) throw FormatError("joint table: missing header");
    {
        std::istringstream hs(line);
        std::string tok;
        while (hs >> tok) {
            const auto colon = tok.rfind(':');
            if (colon == std::string::npos || colon == 0) throw FormatError("joint table: bad header token '" + tok + "'");
            Axis a{tok.substr(0, colon), 0};
            try {
                a.size = std::stoul(tok.substr(colon + 1));
            } catch (const std::exception&) {
                throw FormatError("joint table: bad axis size in '" + tok + "'");
            }
            axes.push_back(a);
        }
    }
    if (axes.empty()) throw FormatError("joint table: empty header");
    Eigen::ArrayXd pmf = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(product_size(axes)));
    const auto strides = compute_strides(axes);
    while (next_line()) {
        std::istringstream ls(line);
        std::size_t flat = 0;
        for (std::size_t i = 0; i < axes.size(); ++i) {
            long long s = -1;
            if (!(ls >> s)) throw FormatError("joint table: short atom line '" + line + "'");
            if (s < 0 || static_cast<std::size_t>(s) >= axes[i].size)
                throw FormatError("joint table: symbol out of range in '" + line + "'");
            flat += static_cast<std::size_t>(s) * strides[i];
        }
        double p = 0;
        std::string ptok;
        if (!(ls >> ptok)) throw FormatError("joint table: missing probability in '" + line + "'");
        try {
            p = std::stod(ptok);
        } catch (const std::exception&) {
            throw FormatError("joint table: bad probability '" + ptok + "'");
        }
        if (!(p >= 0.0)) throw FormatError("joint table: negative probability");
        pmf[static_cast<Eigen::Index>(flat)] += p;
    }
    const double total = pmf.sum();
    // Decimal fixtures rarely sum to 1 exactly; accept small rounding and renormalize.
    if (std::abs(total - 1.0) > 1e-9) throw FormatError("joint table: probabilities sum to " + std::to_string(total));
    pmf /= total;
    return JointTable(std::move(axes), std::move(pmf));
}

void JointTable::write_text(std::ostream& out) const
{
    for (std::size_t i = 0; i < axes_.size(); ++i) out << (i ? " " : "") << axes_[i].name << ':' << axes_[i].size;
    out << '\n';
    out << std::setprecision(17);
    for (Eigen::Index f = 0; f < pmf_.size(); ++f) {
        if (pmf_[f] == 0.0) continue;
        for (auto s : unflatten(static_cast<std::size_t>(f))) out << s << ' ';
        out << pmf_[f] << '\n';
    }
}

double entropy_of(const Eigen::Ref<const Eigen::ArrayXd>& p, Units units)
{
    double h = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p[i] > kZeroMass) h -= p[i] * std::log(p[i]);
    return units == Units::Nats ? h : h / std::numbers::ln2;
}

InfoQuantity joint_entropy(const JointTable& t, const std::vector<std::string>& axes, Units units)
{
    return {entropy_of(t.marginal(axes).pmf(), units), units};
}

InfoQuantity entropy(const JointTable& t, const std::string& axis, Units units)
{
    return joint_entropy(t, {axis}, units);
}

InfoQuantity conditional_entropy(const JointTable& t, const std::string& target, const std::vector<std::string>& given,
                                 Units units)
{
    if (std::find(given.begin(), given.end(), target) != given.end())
        throw InvalidArgument("target '" + target + "' also appears in the conditioning set");
    (void)t.axis_index(target);
    if (given.empty()) return entropy(t, target, units);
    auto all = given;
    all.push_back(target);
    return {joint_entropy(t, all, units).value - joint_entropy(t, given, units).value, units};
}

InfoQuantity mutual_information(const JointTable& t, const std::string& a, const std::string& b, Units units)
{
    if (a == b) return entropy(t, a, units);
    const double v = entropy(t, a, units).value + entropy(t, b, units).value - joint_entropy(t, {a, b}, units).value;
    return {v, units};
}

InfoQuantity conditional_mi(const JointTable& t, const std::string& a, const std::string& b,
                            const std::vector<std::string>& given, Units units)
{
    if (given.empty()) return mutual_information(t, a, b, units);
    const auto in_given = [&](const std::string& n) { return std::find(given.begin(), given.end(), n) != given.end(); };
    if (in_given(a) || in_given(b)) {
        (void)t.axis_index(a);
        (void)t.axis_index(b);
        return {0.0, units};
    }
    auto with_b = given;
    with_b.push_back(b);
    const double h_a_given = conditional_entropy(t, a, given, units).value;
    const double h_a_given_b = a == b ? 0.0 : conditional_entropy(t, a, with_b, units).value;
    return {h_a_given - h_a_given_b, units};
}

InfoQuantity interaction_information(const JointTable& t, const std::string& a, const std::string& b, const std::string& c,
                                     Units units)
{
    return {mutual_information(t, a, b, units).value - conditional_mi(t, a, b, {c}, units).value, units};
}

JointTable plugin_from_samples(const std::vector<std::vector<std::size_t>>& samples, const std::vector<Axis>& axes)
{
    require(!samples.empty(), "plug-in estimate needs at least one sample");
    Eigen::ArrayXd counts = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(product_size(axes)));
    const auto strides = compute_strides(axes);
    for (const auto& s : samples) {
        require(s.size() == axes.size(), "sample tuple has wrong arity");
        std::size_t flat = 0;
        for (std::size_t i = 0; i < axes.size(); ++i) {
            if (s[i] >= axes[i].size)
                throw InvalidArgument("sample symbol " + std::to_string(s[i]) + " outside alphabet of '" + axes[i].name + "'");
            flat += s[i] * strides[i];
        }
        counts[static_cast<Eigen::Index>(flat)] += 1.0;
    }
    counts /= static_cast<double>(samples.size());
    counts /= counts.sum();
    return JointTable(axes, std::move(counts));
}

std::vector<std::vector<std::size_t>> sample_table(const JointTable& t, std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> dist(t.pmf().begin(), t.pmf().end());
    std::vector<std::vector<std::size_t>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(t.unflatten(dist(rng)));
    return out;
}

} // namespace rdcomm
