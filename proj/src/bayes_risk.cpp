#include "rdcomm/bayes_risk.hpp"

#include <cmath>
#include <numbers>

namespace rdcomm
{

namespace
{

const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

template <typename Draw>
MonteCarloEstimate sample_mean(std::size_t draws, Draw&& draw)
{
    require(draws >= 2, "Monte-Carlo estimate needs at least two draws");
    // Welford update keeps the variance stable at 1e7 draws.
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 1; i <= draws; ++i) {
        const double x = draw();
        const double d = x - mean;
        mean += d / static_cast<double>(i);
        m2 += d * (x - mean);
    }
    const double var = m2 / static_cast<double>(draws - 1);
    return {mean, std::sqrt(var / static_cast<double>(draws))};
}

} // namespace

std::string regression_axis(RegressionKey key)
{
    switch (key) {
    case RegressionKey::Loc: return "Y_loc";
    case RegressionKey::Size: return "Y_size";
    case RegressionKey::Ori: return "Y_ori";
    }
    throw InvalidArgument("unknown regression key");
}

double RiskParams::lambda(RegressionKey k) const
{
    switch (k) {
    case RegressionKey::Loc: return lambda_loc;
    case RegressionKey::Size: return lambda_size;
    case RegressionKey::Ori: return lambda_ori;
    }
    throw InvalidArgument("unknown regression key");
}

double bayes_risk_ce(const JointTable& posterior_table, const std::string& target, const std::vector<std::string>& given)
{
    return conditional_entropy(posterior_table, target, given, Units::Nats).value;
}

double bayes_risk_l1_gaussian(double sigma)
{
    require(sigma >= 0.0 && std::isfinite(sigma), "gaussian sigma must be finite and nonnegative");
    return kSqrt2OverPi * sigma;
}

double bayes_risk_l1_laplace(double b)
{
    require(b > 0.0 && std::isfinite(b), "laplace scale must be positive");
    return b;
}

double laplace_entropy_form(double entropy_nats) { return 0.5 * std::exp(entropy_nats - 1.0); }

double bayes_risk_centerpoint(const std::vector<CellPosterior>& cells, const RiskParams& params)
{
    require(params.loss_family == LossFamily::CenterPoint, "centerpoint risk requires the centerpoint loss family");
    require(params.n_obj_mean >= 0.0 && std::isfinite(params.n_obj_mean), "n_obj_mean must be finite and nonnegative");

    double risk = 0.0;
    for (const auto& c : cells) {
        require(c.class_pmf.size() > 0, "cell posterior has an empty class pmf");
        require(std::abs(c.class_pmf.sum() - 1.0) <= 1e-9 && (c.class_pmf.array() >= 0.0).all(),
                "cell class pmf must be a normalized distribution");
        risk += entropy_of(c.class_pmf.array(), Units::Nats);
    }
    if (params.regression_keys.empty() || cells.empty()) return risk;

    double regression = 0.0;
    for (auto key : params.regression_keys) {
        double sigma_sum = 0.0;
        for (const auto& c : cells) {
            const auto it = c.reg_sigma.find(key);
            if (it == c.reg_sigma.end()) throw InvalidArgument("cell posterior is missing regression key " + regression_axis(key));
            require(it->second >= 0.0, "regression sigma must be nonnegative");
            sigma_sum += it->second;
        }
        regression += params.lambda(key) * bayes_risk_l1_gaussian(sigma_sum / static_cast<double>(cells.size()));
    }
    return risk + params.n_obj_mean * regression;
}

double detection_regression_term(const std::map<RegressionKey, double>& h_given_z,
                                 const std::map<RegressionKey, double>& h_given_xs, const RiskParams& params)
{
    double term = 0.0;
    for (auto key : params.regression_keys) {
        const auto z = h_given_z.find(key);
        const auto x = h_given_xs.find(key);
        if (z == h_given_z.end() || x == h_given_xs.end())
            throw InvalidArgument("missing regression entropy for " + regression_axis(key));
        term += params.lambda(key) * (std::exp(z->second - 1.0) - std::exp(x->second - 1.0));
    }
    return 0.5 * term;
}

double pragmatic_distortion(const JointTable& t, Task task, const RiskParams& params)
{
    for (const char* a : {"Y", "X_s", "X_r", "Z"})
        if (!t.has_axis(a)) throw InvalidArgument(std::string("pragmatic distortion needs axis ") + a);

    const auto risk_gap = [&](const std::string& target) {
        return conditional_entropy(t, target, {"Z", "X_r"}, Units::Nats).value -
               conditional_entropy(t, target, {"X_s", "X_r"}, Units::Nats).value;
    };
    double d = risk_gap("Y");
    if (task == Task::Detection && !params.regression_keys.empty()) {
        std::map<RegressionKey, double> hz, hx;
        for (auto key : params.regression_keys) {
            const auto axis = regression_axis(key);
            hz[key] = conditional_entropy(t, axis, {"Z", "X_r"}, Units::Nats).value;
            hx[key] = conditional_entropy(t, axis, {"X_s", "X_r"}, Units::Nats).value;
        }
        d += detection_regression_term(hz, hx, params);
    }
    return d;
}

double pragmatic_distortion(const std::vector<JointTable>& cells, Task task, const RiskParams& params)
{
    require(!cells.empty(), "pragmatic distortion over zero cells");
    double sum = 0.0;
    for (const auto& c : cells) sum += pragmatic_distortion(c, task, params);
    return sum / static_cast<double>(cells.size());
}

double reconstruction_distortion(const FeatureGrid& a, const FeatureGrid& b)
{
    require(a.h == b.h && a.w == b.w && a.channels() == b.channels(), "reconstruction distortion needs equal shapes");
    if (a.data.size() == 0) return 0.0;
    return (a.data - b.data).squaredNorm() / static_cast<double>(a.data.size());
}

MonteCarloEstimate mc_l1_gaussian(double sigma, std::size_t draws, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, sigma);
    return sample_mean(draws, [&] { return std::abs(n(rng)); });
}

MonteCarloEstimate mc_l1_laplace(double b, std::size_t draws, std::mt19937_64& rng)
{
    std::exponential_distribution<double> e(1.0 / b);
    std::bernoulli_distribution sign(0.5);
    return sample_mean(draws, [&] {
        const double x = sign(rng) ? e(rng) : -e(rng);
        return std::abs(x);
    });
}

MonteCarloEstimate mc_cross_entropy(const JointTable& t, const std::string& target, const std::vector<std::string>& given,
                                    std::size_t draws, std::mt19937_64& rng)
{
    // Exact posterior q(target | given) tabulated from raw atoms, keyed by the
    // flat index of the (given..., target) sub-tuple.
    const std::size_t ti = t.axis_index(target);
    std::vector<std::size_t> gi;
    for (const auto& g : given) gi.push_back(t.axis_index(g));
    const std::size_t nt = t.axes()[ti].size;
    std::size_t ng = 1;
    for (auto g : gi) ng *= t.axes()[g].size;

    auto given_key = [&](const std::vector<std::size_t>& s) {
        std::size_t k = 0;
        for (auto g : gi) k = k * t.axes()[g].size + s[g];
        return k;
    };
    Eigen::ArrayXXd joint = Eigen::ArrayXXd::Zero(static_cast<Eigen::Index>(ng), static_cast<Eigen::Index>(nt));
    for (Eigen::Index f = 0; f < t.pmf().size(); ++f) {
        const auto s = t.unflatten(static_cast<std::size_t>(f));
        joint(static_cast<Eigen::Index>(given_key(s)), static_cast<Eigen::Index>(s[ti])) += t.pmf()[f];
    }
    const Eigen::ArrayXd row_mass = joint.rowwise().sum();

    std::discrete_distribution<std::size_t> atoms(t.pmf().begin(), t.pmf().end());
    return sample_mean(draws, [&] {
        const auto s = t.unflatten(atoms(rng));
        const auto g = static_cast<Eigen::Index>(given_key(s));
        const double q = joint(g, static_cast<Eigen::Index>(s[ti])) / row_mass[g];
        return -std::log(q);
    });
}

} // namespace rdcomm
