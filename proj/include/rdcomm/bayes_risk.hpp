#ifndef RDCOMM_BAYES_RISK_HPP_
#define RDCOMM_BAYES_RISK_HPP_

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rdcomm/infotheory.hpp"
#include "rdcomm/types.hpp"

// All risks are in nats.
namespace rdcomm
{

enum class LossFamily
{
    CrossEntropy,
    L1Gaussian,
    L1Laplace,
    CenterPoint
};

enum class RegressionKey
{
    Loc,
    Size,
    Ori
};

enum class Task
{
    Segmentation,
    Detection
};

/// Name of the table axis holding the discretized regression target for `key`
/// ("Y_loc", "Y_size", "Y_ori").
std::string regression_axis(RegressionKey key);

struct RiskParams
{
    LossFamily loss_family = LossFamily::CrossEntropy;
    double lambda_loc = 1.0;  // offset weight
    double lambda_size = 1.0;
    double lambda_ori = 1.0;
    double n_obj_mean = 0.0;
    std::set<RegressionKey> regression_keys;

    [[nodiscard]] double lambda(RegressionKey k) const;
};

struct CellPosterior
{
    Eigen::VectorXd class_pmf;
    std::map<RegressionKey, double> reg_entropy;  // nats
    std::map<RegressionKey, double> reg_sigma;
    std::map<RegressionKey, double> reg_b;
};

double bayes_risk_ce(const JointTable& posterior_table, const std::string& target, const std::vector<std::string>& given);

/// E|Y - mu| for Y ~ N(mu, sigma^2): sqrt(2/pi) sigma.
double bayes_risk_l1_gaussian(double sigma);

/// E|Y - m| for Y ~ Laplace(m, b): b.
double bayes_risk_l1_laplace(double b);

/// Laplace L1 risk written through the differential entropy H = ln(2b) + 1.
double laplace_entropy_form(double entropy_nats);

/// Class entropies summed over cells plus the object-level regression term.
/// The per-key sigma entering the regression term is the mean of the cells'
/// reg_sigma for that key.
double bayes_risk_centerpoint(const std::vector<CellPosterior>& cells, const RiskParams& params);

/// Increase in Bayes risk of Y when the receiver holds (Z, X_r) instead of
/// (X_s, X_r). Axes "Y", "X_s", "X_r", "Z" must exist; detection also reads the
/// regression axes named by regression_axis() for params.regression_keys.
double pragmatic_distortion(const JointTable& table_with_z, Task task, const RiskParams& params);

/// Mean of the per-cell distortions.
double pragmatic_distortion(const std::vector<JointTable>& cells, Task task, const RiskParams& params);

/// 1/2 * sum_k lambda_k (e^{h_z[k]-1} - e^{h_x[k]-1}).
double detection_regression_term(const std::map<RegressionKey, double>& h_given_z,
                                 const std::map<RegressionKey, double>& h_given_xs, const RiskParams& params);

double reconstruction_distortion(const FeatureGrid& a, const FeatureGrid& b);

// Monte-Carlo oracles. Each returns the sample mean and its standard error.
struct MonteCarloEstimate
{
    double mean = 0.0;
    double std_error = 0.0;
};

MonteCarloEstimate mc_l1_gaussian(double sigma, std::size_t draws, std::mt19937_64& rng);
MonteCarloEstimate mc_l1_laplace(double b, std::size_t draws, std::mt19937_64& rng);

/// Samples (target, given) from the table and scores -ln q(target | given) of
/// the exact posterior predictor q.
MonteCarloEstimate mc_cross_entropy(const JointTable& t, const std::string& target, const std::vector<std::string>& given,
                                    std::size_t draws, std::mt19937_64& rng);

} // namespace rdcomm

#endif // RDCOMM_BAYES_RISK_HPP_
