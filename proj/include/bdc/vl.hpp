#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "bdc/dcm.hpp"
#include "bdc/info.hpp"

namespace bdc {

/// Priors for one subject's fit: a Gaussian over the enabled neural and
/// haemodynamic parameters (zero variance pins a parameter at its prior
/// mean) and a Gaussian over the per-region log noise precisions.
struct PriorSpec {
    GaussianDensity theta_prior;
    GaussianDensity lambda_prior;
};

/// Shrinkage priors for the standard parameterization. Values are
/// configuration, not contract; lambda defaults to N(4, 1/16) per region.
PriorSpec default_priors(const DcmSpec& spec);

/// Gaussian posterior over a subject's parameters plus the free-energy
/// bookkeeping of the fit that produced it.
struct SubjectPosterior {
    GaussianDensity theta_post;
    GaussianDensity lambda_post;
    double free_energy = 0.0;
    double accuracy = 0.0;
    double complexity = 0.0;
    int n_iterations = 0;
    bool converged = false;
    std::vector<std::string> param_labels;
    Eigen::VectorXd data_offsets;       // per-region means removed before fitting
    std::vector<double> f_trace;        // accepted free-energy sequence
};

struct FitOptions {
    int max_iterations = 128;
    double f_tolerance = 1e-2;      // |dF| threshold of the convergence rule
    int convergence_window = 4;     // consecutive small-|dF| iterations required
    double jacobian_step = 1e-3;    // finite-difference step, units of prior SD
    double lm_damping0 = 0.125;     // initial Levenberg-Marquardt trust parameter
    double lm_damping_max = 1e8;
    int lambda_newton_max = 8;
    double lambda_newton_tol = 1e-6;
};

/// A generic forward model: parameter vector -> (n_samples x n_regions)
/// prediction. Noise is i.i.d. per region with one log-precision each.
struct ForwardModel {
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> predict;
    Eigen::Index n_samples = 0;
    Eigen::Index n_regions = 0;
};

struct FreeEnergy {
    double f = 0.0;
    double accuracy = 0.0;
    double complexity = 0.0;
};

/// Central finite-difference Jacobian of the flattened prediction with the
/// given per-dimension steps (zero steps skip a dimension, leaving a zero
/// column). This is the derivative the fitter uses internally.
Eigen::MatrixXd forward_jacobian(const ForwardModel& model, const Eigen::VectorXd& at,
                                 const Eigen::VectorXd& steps);

/// Laplace free energy of the given posteriors under the model: accuracy is
/// the expected Gaussian log-likelihood to second order around q's mean (the
/// precision evaluated at lambda_q's mean), complexity the KL divergences
/// from the priors.
FreeEnergy free_energy(const ForwardModel& model, const Eigen::MatrixXd& data,
                       const GaussianDensity& q, const GaussianDensity& lambda_q,
                       const PriorSpec& priors, double jacobian_step = 1e-3);

/// Variational-Laplace fit of a generic forward model: Gauss-Newton ascent on
/// the parameters with Levenberg-Marquardt rejection, interleaved Newton
/// updates of the log-precisions. The accepted free-energy sequence is
/// non-decreasing; the fit is deterministic.
SubjectPosterior fit_model(const ForwardModel& model, const Eigen::MatrixXd& data,
                           const PriorSpec& priors, const FitOptions& opts = {});

/// Fit one subject's DCM: mean-centres each region's timeseries (offsets are
/// recorded in the result), wraps the ODE model and runs fit_model.
SubjectPosterior fit(const DcmSpec& spec, const InputSchedule& inputs,
                     const Eigen::MatrixXd& data, const PriorSpec& priors,
                     const FitOptions& opts = {});

}  // namespace bdc
