#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "bdc/info.hpp"

namespace bdc {

/// Configuration of the group-level Bayesian GLM. Empty beta_prior / q1_diag
/// fall back to the first-level prior (its density and its precision
/// diagonal respectively).
struct PebConfig {
    GaussianDensity beta_prior;
    double gamma_prior_mean = 0.0;
    double gamma_prior_var = 1.0 / 16.0;
    double q0_scale = 1e-4;
    Eigen::VectorXd q1_diag;
    int max_iterations = 64;
    double f_tolerance = 1e-3;
};

/// Fitted group model: design, precision components and the Gaussian
/// posteriors over the group effects (beta) and the between-subject
/// log-precision scaling (gamma).
struct PebModel {
    int n_subjects = 0;
    std::vector<std::string> param_labels;
    Eigen::MatrixXd design;             // (N*M) x M, 1_N (x) I_M
    Eigen::MatrixXd q0, q1;             // M x M precision components
    GaussianDensity first_level_prior;  // subject-level prior over the subset
    std::vector<GaussianDensity> subjects;
    GaussianDensity beta_prior, beta_post;
    GaussianDensity gamma_prior, gamma_post;  // 1-D
    double free_energy = 0.0;
    double accuracy = 0.0;
    double complexity = 0.0;
    int n_iterations = 0;
    bool converged = false;
};

/// Group design for the mean-only GLM: ones(N) Kronecker identity(M).
Eigen::MatrixXd build_design(int n_subjects, int n_params);

/// Full between-subject precision: block diagonal with N identical blocks
/// Q0 + exp(-gamma) Q1.
Eigen::MatrixXd precision_matrix(double gamma, const Eigen::MatrixXd& q0,
                                 const Eigen::MatrixXd& q1, int n_subjects);

/// Fits the hierarchical GLM to the stacked subject posteriors by coordinate
/// ascent: the beta update given gamma is exact Bayesian linear regression,
/// gamma is updated by Newton steps on the free energy. Deterministic.
PebModel fit_peb(const std::vector<GaussianDensity>& subject_posteriors,
                 const GaussianDensity& first_level_prior,
                 const std::vector<std::string>& param_labels,
                 const PebConfig& cfg = {});

}  // namespace bdc
