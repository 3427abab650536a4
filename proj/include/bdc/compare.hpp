#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bdc/bmr.hpp"
#include "bdc/peb.hpp"
#include "bdc/synth.hpp"
#include "bdc/vl.hpp"

namespace bdc {

enum class ParamSubset { BMatrix, AMatrix, CMatrix, Haemo, Custom };

struct PipelineConfig {
    FitOptions vl;
    PriorSpec priors;                  // empty -> default_priors(spec)
    double gamma_prior_mean = 0.0;
    double gamma_prior_var = 1.0 / 16.0;
    double q0_scale = 1e-4;
    int peb_max_iterations = 64;
    double peb_f_tolerance = 1e-3;
    double model_space_threshold = 3.0;
    int model_space_cap = 64;
    ParamSubset subset = ParamSubset::BMatrix;
    std::vector<std::string> custom_subset;  // labels, for ParamSubset::Custom
    int jobs = 0;                            // parallel subject fits; 0 -> all cores
    std::uint64_t master_seed = 0;           // provenance
    std::string config_hash;                 // provenance
};

/// The four outcome measures of one dataset, in nats.
struct DatasetScores {
    std::string label;
    bool ok = false;
    std::string failure;      // reason for exclusion when !ok
    double s_theta = 0.0;     // parameter certainty
    double s_epsilon = 0.0;   // random-effects certainty
    double d_params = 0.0;    // information gain over parameters
    double d_models = 0.0;    // information gain over models
    int n_models = 0;         // size of this dataset's model space
};

struct ModelSpaceEntry {
    std::vector<std::string> switched_off;
    double delta_f = 0.0;
};

struct ComparisonReport {
    std::vector<DatasetScores> datasets;
    // Relative nats per measure (worst ranked dataset = 0), keyed by measure
    // name in dataset order; excluded datasets carry NaN.
    std::map<std::string, std::vector<double>> relative;
    // Pairwise probability tables per measure: entry (i, j) is the
    // probability that dataset i beats dataset j.
    std::map<std::string, Eigen::MatrixXd> pairwise;
    std::vector<std::vector<ModelSpaceEntry>> model_spaces;  // per dataset
    std::vector<std::string> subset_labels;   // the compared parameter subset
    std::vector<std::string> pruned_labels;   // pruned by the pooled group model
    std::string verdict;                      // best dataset, or "indistinguishable"
    std::uint64_t master_seed = 0;
    std::string config_hash;
    std::string tool_version;
};

inline const std::vector<std::string>& measure_names() {
    static const std::vector<std::string> names{"s_theta", "s_epsilon", "d_params",
                                                "d_models"};
    return names;
}

/// Negative entropy of the group effects over the free (unpruned) subset.
double measure_parameter_certainty(const PebModel& peb);

/// Negative entropy of the between-subject precision posterior.
double measure_rfx_certainty(const PebModel& peb);

/// KL divergence from the group-effect prior to its posterior.
double info_gain_params(const PebModel& peb);

/// KL divergence from the uniform model prior to the softmax posterior over
/// the model space's free energies.
double info_gain_models(const PebModel& peb, const std::vector<ReducedModel>& space);

/// Relative nats: the minimum of the finite entries is mapped to zero.
std::vector<double> relative_nats(const std::vector<double>& raw);

/// Steps 1-5 over the bundles: per-subject fits, one pooled group model and
/// its pruning, empirical-Bayes re-estimation, per-dataset group models,
/// measures and model spaces. Precomputed subject posteriors (step 1 output)
/// may be supplied per dataset to skip the fits.
ComparisonReport run_pipeline(
    const std::vector<DatasetBundle>& bundles, const PipelineConfig& config,
    const std::vector<std::vector<SubjectPosterior>>* precomputed = nullptr);

struct SubjectFitOutcome {
    bool ok = false;
    SubjectPosterior posterior;
    std::string error;
};

/// Subject-fit stage used by both run_pipeline and the command line: fits
/// every subject of every bundle, in parallel up to `jobs` threads, results
/// in input order regardless of completion order.
std::vector<std::vector<SubjectFitOutcome>> fit_all_subjects(
    const std::vector<DatasetBundle>& bundles, const PipelineConfig& config);

/// Indices of the configured subset inside the parameter layout.
std::vector<Eigen::Index> subset_indices(const DcmSpec& spec, ParamSubset subset,
                                         const std::vector<std::string>& custom);

}  // namespace bdc
