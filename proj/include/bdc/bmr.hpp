#pragma once

#include <string>
#include <vector>

#include "bdc/info.hpp"
#include "bdc/peb.hpp"
#include "bdc/vl.hpp"

namespace bdc {

struct ReduceResult {
    GaussianDensity posterior;
    double delta_f = 0.0;  // log evidence of the reduced model minus the full one
};

/// Analytic posterior and log-evidence change for a model that differs from
/// the fitted one only in its priors. Zero-variance entries of the reduced
/// prior remove the parameter exactly (the analytic limit); their posterior
/// mean and variance are pinned to the reduced prior. Throws
/// ReductionInvalidError if the implied posterior precision is indefinite.
ReduceResult reduce(const GaussianDensity& full_prior, const GaussianDensity& full_posterior,
                    const GaussianDensity& reduced_prior);

/// One candidate in a model space: the fitted group model with some
/// parameters switched off (zero prior mean and variance).
struct ReducedModel {
    std::vector<std::string> switched_off;
    std::vector<int> switched_off_idx;
    GaussianDensity reduced_prior;
    GaussianDensity reduced_posterior;
    double delta_f = 0.0;
};

/// Greedy backward elimination over the group effects: repeatedly switches
/// off the single parameter whose removal gains the most evidence, while any
/// removal gains evidence. Ties within 1e-6 nats go to the lowest index.
PebModel prune_greedy(const PebModel& peb);

struct EmpiricalBayesResult {
    SubjectPosterior subject;
    PriorSpec priors;  // the subject's updated (empirical) priors
};

/// Re-estimates one subject analytically under group-informed priors:
/// parameters pruned from the group model are switched off, the remaining
/// subset priors become the group-level posterior. subset_indices maps the
/// group model's columns onto the subject's parameter vector.
EmpiricalBayesResult empirical_bayes_update(const SubjectPosterior& subject,
                                            const PriorSpec& priors,
                                            const std::vector<Eigen::Index>& subset_indices,
                                            const PebModel& pruned_group);

/// Breadth-first enumeration of reduced models around a pruned group model:
/// candidates switch off one additional free parameter at a time and are
/// retained while their evidence stays within `threshold` nats of the
/// starting model. The starting model is element 0; at most `cap` models.
std::vector<ReducedModel> build_model_space(const PebModel& pruned, double threshold = 3.0,
                                            int cap = 64);

}  // namespace bdc
