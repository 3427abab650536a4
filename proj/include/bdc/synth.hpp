#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdc/dcm.hpp"

namespace bdc {

/// One dataset of a comparison experiment: a label plus every subject's
/// timeseries under a common model structure and input schedule.
struct DatasetBundle {
    std::string label;
    DcmSpec spec;
    InputSchedule inputs;
    std::vector<Eigen::MatrixXd> series;  // one n_volumes x n_regions matrix per subject
};

/// Everything needed to score a synthetic experiment against its generator.
struct GroundTruth {
    DcmParams group_mean;
    Eigen::VectorXd between_sd;              // per parameter, layout order
    std::vector<DcmParams> subject_params;
    std::vector<double> noise_sd;            // per dataset (applied to every region)
    std::uint64_t master_seed = 0;
    std::vector<std::string> dataset_labels;
    std::vector<std::string> param_labels;
};

/// Multi-dataset synthetic cohort: all datasets share the sampled per-subject
/// parameters and inputs and differ only in observation noise. Deterministic
/// given the seed; rejects ground truths whose dynamics diverge.
std::pair<std::vector<DatasetBundle>, GroundTruth> generate_cohort(
    const DcmSpec& spec, const InputSchedule& inputs, const DcmParams& group_mean,
    const Eigen::VectorXd& between_sd, int n_subjects,
    const std::vector<double>& dataset_noise_sd, std::uint64_t seed,
    std::vector<std::string> dataset_labels = {});

/// Desk-scale default: 3 regions, 2 inputs, 8 s alternating blocks over about
/// 7.5 minutes at TR 2.8 s. The first input drives region 0, both inputs
/// modulate every self-connection.
struct Scenario {
    DcmSpec spec;
    InputSchedule inputs;
    DcmParams group_mean;
    Eigen::VectorXd between_sd;
};

Scenario default_scenario();

}  // namespace bdc
