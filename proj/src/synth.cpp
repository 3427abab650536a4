#include "bdc/synth.hpp"

#include <cmath>
#include <utility>

#include "bdc/rng.hpp"

namespace bdc {

std::pair<std::vector<DatasetBundle>, GroundTruth> generate_cohort(
    const DcmSpec& spec, const InputSchedule& inputs, const DcmParams& group_mean,
    const Eigen::VectorXd& between_sd, int n_subjects,
    const std::vector<double>& dataset_noise_sd, std::uint64_t seed,
    std::vector<std::string> dataset_labels) {
    validate(spec, group_mean);
    if (n_subjects < 2) throw Error("generate_cohort: need at least two subjects");
    if (dataset_noise_sd.empty()) throw Error("generate_cohort: no datasets requested");
    for (double sd : dataset_noise_sd) {
        if (sd < 0.0) throw Error("generate_cohort: noise SD must be >= 0");
    }
    const auto slots = param_layout(spec);
    if (between_sd.size() != static_cast<Eigen::Index>(slots.size())) {
        throw DimensionError("generate_cohort: between-subject SD must cover the layout");
    }
    if ((between_sd.array() < 0.0).any()) {
        throw Error("generate_cohort: between-subject SD must be >= 0");
    }
    if (dataset_labels.empty()) {
        for (std::size_t d = 0; d < dataset_noise_sd.size(); ++d) {
            dataset_labels.push_back("dataset" + std::to_string(d));
        }
    }
    if (dataset_labels.size() != dataset_noise_sd.size()) {
        throw DimensionError("generate_cohort: one label per dataset");
    }

    GroundTruth truth;
    truth.group_mean = group_mean;
    truth.between_sd = between_sd;
    truth.noise_sd = dataset_noise_sd;
    truth.master_seed = seed;
    truth.dataset_labels = dataset_labels;
    for (const auto& s : slots) truth.param_labels.push_back(s.label);

    const Eigen::VectorXd group_theta = pack_params(spec, group_mean);
    std::vector<Eigen::MatrixXd> noiseless;
    noiseless.reserve(static_cast<std::size_t>(n_subjects));
    for (int i = 0; i < n_subjects; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0, 1));
        Eigen::VectorXd theta = group_theta;
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
            if (between_sd[k] > 0.0) {
                double g = rng.gaussian();
                while (std::abs(g) > 3.0) g = rng.gaussian();  // truncate at 3 SD
                theta[k] += between_sd[k] * g;
            }
        }
        DcmParams params = unpack_params(spec, theta);
        try {
            noiseless.push_back(integrate(spec, params, inputs));
        } catch (const DivergedModelError& e) {
            throw Error("generate_cohort: sampled parameters for subject " +
                        std::to_string(i) + " produce diverging dynamics (" + e.what() +
                        "); reduce the group mean or between-subject SD");
        }
        truth.subject_params.push_back(std::move(params));
    }

    std::vector<DatasetBundle> bundles;
    bundles.reserve(dataset_noise_sd.size());
    for (std::size_t d = 0; d < dataset_noise_sd.size(); ++d) {
        DatasetBundle bundle;
        bundle.label = dataset_labels[d];
        bundle.spec = spec;
        bundle.inputs = inputs;
        for (int i = 0; i < n_subjects; ++i) {
            Eigen::MatrixXd y = noiseless[static_cast<std::size_t>(i)];
            const double sd = dataset_noise_sd[d];
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i),
                                static_cast<std::uint64_t>(d), 2));
            for (int vol = 0; vol < spec.n_volumes; ++vol) {
                for (int r = 0; r < spec.n_regions; ++r) {
                    y(vol, r) += sd * rng.gaussian();
                }
            }
            bundle.series.push_back(std::move(y));
        }
        bundles.push_back(std::move(bundle));
    }
    return {std::move(bundles), std::move(truth)};
}

Scenario default_scenario() {
    Scenario sc;
    DcmSpec& spec = sc.spec;
    spec.n_regions = 3;
    spec.n_inputs = 2;
    spec.tr = 2.8;
    spec.n_volumes = 160;
    spec.region_names = {"r1", "r2", "r3"};
    spec.input_names = {"stim", "cond"};
    spec.a_mask = BoolMatrix::Constant(3, 3, true);
    BoolMatrix diag_only = BoolMatrix::Constant(3, 3, false);
    for (int i = 0; i < 3; ++i) diag_only(i, i) = true;
    spec.b_masks = {diag_only, diag_only};
    spec.c_mask = BoolMatrix::Constant(3, 2, false);
    spec.c_mask(0, 0) = true;  // stimulation drives region 1

    // 8 s stimulus blocks every 16 s; the condition marks alternate blocks.
    const double duration = spec.tr * spec.n_volumes;  // 448 s
    std::vector<InputBlock> blocks;
    int block_index = 0;
    for (double onset = 0.0; onset + 8.0 <= duration; onset += 16.0, ++block_index) {
        blocks.push_back({0, onset, 8.0});
        if (block_index % 2 == 1) blocks.push_back({1, onset, 8.0});
    }
    sc.inputs = build_inputs(blocks, 0.1, duration, spec.n_inputs);

    DcmParams p = zero_params(spec);
    p.a(1, 0) = 0.25;
    p.a(2, 1) = 0.20;
    p.a(0, 1) = 0.05;
    p.a(1, 2) = 0.05;
    p.b[0].diagonal() << 0.40, 0.30, 0.0;
    p.b[1].diagonal() << 0.35, 0.0, 0.12;
    p.c(0, 0) = 0.9;
    sc.group_mean = p;

    const auto slots = param_layout(spec);
    sc.between_sd.resize(static_cast<Eigen::Index>(slots.size()));
    for (std::size_t k = 0; k < slots.size(); ++k) {
        double sd = 0.0;
        switch (slots[k].kind) {
            case ParamKind::AOff: sd = 0.05; break;
            case ParamKind::ASelf: sd = 0.05; break;
            case ParamKind::BDiag:
            case ParamKind::BOff: sd = 0.15; break;
            case ParamKind::C: sd = 0.10; break;
            case ParamKind::Transit:
            case ParamKind::Decay:
            case ParamKind::Epsilon: sd = 0.03; break;
        }
        sc.between_sd[static_cast<Eigen::Index>(k)] = sd;
    }
    return sc;
}

}  // namespace bdc
