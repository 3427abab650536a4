#include "bdc/compare.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "bdc/version.hpp"

namespace bdc {

std::vector<Eigen::Index> subset_indices(const DcmSpec& spec, ParamSubset subset,
                                         const std::vector<std::string>& custom) {
    const auto slots = param_layout(spec);
    std::vector<Eigen::Index> idx;
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const ParamKind kind = slots[k].kind;
        bool in = false;
        switch (subset) {
            case ParamSubset::BMatrix:
                in = kind == ParamKind::BDiag || kind == ParamKind::BOff;
                break;
            case ParamSubset::AMatrix:
                in = kind == ParamKind::AOff || kind == ParamKind::ASelf;
                break;
            case ParamSubset::CMatrix: in = kind == ParamKind::C; break;
            case ParamSubset::Haemo:
                in = kind == ParamKind::Transit || kind == ParamKind::Decay ||
                     kind == ParamKind::Epsilon;
                break;
            case ParamSubset::Custom:
                in = std::find(custom.begin(), custom.end(), slots[k].label) != custom.end();
                break;
        }
        if (in) idx.push_back(static_cast<Eigen::Index>(k));
    }
    if (idx.empty()) throw Error("subset_indices: the requested parameter subset is empty");
    return idx;
}

double measure_parameter_certainty(const PebModel& peb) {
    const auto free_idx = nonzero_variance_indices(peb.beta_prior);
    if (free_idx.empty()) {
        throw DegenerateDensityError("measure_parameter_certainty: no free group effects");
    }
    return neg_entropy(marginal(peb.beta_post, free_idx));
}

double measure_rfx_certainty(const PebModel& peb) {
    return neg_entropy(peb.gamma_post);
}

double info_gain_params(const PebModel& peb) {
    const auto free_idx = nonzero_variance_indices(peb.beta_prior);
    if (free_idx.empty()) {
        throw DegenerateDensityError("info_gain_params: no free group effects");
    }
    return kl_gaussian(marginal(peb.beta_post, free_idx),
                       marginal(peb.beta_prior, free_idx));
}

double info_gain_models(const PebModel&, const std::vector<ReducedModel>& space) {
    if (space.empty()) throw DimensionError("info_gain_models: empty model space");
    Eigen::VectorXd f(static_cast<Eigen::Index>(space.size()));
    for (std::size_t i = 0; i < space.size(); ++i) {
        f[static_cast<Eigen::Index>(i)] = space[i].delta_f;
    }
    return kl_categorical(posterior_over_models(f));
}

std::vector<double> relative_nats(const std::vector<double>& raw) {
    double lo = std::numeric_limits<double>::infinity();
    for (double v : raw) {
        if (std::isfinite(v)) lo = std::min(lo, v);
    }
    std::vector<double> out(raw.size(), std::numeric_limits<double>::quiet_NaN());
    if (!std::isfinite(lo)) return out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (std::isfinite(raw[i])) out[i] = raw[i] - lo;
    }
    return out;
}

std::vector<std::vector<SubjectFitOutcome>> fit_all_subjects(
    const std::vector<DatasetBundle>& bundles, const PipelineConfig& config) {
    struct Task {
        std::size_t dataset;
        std::size_t subject;
    };
    std::vector<Task> tasks;
    std::vector<std::vector<SubjectFitOutcome>> results(bundles.size());
    for (std::size_t d = 0; d < bundles.size(); ++d) {
        results[d].resize(bundles[d].series.size());
        for (std::size_t i = 0; i < bundles[d].series.size(); ++i) tasks.push_back({d, i});
    }

    const PriorSpec base_priors = config.priors.theta_prior.dim() > 0
                                      ? config.priors
                                      : default_priors(bundles.front().spec);

    unsigned jobs = config.jobs > 0 ? static_cast<unsigned>(config.jobs)
                                    : std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min<unsigned>(jobs, static_cast<unsigned>(tasks.size()));

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t t = next.fetch_add(1);
            if (t >= tasks.size()) break;
            const Task task = tasks[t];
            const DatasetBundle& bundle = bundles[task.dataset];
            SubjectFitOutcome& slot = results[task.dataset][task.subject];
            try {
                slot.posterior = fit(bundle.spec, bundle.inputs, bundle.series[task.subject],
                                     base_priors, config.vl);
                slot.ok = true;
            } catch (const std::exception& e) {
                slot.ok = false;
                slot.error = e.what();
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return results;
}

namespace {

void check_bundles(const std::vector<DatasetBundle>& bundles) {
    if (bundles.size() < 2) throw Error("run_pipeline: need at least two datasets");
    const std::size_t n_subjects = bundles.front().series.size();
    const auto labels0 = param_layout(bundles.front().spec);
    for (const DatasetBundle& b : bundles) {
        validate(b.spec);
        if (b.series.size() != n_subjects) {
            throw Error("run_pipeline: datasets must share the subject count");
        }
        if (b.spec.n_regions != bundles.front().spec.n_regions) {
            throw Error("run_pipeline: datasets must share the region count");
        }
        const auto labels = param_layout(b.spec);
        if (labels.size() != labels0.size()) {
            throw Error("run_pipeline: datasets must share the parameter layout");
        }
        for (std::size_t k = 0; k < labels.size(); ++k) {
            if (labels[k].label != labels0[k].label) {
                throw Error("run_pipeline: datasets must share the parameter layout");
            }
        }
        for (const Eigen::MatrixXd& y : b.series) {
            if (y.rows() != b.spec.n_volumes || y.cols() != b.spec.n_regions) {
                throw Error("run_pipeline: series shape does not match the dataset spec");
            }
        }
    }
}

}  // namespace

ComparisonReport run_pipeline(const std::vector<DatasetBundle>& bundles,
                              const PipelineConfig& config,
                              const std::vector<std::vector<SubjectPosterior>>* precomputed) {
    check_bundles(bundles);
    const std::size_t n_datasets = bundles.size();
    const std::size_t n_subjects = bundles.front().series.size();

    const PriorSpec priors = config.priors.theta_prior.dim() > 0
                                 ? config.priors
                                 : default_priors(bundles.front().spec);

    ComparisonReport report;
    report.master_seed = config.master_seed;
    report.config_hash = config.config_hash;
    report.tool_version = kVersion;
    report.datasets.resize(n_datasets);
    report.model_spaces.resize(n_datasets);
    for (std::size_t d = 0; d < n_datasets; ++d) {
        report.datasets[d].label = bundles[d].label;
    }

    // Step 1: subject-level fits.
    std::vector<std::vector<SubjectPosterior>> posteriors(n_datasets);
    std::vector<bool> dataset_ok(n_datasets, true);
    if (precomputed) {
        if (precomputed->size() != n_datasets) {
            throw Error("run_pipeline: precomputed posteriors do not match the bundles");
        }
        posteriors = *precomputed;
        for (std::size_t d = 0; d < n_datasets; ++d) {
            if (posteriors[d].size() != n_subjects) {
                throw Error("run_pipeline: precomputed posteriors do not match the bundles");
            }
        }
    } else {
        const auto outcomes = fit_all_subjects(bundles, config);
        for (std::size_t d = 0; d < n_datasets; ++d) {
            posteriors[d].resize(n_subjects);
            for (std::size_t i = 0; i < n_subjects; ++i) {
                if (!outcomes[d][i].ok) {
                    dataset_ok[d] = false;
                    report.datasets[d].failure = "subject " + std::to_string(i) +
                                                 " fit failed: " + outcomes[d][i].error;
                    break;
                }
                posteriors[d][i] = outcomes[d][i].posterior;
            }
        }
    }

    std::vector<std::size_t> ok_sets;
    for (std::size_t d = 0; d < n_datasets; ++d) {
        if (dataset_ok[d]) ok_sets.push_back(d);
    }

    const auto all_slots = param_layout(bundles.front().spec);
    std::vector<Eigen::Index> subset =
        subset_indices(bundles.front().spec, config.subset, config.custom_subset);
    {
        // Only compare parameters the priors actually leave free.
        std::vector<Eigen::Index> filtered;
        for (Eigen::Index i : subset) {
            if (priors.theta_prior.covariance(i, i) > 0.0) filtered.push_back(i);
        }
        subset = std::move(filtered);
        if (subset.empty()) throw Error("run_pipeline: parameter subset is fully pinned");
    }
    std::vector<std::string> subset_labels;
    for (Eigen::Index i : subset) subset_labels.push_back(all_slots[static_cast<std::size_t>(i)].label);

    if (ok_sets.size() < 2) {
        report.verdict = "insufficient data";
        report.subset_labels = subset_labels;
        return report;
    }

    const GaussianDensity subset_prior = marginal(priors.theta_prior, subset);
    Eigen::VectorXd subset_prior_precision =
        subset_prior.covariance.diagonal().cwiseInverse();

    PebConfig peb_cfg;
    peb_cfg.gamma_prior_mean = config.gamma_prior_mean;
    peb_cfg.gamma_prior_var = config.gamma_prior_var;
    peb_cfg.q0_scale = config.q0_scale;
    peb_cfg.max_iterations = config.peb_max_iterations;
    peb_cfg.f_tolerance = config.peb_f_tolerance;

    // Step 2: one pooled group model over every subject of every usable
    // dataset, blind to the dataset labels; prune redundant effects.
    std::vector<GaussianDensity> pooled;
    for (std::size_t d : ok_sets) {
        for (const SubjectPosterior& sp : posteriors[d]) {
            pooled.push_back(marginal(sp.theta_post, subset));
        }
    }
    const PebModel pooled_peb = fit_peb(pooled, subset_prior, subset_labels, peb_cfg);
    const PebModel pruned = prune_greedy(pooled_peb);
    for (Eigen::Index j = 0; j < pruned.beta_prior.dim(); ++j) {
        if (pruned.beta_prior.covariance(j, j) == 0.0) {
            report.pruned_labels.push_back(subset_labels[static_cast<std::size_t>(j)]);
        }
    }

    // Step 3: analytic re-estimation of each subject under the pruned,
    // group-informed priors.
    std::vector<Eigen::Index> kept;       // positions within `subset`
    std::vector<Eigen::Index> kept_idx;   // positions within the full layout
    for (Eigen::Index j = 0; j < pruned.beta_prior.dim(); ++j) {
        if (pruned.beta_prior.covariance(j, j) > 0.0) {
            kept.push_back(j);
            kept_idx.push_back(subset[static_cast<std::size_t>(j)]);
        }
    }
    if (kept.empty()) {
        report.verdict = "insufficient data";
        report.subset_labels = subset_labels;
        for (std::size_t d : ok_sets) {
            report.datasets[d].failure = "every compared parameter was pruned";
        }
        return report;
    }
    std::vector<std::string> kept_labels;
    for (Eigen::Index j : kept) kept_labels.push_back(subset_labels[static_cast<std::size_t>(j)]);

    std::vector<std::vector<SubjectPosterior>> updated(n_datasets);
    PriorSpec empirical_priors;
    bool have_empirical = false;
    for (std::size_t d : ok_sets) {
        updated[d].reserve(n_subjects);
        for (const SubjectPosterior& sp : posteriors[d]) {
            EmpiricalBayesResult eb = empirical_bayes_update(sp, priors, subset, pruned);
            if (!have_empirical) {
                empirical_priors = eb.priors;
                have_empirical = true;
            }
            updated[d].push_back(std::move(eb.subject));
        }
    }

    // Step 4 & 5: one group model per dataset, then the four measures and the
    // per-dataset model space.
    const GaussianDensity kept_first_level = marginal(empirical_priors.theta_prior, kept_idx);
    PebConfig per_dataset_cfg = peb_cfg;
    per_dataset_cfg.beta_prior = marginal(subset_prior, kept);
    Eigen::VectorXd q1(kept.size());
    for (std::size_t j = 0; j < kept.size(); ++j) {
        q1[static_cast<Eigen::Index>(j)] = subset_prior_precision[kept[j]];
    }
    per_dataset_cfg.q1_diag = q1;

    std::vector<double> raw_s_theta(n_datasets, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> raw_s_eps = raw_s_theta;
    std::vector<double> raw_d_params = raw_s_theta;
    std::vector<double> raw_d_models = raw_s_theta;

    for (std::size_t d : ok_sets) {
        std::vector<GaussianDensity> subjects_d;
        subjects_d.reserve(n_subjects);
        for (const SubjectPosterior& sp : updated[d]) {
            subjects_d.push_back(marginal(sp.theta_post, kept_idx));
        }
        try {
            const PebModel peb_d =
                fit_peb(subjects_d, kept_first_level, kept_labels, per_dataset_cfg);
            const auto space = build_model_space(peb_d, config.model_space_threshold,
                                                 config.model_space_cap);
            DatasetScores& sc = report.datasets[d];
            sc.ok = true;
            sc.s_theta = measure_parameter_certainty(peb_d);
            sc.s_epsilon = measure_rfx_certainty(peb_d);
            sc.d_params = info_gain_params(peb_d);
            sc.d_models = info_gain_models(peb_d, space);
            sc.n_models = static_cast<int>(space.size());
            raw_s_theta[d] = sc.s_theta;
            raw_s_eps[d] = sc.s_epsilon;
            raw_d_params[d] = sc.d_params;
            raw_d_models[d] = sc.d_models;
            for (const ReducedModel& m : space) {
                report.model_spaces[d].push_back({m.switched_off, m.delta_f});
            }
        } catch (const std::exception& e) {
            report.datasets[d].ok = false;
            report.datasets[d].failure = std::string("group-level fit failed: ") + e.what();
        }
    }

    const std::map<std::string, std::vector<double>> raw{{"s_theta", raw_s_theta},
                                                         {"s_epsilon", raw_s_eps},
                                                         {"d_params", raw_d_params},
                                                         {"d_models", raw_d_models}};
    for (const auto& [name, values] : raw) {
        report.relative[name] = relative_nats(values);
        Eigen::MatrixXd table(n_datasets, n_datasets);
        table.setConstant(std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < n_datasets; ++i) {
            for (std::size_t j = 0; j < n_datasets; ++j) {
                if (std::isfinite(values[i]) && std::isfinite(values[j])) {
                    table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        prob_from_nats(values[i] - values[j]);
                }
            }
        }
        report.pairwise[name] = table;
    }

    // Verdict: total relative nats across the four measures.
    double spread = 0.0;
    for (const auto& [name, rel] : report.relative) {
        for (double v : rel) {
            if (std::isfinite(v)) spread = std::max(spread, v);
        }
    }
    std::size_t n_scored = 0;
    for (std::size_t d = 0; d < n_datasets; ++d) {
        if (report.datasets[d].ok) ++n_scored;
    }
    if (n_scored < 2) {
        report.verdict = "insufficient data";
    } else if (spread < 1e-6) {
        report.verdict = "indistinguishable";
    } else {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_d = 0;
        for (std::size_t d = 0; d < n_datasets; ++d) {
            if (!report.datasets[d].ok) continue;
            double total = 0.0;
            for (const auto& [name, rel] : report.relative) total += rel[d];
            if (total > best) {
                best = total;
                best_d = d;
            }
        }
        report.verdict = report.datasets[best_d].label;
    }
    report.subset_labels = subset_labels;
    return report;
}

}  // namespace bdc
