#include "bdc/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "bdc/compare.hpp"
#include "bdc/io.hpp"
#include "bdc/svg.hpp"
#include "bdc/synth.hpp"
#include "bdc/version.hpp"

namespace fs = std::filesystem;

namespace bdc::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> jobs;
};

/// The effective configuration: file contents with flag overrides applied
/// (flags win). Its hash stamps every output.
json effective_config(const CommonArgs& args) {
    json cfg = json::object();
    if (!args.config_path.empty()) cfg = read_json_file(args.config_path);
    if (args.seed) cfg["seed"] = *args.seed;
    if (args.out_dir) cfg["out_dir"] = *args.out_dir;
    if (args.jobs) cfg["jobs"] = *args.jobs;
    return cfg;
}

json meta_block(const json& cfg) {
    return json{{"tool_version", kVersion},
                {"config_hash", config_hash(cfg)},
                {"master_seed", cfg.value("seed", std::uint64_t{0})}};
}

fs::path out_dir_of(const json& cfg) {
    return fs::path(cfg.value("out_dir", std::string("out")));
}

std::string subject_file(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "subject_%03d.csv", index);
    return buf;
}

std::string posterior_file(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "subject_%03d.json", index);
    return buf;
}

/// Scenario pieces for `simulate`: defaults from the built-in desk-scale
/// cohort, any of which the config may override.
struct ScenarioConfig {
    DcmSpec spec;
    InputSchedule inputs;
    DcmParams group_mean;
    Eigen::VectorXd between_sd;
    int n_subjects = 10;
    std::vector<double> noise_sd{0.25, 0.5, 1.0};
    std::vector<std::string> labels;
};

ScenarioConfig load_scenario(const json& cfg) {
    Scenario def = default_scenario();
    ScenarioConfig sc;
    const json s = cfg.value("scenario", json::object());
    if (s.contains("spec")) {
        sc.spec = spec_from_json(read_json_file(s.at("spec").get<std::string>()));
    } else {
        sc.spec = def.spec;
    }
    if (s.contains("inputs")) {
        sc.inputs = inputs_from_json(read_json_file(s.at("inputs").get<std::string>()));
    } else if (s.contains("spec")) {
        throw Error("scenario: a custom spec needs a matching inputs file");
    } else {
        sc.inputs = def.inputs;
    }
    if (s.contains("group_mean")) {
        sc.group_mean = params_from_json(sc.spec, read_json_file(s.at("group_mean").get<std::string>()));
    } else if (s.contains("spec")) {
        sc.group_mean = zero_params(sc.spec);
    } else {
        sc.group_mean = def.group_mean;
    }
    const auto layout_size = static_cast<Eigen::Index>(param_layout(sc.spec).size());
    if (s.contains("between_sd")) {
        const auto v = s.at("between_sd").get<std::vector<double>>();
        sc.between_sd = Eigen::Map<const Eigen::VectorXd>(v.data(),
                                                          static_cast<Eigen::Index>(v.size()));
    } else if (s.contains("spec")) {
        sc.between_sd = Eigen::VectorXd::Constant(layout_size, 0.1);
    } else {
        sc.between_sd = def.between_sd;
    }
    sc.n_subjects = s.value("n_subjects", 10);
    if (s.contains("noise_sd")) sc.noise_sd = s.at("noise_sd").get<std::vector<double>>();
    if (s.contains("dataset_labels")) {
        sc.labels = s.at("dataset_labels").get<std::vector<std::string>>();
    }
    return sc;
}

PriorSpec load_priors(const json& cfg, const DcmSpec& spec) {
    PriorSpec priors = default_priors(spec);
    const json p = cfg.value("priors", json::object());
    if (p.contains("theta")) priors.theta_prior = gaussian_from_json(p.at("theta"));
    if (p.contains("lambda")) priors.lambda_prior = gaussian_from_json(p.at("lambda"));
    if (p.contains("variances")) {
        const json& v = p.at("variances");
        const auto slots = param_layout(spec);
        for (std::size_t k = 0; k < slots.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            switch (slots[k].kind) {
                case ParamKind::AOff:
                    if (v.contains("a_off")) priors.theta_prior.covariance(i, i) = v.at("a_off").get<double>();
                    break;
                case ParamKind::ASelf:
                    if (v.contains("a_self")) priors.theta_prior.covariance(i, i) = v.at("a_self").get<double>();
                    break;
                case ParamKind::BDiag:
                case ParamKind::BOff:
                    if (v.contains("b")) priors.theta_prior.covariance(i, i) = v.at("b").get<double>();
                    break;
                case ParamKind::C:
                    if (v.contains("c")) priors.theta_prior.covariance(i, i) = v.at("c").get<double>();
                    break;
                case ParamKind::Transit:
                case ParamKind::Decay:
                case ParamKind::Epsilon:
                    if (v.contains("haemo")) priors.theta_prior.covariance(i, i) = v.at("haemo").get<double>();
                    break;
            }
        }
    }
    if (p.contains("lambda_mean")) {
        priors.lambda_prior.mean.setConstant(p.at("lambda_mean").get<double>());
    }
    if (p.contains("lambda_var")) {
        const double lv = p.at("lambda_var").get<double>();
        priors.lambda_prior.covariance =
            Eigen::VectorXd::Constant(spec.n_regions, lv).asDiagonal();
    }
    return priors;
}

PipelineConfig load_pipeline_config(const json& cfg, const DcmSpec& spec) {
    PipelineConfig pc;
    pc.priors = load_priors(cfg, spec);
    const json vl = cfg.value("vl", json::object());
    pc.vl.max_iterations = vl.value("max_iterations", pc.vl.max_iterations);
    pc.vl.f_tolerance = vl.value("f_tolerance", pc.vl.f_tolerance);
    pc.vl.jacobian_step = vl.value("jacobian_step", pc.vl.jacobian_step);
    const json peb = cfg.value("peb", json::object());
    pc.gamma_prior_mean = peb.value("gamma_prior_mean", pc.gamma_prior_mean);
    pc.gamma_prior_var = peb.value("gamma_prior_var", pc.gamma_prior_var);
    pc.q0_scale = peb.value("q0_scale", pc.q0_scale);
    pc.peb_max_iterations = peb.value("max_iterations", pc.peb_max_iterations);
    pc.peb_f_tolerance = peb.value("f_tolerance", pc.peb_f_tolerance);
    const json pl = cfg.value("pipeline", json::object());
    pc.model_space_threshold = pl.value("model_space_threshold", pc.model_space_threshold);
    pc.model_space_cap = pl.value("model_space_cap", pc.model_space_cap);
    const std::string subset = pl.value("subset", std::string("b"));
    if (subset == "b") {
        pc.subset = ParamSubset::BMatrix;
    } else if (subset == "a") {
        pc.subset = ParamSubset::AMatrix;
    } else if (subset == "c") {
        pc.subset = ParamSubset::CMatrix;
    } else if (subset == "haemo") {
        pc.subset = ParamSubset::Haemo;
    } else if (subset == "custom") {
        pc.subset = ParamSubset::Custom;
        pc.custom_subset = pl.value("custom_subset", std::vector<std::string>{});
    } else {
        throw Error("pipeline.subset must be one of: b, a, c, haemo, custom");
    }
    pc.jobs = cfg.value("jobs", 0);
    pc.master_seed = cfg.value("seed", std::uint64_t{0});
    pc.config_hash = config_hash(cfg);
    return pc;
}

/// Dataset locations for fit/compare. Defaults to the tree simulate writes
/// under out_dir: spec.json, inputs.json, data/<label>/subject_NNN.csv.
struct DataLayout {
    fs::path spec_path;
    fs::path inputs_path;
    std::vector<std::pair<std::string, fs::path>> datasets;  // label, directory
};

DataLayout load_data_layout(const json& cfg) {
    DataLayout dl;
    const fs::path base = out_dir_of(cfg);
    if (cfg.contains("data")) {
        const json& d = cfg.at("data");
        dl.spec_path = d.at("spec").get<std::string>();
        dl.inputs_path = d.at("inputs").get<std::string>();
        for (const auto& ds : d.at("datasets")) {
            dl.datasets.emplace_back(ds.at("label").get<std::string>(),
                                     fs::path(ds.at("dir").get<std::string>()));
        }
    } else {
        dl.spec_path = base / "spec.json";
        dl.inputs_path = base / "inputs.json";
        const fs::path data_dir = base / "data";
        if (fs::is_directory(data_dir)) {
            std::vector<std::string> labels;
            for (const auto& entry : fs::directory_iterator(data_dir)) {
                if (entry.is_directory()) labels.push_back(entry.path().filename().string());
            }
            std::sort(labels.begin(), labels.end());
            for (const auto& label : labels) dl.datasets.emplace_back(label, data_dir / label);
        }
    }
    if (dl.datasets.empty()) {
        throw Error("no datasets configured: add a data section or run simulate first");
    }
    return dl;
}

std::vector<DatasetBundle> load_bundles(const DataLayout& dl) {
    const DcmSpec spec = spec_from_json(read_json_file(dl.spec_path));
    const InputSchedule inputs = inputs_from_json(read_json_file(dl.inputs_path));
    std::vector<DatasetBundle> bundles;
    for (const auto& [label, dir] : dl.datasets) {
        DatasetBundle b;
        b.label = label;
        b.spec = spec;
        b.inputs = inputs;
        for (int i = 0;; ++i) {
            const fs::path f = dir / subject_file(i);
            if (!fs::exists(f)) break;
            auto [series, names] = read_timeseries_csv(f);
            if (names != spec.region_names) {
                throw Error("dataset " + label + ": region names in " + f.string() +
                            " do not match the spec");
            }
            b.series.push_back(std::move(series));
        }
        if (b.series.empty()) {
            throw Error("dataset " + label + ": no subject_NNN.csv files in " + dir.string());
        }
        bundles.push_back(std::move(b));
    }
    return bundles;
}

int cmd_simulate(const CommonArgs& args) {
    const json cfg = effective_config(args);
    const json meta = meta_block(cfg);
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    ScenarioConfig sc = load_scenario(cfg);

    auto [bundles, truth] =
        generate_cohort(sc.spec, sc.inputs, sc.group_mean, sc.between_sd, sc.n_subjects,
                        sc.noise_sd, seed, sc.labels);

    const fs::path base = out_dir_of(cfg);
    fs::create_directories(base);
    json spec_json = to_json(sc.spec);
    spec_json["meta"] = meta;
    write_json_file(base / "spec.json", spec_json);
    json inputs_json = to_json(sc.inputs);
    inputs_json["meta"] = meta;
    write_json_file(base / "inputs.json", inputs_json);
    json truth_json = to_json(truth, sc.spec);
    truth_json["meta"] = meta;
    write_json_file(base / "ground_truth.json", truth_json);

    for (const DatasetBundle& b : bundles) {
        const fs::path dir = base / "data" / b.label;
        fs::create_directories(dir);
        json manifest{{"meta", meta}, {"label", b.label}, {"files", json::array()}};
        for (std::size_t i = 0; i < b.series.size(); ++i) {
            const std::string name = subject_file(static_cast<int>(i));
            write_timeseries_csv(dir / name, b.series[i], sc.spec.region_names);
            manifest["files"].push_back(name);
        }
        write_json_file(dir / "manifest.json", manifest);
    }
    std::cout << "wrote " << bundles.size() << " datasets x " << sc.n_subjects
              << " subjects to " << base.string() << "\n";
    return kExitOk;
}

int cmd_fit(const CommonArgs& args) {
    const json cfg = effective_config(args);
    const json meta = meta_block(cfg);
    const DataLayout dl = load_data_layout(cfg);
    const std::vector<DatasetBundle> bundles = load_bundles(dl);
    const PipelineConfig pc = load_pipeline_config(cfg, bundles.front().spec);
    const PriorSpec& priors = pc.priors;

    const auto outcomes = fit_all_subjects(bundles, pc);

    const fs::path base = out_dir_of(cfg);
    bool any_failed = false;
    char line[256];
    std::snprintf(line, sizeof line, "%-12s %-8s %14s %6s %10s", "dataset", "subject", "F",
                  "iters", "converged");
    std::cout << line << "\n";
    for (std::size_t d = 0; d < bundles.size(); ++d) {
        const fs::path dir = base / "posteriors" / bundles[d].label;
        fs::create_directories(dir);
        for (std::size_t i = 0; i < outcomes[d].size(); ++i) {
            const SubjectFitOutcome& oc = outcomes[d][i];
            if (!oc.ok) {
                any_failed = true;
                std::snprintf(line, sizeof line, "%-12s %-8zu %14s %6s %10s  (%s)",
                              bundles[d].label.c_str(), i, "-", "-", "failed",
                              oc.error.c_str());
                std::cout << line << "\n";
                continue;
            }
            std::snprintf(line, sizeof line, "%-12s %-8zu %14.4f %6d %10s",
                          bundles[d].label.c_str(), i, oc.posterior.free_energy,
                          oc.posterior.n_iterations, oc.posterior.converged ? "yes" : "no");
            std::cout << line << "\n";
            json j{{"meta", meta},
                   {"dataset", bundles[d].label},
                   {"subject", static_cast<int>(i)},
                   {"priors", to_json(priors)},
                   {"posterior", to_json(oc.posterior)}};
            write_json_file(dir / posterior_file(static_cast<int>(i)), j);
        }
    }
    return any_failed ? kExitPartial : kExitOk;
}

int cmd_compare(const CommonArgs& args, const std::string& svg_override) {
    const json cfg = effective_config(args);
    const json meta = meta_block(cfg);
    const DataLayout dl = load_data_layout(cfg);
    if (dl.datasets.size() < 2) {
        throw Error("compare needs at least two datasets");
    }
    const std::vector<DatasetBundle> bundles = load_bundles(dl);
    PipelineConfig pc = load_pipeline_config(cfg, bundles.front().spec);

    // Reuse fitted posteriors when a complete set is on disk.
    const fs::path base = out_dir_of(cfg);
    std::vector<std::vector<SubjectPosterior>> loaded(bundles.size());
    bool have_all = true;
    for (std::size_t d = 0; d < bundles.size() && have_all; ++d) {
        for (std::size_t i = 0; i < bundles[d].series.size(); ++i) {
            const fs::path f =
                base / "posteriors" / bundles[d].label / posterior_file(static_cast<int>(i));
            if (!fs::exists(f)) {
                have_all = false;
                break;
            }
            const json j = read_json_file(f);
            loaded[d].push_back(subject_from_json(j.at("posterior")));
            if (d == 0 && i == 0) pc.priors = priors_from_json(j.at("priors"));
        }
    }

    const ComparisonReport report =
        run_pipeline(bundles, pc, have_all ? &loaded : nullptr);

    fs::create_directories(base);
    json rj = to_json(report);
    rj["meta"] = meta;
    write_json_file(base / "report.json", rj);
    const fs::path svg_path = svg_override.empty() ? base / "report.svg" : fs::path(svg_override);
    write_report_svg(report, svg_path);

    char line[256];
    std::snprintf(line, sizeof line, "%-12s %12s %12s %12s %12s", "dataset", "s_theta",
                  "s_epsilon", "d_params", "d_models");
    std::cout << line << "\n";
    for (std::size_t d = 0; d < report.datasets.size(); ++d) {
        const DatasetScores& sc = report.datasets[d];
        if (!sc.ok) {
            std::cout << sc.label << " excluded: " << sc.failure << "\n";
            continue;
        }
        std::snprintf(line, sizeof line, "%-12s %12.4f %12.4f %12.4f %12.4f", sc.label.c_str(),
                      report.relative.at("s_theta")[d], report.relative.at("s_epsilon")[d],
                      report.relative.at("d_params")[d], report.relative.at("d_models")[d]);
        std::cout << line << "\n";
    }
    std::cout << "(relative nats per measure; worst dataset = 0)\n";
    std::cout << "verdict: " << report.verdict << "\n";

    for (const DatasetScores& sc : report.datasets) {
        if (!sc.ok) return kExitPartial;
    }
    return kExitOk;
}

int cmd_report(const CommonArgs& args, std::string report_path, std::string svg_path) {
    const json cfg = effective_config(args);
    const fs::path base = out_dir_of(cfg);
    if (report_path.empty()) report_path = (base / "report.json").string();
    if (svg_path.empty()) svg_path = (base / "report.svg").string();
    const ComparisonReport report = report_from_json(read_json_file(report_path));
    write_report_svg(report, svg_path);
    std::cout << "wrote " << svg_path << "\n";
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Bayesian data comparison for dynamic causal models"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonArgs args;
    std::string svg_flag;
    std::string report_flag;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", args.config_path, "configuration JSON file");
        sub->add_option_function<std::string>(
            "--seed", [&](const std::string& v) { args.seed = std::stoull(v); },
            "master seed (overrides the config)");
        sub->add_option_function<std::string>(
            "--out", [&](const std::string& v) { args.out_dir = v; },
            "output directory (overrides the config)");
        sub->add_option_function<std::string>(
            "--jobs", [&](const std::string& v) { args.jobs = std::stoi(v); },
            "parallel subject fits (overrides the config)");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic cohort");
    add_common(simulate);
    CLI::App* fit_cmd = app.add_subcommand("fit", "fit each subject's model");
    add_common(fit_cmd);
    CLI::App* compare = app.add_subcommand("compare", "run the comparison pipeline");
    add_common(compare);
    compare->add_option("--svg", svg_flag, "also write the chart to this path");
    CLI::App* report_cmd =
        app.add_subcommand("report", "re-render the chart from an existing report");
    add_common(report_cmd);
    report_cmd->add_option("--report", report_flag, "report JSON (default: <out>/report.json)");
    report_cmd->add_option("--svg", svg_flag, "chart path (default: <out>/report.svg)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (simulate->parsed()) return cmd_simulate(args);
        if (fit_cmd->parsed()) return cmd_fit(args);
        if (compare->parsed()) return cmd_compare(args, svg_flag);
        if (report_cmd->parsed()) return cmd_report(args, report_flag, svg_flag);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace bdc::cli
