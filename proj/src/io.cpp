#include "bdc/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace bdc {

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    Eigen::Index i = 0;
    for (const auto& x : j) v[i++] = x.get<double>();
    return v;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto nr = static_cast<Eigen::Index>(j.size());
    if (nr == 0) return Eigen::MatrixXd(0, 0);
    const auto nc = static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd m(nr, nc);
    for (Eigen::Index r = 0; r < nr; ++r) {
        const json& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != nc) {
            throw Error("json: ragged matrix rows");
        }
        for (Eigen::Index c = 0; c < nc; ++c) {
            m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    return m;
}

json bool_matrix_to_json(const BoolMatrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c) ? 1 : 0);
        rows.push_back(std::move(row));
    }
    return rows;
}

BoolMatrix bool_matrix_from_json(const json& j) {
    const auto nr = static_cast<Eigen::Index>(j.size());
    const auto nc = nr > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    BoolMatrix m(nr, nc);
    for (Eigen::Index r = 0; r < nr; ++r) {
        const json& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != nc) throw Error("json: ragged mask rows");
        for (Eigen::Index c = 0; c < nc; ++c) {
            m(r, c) = row.at(static_cast<std::size_t>(c)).get<int>() != 0;
        }
    }
    return m;
}

json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

double double_or_nan(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.get<double>();
}

}  // namespace

json to_json(const GaussianDensity& g) {
    return json{{"mean", vector_to_json(g.mean)}, {"covariance", matrix_to_json(g.covariance)}};
}

GaussianDensity gaussian_from_json(const json& j) {
    GaussianDensity g{vector_from_json(j.at("mean")), matrix_from_json(j.at("covariance"))};
    if (g.covariance.rows() != g.dim() || g.covariance.cols() != g.dim()) {
        throw Error("json: gaussian mean/covariance shapes disagree");
    }
    return g;
}

json to_json(const DcmSpec& spec) {
    json j{{"n_regions", spec.n_regions},
           {"n_inputs", spec.n_inputs},
           {"tr", spec.tr},
           {"n_volumes", spec.n_volumes},
           {"region_names", spec.region_names},
           {"input_names", spec.input_names},
           {"a_mask", bool_matrix_to_json(spec.a_mask)},
           {"c_mask", bool_matrix_to_json(spec.c_mask)}};
    json bm = json::array();
    for (const auto& b : spec.b_masks) bm.push_back(bool_matrix_to_json(b));
    j["b_masks"] = std::move(bm);
    const BalloonConstants d;
    const BalloonConstants& b = spec.balloon;
    if (b.kappa0 != d.kappa0 || b.gamma != d.gamma || b.tau0 != d.tau0 || b.alpha != d.alpha ||
        b.e0 != d.e0 || b.v0 != d.v0 || b.te != d.te || b.nu0 != d.nu0 || b.r0 != d.r0) {
        j["balloon"] = json{{"kappa0", b.kappa0}, {"gamma", b.gamma}, {"tau0", b.tau0},
                            {"alpha", b.alpha},   {"e0", b.e0},       {"v0", b.v0},
                            {"te", b.te},         {"nu0", b.nu0},     {"r0", b.r0}};
    }
    return j;
}

DcmSpec spec_from_json(const json& j) {
    DcmSpec spec;
    spec.n_regions = j.at("n_regions").get<int>();
    spec.n_inputs = j.at("n_inputs").get<int>();
    spec.tr = j.at("tr").get<double>();
    spec.n_volumes = j.at("n_volumes").get<int>();
    spec.region_names = j.at("region_names").get<std::vector<std::string>>();
    spec.input_names = j.at("input_names").get<std::vector<std::string>>();
    spec.a_mask = bool_matrix_from_json(j.at("a_mask"));
    spec.c_mask = bool_matrix_from_json(j.at("c_mask"));
    for (const auto& b : j.at("b_masks")) spec.b_masks.push_back(bool_matrix_from_json(b));
    if (j.contains("balloon")) {
        const json& b = j.at("balloon");
        BalloonConstants& bc = spec.balloon;
        bc.kappa0 = b.value("kappa0", bc.kappa0);
        bc.gamma = b.value("gamma", bc.gamma);
        bc.tau0 = b.value("tau0", bc.tau0);
        bc.alpha = b.value("alpha", bc.alpha);
        bc.e0 = b.value("e0", bc.e0);
        bc.v0 = b.value("v0", bc.v0);
        bc.te = b.value("te", bc.te);
        bc.nu0 = b.value("nu0", bc.nu0);
        bc.r0 = b.value("r0", bc.r0);
    }
    validate(spec);
    return spec;
}

json to_json(const InputSchedule& sched) {
    return json{{"dt", sched.dt}, {"u", matrix_to_json(sched.u)}};
}

InputSchedule inputs_from_json(const json& j) {
    InputSchedule s;
    s.dt = j.at("dt").get<double>();
    s.u = matrix_from_json(j.at("u"));
    if (!(s.dt > 0.0)) throw Error("json: input schedule dt must be positive");
    return s;
}

json to_json(const DcmSpec& spec, const DcmParams& params) {
    validate(spec, params);
    json j{{"a", matrix_to_json(params.a)},
           {"a_self", vector_to_json(params.a_self)},
           {"c", matrix_to_json(params.c)},
           {"transit", vector_to_json(params.transit)},
           {"decay", vector_to_json(params.decay)},
           {"epsilon", vector_to_json(params.epsilon)},
           {"log_precision", vector_to_json(params.log_precision)}};
    json b = json::array();
    for (const auto& bm : params.b) b.push_back(matrix_to_json(bm));
    j["b"] = std::move(b);
    return j;
}

DcmParams params_from_json(const DcmSpec& spec, const json& j) {
    DcmParams p = zero_params(spec);
    p.a = matrix_from_json(j.at("a"));
    p.a_self = vector_from_json(j.at("a_self"));
    p.c = matrix_from_json(j.at("c"));
    p.transit = vector_from_json(j.at("transit"));
    p.decay = vector_from_json(j.at("decay"));
    p.epsilon = vector_from_json(j.at("epsilon"));
    if (j.contains("log_precision")) p.log_precision = vector_from_json(j.at("log_precision"));
    p.b.clear();
    for (const auto& bm : j.at("b")) p.b.push_back(matrix_from_json(bm));
    validate(spec, p);
    return p;
}

json to_json(const PriorSpec& priors) {
    return json{{"theta", to_json(priors.theta_prior)}, {"lambda", to_json(priors.lambda_prior)}};
}

PriorSpec priors_from_json(const json& j) {
    return PriorSpec{gaussian_from_json(j.at("theta")), gaussian_from_json(j.at("lambda"))};
}

json to_json(const SubjectPosterior& sp) {
    return json{{"param_labels", sp.param_labels},
                {"theta", to_json(sp.theta_post)},
                {"lambda", to_json(sp.lambda_post)},
                {"free_energy", sp.free_energy},
                {"accuracy", sp.accuracy},
                {"complexity", sp.complexity},
                {"n_iterations", sp.n_iterations},
                {"converged", sp.converged},
                {"data_offsets", vector_to_json(sp.data_offsets)},
                {"f_trace", sp.f_trace}};
}

SubjectPosterior subject_from_json(const json& j) {
    SubjectPosterior sp;
    sp.param_labels = j.at("param_labels").get<std::vector<std::string>>();
    sp.theta_post = gaussian_from_json(j.at("theta"));
    sp.lambda_post = gaussian_from_json(j.at("lambda"));
    sp.free_energy = j.at("free_energy").get<double>();
    sp.accuracy = j.at("accuracy").get<double>();
    sp.complexity = j.at("complexity").get<double>();
    sp.n_iterations = j.at("n_iterations").get<int>();
    sp.converged = j.at("converged").get<bool>();
    sp.data_offsets = vector_from_json(j.at("data_offsets"));
    sp.f_trace = j.value("f_trace", std::vector<double>{});
    return sp;
}

json to_json(const PebModel& peb) {
    return json{{"n_subjects", peb.n_subjects},
                {"param_labels", peb.param_labels},
                {"q0", matrix_to_json(peb.q0)},
                {"q1", matrix_to_json(peb.q1)},
                {"beta_prior", to_json(peb.beta_prior)},
                {"beta_post", to_json(peb.beta_post)},
                {"gamma_prior", to_json(peb.gamma_prior)},
                {"gamma_post", to_json(peb.gamma_post)},
                {"free_energy", peb.free_energy},
                {"accuracy", peb.accuracy},
                {"complexity", peb.complexity},
                {"n_iterations", peb.n_iterations},
                {"converged", peb.converged}};
}

json to_json(const GroundTruth& truth, const DcmSpec& spec) {
    json subjects = json::array();
    for (const auto& p : truth.subject_params) subjects.push_back(to_json(spec, p));
    return json{{"master_seed", truth.master_seed},
                {"dataset_labels", truth.dataset_labels},
                {"param_labels", truth.param_labels},
                {"noise_sd", truth.noise_sd},
                {"between_sd", vector_to_json(truth.between_sd)},
                {"group_mean", to_json(spec, truth.group_mean)},
                {"subject_params", std::move(subjects)}};
}

json to_json(const ComparisonReport& report) {
    json datasets = json::array();
    for (const auto& d : report.datasets) {
        datasets.push_back(json{{"label", d.label},
                                {"ok", d.ok},
                                {"failure", d.failure},
                                {"s_theta", finite_or_null(d.s_theta)},
                                {"s_epsilon", finite_or_null(d.s_epsilon)},
                                {"d_params", finite_or_null(d.d_params)},
                                {"d_models", finite_or_null(d.d_models)},
                                {"n_models", d.n_models}});
    }
    json relative = json::object();
    for (const auto& [name, values] : report.relative) {
        json a = json::array();
        for (double v : values) a.push_back(finite_or_null(v));
        relative[name] = std::move(a);
    }
    json pairwise = json::object();
    for (const auto& [name, table] : report.pairwise) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < table.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < table.cols(); ++c) {
                row.push_back(finite_or_null(table(r, c)));
            }
            rows.push_back(std::move(row));
        }
        pairwise[name] = std::move(rows);
    }
    json spaces = json::array();
    for (const auto& space : report.model_spaces) {
        json entries = json::array();
        for (const auto& m : space) {
            entries.push_back(json{{"switched_off", m.switched_off}, {"delta_f", m.delta_f}});
        }
        spaces.push_back(std::move(entries));
    }
    return json{{"tool_version", report.tool_version},
                {"config_hash", report.config_hash},
                {"master_seed", report.master_seed},
                {"subset", report.subset_labels},
                {"pruned", report.pruned_labels},
                {"datasets", std::move(datasets)},
                {"relative", std::move(relative)},
                {"pairwise", std::move(pairwise)},
                {"model_spaces", std::move(spaces)},
                {"verdict", report.verdict}};
}

ComparisonReport report_from_json(const json& j) {
    ComparisonReport report;
    report.tool_version = j.at("tool_version").get<std::string>();
    report.config_hash = j.at("config_hash").get<std::string>();
    report.master_seed = j.at("master_seed").get<std::uint64_t>();
    report.subset_labels = j.at("subset").get<std::vector<std::string>>();
    report.pruned_labels = j.at("pruned").get<std::vector<std::string>>();
    report.verdict = j.at("verdict").get<std::string>();
    for (const auto& d : j.at("datasets")) {
        DatasetScores sc;
        sc.label = d.at("label").get<std::string>();
        sc.ok = d.at("ok").get<bool>();
        sc.failure = d.at("failure").get<std::string>();
        sc.s_theta = double_or_nan(d.at("s_theta"));
        sc.s_epsilon = double_or_nan(d.at("s_epsilon"));
        sc.d_params = double_or_nan(d.at("d_params"));
        sc.d_models = double_or_nan(d.at("d_models"));
        sc.n_models = d.at("n_models").get<int>();
        report.datasets.push_back(std::move(sc));
    }
    for (const auto& [name, values] : j.at("relative").items()) {
        std::vector<double> v;
        for (const auto& x : values) v.push_back(double_or_nan(x));
        report.relative[name] = std::move(v);
    }
    for (const auto& [name, rows] : j.at("pairwise").items()) {
        const auto nr = static_cast<Eigen::Index>(rows.size());
        Eigen::MatrixXd table(nr, nr);
        for (Eigen::Index r = 0; r < nr; ++r) {
            const auto& row = rows.at(static_cast<std::size_t>(r));
            for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(row.size()); ++c) {
                table(r, c) = double_or_nan(row.at(static_cast<std::size_t>(c)));
            }
        }
        report.pairwise[name] = std::move(table);
    }
    for (const auto& space : j.at("model_spaces")) {
        std::vector<ModelSpaceEntry> entries;
        for (const auto& m : space) {
            entries.push_back({m.at("switched_off").get<std::vector<std::string>>(),
                               m.at("delta_f").get<double>()});
        }
        report.model_spaces.push_back(std::move(entries));
    }
    return report;
}

void write_timeseries_csv(const std::filesystem::path& path, const Eigen::MatrixXd& series,
                          const std::vector<std::string>& region_names) {
    if (static_cast<Eigen::Index>(region_names.size()) != series.cols()) {
        throw DimensionError("write_timeseries_csv: one region name per column");
    }
    for (const std::string& name : region_names) {
        if (name.find(',') != std::string::npos || name.find('\n') != std::string::npos) {
            throw Error("write_timeseries_csv: region names must not contain ',' or newlines");
        }
    }
    std::ofstream out(path);
    if (!out) throw Error("write_timeseries_csv: cannot open " + path.string());
    for (std::size_t c = 0; c < region_names.size(); ++c) {
        out << (c ? "," : "") << region_names[c];
    }
    out << "\n";
    char buf[64];
    for (Eigen::Index r = 0; r < series.rows(); ++r) {
        for (Eigen::Index c = 0; c < series.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", series(r, c));
            out << (c ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw Error("write_timeseries_csv: write failed for " + path.string());
}

std::pair<Eigen::MatrixXd, std::vector<std::string>> read_timeseries_csv(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_timeseries_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("read_timeseries_csv: empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) names.push_back(cell);
    }
    std::vector<double> values;
    Eigen::Index n_rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Eigen::Index n_cols = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::strtod(cell.c_str(), nullptr));
            ++n_cols;
        }
        if (n_cols != static_cast<Eigen::Index>(names.size())) {
            throw Error("read_timeseries_csv: row " + std::to_string(n_rows + 1) +
                        " has the wrong column count in " + path.string());
        }
        ++n_rows;
    }
    Eigen::MatrixXd m(n_rows, static_cast<Eigen::Index>(names.size()));
    for (Eigen::Index r = 0; r < n_rows; ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = values[static_cast<std::size_t>(r * m.cols() + c)];
        }
    }
    return {std::move(m), std::move(names)};
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("write_json_file: cannot open " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw Error("write_json_file: write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_json_file: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw Error(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                    ": " + e.what());
    }
}

std::string config_hash(const json& j) {
    const std::string dump = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace bdc
