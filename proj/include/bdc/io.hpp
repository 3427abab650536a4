#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "bdc/compare.hpp"
#include "bdc/dcm.hpp"
#include "bdc/peb.hpp"
#include "bdc/synth.hpp"
#include "bdc/vl.hpp"

namespace bdc {

using json = nlohmann::json;

// JSON conversions for the on-disk formats (see docs/formats.md).
json to_json(const GaussianDensity& g);
GaussianDensity gaussian_from_json(const json& j);

json to_json(const DcmSpec& spec);
DcmSpec spec_from_json(const json& j);

json to_json(const InputSchedule& sched);
InputSchedule inputs_from_json(const json& j);

json to_json(const DcmSpec& spec, const DcmParams& params);
DcmParams params_from_json(const DcmSpec& spec, const json& j);

json to_json(const PriorSpec& priors);
PriorSpec priors_from_json(const json& j);

json to_json(const SubjectPosterior& sp);
SubjectPosterior subject_from_json(const json& j);

json to_json(const PebModel& peb);

json to_json(const GroundTruth& truth, const DcmSpec& spec);

json to_json(const ComparisonReport& report);
ComparisonReport report_from_json(const json& j);

/// Timeseries CSV: a header row of region names, one row per volume, values
/// printed with 17 significant digits so doubles round-trip exactly.
void write_timeseries_csv(const std::filesystem::path& path, const Eigen::MatrixXd& series,
                          const std::vector<std::string>& region_names);
std::pair<Eigen::MatrixXd, std::vector<std::string>> read_timeseries_csv(
    const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const json& j);

/// Parses a JSON file; parse errors are rethrown as bdc::Error with
/// line/column diagnostics.
json read_json_file(const std::filesystem::path& path);

/// FNV-1a hash of the canonical (sorted-key) dump, as 16 hex digits. Used to
/// stamp outputs with the configuration that produced them.
std::string config_hash(const json& j);

}  // namespace bdc
