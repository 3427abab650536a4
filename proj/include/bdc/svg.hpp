#pragma once

#include <filesystem>

#include "bdc/compare.hpp"

namespace bdc {

/// Four-panel bar chart of the relative nats per measure per dataset.
void write_report_svg(const ComparisonReport& report, const std::filesystem::path& path);

}  // namespace bdc
