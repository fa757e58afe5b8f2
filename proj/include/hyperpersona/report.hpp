#pragma once

// Structured JSON reports and aligned plain-text tables.

#include "hyperpersona/metrics.hpp"
#include "hyperpersona/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hyperpersona {

// How per-class F1 is averaged when a class is absent; embedded in every
// report.
inline constexpr const char* kMacroF1Convention =
    "macro-F1 averages per-class F1 over classes present in gold or predictions";

std::string metrics_json(const MetricsReport& report, int indent = 2);
std::string run_report_json(const RunResult& run);
std::string aggregate_report_json(const Aggregate& agg, const std::vector<std::uint64_t>& seeds);
Aggregate parse_aggregate_report(const std::string& text);
std::string grid_report_json(const GridResult& grid);

// Rows are metrics, columns are systems; cells are "mean ± std".
std::string render_comparison_table(const std::vector<Aggregate>& systems);
// Rows are dropouts, columns learning rates; the selected cell is starred.
std::string render_grid_table(const GridResult& grid);
std::string render_param_counts(const ParamBreakdown& counts, const std::string& title);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace hyperpersona
