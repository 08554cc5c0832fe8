#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coreflect/metrics.hpp"

namespace coreflect {

/// Markdown table of per-rubric means grouped by dimension, each group
/// followed by its average, then the model rating. Values are rounded half-up
/// to 2 decimals; with two or more models every column maximum is bold.
std::string render_model_table(const IterationMetrics& m);

/// Personas, validated pairs and mean planned turns per scenario category.
std::string render_dataset_table(const std::vector<CategoryStats>& rows);

/// Discriminability, intra-model variance and rank consistency per iteration.
std::string render_refinement_table(const std::vector<IterationMetrics>& series);

/// Full report for the last element of `series` (earlier elements feed the
/// refinement table).
std::string render_report(const std::vector<IterationMetrics>& series);

/// model,bin,conversations,tc_avg,ucp_avg
std::string length_csv(const IterationMetrics& m);
/// iteration,discriminability,stability,rank_consistency
std::string refinement_csv(const std::vector<IterationMetrics>& series);

struct ReportFiles {
  std::filesystem::path report;
  std::filesystem::path length_csv;
  std::filesystem::path refinement_csv;
};

/// Reads metrics-1..t from `run_dir` and writes report-<t>.md,
/// length-<t>.csv and refinement-series-<t>.csv. MissingMetrics when
/// metrics-<t>.json is absent.
ReportFiles write_report(const std::filesystem::path& run_dir, int iteration);

}  // namespace coreflect
