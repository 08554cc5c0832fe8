#include "coreflect/report.hpp"

#include <cmath>
#include <cstdio>
#include <optional>

namespace coreflect {

namespace {

struct Column {
  std::string header;
  std::vector<double> values;  // one per model
};

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "n/a";
  const double scale = std::pow(10.0, digits);
  const double r = std::floor(v * scale + 0.5 + 1e-9) / scale;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, r);
  return buf;
}

std::string csv_number(double v) { return std::isfinite(v) ? json(v).dump() : ""; }
std::string csv_number(const std::optional<double>& v) { return v ? csv_number(*v) : ""; }

}  // namespace

std::string render_model_table(const IterationMetrics& m) {
  std::vector<Column> columns;
  for (auto dim : {Dimension::kTaskCompleteness, Dimension::kUserCentricPersonalization}) {
    bool any = false;
    for (std::size_t k = 0; k < m.rubrics.size(); ++k) {
      if (m.dimensions[k] != dim) continue;
      any = true;
      Column c{m.rubrics[k], {}};
      for (const auto& s : m.summaries) c.values.push_back(s.per_rubric_means[k]);
      columns.push_back(std::move(c));
    }
    if (!any) continue;
    Column avg{dim == Dimension::kTaskCompleteness ? "TC avg." : "UCP avg.", {}};
    for (const auto& s : m.summaries) avg.values.push_back(dim == Dimension::kTaskCompleteness ? s.tc_avg : s.ucp_avg);
    columns.push_back(std::move(avg));
  }
  Column rating{"Model rating", {}};
  for (const auto& s : m.summaries) rating.values.push_back(s.model_rating);
  columns.push_back(std::move(rating));

  const bool highlight = m.summaries.size() >= 2;
  std::vector<double> best(columns.size(), -INFINITY);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    for (double v : columns[c].values) {
      if (std::isfinite(v)) best[c] = std::max(best[c], round2(v));
    }
  }

  std::string out = "| Model |";
  std::string rule = "|---|";
  for (const auto& c : columns) {
    out += " " + c.header + " |";
    rule += "---:|";
  }
  out += "\n" + rule + "\n";
  for (std::size_t j = 0; j < m.summaries.size(); ++j) {
    out += "| " + m.summaries[j].model_ref + " |";
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const double v = columns[c].values[j];
      auto cell = fixed(v, 2);
      if (highlight && std::isfinite(v) && round2(v) == best[c]) cell = "**" + cell + "**";
      out += " " + cell + " |";
    }
    out += "\n";
  }
  return out;
}

std::string render_dataset_table(const std::vector<CategoryStats>& rows) {
  std::string out = "| Category | # Persona | # Validated pairs | Avg. required turns per template |\n"
                    "|---|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += "| " + r.category + " | " + std::to_string(r.personas) + " | " + std::to_string(r.validated_pairs) + " | " +
           fixed(r.avg_turns, 2) + " |\n";
  }
  return out;
}

std::string render_refinement_table(const std::vector<IterationMetrics>& series) {
  std::string head = "| Metric |";
  std::string rule = "|---|";
  std::string delta = "| Discriminability (inter-model std. dev.) |";
  std::string gamma = "| Stability (intra-model variance) |";
  std::string rho = "| Rank consistency (Spearman) |";
  for (const auto& m : series) {
    head += " t=" + std::to_string(m.iteration) + " |";
    rule += "---:|";
    delta += " " + (m.discriminability ? fixed(*m.discriminability, 3) : std::string("n/a")) + " |";
    gamma += " " + (m.stability ? fixed(*m.stability, 3) : std::string("n/a")) + " |";
    rho += " " + (m.rank_consistency ? fixed(m.rank_consistency->rho, 2) : std::string("n/a")) + " |";
  }
  return head + "\n" + rule + "\n" + delta + "\n" + gamma + "\n" + rho + "\n";
}

std::string render_report(const std::vector<IterationMetrics>& series) {
  if (series.empty()) throw MissingMetrics("no metrics to report");
  const auto& m = series.back();
  std::string out = "# Iteration " + std::to_string(m.iteration) + " report\n\n";
  out += "## Model performance\n\n" + render_model_table(m) + "\n";
  if (!m.dataset_summary.empty()) out += "## Dataset\n\n" + render_dataset_table(m.dataset_summary) + "\n";
  out += "## Rubric refinement\n\n" + render_refinement_table(series);
  if (m.rank_consistency) {
    out += "\nRank consistency averages " + std::to_string(m.rank_consistency->valid_splits) + " of " +
           std::to_string(m.rank_consistency->requested_splits) + " half-splits.\n";
  }
  out += "\n## Conversation length\n\n| Model | Bin | Conversations | TC avg. | UCP avg. |\n|---|---|---:|---:|---:|\n";
  for (const auto& b : m.length_bins) {
    out += "| " + b.model_ref + " | " + std::string(to_string(b.bin)) + " | " + std::to_string(b.conversations) +
           " | " + fixed(b.tc_avg, 2) + " | " + fixed(b.ucp_avg, 2) + " |\n";
  }
  return out;
}

std::string length_csv(const IterationMetrics& m) {
  std::string out = "model,bin,conversations,tc_avg,ucp_avg\n";
  for (const auto& b : m.length_bins) {
    out += b.model_ref + "," + std::string(to_string(b.bin)) + "," + std::to_string(b.conversations) + "," +
           csv_number(b.tc_avg) + "," + csv_number(b.ucp_avg) + "\n";
  }
  return out;
}

std::string refinement_csv(const std::vector<IterationMetrics>& series) {
  std::string out = "iteration,discriminability,stability,rank_consistency\n";
  for (const auto& m : series) {
    out += std::to_string(m.iteration) + "," + csv_number(m.discriminability) + "," + csv_number(m.stability) + "," +
           (m.rank_consistency ? csv_number(m.rank_consistency->rho) : std::string()) + "\n";
  }
  return out;
}

ReportFiles write_report(const std::filesystem::path& run_dir, int iteration) {
  const auto current = run_dir / ("metrics-" + std::to_string(iteration) + ".json");
  if (!std::filesystem::exists(current)) throw MissingMetrics(current.string() + " does not exist");
  std::vector<IterationMetrics> series;
  for (int t = 1; t <= iteration; ++t) {
    const auto path = run_dir / ("metrics-" + std::to_string(t) + ".json");
    if (std::filesystem::exists(path)) series.push_back(iteration_metrics_from_json(read_json(path)));
  }
  ReportFiles files{run_dir / ("report-" + std::to_string(iteration) + ".md"),
                    run_dir / ("length-" + std::to_string(iteration) + ".csv"),
                    run_dir / ("refinement-series-" + std::to_string(iteration) + ".csv")};
  write_file(files.report, render_report(series));
  write_file(files.length_csv, length_csv(series.back()));
  write_file(files.refinement_csv, refinement_csv(series));
  return files;
}

}  // namespace coreflect
