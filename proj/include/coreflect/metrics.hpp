#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coreflect/judge.hpp"
#include "coreflect/model.hpp"

namespace coreflect {

/// Dense ratings r[i][j][k] over instances i, models j and rubrics k.
class RatingTensor {
 public:
  RatingTensor() = default;
  RatingTensor(int iteration, std::vector<std::string> instances, std::vector<std::string> models,
               std::vector<std::string> rubrics, std::vector<Dimension> dimensions);

  int iteration() const { return iteration_; }
  const std::vector<std::string>& instances() const { return instances_; }
  const std::vector<std::string>& models() const { return models_; }
  const std::vector<std::string>& rubrics() const { return rubrics_; }
  const std::vector<Dimension>& dimensions() const { return dimensions_; }
  std::size_t num_instances() const { return instances_.size(); }
  std::size_t num_models() const { return models_.size(); }
  std::size_t num_rubrics() const { return rubrics_.size(); }

  /// Rating in 1..5; throws EmptyTensor when the cell was never set.
  int at(std::size_t i, std::size_t j, std::size_t k) const;
  void set(std::size_t i, std::size_t j, std::size_t k, int rating);
  bool complete() const;

  /// Builds the tensor from evaluation records. Every (instance, model) pair
  /// must have exactly one record rated on exactly `rubrics`.
  static RatingTensor from_evaluations(const std::vector<EvaluationRecord>& records, const RubricSet& rubrics,
                                       const std::vector<std::string>& instances,
                                       const std::vector<std::string>& models);

 private:
  std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const;

  int iteration_ = 1;
  std::vector<std::string> instances_;
  std::vector<std::string> models_;
  std::vector<std::string> rubrics_;
  std::vector<Dimension> dimensions_;
  std::vector<int> values_;  // 0 marks an unset cell
};

struct ModelSummary {
  std::string model_ref;
  std::vector<double> per_rubric_means;     // mu_{j,k}
  double tc_avg = 0.0;                      // mean over TaskCompleteness rubrics
  double ucp_avg = 0.0;                     // mean over UserCentricPersonalization rubrics
  double model_rating = 0.0;                // mu_j = mean of per_rubric_means
  std::vector<double> conversation_ratings; // r~_{i,j}
  std::optional<double> variance;           // unbiased; absent when |D| < 2
};

ModelSummary model_summary(const RatingTensor& tensor, std::size_t j);

/// Sample standard deviation (n-1) of the model means. Needs >= 2 models.
double discriminability(const std::vector<double>& model_means);

/// Mean over models of the intra-model variance of r~. Needs |D| >= 2.
double stability(const RatingTensor& tensor);

/// Average ranks, ties sharing the mean of their positions (1-based).
std::vector<double> midranks(const std::vector<double>& xs);

/// Pearson correlation of midranks. DegenerateInput if either side is
/// constant.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct RankConsistency {
  double rho = 0.0;
  int valid_splits = 0;  // splits where neither half ranked all models equal
  int requested_splits = 0;
};

/// Mean Spearman correlation between model means on the two halves of
/// `num_splits` seeded random half-splits of the instances. Splits on which a
/// half ranks every model equal are skipped.
RankConsistency rank_consistency(const RatingTensor& tensor, std::uint64_t seed, int num_splits = 10);

enum class LengthBin { kShort, kMedium, kLong };
std::string_view to_string(LengthBin b);
/// short <= 5 user turns, medium 6..7, long >= 8.
LengthBin length_bin(int user_turns);

struct BinStats {
  std::string model_ref;
  LengthBin bin = LengthBin::kShort;
  std::size_t conversations = 0;
  double tc_avg = 0.0;
  double ucp_avg = 0.0;
};

/// TC and UCP means per (model, bin). `user_turns[i][j]` is the length of the
/// conversation of instance i with model j. Empty bins are omitted.
std::vector<BinStats> length_stratified(const RatingTensor& tensor, const std::vector<std::vector<int>>& user_turns);

/// Fleiss' kappa over an items x categories count matrix with a constant
/// number of raters per item.
double fleiss_kappa(const std::vector<std::vector<int>>& counts);

/// One row of the dataset summary: personas, validated pairs and mean
/// planned turns for a scenario category (or "Total").
struct CategoryStats {
  std::string category;
  std::size_t personas = 0;
  std::size_t validated_pairs = 0;
  double avg_turns = 0.0;
};

struct IterationMetrics {
  int iteration = 1;
  std::vector<std::string> rubrics;
  std::vector<Dimension> dimensions;
  std::vector<ModelSummary> summaries;
  std::optional<double> discriminability;
  std::optional<double> stability;
  std::optional<RankConsistency> rank_consistency;
  std::vector<BinStats> length_bins;
  double mean_turn_count = 0.0;
  std::vector<CategoryStats> dataset_summary;
};

/// Every statistic for one iteration. Statistics whose preconditions fail
/// (one model, |D| < 2, degenerate splits) are left empty.
IterationMetrics compute_iteration_metrics(const RatingTensor& tensor, const std::vector<std::vector<int>>& user_turns,
                                           std::uint64_t seed, int num_splits);

json to_json(const IterationMetrics& m);
IterationMetrics iteration_metrics_from_json(const json& j);

}  // namespace coreflect
