#include "coreflect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace coreflect {

// ---------------------------------------------------------------------------
// RatingTensor
// ---------------------------------------------------------------------------

RatingTensor::RatingTensor(int iteration, std::vector<std::string> instances, std::vector<std::string> models,
                           std::vector<std::string> rubrics, std::vector<Dimension> dimensions)
    : iteration_(iteration),
      instances_(std::move(instances)),
      models_(std::move(models)),
      rubrics_(std::move(rubrics)),
      dimensions_(std::move(dimensions)),
      values_(instances_.size() * models_.size() * rubrics_.size(), 0) {
  if (dimensions_.size() != rubrics_.size()) throw ConfigError("one dimension per rubric is required");
}

std::size_t RatingTensor::offset(std::size_t i, std::size_t j, std::size_t k) const {
  if (i >= instances_.size() || j >= models_.size() || k >= rubrics_.size()) {
    throw std::out_of_range("rating tensor index out of range");
  }
  return (i * models_.size() + j) * rubrics_.size() + k;
}

int RatingTensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  const int v = values_[offset(i, j, k)];
  if (v == 0) {
    throw EmptyTensor("no rating for (" + instances_[i] + ", " + models_[j] + ", " + rubrics_[k] + ")");
  }
  return v;
}

void RatingTensor::set(std::size_t i, std::size_t j, std::size_t k, int rating) {
  if (rating < 1 || rating > 5) throw RatingRangeError("rating " + std::to_string(rating) + " outside 1..5");
  values_[offset(i, j, k)] = rating;
}

bool RatingTensor::complete() const {
  return !values_.empty() && std::none_of(values_.begin(), values_.end(), [](int v) { return v == 0; });
}

RatingTensor RatingTensor::from_evaluations(const std::vector<EvaluationRecord>& records, const RubricSet& rubrics,
                                            const std::vector<std::string>& instances,
                                            const std::vector<std::string>& models) {
  std::vector<Dimension> dims;
  for (const auto& r : rubrics.rubrics) dims.push_back(r.dimension);
  RatingTensor t(rubrics.iteration, instances, models, rubrics.names(), dims);
  std::map<std::string, std::size_t> inst_index, model_index;
  for (std::size_t i = 0; i < instances.size(); ++i) inst_index[instances[i]] = i;
  for (std::size_t j = 0; j < models.size(); ++j) model_index[models[j]] = j;
  std::vector<bool> seen(instances.size() * models.size(), false);
  for (const auto& rec : records) {
    const auto ii = inst_index.find(rec.instance_ref);
    const auto jj = model_index.find(rec.model_ref);
    if (ii == inst_index.end() || jj == model_index.end()) {
      throw SchemaError("evaluations", "record " + rec.conversation_ref + " is outside the evaluated grid");
    }
    const auto cell = ii->second * models.size() + jj->second;
    if (seen[cell]) throw SchemaError("evaluations", "more than one record for " + rec.conversation_ref);
    seen[cell] = true;
    if (rec.ratings.size() != rubrics.size()) {
      throw SchemaError("evaluations", "record " + rec.conversation_ref + " does not rate every rubric");
    }
    for (std::size_t k = 0; k < rubrics.size(); ++k) {
      if (rec.ratings[k].rubric_name != rubrics.rubrics[k].name) {
        throw SchemaError("evaluations", "record " + rec.conversation_ref + " rubric order differs from the set");
      }
      t.set(ii->second, jj->second, k, rec.ratings[k].rating);
    }
  }
  if (!t.complete()) throw EmptyTensor("evaluations do not cover every (instance, model) pair");
  return t;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

namespace {

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Unbiased sample variance.
double sample_variance(const std::vector<double>& xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

double dimension_mean(const std::vector<double>& per_rubric, const std::vector<Dimension>& dims, Dimension d) {
  double s = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < per_rubric.size(); ++k) {
    if (dims[k] == d) {
      s += per_rubric[k];
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / n;
}

}  // namespace

ModelSummary model_summary(const RatingTensor& tensor, std::size_t j) {
  const auto n = tensor.num_instances();
  const auto K = tensor.num_rubrics();
  if (n == 0 || K == 0) throw EmptyTensor("rating tensor has no instances or rubrics");
  if (j >= tensor.num_models()) throw EmptyTensor("model index out of range");

  ModelSummary s;
  s.model_ref = tensor.models()[j];
  s.per_rubric_means.assign(K, 0.0);
  s.conversation_ratings.assign(n, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += tensor.at(i, j, k);
    s.per_rubric_means[k] = sum / static_cast<double>(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += tensor.at(i, j, k);
    s.conversation_ratings[i] = sum / static_cast<double>(K);
  }
  s.tc_avg = dimension_mean(s.per_rubric_means, tensor.dimensions(), Dimension::kTaskCompleteness);
  s.ucp_avg = dimension_mean(s.per_rubric_means, tensor.dimensions(), Dimension::kUserCentricPersonalization);
  s.model_rating = mean(s.per_rubric_means);
  if (n >= 2) s.variance = sample_variance(s.conversation_ratings);
  return s;
}

double discriminability(const std::vector<double>& model_means) {
  if (model_means.size() < 2) throw InsufficientModels("discriminability needs at least two models");
  return std::sqrt(sample_variance(model_means));
}

double stability(const RatingTensor& tensor) {
  if (tensor.num_models() == 0 || tensor.num_instances() == 0) throw EmptyTensor("rating tensor is empty");
  if (tensor.num_instances() < 2) throw InsufficientData("stability needs at least two instances");
  double sum = 0.0;
  for (std::size_t j = 0; j < tensor.num_models(); ++j) sum += *model_summary(tensor, j).variance;
  return sum / static_cast<double>(tensor.num_models());
}

// ---------------------------------------------------------------------------
// Rank statistics
// ---------------------------------------------------------------------------

std::vector<double> midranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start + 1;
    while (end < order.size() && xs[order[end]] == xs[order[start]]) ++end;
    // Positions start+1 .. end share their mean.
    const double r = static_cast<double>(start + 1 + end) / 2.0;
    for (std::size_t p = start; p < end; ++p) ranks[order[p]] = r;
    start = end;
  }
  return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw DegenerateInput("spearman inputs differ in length");
  if (xs.size() < 2) throw DegenerateInput("spearman needs at least two observations");
  const auto rx = midranks(xs);
  const auto ry = midranks(ys);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("spearman is undefined for a constant vector");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

RankConsistency rank_consistency(const RatingTensor& tensor, std::uint64_t seed, int num_splits) {
  const auto n = tensor.num_instances();
  const auto M = tensor.num_models();
  const auto K = tensor.num_rubrics();
  if (n < 4) throw InsufficientData("rank consistency needs at least four instances");
  if (M < 2) throw InsufficientModels("rank consistency needs at least two models");
  if (num_splits < 1) throw ConfigError("num_splits must be at least 1");

  RankConsistency out;
  out.requested_splits = num_splits;
  double total = 0.0;
  for (int s = 0; s < num_splits; ++s) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "split/" + std::to_string(s)));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);

    const std::size_t half = n / 2;
    std::vector<double> a(M, 0.0), b(M, 0.0);
    for (std::size_t j = 0; j < M; ++j) {
      for (std::size_t p = 0; p < n; ++p) {
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) sum += tensor.at(order[p], j, k);
        (p < half ? a : b)[j] += sum;
      }
      a[j] /= static_cast<double>(half * K);
      b[j] /= static_cast<double>((n - half) * K);
    }
    try {
      total += spearman(a, b);
      ++out.valid_splits;
    } catch (const DegenerateInput&) {
    }
  }
  if (out.valid_splits == 0) throw DegenerateInput("every split ranked all models equal");
  out.rho = total / out.valid_splits;
  return out;
}

// ---------------------------------------------------------------------------
// Length stratification
// ---------------------------------------------------------------------------

std::string_view to_string(LengthBin b) {
  switch (b) {
    case LengthBin::kShort: return "short";
    case LengthBin::kMedium: return "medium";
    case LengthBin::kLong: return "long";
  }
  return "";
}

LengthBin length_bin(int user_turns) {
  if (user_turns <= 5) return LengthBin::kShort;
  if (user_turns <= 7) return LengthBin::kMedium;
  return LengthBin::kLong;
}

std::vector<BinStats> length_stratified(const RatingTensor& tensor, const std::vector<std::vector<int>>& user_turns) {
  const auto n = tensor.num_instances();
  const auto M = tensor.num_models();
  if (user_turns.size() != n) throw ConfigError("user_turns must have one row per instance");
  std::vector<BinStats> out;
  for (std::size_t j = 0; j < M; ++j) {
    if (user_turns.empty() || user_turns.front().size() != M) {
      throw ConfigError("user_turns must have one column per model");
    }
    for (auto bin : {LengthBin::kShort, LengthBin::kMedium, LengthBin::kLong}) {
      BinStats st;
      st.model_ref = tensor.models()[j];
      st.bin = bin;
      double tc = 0.0, ucp = 0.0;
      std::size_t tc_n = 0, ucp_n = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (user_turns[i].size() != M) throw ConfigError("user_turns must have one column per model");
        if (length_bin(user_turns[i][j]) != bin) continue;
        ++st.conversations;
        for (std::size_t k = 0; k < tensor.num_rubrics(); ++k) {
          if (tensor.dimensions()[k] == Dimension::kTaskCompleteness) {
            tc += tensor.at(i, j, k);
            ++tc_n;
          } else {
            ucp += tensor.at(i, j, k);
            ++ucp_n;
          }
        }
      }
      if (st.conversations == 0) continue;
      st.tc_avg = tc_n ? tc / static_cast<double>(tc_n) : std::numeric_limits<double>::quiet_NaN();
      st.ucp_avg = ucp_n ? ucp / static_cast<double>(ucp_n) : std::numeric_limits<double>::quiet_NaN();
      out.push_back(st);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fleiss' kappa
// ---------------------------------------------------------------------------

double fleiss_kappa(const std::vector<std::vector<int>>& counts) {
  if (counts.empty() || counts.front().empty()) throw InsufficientData("fleiss kappa needs at least one item");
  const auto N = counts.size();
  const auto categories = counts.front().size();
  const long raters = std::accumulate(counts.front().begin(), counts.front().end(), 0L);
  if (raters < 2) throw InsufficientData("fleiss kappa needs at least two raters per item");

  std::vector<double> column(categories, 0.0);
  double p_bar = 0.0;
  for (const auto& row : counts) {
    if (row.size() != categories) throw ConfigError("every item needs a count for every category");
    long total = 0, squares = 0;
    for (std::size_t c = 0; c < categories; ++c) {
      if (row[c] < 0) throw ConfigError("category counts must be nonnegative");
      total += row[c];
      squares += static_cast<long>(row[c]) * row[c];
      column[c] += row[c];
    }
    if (total != raters) throw ConfigError("every item must be rated by the same number of raters");
    p_bar += static_cast<double>(squares - raters) / static_cast<double>(raters * (raters - 1));
  }
  p_bar /= static_cast<double>(N);
  double p_e = 0.0;
  for (double c : column) {
    const double p = c / (static_cast<double>(N) * static_cast<double>(raters));
    p_e += p * p;
  }
  if (p_e == 1.0) {
    if (p_bar == 1.0) return 1.0;
    throw DegenerateAgreement("chance agreement is 1 but observed agreement is not");
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

// ---------------------------------------------------------------------------
// Iteration bundle
// ---------------------------------------------------------------------------

IterationMetrics compute_iteration_metrics(const RatingTensor& tensor, const std::vector<std::vector<int>>& user_turns,
                                           std::uint64_t seed, int num_splits) {
  IterationMetrics m;
  m.iteration = tensor.iteration();
  m.rubrics = tensor.rubrics();
  m.dimensions = tensor.dimensions();
  std::vector<double> means;
  for (std::size_t j = 0; j < tensor.num_models(); ++j) {
    m.summaries.push_back(model_summary(tensor, j));
    means.push_back(m.summaries.back().model_rating);
  }
  if (means.size() >= 2) m.discriminability = discriminability(means);
  if (tensor.num_instances() >= 2) m.stability = stability(tensor);
  if (tensor.num_instances() >= 4 && tensor.num_models() >= 2) {
    try {
      m.rank_consistency = rank_consistency(tensor, seed, num_splits);
    } catch (const DegenerateInput&) {
    }
  }
  m.length_bins = length_stratified(tensor, user_turns);
  double turns = 0.0;
  std::size_t cells = 0;
  for (const auto& row : user_turns) {
    for (int t : row) {
      turns += t;
      ++cells;
    }
  }
  m.mean_turn_count = cells ? turns / static_cast<double>(cells) : 0.0;
  return m;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); }

}  // namespace

json to_json(const IterationMetrics& m) {
  json dims = json::array();
  for (auto d : m.dimensions) dims.push_back(to_string(d));
  json summaries = json::array();
  for (const auto& s : m.summaries) {
    summaries.push_back({{"model_ref", s.model_ref},
                         {"per_rubric_means", s.per_rubric_means},
                         {"tc_avg", number_or_null(s.tc_avg)},
                         {"ucp_avg", number_or_null(s.ucp_avg)},
                         {"model_rating", s.model_rating},
                         {"variance", s.variance ? json(*s.variance) : json(nullptr)},
                         {"conversation_ratings", s.conversation_ratings}});
  }
  json bins = json::array();
  for (const auto& b : m.length_bins) {
    bins.push_back({{"model_ref", b.model_ref},
                    {"bin", to_string(b.bin)},
                    {"conversations", b.conversations},
                    {"tc_avg", number_or_null(b.tc_avg)},
                    {"ucp_avg", number_or_null(b.ucp_avg)}});
  }
  json rc = nullptr;
  if (m.rank_consistency) {
    rc = {{"rho", m.rank_consistency->rho},
          {"valid_splits", m.rank_consistency->valid_splits},
          {"requested_splits", m.rank_consistency->requested_splits}};
  }
  json categories = json::array();
  for (const auto& c : m.dataset_summary) {
    categories.push_back({{"category", c.category},
                          {"personas", c.personas},
                          {"validated_pairs", c.validated_pairs},
                          {"avg_turns", c.avg_turns}});
  }
  return json{{"iteration", m.iteration},
              {"rubrics", m.rubrics},
              {"dimensions", dims},
              {"summaries", summaries},
              {"refinement",
               {{"discriminability", m.discriminability ? json(*m.discriminability) : json(nullptr)},
                {"stability", m.stability ? json(*m.stability) : json(nullptr)},
                {"rank_consistency", rc}}},
              {"length_bins", bins},
              {"mean_turn_count", m.mean_turn_count},
              {"dataset_summary", categories}};
}

IterationMetrics iteration_metrics_from_json(const json& j) {
  IterationMetrics m;
  try {
    m.iteration = j.at("iteration").get<int>();
    m.rubrics = j.at("rubrics").get<std::vector<std::string>>();
    for (const auto& d : j.at("dimensions")) {
      const auto dim = parse_dimension(d.get<std::string>());
      if (!dim) throw SchemaError("dimensions", "unknown dimension " + d.dump());
      m.dimensions.push_back(*dim);
    }
    for (const auto& s : j.at("summaries")) {
      ModelSummary ms;
      ms.model_ref = s.at("model_ref").get<std::string>();
      ms.per_rubric_means = s.at("per_rubric_means").get<std::vector<double>>();
      ms.tc_avg = number_from(s.at("tc_avg"));
      ms.ucp_avg = number_from(s.at("ucp_avg"));
      ms.model_rating = s.at("model_rating").get<double>();
      if (!s.at("variance").is_null()) ms.variance = s.at("variance").get<double>();
      ms.conversation_ratings = s.at("conversation_ratings").get<std::vector<double>>();
      m.summaries.push_back(std::move(ms));
    }
    const auto& r = j.at("refinement");
    if (!r.at("discriminability").is_null()) m.discriminability = r.at("discriminability").get<double>();
    if (!r.at("stability").is_null()) m.stability = r.at("stability").get<double>();
    if (!r.at("rank_consistency").is_null()) {
      const auto& rc = r.at("rank_consistency");
      m.rank_consistency = RankConsistency{rc.at("rho").get<double>(), rc.at("valid_splits").get<int>(),
                                           rc.at("requested_splits").get<int>()};
    }
    for (const auto& b : j.at("length_bins")) {
      BinStats st;
      st.model_ref = b.at("model_ref").get<std::string>();
      const auto bin = b.at("bin").get<std::string>();
      st.bin = bin == "short" ? LengthBin::kShort : bin == "medium" ? LengthBin::kMedium : LengthBin::kLong;
      st.conversations = b.at("conversations").get<std::size_t>();
      st.tc_avg = number_from(b.at("tc_avg"));
      st.ucp_avg = number_from(b.at("ucp_avg"));
      m.length_bins.push_back(st);
    }
    m.mean_turn_count = j.at("mean_turn_count").get<double>();
    for (const auto& c : j.value("dataset_summary", json::array())) {
      m.dataset_summary.push_back({c.at("category").get<std::string>(), c.at("personas").get<std::size_t>(),
                                   c.at("validated_pairs").get<std::size_t>(), c.at("avg_turns").get<double>()});
    }
  } catch (const json::exception& e) {
    throw SchemaError("metrics", e.what());
  }
  return m;
}

}  // namespace coreflect
