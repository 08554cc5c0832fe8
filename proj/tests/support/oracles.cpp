#include "oracles.hpp"

#include <cmath>
#include <map>
#include <utility>

namespace oracle {

std::vector<double> midranks(const std::vector<double>& xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    int less = 0;
    int equal = 0;
    for (double x : xs) {
      if (x < xs[i]) ++less;
      if (x == xs[i]) ++equal;
    }
    out[i] = 1.0 + less + (equal - 1) / 2.0;
  }
  return out;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = midranks(xs);
  const auto ry = midranks(ys);
  const auto n = static_cast<long double>(xs.size());
  long double sx = 0, sy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += rx[i];
    sy += ry[i];
  }
  const long double mx = sx / n, my = sy / n;
  long double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  return static_cast<double>(cov / std::sqrt(vx * vy));
}

namespace {

double sample_variance(const std::vector<long double>& v) {
  long double s = 0;
  for (auto x : v) s += x;
  const long double m = s / static_cast<long double>(v.size());
  long double ss = 0;
  for (auto x : v) ss += (x - m) * (x - m);
  return static_cast<double>(ss / static_cast<long double>(v.size() - 1));
}

}  // namespace

double discriminability(const Tensor& r) {
  const auto n = r.size();
  const auto m = r[0].size();
  const auto k = r[0][0].size();
  std::vector<long double> mu(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    long double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < k; ++q) total += r[i][j][q];
    }
    mu[j] = total / static_cast<long double>(n * k);
  }
  return std::sqrt(sample_variance(mu));
}

double stability(const Tensor& r) {
  const auto n = r.size();
  const auto m = r[0].size();
  const auto k = r[0][0].size();
  long double sum = 0;
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<long double> conv(n);
    for (std::size_t i = 0; i < n; ++i) {
      long double s = 0;
      for (std::size_t q = 0; q < k; ++q) s += r[i][j][q];
      conv[i] = s / static_cast<long double>(k);
    }
    sum += sample_variance(conv);
  }
  return static_cast<double>(sum / static_cast<long double>(m));
}

double fleiss_kappa(const std::vector<std::vector<int>>& counts) {
  const auto items = static_cast<long double>(counts.size());
  long double raters = 0;
  for (int c : counts[0]) raters += c;
  long double p_bar = 0;
  std::vector<long double> column(counts[0].size(), 0);
  for (const auto& row : counts) {
    long double agree = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      agree += static_cast<long double>(row[c]) * (row[c] - 1);
      column[c] += row[c];
    }
    p_bar += agree / (raters * (raters - 1));
  }
  p_bar /= items;
  long double p_e = 0;
  for (auto c : column) {
    const long double p = c / (items * raters);
    p_e += p * p;
  }
  return static_cast<double>((p_bar - p_e) / (1 - p_e));
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  auto choose2 = [](long double x) { return x * (x - 1) / 2; };
  std::map<std::pair<int, int>, long double> cells;
  std::map<int, long double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cells[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  long double index = 0, sum_rows = 0, sum_cols = 0;
  for (const auto& [_, c] : cells) index += choose2(c);
  for (const auto& [_, c] : rows) sum_rows += choose2(c);
  for (const auto& [_, c] : cols) sum_cols += choose2(c);
  const long double total = choose2(static_cast<long double>(a.size()));
  const long double expected = sum_rows * sum_cols / total;
  const long double max_index = (sum_rows + sum_cols) / 2;
  if (max_index == expected) return 1.0;
  return static_cast<double>((index - expected) / (max_index - expected));
}

}  // namespace oracle
