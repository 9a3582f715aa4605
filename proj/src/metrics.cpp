#include "fedclust/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fedclust/errors.hpp"

namespace fedclust {

namespace {

void check_lengths(Labels a, Labels b) {
  if (a.size() != b.size()) {
    throw ShapeError("label sequences differ in length: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.empty()) throw SizeError("metrics need at least one sample");
}

double entropy(const std::vector<std::int64_t>& marginal, double n) {
  double h = 0.0;
  for (auto c : marginal) {
    if (c > 0) {
      const double q = static_cast<double>(c) / n;
      h -= q * std::log(q);
    }
  }
  return h;
}

}  // namespace

ContingencyTable ContingencyTable::build(Labels predicted, Labels truth) {
  check_lengths(predicted, truth);
  const std::size_t kp = *std::ranges::max_element(predicted) + 1;
  const std::size_t kt = *std::ranges::max_element(truth) + 1;
  ContingencyTable t;
  t.counts.assign(kp, std::vector<std::int64_t>(kt, 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) ++t.counts[predicted[i]][truth[i]];
  t.n = static_cast<std::int64_t>(predicted.size());
  return t;
}

double nmi(Labels predicted, Labels truth) {
  const ContingencyTable t = ContingencyTable::build(predicted, truth);
  const double n = static_cast<double>(t.n);
  std::vector<std::int64_t> rows(t.num_predicted(), 0), cols(t.num_true(), 0);
  for (std::size_t i = 0; i < t.num_predicted(); ++i) {
    for (std::size_t j = 0; j < t.num_true(); ++j) {
      rows[i] += t.counts[i][j];
      cols[j] += t.counts[i][j];
    }
  }
  const double hp = entropy(rows, n);
  const double ht = entropy(cols, n);
  if (hp == 0.0 && ht == 0.0) return 1.0;
  if (hp == 0.0 || ht == 0.0) return 0.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < t.num_predicted(); ++i) {
    for (std::size_t j = 0; j < t.num_true(); ++j) {
      const auto c = t.counts[i][j];
      if (c == 0) continue;
      const double joint = static_cast<double>(c) / n;
      mi += joint * std::log(static_cast<double>(c) * n /
                             (static_cast<double>(rows[i]) * static_cast<double>(cols[j])));
    }
  }
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

std::vector<std::size_t> max_profit_assignment(const std::vector<std::vector<std::int64_t>>& profit) {
  // Shortest augmenting path Hungarian method on cost = -profit, 1-indexed.
  const std::size_t n = profit.size();
  for (const auto& row : profit) {
    if (row.size() != n) throw ShapeError("assignment matrix must be square");
  }
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0), way_min(n + 1);
  std::vector<std::size_t> match_col(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match_col[0] = i;
    std::size_t j0 = 0;
    std::fill(way_min.begin(), way_min.end(), kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match_col[j0];
      std::int64_t delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = -profit[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < way_min[j]) {
          way_min[j] = cur;
          way[j] = j0;
        }
        if (way_min[j] < delta) {
          delta = way_min[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          way_min[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (match_col[j] != 0) match[match_col[j] - 1] = j - 1;
  }
  return match;
}

double kappa(Labels predicted, Labels truth) {
  const ContingencyTable t = ContingencyTable::build(predicted, truth);
  const std::size_t size = std::max(t.num_predicted(), t.num_true());
  const std::int64_t n = t.n;
  std::vector<std::int64_t> rows(size, 0), cols(size, 0);
  for (std::size_t i = 0; i < t.num_predicted(); ++i) {
    for (std::size_t j = 0; j < t.num_true(); ++j) {
      rows[i] += t.counts[i][j];
      cols[j] += t.counts[i][j];
    }
  }
  auto count = [&](std::size_t i, std::size_t j) -> std::int64_t {
    return i < t.num_predicted() && j < t.num_true() ? t.counts[i][j] : 0;
  };
  // Agreement dominates; chance agreement breaks ties.
  const std::int64_t scale = n * n + 1;
  std::vector<std::vector<std::int64_t>> profit(size, std::vector<std::int64_t>(size));
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) profit[i][j] = count(i, j) * scale - rows[i] * cols[j];
  }
  const auto match = max_profit_assignment(profit);
  std::int64_t agree = 0;
  std::int64_t chance = 0;
  for (std::size_t i = 0; i < size; ++i) {
    agree += count(i, match[i]);
    chance += rows[i] * cols[match[i]];
  }
  const std::int64_t n2 = n * n;
  if (chance == n2) return agree == n ? 1.0 : 0.0;
  return static_cast<double>(agree * n - chance) / static_cast<double>(n2 - chance);
}

double calinski_harabasz(const DenseMatrix& points, Labels labels) {
  if (points.rows() != labels.size()) throw ShapeError("calinski_harabasz: label count mismatch");
  if (labels.empty()) throw MetricError("calinski_harabasz: no samples");
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  const std::size_t slots = *std::ranges::max_element(labels) + 1;
  std::vector<std::size_t> sizes(slots, 0);
  DenseMatrix means(slots, dim);
  std::vector<double> overall(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    ++sizes[labels[i]];
    auto m = means.row(labels[i]);
    const auto x = points.row(i);
    for (std::size_t d = 0; d < dim; ++d) {
      m[d] += x[d];
      overall[d] += x[d];
    }
  }
  const auto k = static_cast<std::size_t>(std::ranges::count_if(sizes, [](std::size_t s) { return s > 0; }));
  if (k < 2) throw MetricError("calinski_harabasz needs at least 2 non-empty clusters");
  if (n <= k) throw MetricError("calinski_harabasz needs more samples than clusters");
  for (double& v : overall) v /= static_cast<double>(n);
  for (std::size_t c = 0; c < slots; ++c) {
    if (sizes[c] == 0) continue;
    for (double& v : means.row(c)) v /= static_cast<double>(sizes[c]);
  }
  double between = 0.0;
  for (std::size_t c = 0; c < slots; ++c) {
    if (sizes[c] > 0) between += static_cast<double>(sizes[c]) * squared_distance(means.row(c), overall);
  }
  double within = 0.0;
  for (std::size_t i = 0; i < n; ++i) within += squared_distance(points.row(i), means.row(labels[i]));
  if (within == 0.0) throw MetricError("calinski_harabasz undefined: zero within-cluster dispersion");
  return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(n - k));
}

std::map<std::size_t, double> knn_probe(const DenseMatrix& train, Labels train_labels,
                                        const DenseMatrix& test, Labels test_labels,
                                        std::span<const std::size_t> ks) {
  if (train.rows() == 0 || test.rows() == 0) throw SizeError("knn_probe: empty split");
  if (train.rows() != train_labels.size() || test.rows() != test_labels.size()) {
    throw ShapeError("knn_probe: label count mismatch");
  }
  if (train.cols() != test.cols()) throw ShapeError("knn_probe: feature dims differ");
  for (auto k : ks) {
    if (k == 0 || k > train.rows()) {
      throw SizeError("knn_probe: k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(train.rows()) + "]");
    }
  }
  std::vector<std::size_t> sorted_ks(ks.begin(), ks.end());
  std::ranges::sort(sorted_ks);
  const std::size_t k_max = sorted_ks.empty() ? 0 : sorted_ks.back();
  const std::size_t classes = *std::ranges::max_element(train_labels) + 1;

  std::map<std::size_t, std::size_t> correct;
  for (auto k : sorted_ks) correct[k] = 0;
  std::vector<std::size_t> order(train.rows());
  std::vector<double> dist(train.rows());
  std::vector<std::size_t> votes(classes);
  for (std::size_t t = 0; t < test.rows(); ++t) {
    for (std::size_t i = 0; i < train.rows(); ++i) dist[i] = squared_distance(test.row(t), train.row(i));
    std::iota(order.begin(), order.end(), 0);
    auto closer = [&](std::size_t a, std::size_t b) {
      return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_max), order.end(), closer);
    std::ranges::fill(votes, 0);
    std::size_t used = 0;
    for (auto k : sorted_ks) {
      for (; used < k; ++used) ++votes[train_labels[order[used]]];
      const auto winner = static_cast<std::size_t>(std::ranges::max_element(votes) - votes.begin());
      if (winner == test_labels[t]) ++correct[k];
    }
  }
  std::map<std::size_t, double> out;
  for (auto [k, c] : correct) out[k] = static_cast<double>(c) / static_cast<double>(test.rows());
  return out;
}

std::vector<std::size_t> to_size_labels(std::span<const std::uint32_t> labels) {
  return {labels.begin(), labels.end()};
}

}  // namespace fedclust
