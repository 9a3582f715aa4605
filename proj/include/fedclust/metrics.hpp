#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedclust/matrix.hpp"

namespace fedclust {

using Labels = std::span<const std::size_t>;

/// counts(i, j) = number of samples with predicted cluster i and true class j.
struct ContingencyTable {
  std::vector<std::vector<std::int64_t>> counts;
  std::int64_t n = 0;

  static ContingencyTable build(Labels predicted, Labels truth);
  std::size_t num_predicted() const { return counts.size(); }
  std::size_t num_true() const { return counts.empty() ? 0 : counts.front().size(); }
};

struct MetricsReport {
  double nmi = 0.0;
  double kappa = 0.0;
  std::optional<double> ch_score;
  std::map<std::size_t, double> knn_accuracy;
};

/// Normalized mutual information, I(P;T) / sqrt(H(P) H(T)), natural logs.
/// Two constant labelings score 1; one constant labeling scores 0.
double nmi(Labels predicted, Labels truth);

/// Cohen's kappa after matching predicted clusters to classes. The matching
/// maximizes the number of agreeing samples; among maximal matchings the one
/// with the lowest chance agreement is used, so the value is well defined.
double kappa(Labels predicted, Labels truth);

/// Optimal assignment (Hungarian method) on a square integer profit matrix.
/// Returns match[row] = column maximizing the total profit.
std::vector<std::size_t> max_profit_assignment(const std::vector<std::vector<std::int64_t>>& profit);

/// Between-cluster over within-cluster dispersion, each divided by its
/// degrees of freedom. Throws MetricError with fewer than 2 clusters,
/// n <= k, or zero within-cluster dispersion.
double calinski_harabasz(const DenseMatrix& points, Labels labels);

/// Majority-vote kNN accuracy for every k in `ks`. Neighbors are ordered by
/// distance then training index; vote ties go to the smallest label.
std::map<std::size_t, double> knn_probe(const DenseMatrix& train, Labels train_labels,
                                        const DenseMatrix& test, Labels test_labels,
                                        std::span<const std::size_t> ks);

std::vector<std::size_t> to_size_labels(std::span<const std::uint32_t> labels);

}  // namespace fedclust
