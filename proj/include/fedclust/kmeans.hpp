#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedclust/matrix.hpp"

namespace fedclust {

/// k centroids in a shared space, one per row.
struct CentroidSet {
  DenseMatrix centroids;

  std::size_t k() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }

  friend bool operator==(const CentroidSet&, const CentroidSet&) = default;
};

struct Assignment {
  std::vector<std::size_t> labels;
  double inertia = 0.0;  // sum of squared distances to the assigned centroid

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Nearest centroid per row; ties go to the lowest centroid index.
Assignment assign_nearest(const DenseMatrix& points, const CentroidSet& centroids);

/// D^2-weighted seeding. The draw is made over a canonical (lexicographic)
/// ordering of the rows so the chosen centroids do not depend on input order.
CentroidSet kmeanspp_init(const DenseMatrix& points, std::size_t k, std::uint64_t seed);

struct LloydOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
  std::size_t restarts = 10;  // best of `restarts` runs seeded seed + r
};

struct LloydResult {
  CentroidSet centroids;
  Assignment assignment;
  std::vector<double> inertia_trace;  // inertia after each assignment step of the best restart
  std::size_t iterations = 0;
  bool reseeded_last_iteration = false;
};

/// Lloyd iterations from k-means++ seeds. Empty clusters are reseeded to the
/// point farthest from its current centroid. The returned assignment is
/// always assign_nearest of the returned centroids. Throws SizeError if n < k.
LloydResult lloyd(const DenseMatrix& points, std::size_t k, std::uint64_t seed,
                  const LloydOptions& options = {});

}  // namespace fedclust
