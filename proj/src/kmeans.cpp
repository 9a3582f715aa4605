#include "fedclust/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fedclust/errors.hpp"
#include "fedclust/random.hpp"

namespace fedclust {

namespace {

// Row order sorted lexicographically by value, stable on index.
std::vector<std::size_t> canonical_order(const DenseMatrix& points) {
  std::vector<std::size_t> order(points.rows());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return std::ranges::lexicographical_compare(points.row(a), points.row(b));
  });
  return order;
}

void check_size(const DenseMatrix& points, std::size_t k) {
  if (k == 0) throw SizeError("k-means needs k >= 1");
  if (points.rows() < k) {
    throw SizeError("k-means needs at least k points: n=" + std::to_string(points.rows()) +
                    ", k=" + std::to_string(k));
  }
}

// k-means++ on points already in canonical order.
CentroidSet seed_sorted(const DenseMatrix& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.rows();
  Rng rng(seed);
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  CentroidSet out{DenseMatrix(k, points.cols())};

  auto take = [&](std::size_t c, std::size_t idx) {
    chosen[idx] = true;
    std::ranges::copy(points.row(idx), out.centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), points.row(idx)));
    }
  };

  take(0, std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n))));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i]) total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2[i] <= 0.0) continue;
        pick = i;
        target -= d2[i];
        if (target < 0.0) break;
      }
    } else {
      // Every remaining point coincides with a chosen one; pick uniformly.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) rest.push_back(i);
      }
      pick = rest[std::min(rest.size() - 1,
                           static_cast<std::size_t>(uniform01(rng) * static_cast<double>(rest.size())))];
    }
    take(c, pick);
  }
  return out;
}

struct SingleRun {
  CentroidSet centroids;
  Assignment assignment;
  std::vector<double> trace;
  std::size_t iterations = 0;
  bool reseeded_last = false;
};

SingleRun lloyd_sorted(const DenseMatrix& points, std::size_t k, std::uint64_t seed,
                       const LloydOptions& options) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  SingleRun run;
  run.centroids = seed_sorted(points, k, seed);
  run.assignment = assign_nearest(points, run.centroids);
  run.trace.push_back(run.assignment.inertia);

  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    DenseMatrix next(k, dim);
    std::ranges::fill(counts, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = run.assignment.labels[i];
      ++counts[c];
      auto row = next.row(c);
      const auto p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) row[d] += p[d];
    }
    bool reseeded = false;
    std::vector<bool> used(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (double& v : next.row(c)) v /= static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = n;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (used[i]) continue;
        const double d = squared_distance(points.row(i), run.centroids.centroids.row(run.assignment.labels[i]));
        if (d > best) {
          best = d;
          far = i;
        }
      }
      used[far] = true;
      std::ranges::copy(points.row(far), next.row(c).begin());
      reseeded = true;
    }

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      shift = std::max(shift, squared_distance(next.row(c), run.centroids.centroids.row(c)));
    }
    run.centroids.centroids = std::move(next);
    Assignment fresh = assign_nearest(points, run.centroids);
    run.trace.push_back(fresh.inertia);
    run.iterations = it + 1;
    run.reseeded_last = reseeded;
    const bool stable = fresh.labels == run.assignment.labels && !reseeded;
    run.assignment = std::move(fresh);
    if (stable || std::sqrt(shift) < options.tol) break;
  }
  return run;
}

}  // namespace

Assignment assign_nearest(const DenseMatrix& points, const CentroidSet& centroids) {
  if (points.cols() != centroids.dim()) {
    throw ShapeError("points have " + std::to_string(points.cols()) + " dims, centroids have " +
                     std::to_string(centroids.dim()));
  }
  if (centroids.k() == 0) throw SizeError("assign_nearest: empty centroid set");
  Assignment out;
  out.labels.resize(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t label = 0;
    for (std::size_t c = 0; c < centroids.k(); ++c) {
      const double d = squared_distance(points.row(i), centroids.centroids.row(c));
      if (d < best) {
        best = d;
        label = c;
      }
    }
    out.labels[i] = label;
    out.inertia += best;
  }
  return out;
}

CentroidSet kmeanspp_init(const DenseMatrix& points, std::size_t k, std::uint64_t seed) {
  check_size(points, k);
  const auto order = canonical_order(points);
  return seed_sorted(select_rows(points, order), k, seed);
}

LloydResult lloyd(const DenseMatrix& points, std::size_t k, std::uint64_t seed,
                  const LloydOptions& options) {
  check_size(points, k);
  const auto order = canonical_order(points);
  const DenseMatrix sorted = select_rows(points, order);

  const std::size_t restarts = std::max<std::size_t>(1, options.restarts);
  SingleRun best;
  for (std::size_t r = 0; r < restarts; ++r) {
    SingleRun run = lloyd_sorted(sorted, k, seed + r, options);
    if (r == 0 || run.assignment.inertia < best.assignment.inertia) best = std::move(run);
  }

  LloydResult out;
  out.centroids = std::move(best.centroids);
  out.assignment.inertia = best.assignment.inertia;
  out.assignment.labels.resize(points.rows());
  for (std::size_t i = 0; i < order.size(); ++i) out.assignment.labels[order[i]] = best.assignment.labels[i];
  out.inertia_trace = std::move(best.trace);
  out.iterations = best.iterations;
  out.reseeded_last_iteration = best.reseeded_last;
  return out;
}

}  // namespace fedclust
