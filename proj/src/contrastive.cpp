#include "fedclust/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedclust/errors.hpp"

namespace fedclust {

namespace {

double checked_norm(std::span<const double> v, const char* what) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError(std::string("cosine undefined: zero-norm ") + what);
  }
  return n;
}

// Unit-normalized copy of every row plus the original norms.
struct Normalized {
  DenseMatrix unit;
  std::vector<double> norms;
};

Normalized normalize_rows(const DenseMatrix& m, const char* what) {
  Normalized out{DenseMatrix(m.rows(), m.cols()), std::vector<double>(m.rows())};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = checked_norm(m.row(r), what);
    out.norms[r] = n;
    auto u = out.unit.row(r);
    const auto src = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) u[c] = src[c] / n;
  }
  return out;
}

std::vector<RowRange> stack_batches(std::span<const ClusterBatch> batches, DenseMatrix& stacked) {
  std::vector<DenseMatrix> blocks;
  std::vector<RowRange> ranges;
  std::size_t offset = 0;
  for (const auto& b : batches) {
    blocks.push_back(b.inputs);
    ranges.push_back({offset, offset + b.inputs.rows()});
    offset += b.inputs.rows();
  }
  stacked = stack_rows(blocks);
  return ranges;
}

void axpy(double a, const DenseMatrix& x, DenseMatrix& y) {
  auto yv = y.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += a * xv[i];
}

}  // namespace

double pairwise_cosine_loss(std::span<const double> prediction, const DenseMatrix& targets) {
  if (targets.cols() != prediction.size()) {
    throw ShapeError("pairwise_cosine_loss: prediction has " + std::to_string(prediction.size()) +
                     " dims, targets have " + std::to_string(targets.cols()));
  }
  if (targets.rows() == 0) throw ContractError("pairwise_cosine_loss: no targets");
  const double pn = checked_norm(prediction, "prediction");
  double sum = 0.0;
  for (std::size_t j = 0; j < targets.rows(); ++j) {
    const double zn = checked_norm(targets.row(j), "target");
    sum += dot(prediction, targets.row(j)) / (pn * zn);
  }
  return -sum / static_cast<double>(targets.rows());
}

LatentLoss cluster_contrastive_on_latents(const DenseMatrix& latent, const DenseMatrix& prediction,
                                          std::span<const RowRange> clusters, TargetGradient mode) {
  if (latent.rows() != prediction.rows() || latent.cols() != prediction.cols()) {
    throw ShapeError("latent and prediction shapes differ");
  }
  const std::size_t dim = latent.cols();
  LatentLoss out{0.0, DenseMatrix(latent.rows(), dim), DenseMatrix(latent.rows(), dim)};
  if (clusters.empty()) return out;
  for (const auto& c : clusters) {
    if (c.size() < 2) {
      throw ContractError("cluster-contrastive loss needs at least 2 members per cluster, got " +
                          std::to_string(c.size()));
    }
    if (c.end > latent.rows()) throw ShapeError("cluster range exceeds batch rows");
  }

  const double k = static_cast<double>(clusters.size());
  std::vector<double> sum_z(dim);
  std::vector<double> sum_p(dim);
  std::vector<double> others(dim);
  for (const auto& c : clusters) {
    const double members = static_cast<double>(c.size());
    // d(loss)/d(cos_ij) for every ordered pair i != j of this cluster.
    const double pair_weight = -1.0 / (k * members * (members - 1.0));

    DenseMatrix z_sub(c.size(), dim), p_sub(c.size(), dim);
    for (std::size_t r = 0; r < c.size(); ++r) {
      std::ranges::copy(latent.row(c.begin + r), z_sub.row(r).begin());
      std::ranges::copy(prediction.row(c.begin + r), p_sub.row(r).begin());
    }
    const Normalized zn = normalize_rows(z_sub, "latent");
    const Normalized pn = normalize_rows(p_sub, "prediction");

    std::ranges::fill(sum_z, 0.0);
    std::ranges::fill(sum_p, 0.0);
    for (std::size_t r = 0; r < c.size(); ++r) {
      for (std::size_t d = 0; d < dim; ++d) {
        sum_z[d] += zn.unit(r, d);
        sum_p[d] += pn.unit(r, d);
      }
    }

    for (std::size_t i = 0; i < c.size(); ++i) {
      // Sum of unit targets excluding the member itself.
      for (std::size_t d = 0; d < dim; ++d) others[d] = sum_z[d] - zn.unit(i, d);
      const auto p_hat = pn.unit.row(i);
      const double cos_sum = dot(p_hat, others);
      out.value += pair_weight * cos_sum;
      auto g = out.grad_prediction.row(c.begin + i);
      for (std::size_t d = 0; d < dim; ++d) {
        g[d] = pair_weight * (others[d] - cos_sum * p_hat[d]) / pn.norms[i];
      }
    }

    if (mode == TargetGradient::kPropagated) {
      for (std::size_t j = 0; j < c.size(); ++j) {
        for (std::size_t d = 0; d < dim; ++d) others[d] = sum_p[d] - pn.unit(j, d);
        const auto z_hat = zn.unit.row(j);
        const double cos_sum = dot(z_hat, others);
        auto g = out.grad_latent.row(c.begin + j);
        for (std::size_t d = 0; d < dim; ++d) {
          g[d] = pair_weight * (others[d] - cos_sum * z_hat[d]) / zn.norms[j];
        }
      }
    }
  }
  return out;
}

LatentLoss model_contrastive_on_predictions(const DenseMatrix& local_prediction,
                                            const DenseMatrix& global_prediction) {
  if (local_prediction.rows() != global_prediction.rows() ||
      local_prediction.cols() != global_prediction.cols()) {
    throw ShapeError("local and global predictions have different shapes");
  }
  const std::size_t n = local_prediction.rows();
  const std::size_t dim = local_prediction.cols();
  LatentLoss out{0.0, DenseMatrix(n, dim), DenseMatrix()};
  if (n == 0) return out;
  const Normalized local = normalize_rows(local_prediction, "local prediction");
  const Normalized global = normalize_rows(global_prediction, "global prediction");
  const double w = -1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pl = local.unit.row(i);
    const auto pg = global.unit.row(i);
    const double cos = dot(pl, pg);
    out.value += w * cos;
    auto g = out.grad_prediction.row(i);
    for (std::size_t d = 0; d < dim; ++d) g[d] = w * (pg[d] - cos * pl[d]) / local.norms[i];
  }
  return out;
}

ContrastiveResult cluster_contrastive_loss(const SiameseModel& model,
                                           std::span<const ClusterBatch> batches,
                                           TargetGradient mode) {
  ContrastiveResult out;
  DenseMatrix stacked;
  out.clusters = stack_batches(batches, stacked);
  for (const auto& c : out.clusters) {
    if (c.size() < 2) {
      throw ContractError("cluster batch has " + std::to_string(c.size()) +
                          " member(s); at least 2 required");
    }
  }
  out.taps = forward(model, stacked);
  LatentLoss head = cluster_contrastive_on_latents(out.taps.latent, out.taps.prediction,
                                                   out.clusters, mode);
  out.value = head.value;
  out.grad_prediction = std::move(head.grad_prediction);
  out.grad_latent = std::move(head.grad_latent);
  out.grads = backward(model, out.taps,
                       mode == TargetGradient::kStopped ? DenseMatrix() : out.grad_latent,
                       out.grad_prediction);
  return out;
}

RegularizerResult model_contrastive_regularizer(const SiameseModel& local,
                                                const SiameseModel& global_snapshot,
                                                const DenseMatrix& batch) {
  if (local.encoder_spec() != global_snapshot.encoder_spec() ||
      local.predictor_spec() != global_snapshot.predictor_spec()) {
    throw ShapeError("local and global models have different architectures");
  }
  const ForwardTaps taps = forward(local, batch);
  const DenseMatrix global_p = forward_predictor(global_snapshot, forward_encoder(global_snapshot, batch));
  LatentLoss head = model_contrastive_on_predictions(taps.prediction, global_p);
  return {head.value, backward(local, taps, DenseMatrix(), head.grad_prediction)};
}

CombinedResult combined_loss(const SiameseModel& local, const SiameseModel& global_snapshot,
                             std::span<const ClusterBatch> batches, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("lambda must be a finite value >= 0, got " + std::to_string(lambda));
  }
  if (lambda > 0.0 && (local.encoder_spec() != global_snapshot.encoder_spec() ||
                       local.predictor_spec() != global_snapshot.predictor_spec())) {
    throw ShapeError("local and global models have different architectures");
  }
  DenseMatrix stacked;
  const std::vector<RowRange> all_ranges = stack_batches(batches, stacked);
  std::vector<RowRange> defined;
  for (const auto& r : all_ranges) {
    if (r.size() >= 2) defined.push_back(r);
  }

  CombinedResult out;
  const ForwardTaps taps = forward(local, stacked);
  LatentLoss contrast = cluster_contrastive_on_latents(taps.latent, taps.prediction, defined);
  DenseMatrix grad_p = std::move(contrast.grad_prediction);
  out.report.contrastive_term = contrast.value;

  if (lambda > 0.0 && stacked.rows() > 0) {
    const DenseMatrix global_p =
        forward_predictor(global_snapshot, forward_encoder(global_snapshot, stacked));
    LatentLoss reg = model_contrastive_on_predictions(taps.prediction, global_p);
    out.report.regularizer_term = lambda * reg.value;
    axpy(lambda, reg.grad_prediction, grad_p);
  }
  out.report.total = out.report.contrastive_term + out.report.regularizer_term;
  out.grads = backward(local, taps, DenseMatrix(), grad_p);
  return out;
}

}  // namespace fedclust
