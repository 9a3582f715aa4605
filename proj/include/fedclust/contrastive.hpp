#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedclust/diffnet.hpp"
#include "fedclust/matrix.hpp"

namespace fedclust {

/// Members of one assigned cluster for a single training step.
struct ClusterBatch {
  DenseMatrix inputs;
  std::size_t cluster_id = 0;
};

struct LossReport {
  double contrastive_term = 0.0;
  double regularizer_term = 0.0;  // already multiplied by lambda
  double total = 0.0;
};

/// Whether the cosine targets z_j are treated as constants. kPropagated
/// exists only to contrast against the stop-gradient objective in tests.
enum class TargetGradient { kStopped, kPropagated };

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Negative mean cosine similarity between one prediction and a set of
/// target latents. Throws NumericError on a zero-norm vector.
double pairwise_cosine_loss(std::span<const double> prediction, const DenseMatrix& targets);

/// Cluster-contrastive objective evaluated on already computed latents z and
/// predictions p. Each range selects the rows of one cluster (size >= 2); the
/// objective is the mean over clusters of the mean over members of the
/// pairwise loss between p_i and every other z_j of the cluster.
struct LatentLoss {
  double value = 0.0;
  DenseMatrix grad_prediction;
  DenseMatrix grad_latent;  // all zeros under TargetGradient::kStopped
};

LatentLoss cluster_contrastive_on_latents(const DenseMatrix& latent, const DenseMatrix& prediction,
                                          std::span<const RowRange> clusters,
                                          TargetGradient mode = TargetGradient::kStopped);

/// Mean over rows of -cos(p_local_i, p_global_i). Gradient is w.r.t. the local
/// predictions only.
LatentLoss model_contrastive_on_predictions(const DenseMatrix& local_prediction,
                                            const DenseMatrix& global_prediction);

struct ContrastiveResult {
  double value = 0.0;
  ForwardTaps taps;  // forward pass over the stacked batch inputs
  std::vector<RowRange> clusters;
  DenseMatrix grad_prediction;
  DenseMatrix grad_latent;
  GradientSet grads;
};

/// Cluster-contrastive loss of a model over per-cluster batches, with the
/// exact parameter gradient. Throws ContractError if any batch has fewer than
/// two members.
ContrastiveResult cluster_contrastive_loss(const SiameseModel& model,
                                           std::span<const ClusterBatch> batches,
                                           TargetGradient mode = TargetGradient::kStopped);

struct RegularizerResult {
  double value = 0.0;
  GradientSet grads;
};

/// Model-contrastive regularizer between a trainable local model and a
/// frozen global snapshot on the same inputs.
RegularizerResult model_contrastive_regularizer(const SiameseModel& local,
                                                const SiameseModel& global_snapshot,
                                                const DenseMatrix& batch);

struct CombinedResult {
  LossReport report;
  GradientSet grads;
};

/// total = contrastive + lambda * regularizer. Batches with a single member are
/// skipped by the contrastive term but still enter the regularizer mean. The
/// global forward pass is skipped when lambda == 0.
CombinedResult combined_loss(const SiameseModel& local, const SiameseModel& global_snapshot,
                             std::span<const ClusterBatch> batches, double lambda);

}  // namespace fedclust
