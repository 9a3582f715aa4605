#include <gtest/gtest.h>

#include <cmath>

#include "fedclust/contrastive.hpp"
#include "fedclust/errors.hpp"
#include "test_support.hpp"

using namespace fedclust;
using fedclust::testing::random_matrix;
using fedclust::testing::random_model;

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Term-by-term evaluation of the cluster objective from z and p.
double naive_cluster_loss(const std::vector<DenseMatrix>& z, const std::vector<DenseMatrix>& p) {
  double total = 0.0;
  const double k = static_cast<double>(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) {
    const std::size_t B = z[c].rows();
    for (std::size_t i = 0; i < B; ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < B; ++j) {
        if (j != i) d -= cosine(p[c].row(i), z[c].row(j));
      }
      total += d / static_cast<double>(B - 1) / (k * static_cast<double>(B));
    }
  }
  return total;
}

SiameseModel identity_predictor_model(std::size_t d, std::size_t latent, std::uint64_t seed) {
  auto m = random_model(MlpSpec{{d, 6, latent}}, MlpSpec{{latent, latent}}, seed);
  auto& layer = m.params.predictor.layers[0];
  layer.weight.fill(0.0);
  for (std::size_t i = 0; i < latent; ++i) layer.weight(i, i) = 1.0;
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  return m;
}

std::vector<ClusterBatch> random_batches(const std::vector<std::size_t>& sizes, std::size_t d, Rng& rng) {
  std::vector<ClusterBatch> out;
  for (std::size_t c = 0; c < sizes.size(); ++c) out.push_back({random_matrix(sizes[c], d, rng), c});
  return out;
}

}  // namespace

TEST(PairwiseCosine, IdenticalDirectionsGiveMinusOne) {
  const DenseMatrix z{{2.0, 1.0}, {4.0, 2.0}, {0.2, 0.1}};
  const std::vector<double> p{1.0, 0.5};
  EXPECT_NEAR(pairwise_cosine_loss(p, z), -1.0, 1e-15);
}

TEST(PairwiseCosine, OrthogonalGivesZero) {
  const DenseMatrix z{{0.0, 3.0}, {0.0, -1.0}};
  const std::vector<double> p{2.0, 0.0};
  EXPECT_EQ(pairwise_cosine_loss(p, z), 0.0);
}

TEST(PairwiseCosine, HandExample) {
  const DenseMatrix z{{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}};
  const std::vector<double> p{1.0, 0.0};
  EXPECT_NEAR(pairwise_cosine_loss(p, z), 0.0, 1e-15);
}

TEST(PairwiseCosine, ZeroNormIsNumericError) {
  const std::vector<double> zero{0.0, 0.0};
  const std::vector<double> p{1.0, 0.0};
  EXPECT_THROW(pairwise_cosine_loss(zero, DenseMatrix{{1.0, 0.0}}), NumericError);
  EXPECT_THROW(pairwise_cosine_loss(p, DenseMatrix{{0.0, 0.0}}), NumericError);
}

TEST(ClusterContrastive, AlignedSingleClusterGivesMinusOne) {
  const DenseMatrix z{{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}};
  const std::vector<RowRange> ranges{{0, 3}};
  EXPECT_NEAR(cluster_contrastive_on_latents(z, z, ranges).value, -1.0, 1e-15);
}

TEST(ClusterContrastive, PredictionsOrthogonalToTargetsGiveZero) {
  const DenseMatrix z{{1.0, 0.0}, {2.0, 0.0}, {0.0, 1.0}, {0.0, 3.0}};
  const DenseMatrix p{{0.0, 1.0}, {0.0, 2.0}, {1.0, 0.0}, {5.0, 0.0}};
  const std::vector<RowRange> ranges{{0, 2}, {2, 4}};
  EXPECT_EQ(cluster_contrastive_on_latents(z, p, ranges).value, 0.0);
}

TEST(ClusterContrastive, MatchesTermByTermOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto m = identity_predictor_model(4, 3, seed);
    const auto batches = random_batches({3, 3}, 4, rng);
    const auto r = cluster_contrastive_loss(m, batches);
    std::vector<DenseMatrix> z, p;
    for (const auto& b : batches) {
      z.push_back(forward_encoder(m, b.inputs));
      p.push_back(z.back());
    }
    EXPECT_NEAR(r.value, naive_cluster_loss(z, p), 1e-12);
    EXPECT_GE(r.value, -1.0);
    EXPECT_LE(r.value, 1.0);
  }
}

TEST(ClusterContrastive, UnequalBatchSizesMatchOracle) {
  Rng rng(17);
  const auto m = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 17);
  const auto batches = random_batches({2, 5, 3}, 4, rng);
  const auto r = cluster_contrastive_loss(m, batches);
  std::vector<DenseMatrix> z, p;
  for (const auto& b : batches) {
    const auto t = forward(m, b.inputs);
    z.push_back(t.latent);
    p.push_back(t.prediction);
  }
  EXPECT_NEAR(r.value, naive_cluster_loss(z, p), 1e-12);
}

TEST(ClusterContrastive, SingletonBatchIsContractError) {
  Rng rng(1);
  const auto m = random_model(MlpSpec{{4, 3}}, MlpSpec{{3, 3}}, 1);
  const auto batches = random_batches({3, 1}, 4, rng);
  EXPECT_THROW(cluster_contrastive_loss(m, batches), ContractError);
}

TEST(ClusterContrastive, ScaleInvariance) {
  Rng rng(2);
  const auto z = random_matrix(5, 3, rng);
  const auto p = random_matrix(5, 3, rng);
  const std::vector<RowRange> ranges{{0, 2}, {2, 5}};
  const double base = cluster_contrastive_on_latents(z, p, ranges).value;
  DenseMatrix z2 = z, p2 = p;
  for (double& v : z2.row(1)) v *= 7.5;
  for (double& v : p2.row(3)) v *= 0.01;
  EXPECT_NEAR(cluster_contrastive_on_latents(z2, p2, ranges).value, base, 1e-12);
}

TEST(ClusterContrastive, StopGradientLeavesTargetsWithoutGradient) {
  Rng rng(3);
  const auto z = random_matrix(5, 3, rng);
  const auto p = random_matrix(5, 3, rng);
  const std::vector<RowRange> ranges{{0, 5}};
  const auto stopped = cluster_contrastive_on_latents(z, p, ranges, TargetGradient::kStopped);
  for (double v : stopped.grad_latent.values()) EXPECT_EQ(v, 0.0);

  // The propagated variant's z-gradient matches finite differences of the value in z.
  const auto full = cluster_contrastive_on_latents(z, p, ranges, TargetGradient::kPropagated);
  DenseMatrix zz = z;
  for (std::size_t i = 0; i < zz.size(); ++i) {
    const double saved = zz.values()[i];
    zz.values()[i] = saved + 1e-6;
    const double up = cluster_contrastive_on_latents(zz, p, ranges).value;
    zz.values()[i] = saved - 1e-6;
    const double down = cluster_contrastive_on_latents(zz, p, ranges).value;
    zz.values()[i] = saved;
    EXPECT_NEAR(full.grad_latent.values()[i], (up - down) / 2e-6, 1e-7);
  }

  // Perturbing a target changes the value even though it receives no gradient.
  DenseMatrix moved = z;
  moved(1, 0) += 0.5;
  EXPECT_NE(cluster_contrastive_on_latents(moved, p, ranges).value, stopped.value);
}

TEST(ClusterContrastive, StoppedAndPropagatedParameterGradientsDiffer) {
  Rng rng(4);
  const auto m = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 4);
  const auto batches = random_batches({3, 4}, 4, rng);
  const auto stopped = cluster_contrastive_loss(m, batches, TargetGradient::kStopped);
  const auto full = cluster_contrastive_loss(m, batches, TargetGradient::kPropagated);
  EXPECT_EQ(stopped.value, full.value);
  EXPECT_GT(fedclust::testing::max_relative_error(stopped.grads, full.grads), 1e-3);
}

TEST(ClusterContrastive, ParameterGradientMatchesFiniteDifferencesWhenPropagated) {
  Rng rng(5);
  const auto m = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 5);
  const auto batches = random_batches({3, 2}, 4, rng);
  const auto full = cluster_contrastive_loss(m, batches, TargetGradient::kPropagated);
  const auto numeric = fedclust::testing::numeric_gradient(
      m, [&](const SiameseModel& mm) { return cluster_contrastive_loss(mm, batches).value; });
  EXPECT_LT(fedclust::testing::max_relative_error(full.grads, numeric), 1e-4);
}

TEST(Regularizer, IdenticalModelsGiveMinusOne) {
  Rng rng(6);
  const auto m = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 6);
  EXPECT_NEAR(model_contrastive_regularizer(m, m, random_matrix(5, 4, rng)).value, -1.0, 1e-12);
}

TEST(Regularizer, OrthogonalPredictionsGiveZero) {
  const DenseMatrix local{{1.0, 0.0}, {0.0, 2.0}};
  const DenseMatrix global{{0.0, 3.0}, {-1.0, 0.0}};
  EXPECT_EQ(model_contrastive_on_predictions(local, global).value, 0.0);
}

TEST(Regularizer, MatchesPerSampleCosineOracle) {
  Rng rng(7);
  const auto local = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 7);
  const auto global = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 8);
  const auto x = random_matrix(5, 4, rng);
  const auto pl = forward(local, x).prediction;
  const auto pg = forward(global, x).prediction;
  double oracle = 0.0;
  for (std::size_t i = 0; i < 5; ++i) oracle -= cosine(pl.row(i), pg.row(i)) / 5.0;
  EXPECT_NEAR(model_contrastive_regularizer(local, global, x).value, oracle, 1e-12);
}

TEST(Regularizer, GradientFlowsThroughLocalOnly) {
  Rng rng(8);
  const auto local = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 9);
  const auto global = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 10);
  const auto x = random_matrix(4, 4, rng);
  const auto r = model_contrastive_regularizer(local, global, x);
  const auto numeric = fedclust::testing::numeric_gradient(
      local, [&](const SiameseModel& mm) { return model_contrastive_regularizer(mm, global, x).value; });
  EXPECT_LT(fedclust::testing::max_relative_error(r.grads, numeric), 1e-4);
}

TEST(Regularizer, ArchitectureMismatchIsShapeError) {
  Rng rng(9);
  const auto a = init_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 3}}, 0);
  const auto b = init_model(MlpSpec{{4, 3}}, MlpSpec{{3, 3}}, 0);
  EXPECT_THROW(model_contrastive_regularizer(a, b, random_matrix(2, 4, rng)), ShapeError);
}

TEST(CombinedLoss, LambdaZeroEqualsContrastiveAlone) {
  Rng rng(10);
  const auto local = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 11);
  const auto global = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 12);
  const auto batches = random_batches({3, 4}, 4, rng);
  const auto combined = combined_loss(local, global, batches, 0.0);
  const auto alone = cluster_contrastive_loss(local, batches);
  EXPECT_EQ(combined.report.total, combined.report.contrastive_term);
  EXPECT_EQ(combined.report.regularizer_term, 0.0);
  EXPECT_EQ(combined.report.contrastive_term, alone.value);
  EXPECT_EQ(static_cast<const NetworkParams&>(combined.grads), static_cast<const NetworkParams&>(alone.grads));
}

TEST(CombinedLoss, SaturatedHeadsGiveMinusOneMinusLambda) {
  // Encoder maps every input to the same direction and the predictor is the identity.
  auto m = init_model(MlpSpec{{2, 2}}, MlpSpec{{2, 2}}, 0);
  m.params.encoder.layers[0].weight = DenseMatrix{{0.0, 0.0}, {0.0, 0.0}};
  m.params.encoder.layers[0].bias = {1.0, 1.0};
  m.params.predictor.layers[0].weight = DenseMatrix{{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<ClusterBatch> batches{{DenseMatrix{{1.0, 2.0}, {3.0, 4.0}}, 0},
                                          {DenseMatrix{{-1.0, 0.0}, {5.0, 1.0}, {0.0, 0.0}}, 1}};
  const auto r = combined_loss(m, m, batches, 0.3);
  EXPECT_NEAR(r.report.contrastive_term, -1.0, 1e-15);
  EXPECT_NEAR(r.report.regularizer_term, -0.3, 1e-15);
  EXPECT_NEAR(r.report.total, -1.3, 1e-15);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferencesOfTotal) {
  for (double lambda : {0.0, 0.1, 1.0}) {
    Rng rng(20);
    const auto local = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 21);
    const auto global = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 22);
    const auto batches = random_batches({2, 3, 5}, 4, rng);
    const auto r = combined_loss(local, global, batches, lambda);
    EXPECT_DOUBLE_EQ(r.report.total, r.report.contrastive_term + r.report.regularizer_term);
    EXPECT_NEAR(fedclust::testing::frozen_target_loss(local, local, global, batches, lambda), r.report.total, 1e-12);
    const auto numeric = fedclust::testing::numeric_gradient(local, [&](const SiameseModel& mm) {
      return fedclust::testing::frozen_target_loss(mm, local, global, batches, lambda);
    });
    EXPECT_LT(fedclust::testing::max_relative_error(r.grads, numeric), 1e-4) << "lambda " << lambda;
  }
}

TEST(CombinedLoss, SingletonClustersOnlyFeedTheRegularizer) {
  Rng rng(30);
  const auto local = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 31);
  const auto global = random_model(MlpSpec{{4, 6, 3}}, MlpSpec{{3, 5, 3}}, 32);
  const auto batches = random_batches({3, 1}, 4, rng);
  const auto r = combined_loss(local, global, batches, 1.0);
  const std::vector<ClusterBatch> pair_only{batches[0]};
  EXPECT_NEAR(r.report.contrastive_term, cluster_contrastive_loss(local, pair_only).value, 1e-15);
  const auto all_rows = stack_rows(std::vector<DenseMatrix>{batches[0].inputs, batches[1].inputs});
  EXPECT_NEAR(r.report.regularizer_term, model_contrastive_regularizer(local, global, all_rows).value, 1e-15);
}

TEST(CombinedLoss, NegativeLambdaIsConfigError) {
  Rng rng(40);
  const auto m = random_model(MlpSpec{{4, 3}}, MlpSpec{{3, 3}}, 40);
  const auto batches = random_batches({2}, 4, rng);
  EXPECT_THROW(combined_loss(m, m, batches, -0.1), ConfigError);
}
