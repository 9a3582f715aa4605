#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedclust/contrastive.hpp"
#include "fedclust/datagen.hpp"
#include "fedclust/diffnet.hpp"
#include "fedclust/kmeans.hpp"

namespace fedclust {

enum class Algorithm {
  kCcfc,
  kScfc,
  kCcfcStandalone,
  kScfcStandalone,
  kCcfcNoReg,
  kScfcNoReg,
  kKfed,
};

std::string_view to_string(Algorithm algorithm);
/// Accepts the names printed by to_string ("CCFC", "SCFC_noreg", "KFED", ...).
Algorithm parse_algorithm(std::string_view name);

bool is_cluster_contrastive(Algorithm algorithm);
bool is_standalone(Algorithm algorithm);
bool uses_regularizer(Algorithm algorithm);

struct RunConfig {
  Algorithm algorithm = Algorithm::kCcfc;
  std::size_t k = 10;
  std::size_t rounds = 20;
  std::size_t local_epochs = 2;
  std::size_t batch_max = 16;
  double lambda = 0.1;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double disconnection_rate = 0.0;

  std::vector<std::size_t> encoder_hidden = {128};
  std::size_t latent_dim = 32;
  std::vector<std::size_t> predictor_hidden = {64};
  double augment_strength = 0.5;  // SCFC positive-pair views
  LloydOptions kmeans;

  void validate() const;
  /// Lambda actually applied during local training (0 for the no-reg and
  /// standalone variants).
  double effective_lambda() const;
  MlpSpec encoder_spec(std::size_t input_dim) const;
  MlpSpec predictor_spec() const;
};

/// One simulated device. Holds its own feature rows (never labels).
struct ClientState {
  std::size_t id = 0;
  DenseMatrix features;
  SiameseModel model;
  std::optional<SiameseModel> global_snapshot;  // frozen copy cached at dissemination
  CentroidSet centroids;
  bool connected = true;
};

struct ServerState {
  SiameseModel global_model;
  CentroidSet global_centroids;
  std::size_t round_index = 0;
};

/// Everything a client sends to the server: model parameters, centroids and
/// the sample count used as its aggregation weight. Raw features and labels
/// have no representation here.
struct ClientUpload {
  NetworkParams model;
  CentroidSet centroids;
  std::size_t sample_count = 0;
};

ClientUpload make_upload(const ClientState& client);

/// Copies w^g into every connected client and caches the frozen snapshot.
void disseminate(const ServerState& server, std::span<ClientState> clients);

struct LocalRoundResult {
  LossReport mean_loss;  // averaged over the optimizer steps of the round
  std::size_t steps = 0;
};

/// Local training of one client: label rows by the nearest centroid in the
/// labeling model's latent space, minimize the combined loss for
/// config.local_epochs passes, then mine k centroids with the trained encoder.
/// `labeling_model` also serves as the frozen regularizer anchor.
LocalRoundResult local_round(ClientState& client, const SiameseModel& labeling_model,
                             const CentroidSet& labeling_centroids, const RunConfig& config,
                             std::size_t round);

/// Sample-size weighted mean of the uploaded parameters, summed in upload order.
NetworkParams aggregate_models(std::span<const ClientUpload> uploads);

/// k-means over the stacked uploaded centroids.
CentroidSet aggregate_centroids(std::span<const ClientUpload> uploads, std::size_t k,
                                std::uint64_t seed, const LloydOptions& options = {});

/// floor(rate * m) distinct client ids, ascending.
std::vector<std::size_t> sample_disconnections(std::size_t num_clients, double rate, std::uint64_t seed);

struct RoundRecord {
  std::size_t round = 0;
  std::optional<LossReport> loss;  // absent for k-FED
  std::optional<double> nmi;
  std::optional<double> kappa;
  std::optional<double> ch_score;
};

struct RunResult {
  std::vector<RoundRecord> rounds;
  RoundRecord final_record;
  Assignment final_assignment;  // over every row of the dataset
  // Labels of each client's own rows as produced by the model that client
  // would deploy; empty for disconnected standalone clients.
  std::vector<std::vector<std::size_t>> client_labels;
  std::vector<std::size_t> disconnected;
  std::size_t model_aggregations = 0;
  std::size_t centroid_aggregations = 0;
  SiameseModel global_model;
  CentroidSet global_centroids;
};

struct ExecutionOptions {
  std::size_t threads = 1;
  // Called after every round; used by the CLI for progress lines.
  std::function<void(const RoundRecord&)> on_round;
};

/// Full protocol for every algorithm except k-FED. Labels of `dataset`, when
/// present, are used only to score rounds.
RunResult run(const RunConfig& config, const LabeledDataset& dataset, const FederatedSplit& split,
              const ExecutionOptions& exec = {});

/// k-FED: local k-means on raw features, server k-means over the uploaded
/// centroids, nearest-centroid labels in raw space.
RunResult run_kfed(const RunConfig& config, const LabeledDataset& dataset,
                   const FederatedSplit& split, const ExecutionOptions& exec = {});

/// Dispatches on config.algorithm.
RunResult run_algorithm(const RunConfig& config, const LabeledDataset& dataset,
                        const FederatedSplit& split, const ExecutionOptions& exec = {});

}  // namespace fedclust
