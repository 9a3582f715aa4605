#include "fedclust/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

#include "fedclust/errors.hpp"
#include "fedclust/metrics.hpp"
#include "fedclust/random.hpp"

namespace fedclust {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kTagInit = 1,
  kTagDisconnect = 2,
  kTagLocalTrain = 3,
  kTagLocalKmeans = 4,
  kTagServerKmeans = 5,
};

constexpr std::pair<Algorithm, std::string_view> kAlgorithmNames[] = {
    {Algorithm::kCcfc, "CCFC"},
    {Algorithm::kScfc, "SCFC"},
    {Algorithm::kCcfcStandalone, "CCFC_standalone"},
    {Algorithm::kScfcStandalone, "SCFC_standalone"},
    {Algorithm::kCcfcNoReg, "CCFC_noreg"},
    {Algorithm::kScfcNoReg, "SCFC_noreg"},
    {Algorithm::kKfed, "KFED"},
};

// Runs body(i) for i in [0, count) on up to `threads` workers. The first
// exception thrown by any task is rethrown after all workers finish.
template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

// Sizes of ceil(n / max_size) chunks that differ by at most one.
std::vector<std::size_t> balanced_chunks(std::size_t n, std::size_t max_size) {
  if (n == 0) return {};
  const std::size_t count = (n + max_size - 1) / max_size;
  std::vector<std::size_t> sizes(count, n / count);
  for (std::size_t i = 0; i < n % count; ++i) ++sizes[i];
  return sizes;
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& items, std::size_t max_size) {
  std::vector<std::vector<std::size_t>> out;
  std::size_t offset = 0;
  for (auto size : balanced_chunks(items.size(), max_size)) {
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(offset),
                     items.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
  }
  return out;
}

void validate_split(const LabeledDataset& dataset, const FederatedSplit& split) {
  if (split.num_clients() == 0) throw ConfigError("split has no clients");
  std::vector<bool> seen(dataset.size(), false);
  for (std::size_t l = 0; l < split.num_clients(); ++l) {
    for (auto idx : split.client_indices[l]) {
      if (idx >= dataset.size()) {
        throw ConfigError("client " + std::to_string(l) + " references row " + std::to_string(idx) +
                          " beyond the dataset");
      }
      if (seen[idx]) throw ConfigError("row " + std::to_string(idx) + " is held by two clients");
      seen[idx] = true;
    }
  }
}

RoundRecord score(const LabeledDataset& dataset, std::span<const std::size_t> labels,
                  const DenseMatrix& space, std::size_t round) {
  RoundRecord rec;
  rec.round = round;
  if (!dataset.has_labels()) return rec;
  const auto truth = to_size_labels(dataset.labels);
  rec.nmi = nmi(labels, truth);
  rec.kappa = kappa(labels, truth);
  try {
    rec.ch_score = calinski_harabasz(space, truth);
  } catch (const MetricError&) {
    rec.ch_score.reset();
  }
  return rec;
}

std::vector<ClientState> make_clients(const LabeledDataset& dataset, const FederatedSplit& split,
                                      const std::vector<std::size_t>& disconnected, std::size_t k) {
  std::vector<ClientState> clients(split.num_clients());
  for (std::size_t l = 0; l < clients.size(); ++l) {
    clients[l].id = l;
    clients[l].features = select_rows(dataset.features, split.client_indices[l]);
    clients[l].connected = !std::ranges::binary_search(disconnected, l);
    if (clients[l].connected && clients[l].features.rows() < k) {
      throw SizeError("client " + std::to_string(l) + " holds " +
                      std::to_string(clients[l].features.rows()) + " samples, fewer than k=" +
                      std::to_string(k));
    }
  }
  return clients;
}

std::vector<std::size_t> connected_ids(const std::vector<ClientState>& clients) {
  std::vector<std::size_t> ids;
  for (const auto& c : clients) {
    if (c.connected) ids.push_back(c.id);
  }
  return ids;
}

std::vector<ClientUpload> collect_uploads(const std::vector<ClientState>& clients) {
  std::vector<ClientUpload> uploads;
  for (const auto& c : clients) {
    if (c.connected) uploads.push_back(make_upload(c));
  }
  return uploads;
}

LossReport mean_loss(const std::vector<LocalRoundResult>& results, const std::vector<std::size_t>& ids) {
  LossReport mean;
  for (auto id : ids) {
    mean.contrastive_term += results[id].mean_loss.contrastive_term;
    mean.regularizer_term += results[id].mean_loss.regularizer_term;
  }
  const double count = static_cast<double>(ids.size());
  mean.contrastive_term /= count;
  mean.regularizer_term /= count;
  mean.total = mean.contrastive_term + mean.regularizer_term;
  return mean;
}

struct Labeling {
  std::vector<std::size_t> labels;
  double inertia = 0.0;
  DenseMatrix space;  // representation the labels were computed in
  std::vector<std::vector<std::size_t>> per_client;
};

// Nearest global centroid for every row, in the global latent space.
Labeling label_globally(const LabeledDataset& dataset, const FederatedSplit& split,
                        const SiameseModel& model, const CentroidSet& centroids) {
  Labeling out;
  out.space = forward_encoder(model, dataset.features);
  Assignment a = assign_nearest(out.space, centroids);
  out.labels = std::move(a.labels);
  out.inertia = a.inertia;
  for (const auto& indices : split.client_indices) {
    auto& mine = out.per_client.emplace_back();
    for (auto idx : indices) mine.push_back(out.labels[idx]);
  }
  return out;
}

// Standalone labeling: every client labels its own rows with its own model
// and centroids. Rows held by no connected client fall back to the lowest
// connected client.
Labeling label_standalone(const LabeledDataset& dataset, const FederatedSplit& split,
                          const std::vector<ClientState>& clients) {
  Labeling out;
  const std::size_t n = dataset.size();
  out.labels.assign(n, 0);
  out.per_client.resize(clients.size());
  const auto ids = connected_ids(clients);
  const ClientState& fallback = clients[ids.front()];
  out.space = DenseMatrix(n, fallback.model.latent_dim());
  std::vector<bool> covered(n, false);
  for (auto id : ids) {
    const ClientState& c = clients[id];
    const DenseMatrix z = forward_encoder(c.model, c.features);
    Assignment a = assign_nearest(z, c.centroids);
    out.inertia += a.inertia;
    const auto& local = a.labels;
    out.per_client[id] = local;
    for (std::size_t r = 0; r < local.size(); ++r) {
      const auto idx = split.client_indices[id][r];
      out.labels[idx] = local[r];
      std::ranges::copy(z.row(r), out.space.row(idx).begin());
      covered[idx] = true;
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!covered[i]) rest.push_back(i);
  }
  if (!rest.empty()) {
    const DenseMatrix z = forward_encoder(fallback.model, select_rows(dataset.features, rest));
    const Assignment a = assign_nearest(z, fallback.centroids);
    const auto& labels = a.labels;
    out.inertia += a.inertia;
    for (std::size_t r = 0; r < rest.size(); ++r) {
      out.labels[rest[r]] = labels[r];
      std::ranges::copy(z.row(r), out.space.row(rest[r]).begin());
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Algorithm algorithm) {
  for (const auto& [a, name] : kAlgorithmNames) {
    if (a == algorithm) return name;
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (const auto& [a, known] : kAlgorithmNames) {
    if (known == name) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(name) +
                    "' (expected CCFC, SCFC, CCFC_standalone, SCFC_standalone, CCFC_noreg, "
                    "SCFC_noreg or KFED)");
}

bool is_cluster_contrastive(Algorithm a) {
  return a == Algorithm::kCcfc || a == Algorithm::kCcfcNoReg || a == Algorithm::kCcfcStandalone;
}

bool is_standalone(Algorithm a) {
  return a == Algorithm::kCcfcStandalone || a == Algorithm::kScfcStandalone;
}

bool uses_regularizer(Algorithm a) { return a == Algorithm::kCcfc || a == Algorithm::kScfc; }

void RunConfig::validate() const {
  if (k == 0) throw ConfigError("k must be >= 1");
  if (batch_max < 2) throw ConfigError("batch_max must be >= 2");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (!(disconnection_rate >= 0.0 && disconnection_rate < 1.0)) {
    throw ConfigError("disconnection_rate must lie in [0, 1)");
  }
  if (latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
  if (!(augment_strength >= 0.0)) throw ConfigError("augment_strength must be >= 0");
  if (std::ranges::any_of(encoder_hidden, [](std::size_t d) { return d == 0; }) ||
      std::ranges::any_of(predictor_hidden, [](std::size_t d) { return d == 0; })) {
    throw ConfigError("hidden layer widths must be >= 1");
  }
}

double RunConfig::effective_lambda() const { return uses_regularizer(algorithm) ? lambda : 0.0; }

MlpSpec RunConfig::encoder_spec(std::size_t input_dim) const {
  MlpSpec spec{{input_dim}};
  spec.layer_dims.insert(spec.layer_dims.end(), encoder_hidden.begin(), encoder_hidden.end());
  spec.layer_dims.push_back(latent_dim);
  return spec;
}

MlpSpec RunConfig::predictor_spec() const {
  MlpSpec spec{{latent_dim}};
  spec.layer_dims.insert(spec.layer_dims.end(), predictor_hidden.begin(), predictor_hidden.end());
  spec.layer_dims.push_back(latent_dim);
  return spec;
}

ClientUpload make_upload(const ClientState& client) {
  return {client.model.params, client.centroids, client.features.rows()};
}

void disseminate(const ServerState& server, std::span<ClientState> clients) {
  for (auto& client : clients) {
    if (!client.connected) continue;
    client.model = server.global_model;
    client.global_snapshot = server.global_model;
  }
}

LocalRoundResult local_round(ClientState& client, const SiameseModel& labeling_model,
                             const CentroidSet& labeling_centroids, const RunConfig& config,
                             std::size_t round) {
  if (!client.connected) {
    throw ProtocolError("local_round called on disconnected client " + std::to_string(client.id));
  }
  const double lambda = config.effective_lambda();
  const DenseMatrix& x = client.features;
  const std::size_t n = x.rows();
  Rng rng(derive_seed(config.seed, {kTagLocalTrain, client.id, round}));
  const AdamOptions adam{.lr = config.lr};
  const bool cluster_mode = is_cluster_contrastive(config.algorithm);

  std::vector<std::vector<std::size_t>> groups;
  if (cluster_mode && config.local_epochs > 0) {
    const auto assignment = assign_nearest(forward_encoder(labeling_model, x), labeling_centroids);
    groups.resize(labeling_centroids.k());
    for (std::size_t i = 0; i < n; ++i) groups[assignment.labels[i]].push_back(i);
  }

  LocalRoundResult result;
  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::vector<std::vector<ClusterBatch>> steps;
    if (cluster_mode) {
      std::vector<std::vector<std::vector<std::size_t>>> chunks(groups.size());
      std::size_t step_count = 0;
      for (std::size_t c = 0; c < groups.size(); ++c) {
        auto members = groups[c];
        std::shuffle(members.begin(), members.end(), rng);
        chunks[c] = chunk(members, config.batch_max);
        step_count = std::max(step_count, chunks[c].size());
      }
      steps.resize(step_count);
      for (std::size_t s = 0; s < step_count; ++s) {
        for (std::size_t c = 0; c < groups.size(); ++c) {
          if (s < chunks[c].size()) steps[s].push_back({select_rows(x, chunks[c][s]), c});
        }
      }
    } else {
      // Sample-contrastive: each sample and one augmented view form a pair.
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (const auto& members : chunk(order, config.batch_max)) {
        const DenseMatrix originals = select_rows(x, members);
        const DenseMatrix views = augment(originals, config.augment_strength, rng());
        auto& step = steps.emplace_back();
        for (std::size_t r = 0; r < members.size(); ++r) {
          DenseMatrix pair(2, x.cols());
          std::ranges::copy(originals.row(r), pair.row(0).begin());
          std::ranges::copy(views.row(r), pair.row(1).begin());
          step.push_back({std::move(pair), members[r]});
        }
      }
    }

    for (const auto& batches : steps) {
      const bool any_pair = std::ranges::any_of(batches, [](const ClusterBatch& b) { return b.inputs.rows() >= 2; });
      if (!any_pair && lambda == 0.0) continue;
      const CombinedResult step = combined_loss(client.model, labeling_model, batches, lambda);
      adam_step(client.model, step.grads, adam);
      result.mean_loss.contrastive_term += step.report.contrastive_term;
      result.mean_loss.regularizer_term += step.report.regularizer_term;
      ++result.steps;
    }
  }
  if (result.steps > 0) {
    result.mean_loss.contrastive_term /= static_cast<double>(result.steps);
    result.mean_loss.regularizer_term /= static_cast<double>(result.steps);
  }
  result.mean_loss.total = result.mean_loss.contrastive_term + result.mean_loss.regularizer_term;

  client.centroids = lloyd(forward_encoder(client.model, x), config.k,
                           derive_seed(config.seed, {kTagLocalKmeans, client.id, round}), config.kmeans)
                         .centroids;
  return result;
}

NetworkParams aggregate_models(std::span<const ClientUpload> uploads) {
  if (uploads.empty()) throw ProtocolError("aggregate_models: no connected clients");
  std::size_t total = 0;
  for (const auto& u : uploads) {
    if (!congruent(u.model, uploads.front().model)) {
      throw ProtocolError("aggregate_models: uploaded models have different shapes");
    }
    total += u.sample_count;
  }
  if (total == 0) throw ProtocolError("aggregate_models: connected clients hold no samples");
  NetworkParams out = zeros_like(uploads.front().model);
  auto acc = tensors(out);
  for (const auto& u : uploads) {
    const double w = static_cast<double>(u.sample_count) / static_cast<double>(total);
    const auto src = tensors(u.model);
    for (std::size_t t = 0; t < acc.size(); ++t) {
      for (std::size_t i = 0; i < acc[t].size(); ++i) acc[t][i] += w * src[t][i];
    }
  }
  return out;
}

CentroidSet aggregate_centroids(std::span<const ClientUpload> uploads, std::size_t k,
                                std::uint64_t seed, const LloydOptions& options) {
  if (uploads.empty()) throw ProtocolError("aggregate_centroids: no connected clients");
  std::vector<DenseMatrix> blocks;
  for (const auto& u : uploads) blocks.push_back(u.centroids.centroids);
  const DenseMatrix stacked = stack_rows(blocks);
  if (stacked.rows() < k) {
    throw SizeError("aggregate_centroids: " + std::to_string(stacked.rows()) +
                    " uploaded centroids cannot form k=" + std::to_string(k) + " clusters");
  }
  return lloyd(stacked, k, seed, options).centroids;
}

std::vector<std::size_t> sample_disconnections(std::size_t num_clients, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("disconnection rate must lie in [0, 1)");
  const auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(num_clients)));
  if (num_clients > 0 && count >= num_clients) {
    throw ConfigError("disconnection rate " + std::to_string(rate) + " would drop all " +
                      std::to_string(num_clients) + " clients");
  }
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(count);
  std::ranges::sort(ids);
  return ids;
}

RunResult run(const RunConfig& config, const LabeledDataset& dataset, const FederatedSplit& split,
              const ExecutionOptions& exec) {
  config.validate();
  if (config.algorithm == Algorithm::kKfed) return run_kfed(config, dataset, split, exec);
  validate_split(dataset, split);

  RunResult result;
  result.disconnected = sample_disconnections(split.num_clients(), config.disconnection_rate,
                                              derive_seed(config.seed, {kTagDisconnect}));
  std::vector<ClientState> clients = make_clients(dataset, split, result.disconnected, config.k);
  const auto ids = connected_ids(clients);
  const bool standalone = is_standalone(config.algorithm);

  ServerState server;
  server.global_model = init_model(config.encoder_spec(dataset.dim()), config.predictor_spec(),
                                   derive_seed(config.seed, {kTagInit}));

  // Bootstrap: clients mine centroids on the untrained latent space.
  disseminate(server, clients);
  parallel_for(ids.size(), exec.threads, [&](std::size_t i) {
    ClientState& c = clients[ids[i]];
    c.centroids = lloyd(forward_encoder(c.model, c.features), config.k,
                        derive_seed(config.seed, {kTagLocalKmeans, c.id, 0}), config.kmeans)
                      .centroids;
  });
  if (!standalone) {
    server.global_centroids = aggregate_centroids(collect_uploads(clients), config.k,
                                                  derive_seed(config.seed, {kTagServerKmeans, 0}),
                                                  config.kmeans);
    ++result.centroid_aggregations;
  }

  auto label_now = [&] {
    return standalone ? label_standalone(dataset, split, clients)
                      : label_globally(dataset, split, server.global_model, server.global_centroids);
  };

  std::vector<LocalRoundResult> local(clients.size());
  for (std::size_t round = 1; round <= config.rounds; ++round) {
    server.round_index = round;
    if (!standalone) disseminate(server, clients);
    parallel_for(ids.size(), exec.threads, [&](std::size_t i) {
      ClientState& c = clients[ids[i]];
      if (standalone) {
        const SiameseModel own = c.model;
        const CentroidSet own_centroids = c.centroids;
        local[c.id] = local_round(c, own, own_centroids, config, round);
      } else {
        local[c.id] = local_round(c, *c.global_snapshot, server.global_centroids, config, round);
      }
    });
    if (!standalone) {
      const auto uploads = collect_uploads(clients);
      server.global_model.params = aggregate_models(uploads);
      ++result.model_aggregations;
      server.global_centroids = aggregate_centroids(
          uploads, config.k, derive_seed(config.seed, {kTagServerKmeans, round}), config.kmeans);
      ++result.centroid_aggregations;
    }
    const Labeling labeling = label_now();
    RoundRecord rec = score(dataset, labeling.labels, labeling.space, round);
    rec.loss = mean_loss(local, ids);
    if (exec.on_round) exec.on_round(rec);
    result.rounds.push_back(std::move(rec));
  }

  Labeling labeling = label_now();
  result.final_record = score(dataset, labeling.labels, labeling.space, config.rounds);
  if (!result.rounds.empty()) result.final_record.loss = result.rounds.back().loss;
  result.final_assignment = {std::move(labeling.labels), labeling.inertia};
  result.client_labels = std::move(labeling.per_client);
  result.global_model = std::move(server.global_model);
  result.global_centroids = std::move(server.global_centroids);
  return result;
}

RunResult run_kfed(const RunConfig& config, const LabeledDataset& dataset,
                   const FederatedSplit& split, const ExecutionOptions& exec) {
  config.validate();
  validate_split(dataset, split);
  RunResult result;
  result.disconnected = sample_disconnections(split.num_clients(), config.disconnection_rate,
                                              derive_seed(config.seed, {kTagDisconnect}));
  std::vector<ClientState> clients = make_clients(dataset, split, result.disconnected, config.k);
  const auto ids = connected_ids(clients);
  parallel_for(ids.size(), exec.threads, [&](std::size_t i) {
    ClientState& c = clients[ids[i]];
    c.centroids = lloyd(c.features, config.k, derive_seed(config.seed, {kTagLocalKmeans, c.id, 0}),
                        config.kmeans)
                      .centroids;
  });
  std::vector<ClientUpload> uploads;
  for (auto id : ids) uploads.push_back({NetworkParams{}, clients[id].centroids, clients[id].features.rows()});
  result.global_centroids = aggregate_centroids(uploads, config.k,
                                                derive_seed(config.seed, {kTagServerKmeans, 0}),
                                                config.kmeans);
  ++result.centroid_aggregations;
  result.final_assignment = assign_nearest(dataset.features, result.global_centroids);
  result.final_record = score(dataset, result.final_assignment.labels, dataset.features, 0);
  for (const auto& indices : split.client_indices) {
    auto& mine = result.client_labels.emplace_back();
    for (auto idx : indices) mine.push_back(result.final_assignment.labels[idx]);
  }
  return result;
}

RunResult run_algorithm(const RunConfig& config, const LabeledDataset& dataset,
                        const FederatedSplit& split, const ExecutionOptions& exec) {
  return config.algorithm == Algorithm::kKfed ? run_kfed(config, dataset, split, exec)
                                              : run(config, dataset, split, exec);
}

}  // namespace fedclust
