// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "fedclust/contrastive.hpp"
#include "fedclust/experiment.hpp"
#include "fedclust/federation.hpp"
#include "fedclust/kmeans.hpp"
#include "fedclust/metrics.hpp"
#include "test_support.hpp"

using namespace fedclust;
using fedclust::testing::random_matrix;
using fedclust::testing::random_model;

namespace {

int failures = 0;

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

void gradient_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const MlpSpec enc{{5, 8, 4}}, pred{{4, 6, 4}};
  double worst = 0.0, worst_value = 0.0;
  int instances = 0;
  for (std::size_t k : {1u, 2u, 3u}) {
    for (std::size_t b : {2u, 3u, 5u}) {
      for (double lambda : {0.0, 0.1, 1.0}) {
        Rng rng(1000 + instances);
        const auto local = random_model(enc, pred, 2 * instances + 1);
        const auto global = random_model(enc, pred, 2 * instances + 2);
        std::vector<ClusterBatch> batches;
        for (std::size_t c = 0; c < k; ++c) batches.push_back({random_matrix(b + c % 2, 5, rng), c});
        const auto analytic = combined_loss(local, global, batches, lambda);
        const auto numeric = fedclust::testing::numeric_gradient(local, [&](const SiameseModel& m) {
          return fedclust::testing::frozen_target_loss(m, local, global, batches, lambda);
        });
        worst = std::max(worst, fedclust::testing::max_relative_error(analytic.grads, numeric));
        worst_value = std::max(worst_value, std::abs(analytic.report.total -
                                                     fedclust::testing::frozen_target_loss(local, local, global,
                                                                                           batches, lambda)));
        ++instances;
      }
    }
  }
  const double secs = seconds_since(start);
  report(1, "composite-loss gradient oracle", instances >= 20 && worst < 1e-4 && worst_value < 1e-12 && secs < 30.0,
         std::to_string(instances) + " instances, max relative error " + sci(worst) +
             ", max loss mismatch " + sci(worst_value) + ", " + fmt(secs, 2) + " s");
}

// Exact entropy and MI, and permutation-enumerated kappa, kept apart from the library code.
double oracle_nmi(const std::vector<std::size_t>& p, const std::vector<std::size_t>& t) {
  const double n = static_cast<double>(p.size());
  std::map<std::size_t, double> fp, ft;
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  for (std::size_t i = 0; i < p.size(); ++i) {
    fp[p[i]] += 1;
    ft[t[i]] += 1;
    joint[{p[i], t[i]}] += 1;
  }
  double hp = 0, ht = 0, mi = 0;
  for (auto [_, c] : fp) hp -= c / n * std::log(c / n);
  for (auto [_, c] : ft) ht -= c / n * std::log(c / n);
  for (auto [key, c] : joint) mi += c / n * std::log(c * n / (fp[key.first] * ft[key.second]));
  if (hp == 0 && ht == 0) return 1.0;
  if (hp == 0 || ht == 0) return 0.0;
  return mi / std::sqrt(hp * ht);
}

double oracle_kappa(const std::vector<std::size_t>& p, const std::vector<std::size_t>& t) {
  const std::size_t size = std::max(*std::ranges::max_element(p), *std::ranges::max_element(t)) + 1;
  const double n = static_cast<double>(p.size());
  std::vector<std::size_t> perm(size);
  std::iota(perm.begin(), perm.end(), 0);
  double best_agree = -1, best_chance = 0;
  do {
    double agree = 0, chance = 0;
    for (std::size_t c = 0; c < size; ++c) {
      double rows = 0, cols = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        agree += (p[i] == c && t[i] == perm[c]);
        rows += p[i] == c;
        cols += t[i] == perm[c];
      }
      chance += rows * cols;
    }
    if (agree > best_agree || (agree == best_agree && chance < best_chance)) {
      best_agree = agree;
      best_chance = chance;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double pe = best_chance / (n * n);
  if (pe == 1.0) return best_agree == n ? 1.0 : 0.0;
  return (best_agree / n - pe) / (1.0 - pe);
}

void metric_oracles() {
  Rng rng(2);
  double worst_nmi = 0, worst_kappa = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 50);
    const std::size_t kp = 1 + static_cast<std::size_t>(uniform01(rng) * 4);
    const std::size_t kt = 1 + static_cast<std::size_t>(uniform01(rng) * 4);
    std::vector<std::size_t> p(n), t(n);
    for (auto& v : p) v = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(kp));
    for (auto& v : t) v = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(kt));
    worst_nmi = std::max(worst_nmi, std::abs(nmi(p, t) - oracle_nmi(p, t)));
    worst_kappa = std::max(worst_kappa, std::abs(kappa(p, t) - oracle_kappa(p, t)));
  }
  report(2, "NMI and Kappa against brute-force oracles", worst_nmi < 1e-10 && worst_kappa < 1e-10,
         "200 labelings, max |NMI error| " + sci(worst_nmi) + ", max |Kappa error| " +
             sci(worst_kappa));
}

// Only model parameters, centroids and a sample count can cross the client boundary.
template <typename T>
constexpr bool upload_is_three_fields() {
  if constexpr (!std::is_aggregate_v<T>) {
    return false;
  } else {
    return requires { T{NetworkParams{}, CentroidSet{}, std::size_t{}}; } &&
           !requires { T{NetworkParams{}, CentroidSet{}, std::size_t{}, 0}; };
  }
}

void protocol_exactness() {
  Rng rng(3);
  double worst = 0;
  for (std::size_t m = 1; m <= 10; ++m) {
    std::vector<ClientUpload> ups;
    for (std::size_t l = 0; l < m; ++l) {
      ups.push_back({random_model(MlpSpec{{6, 5, 3}}, MlpSpec{{3, 4, 3}}, 100 * m + l).params, {},
                     1 + static_cast<std::size_t>(uniform01(rng) * 500)});
    }
    const NetworkParams aggregated = aggregate_models(ups);
    const auto agg = tensors(aggregated);
    long double total = 0;
    for (const auto& u : ups) total += u.sample_count;
    for (std::size_t t = 0; t < agg.size(); ++t) {
      for (std::size_t i = 0; i < agg[t].size(); ++i) {
        long double want = 0;
        for (const auto& u : ups) want += u.sample_count * static_cast<long double>(tensors(u.model)[t][i]);
        worst = std::max(worst, std::abs(agg[t][i] - static_cast<double>(want / total)));
      }
    }
  }
  constexpr bool boundary = upload_is_three_fields<ClientUpload>() &&
                            std::is_same_v<decltype(ClientUpload::model), NetworkParams> &&
                            std::is_same_v<decltype(ClientUpload::centroids), CentroidSet> &&
                            std::is_same_v<decltype(ClientUpload::sample_count), std::size_t>;
  report(3, "weighted aggregation and upload boundary", worst < 1e-12 && boundary,
         "1-10 clients, max deviation " + sci(worst) + ", upload fields = {model, centroids, count}: " +
             (boundary ? "yes" : "no"));
}

struct DeskRun {
  double nmi = 0;
  double kappa = 0;
  double client_kappa = 0;  // mean over clients of Kappa on their own rows
};

class DeskFixture {
 public:
  DeskFixture() : data_(load_dataset(source())) {}

  static DatasetSource source() {
    DatasetSource s;
    s.components = 10;
    s.per_component = 500;
    s.dim = 32;
    s.separation = 3.0;
    s.seed = 7;
    return s;
  }

  static RunConfig config(Algorithm algorithm, std::uint64_t seed) {
    RunConfig c;
    c.algorithm = algorithm;
    c.k = 10;
    c.rounds = 20;
    c.seed = seed;
    return c;
  }

  double raw_kmeans_nmi() const {
    return nmi(lloyd(data_.features, 10, 0).assignment.labels, to_size_labels(data_.labels));
  }

  DeskRun run(Algorithm algorithm, double p, std::uint64_t seed, double rate = 0.0) const {
    RunConfig c = config(algorithm, seed);
    c.disconnection_rate = rate;
    const auto split = partition(data_, {10, p, 500, seed});
    ExecutionOptions exec;
    exec.threads = std::max(1u, std::thread::hardware_concurrency());
    const auto r = run_algorithm(c, data_, split, exec);
    DeskRun out{*r.final_record.nmi, *r.final_record.kappa, 0.0};
    std::size_t counted = 0;
    for (std::size_t l = 0; l < split.num_clients(); ++l) {
      if (r.client_labels[l].empty()) continue;
      std::vector<std::size_t> truth;
      for (auto idx : split.client_indices[l]) truth.push_back(data_.labels[idx]);
      out.client_kappa += kappa(r.client_labels[l], truth);
      ++counted;
    }
    out.client_kappa /= static_cast<double>(counted);
    std::cout << "  " << to_string(algorithm) << " p=" << p << " rate=" << rate << " seed=" << seed
              << ": nmi=" << fmt(out.nmi) << " kappa=" << fmt(out.kappa) << " client_kappa=" << fmt(out.client_kappa)
              << std::endl;
    return out;
  }

  std::vector<DeskRun> seeds(Algorithm algorithm, double p, double rate = 0.0) const {
    std::vector<DeskRun> out;
    for (std::uint64_t s = 0; s < 3; ++s) out.push_back(run(algorithm, p, s, rate));
    return out;
  }

 private:
  LabeledDataset data_;
};

std::vector<double> field(const std::vector<DeskRun>& runs, double DeskRun::*member) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.*member);
  return out;
}

void desk_trends() {
  const auto start = std::chrono::steady_clock::now();
  const DeskFixture desk;
  const double raw = desk.raw_kmeans_nmi();
  std::cout << "  desk fixture: 10 x 500 points, dim 32, separation 3.0; raw-space k-means NMI " << fmt(raw)
            << std::endl;

  const auto ccfc = desk.seeds(Algorithm::kCcfc, 0.0);
  const auto kfed = desk.seeds(Algorithm::kKfed, 0.0);
  const double ccfc_nmi = mean(field(ccfc, &DeskRun::nmi));
  const double kfed_nmi = mean(field(kfed, &DeskRun::nmi));
  const double secs4 = seconds_since(start);
  report(4, "CCFC beats k-FED by >= 0.05 NMI at p=0", ccfc_nmi >= kfed_nmi + 0.05 && secs4 < 600.0,
         "CCFC " + fmt(ccfc_nmi) + " vs k-FED " + fmt(kfed_nmi) + " (raw k-means " + fmt(raw) + "), " +
             fmt(secs4, 1) + " s");

  const auto ccfc_p1 = desk.seeds(Algorithm::kCcfc, 1.0);
  const double p1_nmi = mean(field(ccfc_p1, &DeskRun::nmi));
  report(5, "heterogeneity lowers CCFC NMI", ccfc_nmi > p1_nmi,
         "p=0 " + fmt(ccfc_nmi) + " vs p=1 " + fmt(p1_nmi));

  const auto noreg = desk.seeds(Algorithm::kCcfcNoReg, 0.0);
  const auto standalone = desk.seeds(Algorithm::kCcfcStandalone, 0.0);
  const double k_full = mean(field(ccfc, &DeskRun::client_kappa));
  const double k_noreg = mean(field(noreg, &DeskRun::client_kappa));
  const double k_alone = mean(field(standalone, &DeskRun::client_kappa));
  report(6, "ablation Kappa ordering full > no-reg > standalone", k_full > k_noreg && k_noreg > k_alone,
         "mean per-client Kappa " + fmt(k_full) + " / " + fmt(k_noreg) + " / " + fmt(k_alone) +
             " (pooled Kappa " + fmt(mean(field(ccfc, &DeskRun::kappa))) + " / " +
             fmt(mean(field(noreg, &DeskRun::kappa))) + " / " + fmt(mean(field(standalone, &DeskRun::kappa))) + ")");

  const auto dropped = desk.seeds(Algorithm::kCcfc, 0.0, 0.5);
  const double dropped_nmi = mean(field(dropped, &DeskRun::nmi));
  report(9, "graceful degradation at disconnection rate 0.5", std::abs(ccfc_nmi - dropped_nmi) <= 0.25,
         "rate 0 " + fmt(ccfc_nmi) + " vs rate 0.5 " + fmt(dropped_nmi));
}

void collapse_sentinel() {
  const auto data = gaussian_mixture(2, 100, 8, 8.0, 11);
  RunConfig cfg;
  cfg.algorithm = Algorithm::kCcfcNoReg;
  cfg.k = 2;
  cfg.local_epochs = 1;
  cfg.lambda = 0.0;
  cfg.seed = 4;
  ClientState client;
  client.features = data.features;
  client.model = init_model(cfg.encoder_spec(8), cfg.predictor_spec(), 4);
  client.centroids = lloyd(forward_encoder(client.model, client.features), 2, 4).centroids;
  std::size_t steps = 0;
  for (std::size_t round = 1; steps < 200; ++round) {
    const SiameseModel anchor = client.model;
    const CentroidSet centroids = client.centroids;
    steps += local_round(client, anchor, centroids, cfg, round).steps;
  }
  const DenseMatrix z = forward_encoder(client.model, client.features);
  double min_var = std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < z.cols(); ++d) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) mu += z(i, d) / static_cast<double>(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) var += (z(i, d) - mu) * (z(i, d) - mu) / static_cast<double>(z.rows());
    min_var = std::min(min_var, var);
  }
  const auto truth = to_size_labels(data.labels);
  const double latent = nmi(lloyd(z, 2, 0).assignment.labels, truth);
  const double raw = nmi(lloyd(data.features, 2, 0).assignment.labels, truth);
  report(7, "no representation collapse", min_var > 1e-6 && latent >= raw,
         std::to_string(steps) + " steps, min latent variance " + sci(min_var) + ", latent NMI " +
             fmt(latent) + " vs raw " + fmt(raw));
}

double exhaustive_two_means(const DenseMatrix& x) {
  const std::size_t n = x.rows();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
    double cost = 0;
    for (unsigned side = 0; side < 2; ++side) {
      double sx = 0, sy = 0, sxx = 0;
      double count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) != side) continue;
        sx += x(i, 0);
        sy += x(i, 1);
        sxx += x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1);
        ++count;
      }
      cost += sxx - (sx * sx + sy * sy) / count;
    }
    best = std::min(best, cost);
  }
  return best;
}

void kmeans_optimality() {
  int optimal = 0;
  std::size_t checked = 0, monotone = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(5000 + s);
    const auto x = random_matrix(8, 2, rng);
    const auto r = lloyd(x, 2, s, {100, 1e-9, 20});
    if (std::abs(r.assignment.inertia - exhaustive_two_means(x)) <= 1e-9) ++optimal;
    for (std::uint64_t restart = 0; restart < 20; ++restart) {
      const auto single = lloyd(x, 2, s + restart, {100, 0.0, 1});
      for (std::size_t i = 1; i < single.inertia_trace.size(); ++i) {
        ++checked;
        monotone += single.inertia_trace[i] <= single.inertia_trace[i - 1] + 1e-12;
      }
    }
  }
  report(8, "k-means optimal at toy scale", optimal >= 48 && monotone == checked,
         std::to_string(optimal) + "/50 instances optimal, inertia monotone on " + std::to_string(monotone) + "/" +
             std::to_string(checked) + " iterations");
}

void determinism() {
  ExperimentConfig cfg;
  cfg.dataset = DeskFixture::source();
  cfg.run = DeskFixture::config(Algorithm::kCcfc, 0);
  const auto a = rows_to_csv(run_experiment(cfg));
  const auto b = rows_to_csv(run_experiment(cfg));
  report(10, "byte-identical CSV on rerun", a == b, std::to_string(a.size()) + " bytes, identical: " + (a == b ? "yes" : "no"));
}

}  // namespace

int main() {
  try {
    gradient_oracle();
    metric_oracles();
    protocol_exactness();
    desk_trends();
    collapse_sentinel();
    kmeans_optimality();
    determinism();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
