#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedclust/datagen.hpp"
#include "fedclust/federation.hpp"
#include "json.hpp"

namespace fedclust {

struct DatasetSource {
  enum class Kind { kSynthetic, kFvd, kCsv };
  Kind kind = Kind::kSynthetic;
  std::string path;  // fvd / csv
  // synthetic mixture
  std::size_t components = 10;
  std::size_t per_component = 500;
  std::size_t dim = 32;
  double separation = 3.0;
  std::uint64_t seed = 7;
};

enum class SweepAxis { kNone, kHeterogeneity, kLambda, kDisconnectionRate };

struct ExperimentConfig {
  DatasetSource dataset;
  double heterogeneity = 0.0;
  std::optional<std::size_t> num_clients;         // default: number of classes
  std::optional<std::size_t> samples_per_client;  // default: n / num_clients
  std::optional<std::size_t> k;                   // default: number of classes
  RunConfig run;
  SweepAxis sweep_axis = SweepAxis::kNone;
  std::vector<double> sweep_values;
  std::size_t repeats = 1;
  std::string output = "results";
};

/// Strict parse: unknown keys, wrong types and out-of-range values throw
/// ConfigError naming the key. Missing keys take their defaults.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config_file(const std::filesystem::path& path,
                                   const std::vector<std::string>& overrides = {});

/// Applies "section.key=value"; the value is read as JSON when it parses,
/// otherwise as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Effective configuration with every default written out.
nlohmann::json to_json(const ExperimentConfig& config);

LabeledDataset load_dataset(const DatasetSource& source);

struct ResultRow {
  std::string algorithm;
  double p = 0.0;
  double lambda = 0.0;
  double disconnection_rate = 0.0;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::optional<double> loss_total;
  std::optional<double> loss_contrastive;
  std::optional<double> loss_regularizer;
  std::optional<double> nmi;
  std::optional<double> kappa;
  std::optional<double> ch_score;
  bool final = false;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// Runs the sweep x repeats grid. Rows are ordered by grid position, then
/// round; each run ends with a row flagged final. Per-round progress goes to
/// `log` when given.
std::vector<ResultRow> run_experiment(const ExperimentConfig& config, const ExecutionOptions& exec = {},
                                      std::ostream* log = nullptr);

std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_csv(std::string_view text);
nlohmann::json rows_to_json(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_json(const nlohmann::json& rows);

/// Writes results.csv and results.json (rows plus effective config) into
/// `dir`. Refuses to replace existing results unless `overwrite` is set.
void write_results(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const std::vector<ResultRow>& rows, bool overwrite);

struct SummaryRow {
  std::string algorithm;
  double p = 0.0;
  double lambda = 0.0;
  double disconnection_rate = 0.0;
  std::size_t runs = 0;
  double nmi_mean = 0.0;
  double nmi_std = 0.0;
  double kappa_mean = 0.0;
  double kappa_std = 0.0;
};

/// Mean and population standard deviation of the final nmi/kappa per grid
/// cell, ordered by (algorithm, p, lambda, disconnection_rate).
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);
std::vector<SummaryRow> summarize_csv(const std::filesystem::path& csv_path);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

std::string format_number(double v);

}  // namespace fedclust
