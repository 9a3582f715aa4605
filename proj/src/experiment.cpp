#include "fedclust/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "fedclust/errors.hpp"

namespace fedclust {

using nlohmann::json;

namespace {

constexpr std::string_view kCsvHeader =
    "algorithm,p,lambda,disconnection_rate,seed,round,loss_total,loss_contrastive,"
    "loss_regularizer,nmi,kappa,ch_score,final";

constexpr std::string_view kSummaryHeader =
    "algorithm,p,lambda,disconnection_rate,runs,nmi_mean,nmi_std,kappa_mean,kappa_std";

bool is_non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Typed, strict view over one JSON object of the config.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key) && !node_.at(key).is_null();
  }

  double real(const std::string& key, double fallback, double lo, double hi, bool hi_open = false) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number()) throw type_error(key, "a number");
    const double x = v.get<double>();
    if (!(x >= lo) || (hi_open ? !(x < hi) : !(x <= hi)) || !std::isfinite(x)) {
      throw ConfigError("'" + name(key) + "' = " + v.dump() + " is out of range [" + format_number(lo) +
                        ", " + format_number(hi) + (hi_open ? ")" : "]"));
    }
    return x;
  }

  std::size_t count(const std::string& key, std::size_t fallback, std::size_t lo = 0) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!is_non_negative_integer(v)) throw type_error(key, "a non-negative integer");
    const auto x = v.get<std::uint64_t>();
    if (x < lo) throw ConfigError("'" + name(key) + "' must be >= " + std::to_string(lo));
    return static_cast<std::size_t>(x);
  }

  std::optional<std::size_t> optional_count(const std::string& key, std::size_t lo = 1) {
    if (!has(key)) return std::nullopt;
    return count(key, 0, lo);
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!is_non_negative_integer(v)) throw type_error(key, "a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::string text(const std::string& key, std::string fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_string()) throw type_error(key, "a string");
    return v.get<std::string>();
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_array()) throw type_error(key, "an array of positive integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!is_non_negative_integer(e) || e.get<std::uint64_t>() == 0) {
        throw type_error(key, "an array of positive integers");
      }
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<double> reals(const std::string& key) {
    if (!has(key)) return {};
    const json& v = node_.at(key);
    if (!v.is_array()) throw type_error(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw type_error(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown key '" + name(key) + "'");
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  ConfigError type_error(const std::string& key, const std::string& expected) const {
    return ConfigError("'" + name(key) + "' must be " + expected + ", got " + node_.at(key).dump());
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr std::pair<SweepAxis, std::string_view> kAxisNames[] = {
    {SweepAxis::kNone, "none"},
    {SweepAxis::kHeterogeneity, "p"},
    {SweepAxis::kLambda, "lambda"},
    {SweepAxis::kDisconnectionRate, "disconnection_rate"},
};

std::string_view axis_name(SweepAxis axis) {
  for (auto [a, n] : kAxisNames) {
    if (a == axis) return n;
  }
  return "none";
}

SweepAxis parse_axis(const std::string& name) {
  for (auto [a, n] : kAxisNames) {
    if (n == name) return a;
  }
  throw ConfigError("'sweep.axis' must be one of none, p, lambda, disconnection_rate; got '" + name + "'");
}

json optional_to_json(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string field(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_real(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("results CSV line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_unsigned(std::string_view s, std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("results CSV line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
  }
  return v;
}

std::optional<double> parse_optional(std::string_view s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  return parse_real(s, line);
}

std::optional<double> optional_from_json(const json& row, const char* key) {
  const json& v = row.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like key=value");
  }
  const auto path = split(assignment.substr(0, eq), '.');
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const std::string key(path[i]);
    if (key == "dataset" && node == &doc && doc.contains("dataset") && doc["dataset"].is_string()) {
      doc["dataset"] = json{{"source", "synthetic"}};
    }
    json& child = (*node)[key];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override path '" + key + "' is not an object");
    node = &child;
  }
  (*node)[std::string(path.back())] = value;
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");

  if (root.has("dataset")) {
    const json& ds = doc.at("dataset");
    if (ds.is_string()) {
      if (ds.get<std::string>() != "synthetic-default") {
        throw ConfigError("'dataset' string form must be \"synthetic-default\"");
      }
    } else {
      Section s(ds, "dataset");
      const std::string source = s.text("source", "synthetic");
      if (source == "synthetic") {
        cfg.dataset.kind = DatasetSource::Kind::kSynthetic;
      } else if (source == "fvd") {
        cfg.dataset.kind = DatasetSource::Kind::kFvd;
      } else if (source == "csv") {
        cfg.dataset.kind = DatasetSource::Kind::kCsv;
      } else {
        throw ConfigError("'dataset.source' must be synthetic, fvd or csv; got '" + source + "'");
      }
      cfg.dataset.path = s.text("path", "");
      if (cfg.dataset.kind != DatasetSource::Kind::kSynthetic && cfg.dataset.path.empty()) {
        throw ConfigError("'dataset.path' is required for source '" + source + "'");
      }
      cfg.dataset.components = s.count("components", cfg.dataset.components, 1);
      cfg.dataset.per_component = s.count("per_component", cfg.dataset.per_component, 1);
      cfg.dataset.dim = s.count("dim", cfg.dataset.dim, 1);
      cfg.dataset.separation = s.real("separation", cfg.dataset.separation, 0.0, 1e6);
      cfg.dataset.seed = s.seed("seed", cfg.dataset.seed);
      s.finish();
    }
  }

  if (root.has("partition")) {
    Section s(doc.at("partition"), "partition");
    cfg.heterogeneity = s.real("heterogeneity", cfg.heterogeneity, 0.0, 1.0);
    cfg.num_clients = s.optional_count("num_clients");
    cfg.samples_per_client = s.optional_count("samples_per_client");
    s.finish();
  }

  if (root.has("run")) {
    Section s(doc.at("run"), "run");
    RunConfig& r = cfg.run;
    if (s.has("algorithm")) r.algorithm = parse_algorithm(s.text("algorithm", "CCFC"));
    cfg.k = s.optional_count("k");
    r.rounds = s.count("rounds", r.rounds);
    r.local_epochs = s.count("local_epochs", r.local_epochs);
    r.batch_max = s.count("batch_max", r.batch_max, 2);
    r.lambda = s.real("lambda", r.lambda, 0.0, 1e6);
    r.lr = s.real("lr", r.lr, 1e-12, 10.0);
    r.seed = s.seed("seed", r.seed);
    r.disconnection_rate = s.real("disconnection_rate", r.disconnection_rate, 0.0, 1.0, true);
    r.encoder_hidden = s.counts("encoder_hidden", r.encoder_hidden);
    r.latent_dim = s.count("latent_dim", r.latent_dim, 1);
    r.predictor_hidden = s.counts("predictor_hidden", r.predictor_hidden);
    r.augment_strength = s.real("augment_strength", r.augment_strength, 0.0, 1e3);
    r.kmeans.restarts = s.count("kmeans_restarts", r.kmeans.restarts, 1);
    r.kmeans.max_iters = s.count("kmeans_max_iters", r.kmeans.max_iters, 1);
    r.kmeans.tol = s.real("kmeans_tol", r.kmeans.tol, 0.0, 1e6);
    s.finish();
  }

  if (root.has("sweep")) {
    Section s(doc.at("sweep"), "sweep");
    cfg.sweep_axis = parse_axis(s.text("axis", "none"));
    cfg.sweep_values = s.reals("values");
    s.finish();
    if (cfg.sweep_axis != SweepAxis::kNone && cfg.sweep_values.empty()) {
      throw ConfigError("'sweep.values' must be a non-empty list when sweeping '" +
                        std::string(axis_name(cfg.sweep_axis)) + "'");
    }
    for (double v : cfg.sweep_values) {
      const bool ok = cfg.sweep_axis == SweepAxis::kHeterogeneity        ? (v >= 0.0 && v <= 1.0)
                      : cfg.sweep_axis == SweepAxis::kLambda             ? v >= 0.0
                      : cfg.sweep_axis == SweepAxis::kDisconnectionRate ? (v >= 0.0 && v < 1.0)
                                                                          : true;
      if (!ok || !std::isfinite(v)) {
        throw ConfigError("'sweep.values' entry " + format_number(v) + " is out of range for axis '" +
                          std::string(axis_name(cfg.sweep_axis)) + "'");
      }
    }
    if (cfg.sweep_axis == SweepAxis::kNone) cfg.sweep_values.clear();
  }

  cfg.repeats = root.count("repeats", cfg.repeats, 1);
  cfg.output = root.text("output", cfg.output);
  root.finish();
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path,
                                   const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
  json ds;
  switch (c.dataset.kind) {
    case DatasetSource::Kind::kSynthetic:
      ds = {{"source", "synthetic"},
            {"components", c.dataset.components},
            {"per_component", c.dataset.per_component},
            {"dim", c.dataset.dim},
            {"separation", c.dataset.separation},
            {"seed", c.dataset.seed}};
      break;
    case DatasetSource::Kind::kFvd:
      ds = {{"source", "fvd"}, {"path", c.dataset.path}};
      break;
    case DatasetSource::Kind::kCsv:
      ds = {{"source", "csv"}, {"path", c.dataset.path}};
      break;
  }
  const RunConfig& r = c.run;
  return {
      {"dataset", ds},
      {"partition",
       {{"heterogeneity", c.heterogeneity},
        {"num_clients", optional_to_json(c.num_clients)},
        {"samples_per_client", optional_to_json(c.samples_per_client)}}},
      {"run",
       {{"algorithm", std::string(to_string(r.algorithm))},
        {"k", optional_to_json(c.k)},
        {"rounds", r.rounds},
        {"local_epochs", r.local_epochs},
        {"batch_max", r.batch_max},
        {"lambda", r.lambda},
        {"lr", r.lr},
        {"seed", r.seed},
        {"disconnection_rate", r.disconnection_rate},
        {"encoder_hidden", r.encoder_hidden},
        {"latent_dim", r.latent_dim},
        {"predictor_hidden", r.predictor_hidden},
        {"augment_strength", r.augment_strength},
        {"kmeans_restarts", r.kmeans.restarts},
        {"kmeans_max_iters", r.kmeans.max_iters},
        {"kmeans_tol", r.kmeans.tol}}},
      {"sweep", {{"axis", std::string(axis_name(c.sweep_axis))}, {"values", c.sweep_values}}},
      {"repeats", c.repeats},
      {"output", c.output},
  };
}

LabeledDataset load_dataset(const DatasetSource& source) {
  switch (source.kind) {
    case DatasetSource::Kind::kFvd:
      return load_fvd(source.path);
    case DatasetSource::Kind::kCsv:
      return load_csv(source.path);
    case DatasetSource::Kind::kSynthetic:
      break;
  }
  return gaussian_mixture(source.components, source.per_component, source.dim, source.separation,
                          source.seed);
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config, const ExecutionOptions& exec,
                                      std::ostream* log) {
  const LabeledDataset dataset = load_dataset(config.dataset);
  const std::size_t classes = std::max<std::size_t>(1, dataset.num_classes());
  const std::size_t m = config.num_clients.value_or(classes);
  const std::size_t s = config.samples_per_client.value_or(dataset.size() / m);

  std::vector<std::optional<double>> cells;
  if (config.sweep_axis == SweepAxis::kNone) {
    cells.push_back(std::nullopt);
  } else {
    for (double v : config.sweep_values) cells.emplace_back(v);
  }

  std::vector<ResultRow> rows;
  for (const auto& cell : cells) {
    for (std::size_t rep = 0; rep < config.repeats; ++rep) {
      RunConfig rc = config.run;
      rc.k = config.k.value_or(classes);
      rc.seed = config.run.seed + rep;
      double p = config.heterogeneity;
      if (cell) {
        switch (config.sweep_axis) {
          case SweepAxis::kHeterogeneity: p = *cell; break;
          case SweepAxis::kLambda: rc.lambda = *cell; break;
          case SweepAxis::kDisconnectionRate: rc.disconnection_rate = *cell; break;
          case SweepAxis::kNone: break;
        }
      }
      const std::string coords = std::string(to_string(rc.algorithm)) + " p=" + format_number(p) +
                                 " lambda=" + format_number(rc.lambda) +
                                 " disconnection_rate=" + format_number(rc.disconnection_rate) +
                                 " seed=" + std::to_string(rc.seed);
      auto base_row = [&] {
        ResultRow row;
        row.algorithm = std::string(to_string(rc.algorithm));
        row.p = p;
        row.lambda = rc.lambda;
        row.disconnection_rate = rc.disconnection_rate;
        row.seed = rc.seed;
        return row;
      };
      auto to_row = [&](const RoundRecord& rec, bool final) {
        ResultRow row = base_row();
        row.round = rec.round;
        if (rec.loss) {
          row.loss_total = rec.loss->total;
          row.loss_contrastive = rec.loss->contrastive_term;
          row.loss_regularizer = rec.loss->regularizer_term;
        }
        row.nmi = rec.nmi;
        row.kappa = rec.kappa;
        row.ch_score = rec.ch_score;
        row.final = final;
        return row;
      };

      ExecutionOptions run_exec = exec;
      run_exec.on_round = [&](const RoundRecord& rec) {
        if (log) {
          *log << "[" << coords << "] round " << rec.round << "/" << rc.rounds;
          if (rec.loss) *log << " loss=" << format_number(rec.loss->total);
          if (rec.nmi) *log << " nmi=" << format_number(*rec.nmi);
          *log << '\n';
        }
        if (exec.on_round) exec.on_round(rec);
      };

      RunResult result;
      try {
        const FederatedSplit split = partition(dataset, {m, p, s, rc.seed});
        result = run_algorithm(rc, dataset, split, run_exec);
      } catch (const ConfigError& e) {
        throw ConfigError("[" + coords + "] " + e.what());
      } catch (const Error& e) {
        throw Error("[" + coords + "] " + e.what());
      }
      for (const auto& rec : result.rounds) rows.push_back(to_row(rec, false));
      rows.push_back(to_row(result.final_record, true));
      if (log) {
        *log << "[" << coords << "] final nmi=" << field(result.final_record.nmi)
             << " kappa=" << field(result.final_record.kappa) << '\n';
      }
    }
  }
  return rows;
}

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.algorithm << ',' << format_number(r.p) << ',' << format_number(r.lambda) << ','
        << format_number(r.disconnection_rate) << ',' << r.seed << ',' << r.round << ','
        << field(r.loss_total) << ',' << field(r.loss_contrastive) << ',' << field(r.loss_regularizer)
        << ',' << field(r.nmi) << ',' << field(r.kappa) << ',' << field(r.ch_score) << ','
        << (r.final ? "true" : "false") << '\n';
  }
  return out.str();
}

std::vector<ResultRow> rows_from_csv(std::string_view text) {
  std::vector<ResultRow> rows;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kCsvHeader) {
        throw FormatError("results CSV header does not match the expected schema: '" + std::string(line) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 13) {
      throw FormatError("results CSV line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                        " fields, expected 13");
    }
    ResultRow r;
    r.algorithm = std::string(f[0]);
    r.p = parse_real(f[1], line_no);
    r.lambda = parse_real(f[2], line_no);
    r.disconnection_rate = parse_real(f[3], line_no);
    r.seed = parse_unsigned(f[4], line_no);
    r.round = static_cast<std::size_t>(parse_unsigned(f[5], line_no));
    r.loss_total = parse_optional(f[6], line_no);
    r.loss_contrastive = parse_optional(f[7], line_no);
    r.loss_regularizer = parse_optional(f[8], line_no);
    r.nmi = parse_optional(f[9], line_no);
    r.kappa = parse_optional(f[10], line_no);
    r.ch_score = parse_optional(f[11], line_no);
    if (f[12] != "true" && f[12] != "false") {
      throw FormatError("results CSV line " + std::to_string(line_no) + ": 'final' must be true or false");
    }
    r.final = f[12] == "true";
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw FormatError("results CSV is empty");
  return rows;
}

json rows_to_json(const std::vector<ResultRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"algorithm", r.algorithm},
                   {"p", r.p},
                   {"lambda", r.lambda},
                   {"disconnection_rate", r.disconnection_rate},
                   {"seed", r.seed},
                   {"round", r.round},
                   {"loss_total", optional_to_json(r.loss_total)},
                   {"loss_contrastive", optional_to_json(r.loss_contrastive)},
                   {"loss_regularizer", optional_to_json(r.loss_regularizer)},
                   {"nmi", optional_to_json(r.nmi)},
                   {"kappa", optional_to_json(r.kappa)},
                   {"ch_score", optional_to_json(r.ch_score)},
                   {"final", r.final}});
  }
  return out;
}

std::vector<ResultRow> rows_from_json(const json& rows) {
  std::vector<ResultRow> out;
  try {
    for (const auto& j : rows) {
      ResultRow r;
      r.algorithm = j.at("algorithm").get<std::string>();
      r.p = j.at("p").get<double>();
      r.lambda = j.at("lambda").get<double>();
      r.disconnection_rate = j.at("disconnection_rate").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.round = j.at("round").get<std::size_t>();
      r.loss_total = optional_from_json(j, "loss_total");
      r.loss_contrastive = optional_from_json(j, "loss_contrastive");
      r.loss_regularizer = optional_from_json(j, "loss_regularizer");
      r.nmi = optional_from_json(j, "nmi");
      r.kappa = optional_from_json(j, "kappa");
      r.ch_score = optional_from_json(j, "ch_score");
      r.final = j.at("final").get<bool>();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("results JSON does not match the row schema: ") + e.what());
  }
  return out;
}

void write_results(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const std::vector<ResultRow>& rows, bool overwrite) {
  const auto csv_path = dir / "results.csv";
  const auto json_path = dir / "results.json";
  if (!overwrite && (std::filesystem::exists(csv_path) || std::filesystem::exists(json_path))) {
    throw ConfigError("results already exist in " + dir.string() + " (pass --overwrite to replace them)");
  }
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    out << rows_to_csv(rows);
    if (!out) throw Error("failed to write " + csv_path.string());
  }
  {
    std::ofstream out(json_path, std::ios::binary | std::ios::trunc);
    out << json{{"config", to_json(config)}, {"rows", rows_to_json(rows)}}.dump(2) << '\n';
    if (!out) throw Error("failed to write " + json_path.string());
  }
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  using Key = std::tuple<std::string, double, double, double>;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::map<Key, std::size_t> runs;
  for (const auto& r : rows) {
    if (!r.final) continue;
    const Key key{r.algorithm, r.p, r.lambda, r.disconnection_rate};
    auto& [nmis, kappas] = groups[key];
    ++runs[key];
    if (r.nmi) nmis.push_back(*r.nmi);
    if (r.kappa) kappas.push_back(*r.kappa);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, values] : groups) {
    SummaryRow s;
    std::tie(s.algorithm, s.p, s.lambda, s.disconnection_rate) = key;
    s.runs = runs[key];
    std::tie(s.nmi_mean, s.nmi_std) = mean_std(values.first);
    std::tie(s.kappa_mean, s.kappa_std) = mean_std(values.second);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SummaryRow> summarize_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw FormatError("cannot open results CSV " + csv_path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return summarize(rows_from_csv(buffer.str()));
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << kSummaryHeader << '\n';
  for (const auto& s : rows) {
    out << s.algorithm << ',' << format_number(s.p) << ',' << format_number(s.lambda) << ','
        << format_number(s.disconnection_rate) << ',' << s.runs << ',' << format_number(s.nmi_mean) << ','
        << format_number(s.nmi_std) << ',' << format_number(s.kappa_mean) << ','
        << format_number(s.kappa_std) << '\n';
  }
  return out.str();
}

}  // namespace fedclust
