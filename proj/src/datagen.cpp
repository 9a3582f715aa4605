#include "fedclust/datagen.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "fedclust/errors.hpp"
#include "fedclust/random.hpp"

namespace fedclust {

namespace {

std::string at_offset(const std::string& what, std::size_t offset) {
  return "FVD format error at byte " + std::to_string(offset) + ": " + what;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  void require(std::size_t count, const std::string& what) const {
    if (bytes_.size() - pos_ < count) {
      throw FormatError(at_offset("truncated while reading " + what + " (need " +
                                      std::to_string(count) + " bytes, have " +
                                      std::to_string(bytes_.size() - pos_) + ")",
                                  pos_));
    }
  }

  std::uint8_t u8(const std::string& what) {
    require(1, what);
    return bytes_[pos_++];
  }

  std::uint32_t u32(const std::string& what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                          : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Orthonormal rows via Gram-Schmidt on Gaussian draws.
DenseMatrix random_orthonormal(std::size_t k, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> gauss;
  DenseMatrix basis(k, dim);
  for (std::size_t r = 0; r < k; ++r) {
    while (true) {
      auto v = basis.row(r);
      for (double& x : v) x = gauss(rng);
      for (std::size_t q = 0; q < r; ++q) {
        const double proj = dot(v, basis.row(q));
        const auto u = basis.row(q);
        for (std::size_t d = 0; d < dim; ++d) v[d] -= proj * u[d];
      }
      const double n = norm(v);
      if (n > 1e-8) {
        for (double& x : v) x /= n;
        break;
      }
    }
  }
  return basis;
}

}  // namespace

std::size_t LabeledDataset::num_classes() const {
  if (labels.empty()) return 0;
  return static_cast<std::size_t>(*std::ranges::max_element(labels)) + 1;
}

void LabeledDataset::validate() const {
  if (!labels.empty() && labels.size() != features.rows()) {
    throw ShapeError("dataset '" + name + "' has " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(features.rows()) + " rows");
  }
  if (!labels.empty()) {
    std::vector<bool> seen(num_classes(), false);
    for (auto l : labels) seen[l] = true;
    if (!std::ranges::all_of(seen, [](bool b) { return b; })) {
      throw ShapeError("dataset '" + name + "' label ids are not contiguous from 0");
    }
  }
}

FederatedSplit partition(const LabeledDataset& dataset, const PartitionSpec& spec) {
  const double p = spec.heterogeneity;
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("heterogeneity p must lie in [0, 1]");
  if (spec.num_clients == 0) throw ConfigError("partition needs at least one client");
  const std::size_t n = dataset.size();
  const std::size_t s = spec.samples_per_client;
  if (spec.num_clients * s > n) {
    throw ConfigError("partition asks for " + std::to_string(spec.num_clients) + " x " +
                      std::to_string(s) + " samples but the dataset has " + std::to_string(n));
  }
  const auto quota = static_cast<std::size_t>(std::nearbyint(p * static_cast<double>(s)));
  if (quota > 0 && !dataset.has_labels()) {
    throw ConfigError("heterogeneous partition (p > 0) requires class labels");
  }

  Rng rng(spec.seed);
  std::vector<bool> taken(n, false);
  FederatedSplit split;
  split.client_indices.resize(spec.num_clients);

  if (quota > 0) {
    const std::size_t classes = dataset.num_classes();
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < n; ++i) by_class[dataset.labels[i]].push_back(i);
    for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);
    std::vector<std::size_t> cursor(classes, 0);
    for (std::size_t l = 0; l < spec.num_clients; ++l) {
      const std::size_t c = l % classes;
      if (by_class[c].size() - cursor[c] < quota) {
        throw ConfigError("class " + std::to_string(c) + " has " +
                          std::to_string(by_class[c].size() - cursor[c]) +
                          " samples left but client " + std::to_string(l) + " needs " +
                          std::to_string(quota));
      }
      for (std::size_t q = 0; q < quota; ++q) {
        const std::size_t idx = by_class[c][cursor[c]++];
        taken[idx] = true;
        split.client_indices[l].push_back(idx);
      }
    }
  }

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (!taken[i]) pool.push_back(i);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t next = 0;
  for (auto& client : split.client_indices) {
    for (std::size_t q = quota; q < s; ++q) client.push_back(pool[next++]);
    std::ranges::sort(client);
  }
  return split;
}

LabeledDataset gaussian_mixture(std::size_t k, std::size_t n_per, std::size_t dim,
                                double separation, std::uint64_t seed) {
  if (k == 0 || n_per == 0 || dim == 0) throw SizeError("gaussian_mixture: counts must be >= 1");
  if (!(separation >= 0.0)) throw ConfigError("gaussian_mixture: separation must be >= 0");
  Rng rng(seed);
  DenseMatrix means(k, dim);
  if (k <= dim) {
    means = random_orthonormal(k, dim, rng);
    for (double& v : means.values()) v *= separation / std::sqrt(2.0);
  } else {
    // Rejection sampling in a cube that grows until every mean fits.
    double side = std::max(separation, 1.0) * std::pow(static_cast<double>(k), 1.0 / dim) * 2.0;
    std::size_t placed = 0;
    std::size_t attempts = 0;
    while (placed < k) {
      auto m = means.row(placed);
      for (double& v : m) v = (uniform01(rng) - 0.5) * side;
      bool ok = true;
      for (std::size_t q = 0; q < placed && ok; ++q) {
        ok = squared_distance(m, means.row(q)) >= separation * separation;
      }
      if (ok) {
        ++placed;
        attempts = 0;
      } else if (++attempts > 1000) {
        side *= 1.5;
        attempts = 0;
      }
    }
  }

  std::normal_distribution<double> gauss;
  LabeledDataset ds;
  ds.name = "gmm";
  ds.features = DenseMatrix(k * n_per, dim);
  ds.labels.resize(k * n_per);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n_per; ++i) {
      const std::size_t r = c * n_per + i;
      auto x = ds.features.row(r);
      const auto mu = means.row(c);
      for (std::size_t d = 0; d < dim; ++d) x[d] = mu[d] + gauss(rng);
      ds.labels[r] = static_cast<std::uint32_t>(c);
    }
  }
  return ds;
}

std::vector<std::uint8_t> encode_fvd(const LabeledDataset& dataset) {
  dataset.validate();
  std::vector<std::uint8_t> out = {'F', 'V', 'D', '1'};
  put_u32(out, static_cast<std::uint32_t>(dataset.size()));
  put_u32(out, static_cast<std::uint32_t>(dataset.dim()));
  for (double v : dataset.features.values()) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  out.push_back(dataset.has_labels() ? 1 : 0);
  for (auto l : dataset.labels) put_u32(out, l);
  return out;
}

LabeledDataset decode_fvd(const std::vector<std::uint8_t>& bytes, std::string name) {
  ByteReader in(bytes);
  in.require(4, "magic");
  if (!std::equal(bytes.begin(), bytes.begin() + 4, "FVD1")) {
    throw FormatError(at_offset("bad magic (expected \"FVD1\")", 0));
  }
  for (int i = 0; i < 4; ++i) in.u8("magic");
  const std::uint32_t n = in.u32("row count");
  const std::uint32_t d = in.u32("column count");
  const std::uint64_t values = static_cast<std::uint64_t>(n) * d;
  in.require(values * 4, "feature block");
  LabeledDataset ds;
  ds.name = std::move(name);
  std::vector<double> data(values);
  for (auto& v : data) {
    const std::size_t at = in.offset();
    v = std::bit_cast<float>(in.u32("feature"));
    if (!std::isfinite(v)) throw FormatError(at_offset("non-finite feature value", at));
  }
  ds.features = DenseMatrix(n, d, std::move(data));
  const std::size_t flag_offset = in.offset();
  const std::uint8_t has_labels = in.u8("label flag");
  if (has_labels > 1) throw FormatError(at_offset("label flag must be 0 or 1", flag_offset));
  if (has_labels == 1) {
    in.require(static_cast<std::size_t>(n) * 4, "label block");
    ds.labels.resize(n);
    for (auto& l : ds.labels) l = in.u32("label");
  }
  if (!in.at_end()) throw FormatError(at_offset("trailing bytes after dataset", in.offset()));
  try {
    ds.validate();
  } catch (const ShapeError& e) {
    throw FormatError(at_offset(e.what(), flag_offset + 1));
  }
  return ds;
}

LabeledDataset load_fvd(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open FVD file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  return decode_fvd(bytes, path.stem().string());
}

void save_fvd(const LabeledDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_fvd(dataset);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot write FVD file " + path.string());
  file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw FormatError("write failed for " + path.string());
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw FormatError("cannot open CSV file " + path.string());
  std::string line;
  if (!std::getline(file, line)) throw FormatError("CSV file " + path.string() + " is empty");
  const auto header = split_commas(line);
  std::size_t label_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "label") label_col = c;
  }
  const std::size_t dim = header.size() - (label_col < header.size() ? 1 : 0);
  std::vector<double> data;
  std::vector<long long> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(file, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      throw FormatError("CSV line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto f = fields[c];
      if (c == label_col) {
        long long v = 0;
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || ptr != f.data() + f.size()) {
          throw FormatError("CSV line " + std::to_string(line_no) + ": bad label '" + std::string(f) + "'");
        }
        raw_labels.push_back(v);
      } else {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
          throw FormatError("CSV line " + std::to_string(line_no) + ", column " +
                            std::to_string(c + 1) + ": bad number '" + std::string(f) + "'");
        }
        data.push_back(v);
      }
    }
  }
  LabeledDataset ds;
  ds.name = path.stem().string();
  const std::size_t rows = dim == 0 ? 0 : data.size() / dim;
  ds.features = DenseMatrix(rows, dim, std::move(data));
  if (label_col < header.size()) {
    // Map distinct label values onto 0..K-1 in ascending order.
    std::map<long long, std::uint32_t> ids;
    for (auto v : raw_labels) ids.emplace(v, 0);
    std::uint32_t next = 0;
    for (auto& [value, id] : ids) id = next++;
    for (auto v : raw_labels) ds.labels.push_back(ids.at(v));
  }
  return ds;
}

DenseMatrix augment(const DenseMatrix& batch, double strength, std::uint64_t seed) {
  if (!(strength >= 0.0)) throw ConfigError("augment strength must be >= 0");
  DenseMatrix out = batch;
  if (strength == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, strength);
  const double mask_rate = std::min(strength / 2.0, 0.5);
  for (double& v : out.values()) {
    v += gauss(rng);
    if (uniform01(rng) < mask_rate) v = 0.0;
  }
  return out;
}

}  // namespace fedclust
