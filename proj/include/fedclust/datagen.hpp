#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedclust/matrix.hpp"

namespace fedclust {

/// Features plus ground-truth class ids. Labels are for evaluation only:
/// nothing on the training path accepts this type.
struct LabeledDataset {
  DenseMatrix features;
  std::vector<std::uint32_t> labels;  // empty for an unlabeled dataset
  std::string name;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const;
  bool has_labels() const { return !labels.empty(); }
  void validate() const;
};

struct PartitionSpec {
  std::size_t num_clients = 0;
  double heterogeneity = 0.0;  // p in [0, 1]
  std::size_t samples_per_client = 0;
  std::uint64_t seed = 0;
};

struct FederatedSplit {
  std::vector<std::vector<std::size_t>> client_indices;

  std::size_t num_clients() const { return client_indices.size(); }
};

/// Client l takes round(p*s) samples (half to even) of class l mod K, then
/// s - round(p*s) uniformly from everything not yet taken. Clients are
/// disjoint. Throws ConfigError when a class cannot cover its quota.
FederatedSplit partition(const LabeledDataset& dataset, const PartitionSpec& spec);

/// k unit-variance isotropic Gaussians with means at pairwise distance
/// >= separation (exactly `separation` when k <= dim).
LabeledDataset gaussian_mixture(std::size_t k, std::size_t n_per, std::size_t dim,
                                double separation, std::uint64_t seed);

// FVD binary format, little endian:
//   "FVD1" | u32 n | u32 d | n*d f32 row-major | u8 has_labels | [n u32 labels]
LabeledDataset load_fvd(const std::filesystem::path& path);
void save_fvd(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset decode_fvd(const std::vector<std::uint8_t>& bytes, std::string name = "fvd");
std::vector<std::uint8_t> encode_fvd(const LabeledDataset& dataset);

/// CSV with a header row. A column named "label" (optional) holds class ids;
/// every other column is a numeric feature.
LabeledDataset load_csv(const std::filesystem::path& path);

/// Additive Gaussian noise (sigma = strength) followed by zero-masking of each
/// coordinate with probability min(strength / 2, 0.5).
DenseMatrix augment(const DenseMatrix& batch, double strength, std::uint64_t seed);

}  // namespace fedclust
