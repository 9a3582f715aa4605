#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedclust/matrix.hpp"

namespace fedclust {

/// Layer widths of a fully connected network, input first. Hidden layers use
/// ReLU; the output layer is affine.
struct MlpSpec {
  std::vector<std::size_t> layer_dims;

  void validate() const;
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t parameter_count() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// y = x * weight + bias, with weight stored fan_in x fan_out.
struct DenseLayer {
  DenseMatrix weight;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  MlpSpec spec() const;
  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Parameters of the encoder f and predictor h. Also used as the container
/// for gradients and optimizer moments, which share the same shape.
struct NetworkParams {
  MlpParams encoder;
  MlpParams predictor;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

struct GradientSet : NetworkParams {};

struct AdamState {
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct SiameseModel {
  NetworkParams params;
  AdamState adam;

  MlpSpec encoder_spec() const { return params.encoder.spec(); }
  MlpSpec predictor_spec() const { return params.predictor.spec(); }
  std::size_t latent_dim() const { return params.encoder.layers.back().weight.cols(); }
  std::size_t input_dim() const { return params.encoder.layers.front().weight.rows(); }

  friend bool operator==(const SiameseModel&, const SiameseModel&) = default;
};

// Flat views over every weight and bias tensor, in a fixed order:
// encoder layers then predictor layers, weight before bias.
std::vector<std::span<double>> tensors(NetworkParams& params);
std::vector<std::span<const double>> tensors(const NetworkParams& params);
void tensors(NetworkParams&&) = delete;
std::vector<std::string> tensor_names(const NetworkParams& params);
std::size_t parameter_count(const NetworkParams& params);

// Zero-filled parameters with the same shapes as `like`.
NetworkParams zeros_like(const NetworkParams& like);
bool congruent(const NetworkParams& a, const NetworkParams& b);

/// Scaled-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
/// Throws ShapeError unless encoder output == predictor input == predictor output.
SiameseModel init_model(const MlpSpec& encoder, const MlpSpec& predictor, std::uint64_t seed);

struct MlpTaps {
  std::vector<DenseMatrix> layer_inputs;
  std::vector<DenseMatrix> pre_activations;
};

/// Activations cached by `forward` for the matching `backward` call.
struct ForwardTaps {
  MlpTaps encoder;
  MlpTaps predictor;
  DenseMatrix latent;      // z = f(x)
  DenseMatrix prediction;  // p = h(z)
};

DenseMatrix forward_mlp(const MlpParams& mlp, const DenseMatrix& input, MlpTaps* taps = nullptr);

DenseMatrix forward_encoder(const SiameseModel& model, const DenseMatrix& batch);
DenseMatrix forward_predictor(const SiameseModel& model, const DenseMatrix& latent);
ForwardTaps forward(const SiameseModel& model, const DenseMatrix& batch);

/// Exact gradient of a scalar loss given its gradient w.r.t. the two network
/// outputs. `grad_latent` may be empty, meaning the loss does not read z
/// directly (the stop-gradient case); gradient still reaches the encoder
/// through the predictor.
GradientSet backward(const SiameseModel& model, const ForwardTaps& taps,
                     const DenseMatrix& grad_latent, const DenseMatrix& grad_prediction);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place. Throws NumericError naming the
/// tensor if any gradient entry is non-finite; the model is left untouched.
void adam_step(SiameseModel& model, const GradientSet& grads, const AdamOptions& options = {});

}  // namespace fedclust
