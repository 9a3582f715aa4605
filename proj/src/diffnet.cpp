#include "fedclust/diffnet.hpp"

#include <algorithm>
#include <cmath>

#include "fedclust/errors.hpp"
#include "fedclust/random.hpp"

namespace fedclust {

namespace {

std::string dims_to_string(const std::vector<std::size_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

MlpParams init_mlp(const MlpSpec& spec, Rng& rng) {
  MlpParams mlp;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    const std::size_t fan_in = spec.layer_dims[l];
    const std::size_t fan_out = spec.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{DenseMatrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
    for (double& w : layer.weight.values()) w = (2.0 * uniform01(rng) - 1.0) * bound;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

MlpParams zeros_like(const MlpParams& like) {
  MlpParams out;
  for (const auto& layer : like.layers) {
    out.layers.push_back(
        {DenseMatrix(layer.weight.rows(), layer.weight.cols()), std::vector<double>(layer.bias.size())});
  }
  return out;
}

// Reverse pass through one MLP. Accumulates parameter gradients into `grads`
// and returns the gradient w.r.t. the MLP input.
DenseMatrix backward_mlp(const MlpParams& mlp, const MlpTaps& taps, DenseMatrix upstream,
                         MlpParams& grads) {
  const std::size_t depth = mlp.layers.size();
  if (taps.layer_inputs.size() != depth || taps.pre_activations.size() != depth) {
    throw StateError("backward: taps do not match network depth");
  }
  for (std::size_t l = depth; l-- > 0;) {
    const DenseLayer& layer = mlp.layers[l];
    const DenseMatrix& input = taps.layer_inputs[l];
    const std::size_t n = input.rows();
    const std::size_t fan_in = layer.weight.rows();
    const std::size_t fan_out = layer.weight.cols();
    if (input.cols() != fan_in || upstream.rows() != n || upstream.cols() != fan_out ||
        taps.pre_activations[l].rows() != n || taps.pre_activations[l].cols() != fan_out) {
      throw StateError("backward: taps incongruent with layer " + std::to_string(l));
    }
    if (l + 1 < depth) {
      // ReLU on hidden layers.
      const auto pre = taps.pre_activations[l].values();
      auto up = upstream.values();
      for (std::size_t i = 0; i < up.size(); ++i) {
        if (pre[i] <= 0.0) up[i] = 0.0;
      }
    }
    DenseLayer& g = grads.layers[l];
    for (std::size_t r = 0; r < n; ++r) {
      const auto x = input.row(r);
      const auto dy = upstream.row(r);
      for (std::size_t o = 0; o < fan_out; ++o) g.bias[o] += dy[o];
      for (std::size_t i = 0; i < fan_in; ++i) {
        const double a = x[i];
        if (a == 0.0) continue;
        auto gw = g.weight.row(i);
        for (std::size_t o = 0; o < fan_out; ++o) gw[o] += a * dy[o];
      }
    }
    DenseMatrix downstream(n, fan_in);
    for (std::size_t r = 0; r < n; ++r) {
      const auto dy = upstream.row(r);
      auto dx = downstream.row(r);
      for (std::size_t i = 0; i < fan_in; ++i) dx[i] = dot(dy, layer.weight.row(i));
    }
    upstream = std::move(downstream);
  }
  return upstream;
}

void check_output_finite(const DenseMatrix& m, const char* what) {
  if (!m.all_finite()) throw NumericError(std::string(what) + " produced non-finite values");
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_dims.size() < 2) {
    throw ShapeError("MLP layout needs at least 2 dims, got " + dims_to_string(layer_dims));
  }
  if (std::ranges::any_of(layer_dims, [](std::size_t d) { return d == 0; })) {
    throw ShapeError("MLP layout has a zero-width layer: " + dims_to_string(layer_dims));
  }
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    count += layer_dims[l] * layer_dims[l + 1] + layer_dims[l + 1];
  }
  return count;
}

MlpSpec MlpParams::spec() const {
  MlpSpec s;
  if (layers.empty()) return s;
  s.layer_dims.push_back(layers.front().weight.rows());
  for (const auto& layer : layers) s.layer_dims.push_back(layer.weight.cols());
  return s;
}

std::vector<std::span<double>> tensors(NetworkParams& params) {
  std::vector<std::span<double>> out;
  for (MlpParams* mlp : {&params.encoder, &params.predictor}) {
    for (auto& layer : mlp->layers) {
      out.emplace_back(layer.weight.values());
      out.emplace_back(layer.bias);
    }
  }
  return out;
}

std::vector<std::span<const double>> tensors(const NetworkParams& params) {
  std::vector<std::span<const double>> out;
  for (const MlpParams* mlp : {&params.encoder, &params.predictor}) {
    for (const auto& layer : mlp->layers) {
      out.emplace_back(layer.weight.values());
      out.emplace_back(layer.bias);
    }
  }
  return out;
}

std::vector<std::string> tensor_names(const NetworkParams& params) {
  std::vector<std::string> out;
  for (const auto& [name, mlp] : {std::pair<const char*, const MlpParams*>{"encoder", &params.encoder},
                                  {"predictor", &params.predictor}}) {
    for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
      out.push_back(std::string(name) + "." + std::to_string(l) + ".weight");
      out.push_back(std::string(name) + "." + std::to_string(l) + ".bias");
    }
  }
  return out;
}

std::size_t parameter_count(const NetworkParams& params) {
  std::size_t count = 0;
  for (auto t : tensors(params)) count += t.size();
  return count;
}

NetworkParams zeros_like(const NetworkParams& like) {
  return {zeros_like(like.encoder), zeros_like(like.predictor)};
}

bool congruent(const NetworkParams& a, const NetworkParams& b) {
  const auto ta = tensors(a);
  const auto tb = tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].size() != tb[i].size()) return false;
  }
  return a.encoder.spec() == b.encoder.spec() && a.predictor.spec() == b.predictor.spec();
}

SiameseModel init_model(const MlpSpec& encoder, const MlpSpec& predictor, std::uint64_t seed) {
  encoder.validate();
  predictor.validate();
  if (encoder.output_dim() != predictor.input_dim() ||
      predictor.input_dim() != predictor.output_dim()) {
    throw ShapeError("predictor must map the latent space to itself: encoder " +
                     dims_to_string(encoder.layer_dims) + ", predictor " +
                     dims_to_string(predictor.layer_dims));
  }
  Rng rng(seed);
  SiameseModel model;
  model.params.encoder = init_mlp(encoder, rng);
  model.params.predictor = init_mlp(predictor, rng);
  model.adam.first_moment = zeros_like(model.params);
  model.adam.second_moment = zeros_like(model.params);
  return model;
}

DenseMatrix forward_mlp(const MlpParams& mlp, const DenseMatrix& input, MlpTaps* taps) {
  if (mlp.layers.empty()) throw StateError("forward on an empty network");
  if (input.cols() != mlp.layers.front().weight.rows()) {
    throw ShapeError("input has " + std::to_string(input.cols()) + " columns, network expects " +
                     std::to_string(mlp.layers.front().weight.rows()));
  }
  if (taps) {
    taps->layer_inputs.clear();
    taps->pre_activations.clear();
  }
  DenseMatrix activation = input;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const DenseLayer& layer = mlp.layers[l];
    const std::size_t n = activation.rows();
    const std::size_t fan_in = layer.weight.rows();
    const std::size_t fan_out = layer.weight.cols();
    DenseMatrix out(n, fan_out);
    for (std::size_t r = 0; r < n; ++r) {
      auto y = out.row(r);
      std::ranges::copy(layer.bias, y.begin());
      const auto x = activation.row(r);
      for (std::size_t i = 0; i < fan_in; ++i) {
        const double a = x[i];
        if (a == 0.0) continue;
        const auto w = layer.weight.row(i);
        for (std::size_t o = 0; o < fan_out; ++o) y[o] += a * w[o];
      }
    }
    if (taps) {
      taps->layer_inputs.push_back(std::move(activation));
      taps->pre_activations.push_back(out);
    }
    if (l + 1 < mlp.layers.size()) {
      for (double& v : out.values()) v = std::max(v, 0.0);
    }
    activation = std::move(out);
  }
  return activation;
}

DenseMatrix forward_encoder(const SiameseModel& model, const DenseMatrix& batch) {
  auto z = forward_mlp(model.params.encoder, batch);
  check_output_finite(z, "encoder");
  return z;
}

DenseMatrix forward_predictor(const SiameseModel& model, const DenseMatrix& latent) {
  auto p = forward_mlp(model.params.predictor, latent);
  check_output_finite(p, "predictor");
  return p;
}

ForwardTaps forward(const SiameseModel& model, const DenseMatrix& batch) {
  ForwardTaps taps;
  taps.latent = forward_mlp(model.params.encoder, batch, &taps.encoder);
  check_output_finite(taps.latent, "encoder");
  taps.prediction = forward_mlp(model.params.predictor, taps.latent, &taps.predictor);
  check_output_finite(taps.prediction, "predictor");
  return taps;
}

GradientSet backward(const SiameseModel& model, const ForwardTaps& taps,
                     const DenseMatrix& grad_latent, const DenseMatrix& grad_prediction) {
  if (grad_prediction.rows() != taps.prediction.rows() ||
      grad_prediction.cols() != taps.prediction.cols()) {
    throw StateError("backward: prediction gradient does not match cached forward pass");
  }
  GradientSet grads{zeros_like(model.params)};
  DenseMatrix d_latent = backward_mlp(model.params.predictor, taps.predictor, grad_prediction,
                                      grads.predictor);
  if (!grad_latent.empty()) {
    if (grad_latent.rows() != d_latent.rows() || grad_latent.cols() != d_latent.cols()) {
      throw StateError("backward: latent gradient does not match cached forward pass");
    }
    auto acc = d_latent.values();
    const auto add = grad_latent.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
  }
  backward_mlp(model.params.encoder, taps.encoder, std::move(d_latent), grads.encoder);
  return grads;
}

void adam_step(SiameseModel& model, const GradientSet& grads, const AdamOptions& options) {
  if (!congruent(model.params, grads)) {
    throw ShapeError("adam_step: gradient set is not congruent with the model");
  }
  const auto g = tensors(static_cast<const NetworkParams&>(grads));
  for (std::size_t t = 0; t < g.size(); ++t) {
    if (!std::ranges::all_of(g[t], [](double v) { return std::isfinite(v); })) {
      throw NumericError("non-finite gradient in " + tensor_names(model.params)[t]);
    }
  }
  auto theta = tensors(model.params);
  auto m = tensors(model.adam.first_moment);
  auto v = tensors(model.adam.second_moment);
  model.adam.step += 1;
  const double step = static_cast<double>(model.adam.step);
  const double correction1 = 1.0 - std::pow(options.beta1, step);
  const double correction2 = 1.0 - std::pow(options.beta2, step);
  for (std::size_t t = 0; t < theta.size(); ++t) {
    for (std::size_t i = 0; i < theta[t].size(); ++i) {
      const double gi = g[t][i];
      m[t][i] = options.beta1 * m[t][i] + (1.0 - options.beta1) * gi;
      v[t][i] = options.beta2 * v[t][i] + (1.0 - options.beta2) * gi * gi;
      const double m_hat = m[t][i] / correction1;
      const double v_hat = v[t][i] / correction2;
      theta[t][i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

}  // namespace fedclust
