#pragma once

#include <string>
#include <utility>
#include <vector>

#include "clst/labels.hpp"
#include "clst/rng.hpp"
#include "clst/tensor.hpp"

namespace clst {

struct NetworkConfig {
  std::size_t classes = 5;
  std::size_t hidden_channels = 16;
  std::size_t feature_channels = 32;     // M'
  std::size_t projection_channels = 16;  // K', must stay below M'
};

/// Feature extractor (two 3x3 conv + relu), segmentation head (1x1 conv +
/// softmax) and a purely linear projector (1x1 conv).
struct NetworkParams {
  NetworkConfig config;
  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor head_w, head_b;
  Tensor proj_w, proj_b;

  /// Stable order; names double as checkpoint keys.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  std::vector<Tensor> extractor() const { return {conv1_w, conv1_b, conv2_w, conv2_b}; }
  std::vector<Tensor> head() const { return {head_w, head_b}; }
  std::vector<Tensor> projector() const { return {proj_w, proj_b}; }

  void zero_grad();
  NetworkParams clone() const;
};

/// Weights ~ U(-s, s) with s = sqrt(1 / fan_in), biases zero.
NetworkParams init_network(const NetworkConfig& config, Rng& rng);

/// Sets requires_grad on every parameter.
void enable_grad(NetworkParams& params, bool on = true);

struct ForwardOutputs {
  Tensor features;       // [H', W', M']
  Tensor projections;    // [H', W', K']
  Tensor probabilities;  // [H, W, C]
  LabelMap prediction;   // argmax of probabilities, lowest index on ties
};

/// `image` is [H, W, 3].
ForwardOutputs forward(const NetworkParams& params, const Tensor& image);

/// Per-pixel argmax over the last axis of an [H, W, C] tensor.
LabelMap argmax_labels(const Tensor& probabilities);

}  // namespace clst
