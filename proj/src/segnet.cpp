#include "clst/segnet.hpp"

#include <cmath>
#include <stdexcept>

namespace clst {

std::vector<std::pair<std::string, Tensor>> NetworkParams::named() const {
  return {{"extractor.conv1.weight", conv1_w}, {"extractor.conv1.bias", conv1_b},
          {"extractor.conv2.weight", conv2_w}, {"extractor.conv2.bias", conv2_b},
          {"head.weight", head_w},             {"head.bias", head_b},
          {"projector.weight", proj_w},        {"projector.bias", proj_b}};
}

std::vector<Tensor> NetworkParams::all() const {
  return {conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b, proj_w, proj_b};
}

void NetworkParams::zero_grad() {
  for (auto& t : all()) t.zero_grad();
}

NetworkParams NetworkParams::clone() const {
  NetworkParams out{config,
                    conv1_w.detach(), conv1_b.detach(),
                    conv2_w.detach(), conv2_b.detach(),
                    head_w.detach(),  head_b.detach(),
                    proj_w.detach(),  proj_b.detach()};
  enable_grad(out, conv1_w.requires_grad());
  return out;
}

namespace {

Tensor uniform_kernel(std::size_t k, std::size_t in, std::size_t out, Rng& rng) {
  const double s = std::sqrt(1.0 / static_cast<double>(k * k * in));
  std::vector<double> v(k * k * in * out);
  for (auto& x : v) x = rng.uniform(-s, s);
  return Tensor::from({k, k, in, out}, std::move(v));
}

}  // namespace

NetworkParams init_network(const NetworkConfig& config, Rng& rng) {
  if (config.classes < 2) throw std::invalid_argument("network: need >= 2 classes");
  if (config.projection_channels == 0 ||
      config.projection_channels >= config.feature_channels) {
    throw std::invalid_argument(
        "network: projection channels must be in [1, feature channels)");
  }
  NetworkParams p;
  p.config = config;
  const auto hid = config.hidden_channels, feat = config.feature_channels;
  p.conv1_w = uniform_kernel(3, 3, hid, rng);
  p.conv1_b = Tensor::zeros({hid});
  p.conv2_w = uniform_kernel(3, hid, feat, rng);
  p.conv2_b = Tensor::zeros({feat});
  p.head_w = uniform_kernel(1, feat, config.classes, rng);
  p.head_b = Tensor::zeros({config.classes});
  p.proj_w = uniform_kernel(1, feat, config.projection_channels, rng);
  p.proj_b = Tensor::zeros({config.projection_channels});
  enable_grad(p);
  return p;
}

void enable_grad(NetworkParams& params, bool on) {
  for (auto& t : params.all()) t.set_requires_grad(on);
}

LabelMap argmax_labels(const Tensor& probabilities) {
  if (probabilities.rank() != 3)
    throw ShapeError("argmax_labels", "expected [H,W,C], got " +
                                          shape_str(probabilities.shape()));
  const std::size_t h = probabilities.dim(0), w = probabilities.dim(1),
                    c = probabilities.dim(2);
  LabelMap out(h, w);
  const auto v = probabilities.values();
  for (std::size_t i = 0; i < h * w; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (v[i * c + j] > v[i * c + best]) best = j;
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

ForwardOutputs forward(const NetworkParams& params, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeError("forward", "image must be [H,W,3], got " +
                                    shape_str(image.shape()));
  ForwardOutputs out;
  Tensor h = relu(conv2d(image, params.conv1_w, params.conv1_b));
  out.features = relu(conv2d(h, params.conv2_w, params.conv2_b));
  out.probabilities = softmax(conv2d(out.features, params.head_w, params.head_b));
  out.projections = conv2d(out.features, params.proj_w, params.proj_b);
  out.prediction = argmax_labels(out.probabilities);
  return out;
}

}  // namespace clst
