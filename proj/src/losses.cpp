#include "clst/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "clst/errors.hpp"

namespace clst {

void LossWeights::validate() const {
  for (double v : {self_training, contrastive})
    if (!std::isfinite(v) || v < 0.0)
      throw ConfigError("loss weights must be finite and non-negative");
}

namespace {

Tensor weighted_ce(const char* op, const Tensor& p, const LabelMap& labels,
                   std::span<const double> alpha, double denom) {
  if (p.rank() != 3 || p.dim(0) != labels.height || p.dim(1) != labels.width)
    throw ShapeError(op, p.shape(), Shape{labels.height, labels.width});
  const std::size_t C = p.dim(2);
  if (alpha.size() != C)
    throw ShapeError(op, "alpha has " + std::to_string(alpha.size()) +
                             " entries for " + std::to_string(C) + " classes");
  std::vector<double> w(p.numel(), 0.0);
  if (denom > 0.0) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto c = labels.labels[i];
      if (c == kIgnore) continue;
      if (c >= C) throw std::out_of_range(std::string(op) + ": label out of range");
      w[i * C + c] = -alpha[c] / denom;
    }
  }
  return sum(mul(log(p), Tensor::from(p.shape(), std::move(w))));
}

}  // namespace

Tensor source_ce(const Tensor& probabilities, const LabelMap& label,
                 std::span<const double> alpha) {
  return weighted_ce("source_ce", probabilities, label, alpha,
                     static_cast<double>(probabilities.numel()));
}

Tensor target_ce(const Tensor& probabilities, const LabelMap& pseudo,
                 std::span<const double> alpha, TargetNorm norm) {
  double denom = static_cast<double>(probabilities.numel());
  if (norm == TargetNorm::valid_pixels) {
    const std::size_t C = probabilities.rank() == 3 ? probabilities.dim(2) : 1;
    denom = static_cast<double>(pseudo.valid_count() * C);
  }
  return weighted_ce("target_ce", probabilities, pseudo, alpha, denom);
}

Tensor contrastive_loss(const CentroidBank& bank, std::span<const TargetMeans> targets,
                        std::span<const double> alpha) {
  const std::size_t C = bank.classes(), K = bank.dims();
  if (alpha.size() != C) throw ShapeError("contrastive", "alpha size does not match classes");
  if (targets.empty() || bank.initialized_count() < 2) return Tensor::scalar(0.0);

  // Unit-length centroids; uninitialized rows stay zero and are masked out.
  std::vector<double> g(C * K, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (!bank.initialized(c)) continue;
    const auto row = bank.centroid(c);
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    if (!(n > 0.0))
      throw std::domain_error("contrastive: zero-norm centroid for class " + std::to_string(c));
    for (std::size_t j = 0; j < K; ++j) g[c * K + j] = row[j] / n;
  }
  const Tensor centroids_t = Tensor::from({K, C}, [&] {
    std::vector<double> t(K * C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < K; ++j) t[j * C + c] = g[c * K + j];
    return t;
  }());

  Tensor total = Tensor::scalar(0.0);
  bool any = false;
  for (const auto& tm : targets) {
    const std::size_t rows = tm.classes.size();
    std::vector<double> pos(rows * C, 0.0), neg(rows * C, 0.0), weight(rows, 0.0);
    bool image_any = false;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t c = tm.classes[r];
      if (!bank.initialized(c)) continue;
      pos[r * C + c] = 1.0;
      for (std::size_t j = 0; j < C; ++j)
        if (j != c && bank.initialized(j)) neg[r * C + j] = 1.0;
      weight[r] = alpha[c];
      image_any = true;
    }
    if (!image_any) continue;
    if (tm.means.rank() != 2 || tm.means.dim(1) != K)
      throw ShapeError("contrastive", tm.means.shape(), Shape{rows, K});

    const Tensor sim = matmul(l2_normalize(tm.means), centroids_t);  // [rows, C]
    const Tensor positive = sum(mul(sim, Tensor::from({rows, C}, pos)), 1);
    const Tensor negative = log(sum(mul(exp(sim), Tensor::from({rows, C}, neg)), 1));
    const Tensor per_class = sub(positive, negative);
    total = add(total, scale(dot(per_class, Tensor::from({rows}, weight)), -1.0));
    any = true;
  }
  if (!any) return Tensor::scalar(0.0);
  return scale(total, 1.0 / static_cast<double>(targets.size()));
}

Tensor total_loss(const Tensor& source, const Tensor& target, const Tensor& contrast,
                  const LossWeights& weights) {
  return add(add(source, scale(target, weights.self_training)),
             scale(contrast, weights.contrastive));
}

}  // namespace clst
