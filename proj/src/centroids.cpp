#include "clst/centroids.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "clst/errors.hpp"

namespace clst {

OneHotMap correct_mask(const OneHotMap& prediction, const OneHotMap& label) {
  if (prediction.height != label.height || prediction.width != label.width ||
      prediction.classes != label.classes) {
    throw ShapeError("correct_mask",
                     Shape{prediction.height, prediction.width, prediction.classes},
                     Shape{label.height, label.width, label.classes});
  }
  OneHotMap out = prediction;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (prediction.data[i] == 1 && label.data[i] == 1) ? 1 : 0;
  return out;
}

std::vector<ClassVector> batch_source_means(std::span<const Tensor> projections,
                                            std::span<const OneHotMap> masks) {
  if (projections.size() != masks.size())
    throw std::invalid_argument("batch_source_means: projections and masks differ in count");
  if (projections.empty()) return {};
  const std::size_t classes = masks.front().classes;
  const std::size_t k = projections.front().dim(2);
  std::vector<std::vector<double>> sums(classes, std::vector<double>(k, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t b = 0; b < projections.size(); ++b) {
    const auto& z = projections[b];
    const auto& m = masks[b];
    if (z.rank() != 3 || z.dim(0) != m.height || z.dim(1) != m.width ||
        z.dim(2) != k || m.classes != classes) {
      throw ShapeError("batch_source_means", z.shape(),
                       Shape{m.height, m.width, m.classes});
    }
    const auto zv = z.values();
    for (std::size_t p = 0; p < m.height * m.width; ++p)
      for (std::size_t c = 0; c < classes; ++c) {
        if (!m.data[p * classes + c]) continue;
        ++counts[c];
        for (std::size_t j = 0; j < k; ++j) sums[c][j] += zv[p * k + j];
      }
  }
  std::vector<ClassVector> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
    out[c] = std::move(sums[c]);
  }
  return out;
}

CentroidBank::CentroidBank(std::size_t classes, std::size_t dims, double psi0,
                           std::size_t total_steps)
    : dims_(dims),
      psi0_(psi0),
      total_steps_(total_steps),
      centroids_(classes * dims, 0.0),
      initialized_(classes, false) {
  if (!(psi0 > 0.0 && psi0 <= 1.0)) throw ConfigError("centroid momentum psi0 must be in (0, 1]");
  if (total_steps == 0) throw ConfigError("centroid schedule needs >= 1 step");
}

double CentroidBank::psi_at(std::size_t step) const {
  const double frac = std::min(1.0, static_cast<double>(step) /
                                        static_cast<double>(total_steps_));
  return psi0_ * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double CentroidBank::psi() const { return psi_at(step_); }

void CentroidBank::update(std::span<const ClassVector> means) {
  if (means.size() != classes())
    throw std::invalid_argument("centroid update: class count mismatch");
  const double psi_now = psi();
  for (std::size_t c = 0; c < means.size(); ++c) {
    if (!means[c]) continue;
    const auto& m = *means[c];
    if (m.size() != dims_) throw std::invalid_argument("centroid update: dimension mismatch");
    double* g = centroids_.data() + c * dims_;
    if (!initialized_[c]) {
      std::copy(m.begin(), m.end(), g);
      initialized_[c] = true;
    } else {
      for (std::size_t j = 0; j < dims_; ++j) g[j] = (1.0 - psi_now) * g[j] + psi_now * m[j];
    }
  }
  ++step_;
}

std::size_t CentroidBank::initialized_count() const {
  std::size_t n = 0;
  for (bool b : initialized_) n += b;
  return n;
}

std::span<const double> CentroidBank::centroid(std::size_t c) const {
  return std::span<const double>(centroids_).subspan(c * dims_, dims_);
}

void CentroidBank::restore(std::vector<double> centroids, std::vector<bool> initialized,
                           std::size_t step) {
  if (centroids.size() != centroids_.size() || initialized.size() != initialized_.size())
    throw FormatError("centroid bank: stored shape does not match");
  centroids_ = std::move(centroids);
  initialized_ = std::move(initialized);
  step_ = step;
}

std::vector<double> CentroidBank::cosine_matrix() const {
  const std::size_t C = classes();
  std::vector<double> out(C * C, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> norms(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (double v : centroid(c)) s += v * v;
    norms[c] = std::sqrt(s);
  }
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = 0; b < C; ++b) {
      if (!initialized_[a] || !initialized_[b] || norms[a] == 0.0 || norms[b] == 0.0)
        continue;
      double d = 0.0;
      for (std::size_t j = 0; j < dims_; ++j) d += centroid(a)[j] * centroid(b)[j];
      out[a * C + b] = d / (norms[a] * norms[b]);
    }
  return out;
}

TargetMeans target_image_means(const Tensor& projections, const LabelMap& pseudo,
                               std::size_t num_classes) {
  if (projections.rank() != 3 || projections.dim(0) != pseudo.height ||
      projections.dim(1) != pseudo.width) {
    throw ShapeError("target_image_means", projections.shape(),
                     Shape{pseudo.height, pseudo.width});
  }
  const std::size_t pixels = pseudo.size(), k = projections.dim(2);
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto c : pseudo.labels)
    if (c != kIgnore) {
      if (c >= num_classes) throw std::out_of_range("target_image_means: class out of range");
      ++counts[c];
    }
  TargetMeans out;
  std::vector<std::size_t> row_of(num_classes, 0);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] > 0) {
      row_of[c] = out.classes.size();
      out.classes.push_back(c);
    }
  if (out.classes.empty()) return out;

  std::vector<double> avg(out.classes.size() * pixels, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    const auto c = pseudo.labels[p];
    if (c == kIgnore) continue;
    avg[row_of[c] * pixels + p] = 1.0 / static_cast<double>(counts[c]);
  }
  out.means = matmul(Tensor::from({out.classes.size(), pixels}, std::move(avg)),
                     reshape(projections, {pixels, k}));
  return out;
}

}  // namespace clst
