#pragma once

#include <optional>
#include <span>
#include <vector>

#include "clst/labels.hpp"
#include "clst/tensor.hpp"

namespace clst {

using ClassVector = std::optional<std::vector<double>>;

/// Pixels where prediction and ground truth agree, as an H x W x C mask.
OneHotMap correct_mask(const OneHotMap& prediction, const OneHotMap& label);

/// Mean projection per class over every masked pixel of the batch. Classes
/// with no masked pixel come back empty. Projections are [H', W', K'] and
/// masks must already match their spatial size.
std::vector<ClassVector> batch_source_means(std::span<const Tensor> projections,
                                            std::span<const OneHotMap> masks);

/// Global source centroids tracked by a moving average whose momentum
/// follows psi(j) = psi0 * (1 + cos(pi * j / T)) / 2.
class CentroidBank {
 public:
  CentroidBank(std::size_t classes, std::size_t dims, double psi0,
               std::size_t total_steps);

  /// EMA toward each present mean (first sighting copies it), then advance
  /// psi by one step.
  void update(std::span<const ClassVector> means);

  double psi() const;
  double psi_at(std::size_t step) const;
  std::size_t step() const { return step_; }

  std::size_t classes() const { return initialized_.size(); }
  std::size_t dims() const { return dims_; }
  bool initialized(std::size_t c) const { return initialized_[c]; }
  std::size_t initialized_count() const;
  /// Row c of the centroid matrix; only meaningful when initialized(c).
  std::span<const double> centroid(std::size_t c) const;
  const std::vector<double>& data() const { return centroids_; }

  double psi0() const { return psi0_; }
  std::size_t total_steps() const { return total_steps_; }

  /// Restores state written by a checkpoint.
  void restore(std::vector<double> centroids, std::vector<bool> initialized,
               std::size_t step);

  /// C x C cosine similarity between centroids; rows/cols of
  /// uninitialized classes are NaN.
  std::vector<double> cosine_matrix() const;

 private:
  std::size_t dims_;
  double psi0_;
  std::size_t total_steps_;
  std::size_t step_ = 0;
  std::vector<double> centroids_;  // C x K'
  std::vector<bool> initialized_;
};

/// Per-class mean of one target projection map under resized pseudo-labels,
/// kept on the tape so gradients reach the projector and extractor.
struct TargetMeans {
  std::vector<std::size_t> classes;  // classes with at least one valid pixel
  Tensor means;                      // [classes.size(), K']; empty when none

  bool empty() const { return classes.empty(); }
};

TargetMeans target_image_means(const Tensor& projections, const LabelMap& pseudo,
                               std::size_t num_classes);

}  // namespace clst
