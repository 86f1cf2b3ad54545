#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clst/labels.hpp"

namespace clst {

/// C x C pixel counts; rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  /// cm[gt, pred] += 1 per pixel. Pixels whose ground truth is kIgnore are
  /// skipped; any other out-of-range class throws std::out_of_range.
  void accumulate(const LabelMap& prediction, const LabelMap& truth);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts_[truth * classes_ + pred];
  }
  std::size_t classes() const { return classes_; }
  std::uint64_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  std::vector<double> per_class;  // NaN where the class never occurs in gt or pred
  std::vector<bool> counted;      // false for zero-denominator classes
  double mean = 0.0;              // over counted classes only
  std::size_t excluded() const;
};

/// IoU_c = cm[c,c] / (row_c + col_c - cm[c,c]).
IouReport iou(const ConfusionMatrix& cm);

/// "class,iou,counted" rows followed by a "mean" row; fixed 9-digit precision.
std::string iou_csv(const IouReport& report);

}  // namespace clst
