#include "clst/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "clst/tensor.hpp"

namespace clst {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::accumulate(const LabelMap& prediction, const LabelMap& truth) {
  if (prediction.height != truth.height || prediction.width != truth.width)
    throw ShapeError("accumulate", Shape{prediction.height, prediction.width},
                     Shape{truth.height, truth.width});
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto g = truth.labels[i];
    if (g == kIgnore) continue;
    const auto p = prediction.labels[i];
    if (g >= classes_ || p >= classes_)
      throw std::out_of_range("accumulate: class " + std::to_string(g >= classes_ ? g : p) +
                              " outside [0, " + std::to_string(classes_) + ")");
    ++counts_[g * classes_ + p];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("confusion matrices differ in size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::size_t IouReport::excluded() const {
  std::size_t n = 0;
  for (bool c : counted) n += !c;
  return n;
}

IouReport iou(const ConfusionMatrix& cm) {
  const std::size_t C = cm.classes();
  IouReport r;
  r.per_class.assign(C, std::numeric_limits<double>::quiet_NaN());
  r.counted.assign(C, false);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    r.counted[c] = true;
    sum += r.per_class[c];
    ++n;
  }
  r.mean = n ? sum / static_cast<double>(n) : 0.0;
  return r;
}

std::string iou_csv(const IouReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(9) << "class,iou,counted\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    os << c << ',';
    if (report.counted[c]) os << report.per_class[c];
    else os << "nan";
    os << ',' << (report.counted[c] ? 1 : 0) << '\n';
  }
  os << "mean," << report.mean << ',' << (report.per_class.size() - report.excluded()) << '\n';
  return os.str();
}

}  // namespace clst
