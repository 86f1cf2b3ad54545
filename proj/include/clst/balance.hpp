#pragma once

#include <span>
#include <vector>

namespace clst {

/// Online estimate of per-class image-occurrence probability, started at
/// one for every class and tracked with a per-image moving average.
class OccurrenceEstimator {
 public:
  OccurrenceEstimator(std::size_t classes, double momentum);

  /// o_c <- (1 - eta) o_c + eta [class c present]
  void update(const std::vector<bool>& presence);

  const std::vector<double>& occurrence() const { return occurrence_; }
  double momentum() const { return momentum_; }
  std::size_t classes() const { return occurrence_.size(); }

 private:
  std::vector<double> occurrence_;
  double momentum_;
};

/// alpha_c = min(1/o_c, beta) / sum_i min(1/o_i, beta). Classes with
/// o_c == 0 take the cap. Throws ConfigError when beta < 1.
std::vector<double> balance_weights(std::span<const double> occurrence, double beta);

}  // namespace clst
