#include "clst/balance.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clst/errors.hpp"

namespace clst {

OccurrenceEstimator::OccurrenceEstimator(std::size_t classes, double momentum)
    : occurrence_(classes, 1.0), momentum_(momentum) {
  if (!(momentum > 0.0 && momentum <= 1.0))
    throw ConfigError("occurrence momentum must be in (0, 1]");
}

void OccurrenceEstimator::update(const std::vector<bool>& presence) {
  if (presence.size() != occurrence_.size()) {
    throw std::invalid_argument("occurrence update: expected " +
                                std::to_string(occurrence_.size()) +
                                " classes, got " + std::to_string(presence.size()));
  }
  for (std::size_t c = 0; c < occurrence_.size(); ++c) {
    occurrence_[c] =
        (1.0 - momentum_) * occurrence_[c] + momentum_ * (presence[c] ? 1.0 : 0.0);
  }
}

std::vector<double> balance_weights(std::span<const double> occurrence, double beta) {
  if (!(beta >= 1.0)) throw ConfigError("balance weights: beta must be >= 1");
  std::vector<double> w(occurrence.size());
  double total = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    w[c] = occurrence[c] > 0.0 ? std::min(1.0 / occurrence[c], beta) : beta;
    total += w[c];
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace clst
