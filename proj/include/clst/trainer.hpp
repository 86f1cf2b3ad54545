#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clst/balance.hpp"
#include "clst/centroids.hpp"
#include "clst/config.hpp"
#include "clst/metrics.hpp"
#include "clst/pseudo.hpp"
#include "clst/segnet.hpp"
#include "clst/synthetic.hpp"

namespace clst {

/// lr0 * (1 - iter / T)^power, clamped to zero past T.
double poly_lr(std::size_t iter, std::size_t total, double lr0, double power);

struct OptimizerState {
  std::vector<std::vector<double>> velocity;  // one buffer per parameter
  std::size_t iteration = 0;
};

/// Nesterov SGD in lookahead form, with d = g + wd * theta:
///   v <- mu v - lr d;  theta <- theta + mu v - lr d.
/// Throws std::runtime_error naming the parameter when a gradient is not
/// finite. Parameters without a gradient are treated as g = 0.
void sgd_step(std::span<Tensor> params, OptimizerState& state, double lr,
              double momentum, double weight_decay);

/// One row of the per-iteration log.
struct IterationMetrics {
  std::size_t iteration = 0;
  double lr = 0, psi = 0;
  std::uint32_t gamma = 0;
  double loss_source = 0, loss_target = 0, loss_contrast = 0, total = 0;
  double valid_fraction = 0;  // share of target pixels carrying a pseudo-label
  bool target_active = false;    // j > R: target losses and vote recording on
  bool ensemble_labels = false;  // j > K: pseudo-labels from majority vote
  std::vector<double> occurrence_source, occurrence_target;
  std::vector<double> alpha_source, alpha_target;
};

/// Fixed-precision CSV; identical runs give identical bytes.
std::string metrics_csv(std::span<const IterationMetrics> rows);

struct TrainResult {
  NetworkParams params;
  CentroidBank bank;
  PseudoLabelStore store;  // keyed by position in the target span
  std::vector<IterationMetrics> log;
};

/// Called after every iteration; returning false stops training early.
using ProgressFn = std::function<bool(const IterationMetrics&)>;

/// The full adaptation loop. `target` must be label-free; votes are keyed by
/// the position of each image within `target`.
TrainResult train(const TrainConfig& config, std::span<const SegSample> source,
                  std::span<const SegSample> target, const ProgressFn& progress = {});

struct FineTuneResult {
  NetworkParams params;
  std::vector<LabelMap> labels;  // the frozen pseudo-labels actually used
  std::vector<IterationMetrics> log;
};

/// Minimizes only the target cross-entropy on pseudo-labels fixed up front:
/// the ensemble's unthresholded majority vote, or (config flag) the argmax of
/// a fresh forward pass. Throws std::invalid_argument on an empty store.
FineTuneResult fine_tune(const NetworkParams& params, const TrainConfig& config,
                         std::span<const SegSample> target, const PseudoLabelStore& store,
                         const ProgressFn& progress = {});

/// Confusion matrix of argmax predictions over labeled samples.
ConfusionMatrix evaluate(const NetworkParams& params, std::span<const SegSample> labeled);

}  // namespace clst
