#pragma once

#include <span>
#include <vector>

#include "clst/centroids.hpp"
#include "clst/labels.hpp"
#include "clst/tensor.hpp"

namespace clst {

struct LossWeights {
  double self_training = 0.1;  // lambda_ST
  double contrastive = 0.1;    // lambda_CL

  void validate() const;
};

/// How the target cross-entropy is normalised.
enum class TargetNorm {
  full_map,      // 1 / (H W C) regardless of how many pixels are valid
  valid_pixels,  // 1 / (valid C)
};

/// -1/(HWC) sum_{h,w,c} alpha_c y log p over an [H,W,C] probability map.
Tensor source_ce(const Tensor& probabilities, const LabelMap& label,
                 std::span<const double> alpha);

/// Same weighting over pseudo-labels; kIgnore pixels contribute nothing.
Tensor target_ce(const Tensor& probabilities, const LabelMap& pseudo,
                 std::span<const double> alpha, TargetNorm norm = TargetNorm::full_map);

/// Cross-domain centroid contrast. For each present class c of each target
/// image: -alpha_c log(exp(sim(g_c, m_c)) / sum_{j != c} exp(sim(g_j, m_c))),
/// with sim the cosine similarity and only initialized centroids taking
/// part. Summed over classes, averaged over the images passed in. Returns
/// a constant zero when no class qualifies.
Tensor contrastive_loss(const CentroidBank& bank, std::span<const TargetMeans> targets,
                        std::span<const double> alpha);

/// l_s + lambda_ST l_t + lambda_CL l_cl
Tensor total_loss(const Tensor& source, const Tensor& target, const Tensor& contrast,
                  const LossWeights& weights);

}  // namespace clst
