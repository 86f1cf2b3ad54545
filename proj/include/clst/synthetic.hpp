#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "clst/labels.hpp"
#include "clst/rng.hpp"
#include "clst/tensor.hpp"

namespace clst {

enum class Domain : std::uint8_t { source = 0, target = 1 };

const char* domain_name(Domain d);

/// One H x W x 3 image with values in [0, 1] and an optional label map.
struct SegSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> image;  // row-major HWC
  std::optional<LabelMap> label;
  Domain domain = Domain::source;
  std::uint32_t id = 0;  // index within its domain

  /// Target labels are present only so the evaluator can score predictions.
  bool label_is_eval_only() const { return domain == Domain::target && label.has_value(); }

  Tensor image_tensor() const;

  friend bool operator==(const SegSample&, const SegSample&) = default;
};

/// Appearance change applied to target images on top of the shared scene
/// family.
struct DomainShift {
  double hue_rotation_deg = 0.0;
  double brightness_offset = 0.0;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;  // extra noise on top of the shared pixel noise

  bool is_identity() const {
    return hue_rotation_deg == 0.0 && brightness_offset == 0.0 &&
           blur_sigma == 0.0 && noise_sigma == 0.0;
  }
};

struct DatasetManifest {
  std::size_t source_count = 200;  // N
  std::size_t target_count = 200;  // M
  std::size_t height = 32;
  std::size_t width = 48;
  std::size_t classes = 5;
  std::uint64_t seed = 1;
  DomainShift shift = default_shift();

  static DomainShift default_shift();
  /// Throws ConfigError on N or M zero, C < 2, C > 254 or non-finite shift.
  void validate() const;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  std::vector<SegSample> samples;

  std::vector<SegSample> of_domain(Domain d) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Layout of one scene: which layers are drawn and where. Class 0 is the
/// background, then road (1), sky (2), circle blob (3), rectangle blob (4);
/// further classes alternate circle and rectangle blobs.
struct SceneLayout {
  struct Layer {
    std::size_t cls = 0;
    bool present = false;
    double a = 0, b = 0, c = 0, d = 0;  // geometry, meaning depends on kind
  };
  std::vector<Layer> layers;
  std::vector<std::array<double, 3>> colors;  // per-class colour this image
};

/// Probability that a class is drawn in an image of the given domain.
double class_prior(std::size_t cls, Domain domain);

SceneLayout sample_layout(const DatasetManifest& m, Domain domain, Rng& rng);
/// Paints the layout with shared pixel noise; no domain shift.
SegSample render_scene(const DatasetManifest& m, const SceneLayout& layout,
                       Rng& rng);
/// Applies hue rotation, brightness offset, blur and extra noise in place.
void apply_shift(SegSample& sample, const DomainShift& shift, Rng& rng);

/// Pure function of the manifest. Source samples come first, then target;
/// each image draws from its own stream keyed by (seed, domain, id).
Dataset generate(const DatasetManifest& manifest);

struct JitterParams {
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
};

/// Colour jitter then Gaussian blur on the image only; strengths are
/// clamped to [0, 1] and sigma to [0, 8].
SegSample augment(const SegSample& sample, const JitterParams& jitter,
                  double blur_sigma, Rng& rng);

/// Separable Gaussian blur with clamped borders, in place on HWC data.
void gaussian_blur(std::vector<double>& image, std::size_t height,
                   std::size_t width, double sigma);

struct TargetSplit {
  std::vector<SegSample> train;  // labels stripped
  std::vector<SegSample> val;    // labeled, evaluation only
};

/// Held-out labeled split of the target domain; membership is a pure
/// function of (seed, fraction).
TargetSplit split_target(const Dataset& data, double val_fraction,
                         std::uint64_t seed);

std::vector<SegSample> strip_labels(std::vector<SegSample> samples);

void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace clst
