#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace clst {

inline constexpr std::uint8_t kIgnore = 255;

/// H x W map of class indices; kIgnore marks unlabeled pixels.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = kIgnore)
      : height(h), width(w), labels(h * w, fill) {}

  std::size_t size() const { return labels.size(); }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  bool valid(std::size_t i) const { return labels[i] != kIgnore; }
  std::size_t valid_count() const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// H x W x C binary map. Labeled pixels carry exactly one 1; ignored pixels
/// are all-zero.
struct OneHotMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * classes + c];
  }

  friend bool operator==(const OneHotMap&, const OneHotMap&) = default;
};

OneHotMap to_one_hot(const LabelMap& map, std::size_t classes);
/// Pixels with no set entry map back to kIgnore.
LabelMap from_one_hot(const OneHotMap& map);

/// presence[c] is true when at least one valid pixel has class c.
std::vector<bool> class_presence(const LabelMap& map, std::size_t classes);

/// Nearest-neighbour resize; source row for output row i is floor(i*H/H').
LabelMap resize_labels(const LabelMap& map, std::size_t height, std::size_t width);
OneHotMap resize_onehot(const OneHotMap& map, std::size_t height, std::size_t width);

}  // namespace clst
