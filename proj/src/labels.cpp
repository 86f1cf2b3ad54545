#include "clst/labels.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace clst {

std::size_t LabelMap::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(),
                    [](std::uint8_t v) { return v != kIgnore; }));
}

OneHotMap to_one_hot(const LabelMap& map, std::size_t classes) {
  OneHotMap out{map.height, map.width, classes,
                std::vector<std::uint8_t>(map.size() * classes, 0)};
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto c = map.labels[i];
    if (c == kIgnore) continue;
    if (c >= classes) {
      throw std::out_of_range("to_one_hot: class " + std::to_string(c) +
                              " >= " + std::to_string(classes));
    }
    out.data[i * classes + c] = 1;
  }
  return out;
}

LabelMap from_one_hot(const OneHotMap& map) {
  LabelMap out(map.height, map.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t c = 0; c < map.classes; ++c) {
      if (map.data[i * map.classes + c]) {
        out.labels[i] = static_cast<std::uint8_t>(c);
        break;
      }
    }
  }
  return out;
}

std::vector<bool> class_presence(const LabelMap& map, std::size_t classes) {
  std::vector<bool> present(classes, false);
  for (auto c : map.labels)
    if (c != kIgnore && c < classes) present[c] = true;
  return present;
}

namespace {

std::size_t nearest_index(std::size_t i, std::size_t from, std::size_t to) {
  return i * from / to;
}

}  // namespace

LabelMap resize_labels(const LabelMap& map, std::size_t height,
                       std::size_t width) {
  if (height == 0 || width == 0)
    throw std::invalid_argument("resize_labels: target size must be >= 1");
  if (height == map.height && width == map.width) return map;
  LabelMap out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = nearest_index(y, map.height, height);
    for (std::size_t x = 0; x < width; ++x)
      out.labels[y * width + x] = map.at(sy, nearest_index(x, map.width, width));
  }
  return out;
}

OneHotMap resize_onehot(const OneHotMap& map, std::size_t height,
                        std::size_t width) {
  if (height == 0 || width == 0)
    throw std::invalid_argument("resize_onehot: target size must be >= 1");
  OneHotMap out{height, width, map.classes,
                std::vector<std::uint8_t>(height * width * map.classes, 0)};
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = nearest_index(y, map.height, height);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = nearest_index(x, map.width, width);
      const auto* src = map.data.data() + (sy * map.width + sx) * map.classes;
      std::copy(src, src + map.classes,
                out.data.begin() + (y * width + x) * map.classes);
    }
  }
  return out;
}

}  // namespace clst
