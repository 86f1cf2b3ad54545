#include "clst/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "clst/errors.hpp"
#include "clst/segnet.hpp"

namespace clst {

std::vector<double> entropy_map(const Tensor& p) {
  if (p.rank() != 3) throw ShapeError("entropy", "expected [H,W,C], got " + shape_str(p.shape()));
  const std::size_t pixels = p.dim(0) * p.dim(1), c = p.dim(2);
  std::vector<double> e(pixels, 0.0);
  const auto v = p.values();
  for (std::size_t i = 0; i < pixels; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double q = v[i * c + j];
      acc -= q * std::log(std::max(q, kLogFloor));
    }
    e[i] = acc;
  }
  return e;
}

LabelMap confident_labels(const Tensor& p, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("confident_labels: fraction must be in (0, 1]");
  const auto e = entropy_map(p);
  const LabelMap argmax = argmax_labels(p);
  const std::size_t n = e.size();
  // The epsilon keeps e.g. 0.3 * 1000 from rounding up to 301.
  const auto keep = std::min(
      n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    return e[a] < e[b] || (e[a] == e[b] && a < b);
  };
  if (keep < n) std::nth_element(order.begin(), order.begin() + keep, order.end(), less);
  LabelMap out(argmax.height, argmax.width);
  for (std::size_t k = 0; k < keep; ++k) out.labels[order[k]] = argmax.labels[order[k]];
  return out;
}

std::uint32_t GammaSchedule::at(std::uint64_t iteration) const {
  const std::uint64_t steps = interval ? iteration / interval : 0;
  return static_cast<std::uint32_t>(initial + increment * steps);
}

PseudoLabelStore::PseudoLabelStore(std::size_t images, std::size_t height,
                                   std::size_t width, std::size_t classes,
                                   GammaSchedule schedule, VoteWidth width_bits)
    : height_(height),
      width_(width),
      classes_(classes),
      schedule_(schedule),
      width_bits_(width_bits),
      tables_(images) {
  if (classes == 0 || classes >= kIgnore)
    throw ConfigError("vote store: classes must be in [1, 254]");
  if (schedule.initial < 1) throw ConfigError("vote store: gamma must start >= 1");
}

std::uint32_t PseudoLabelStore::max_votes() const {
  return width_bits_ == VoteWidth::bits8 ? 0xFFu : 0xFFFFu;
}

PseudoLabelStore::ImageTable& PseudoLabelStore::table(std::uint32_t id) {
  if (id >= tables_.size())
    throw std::out_of_range("vote store: image id " + std::to_string(id) + " out of range");
  return tables_[id];
}

const PseudoLabelStore::ImageTable& PseudoLabelStore::table(std::uint32_t id) const {
  if (id >= tables_.size())
    throw std::out_of_range("vote store: image id " + std::to_string(id) + " out of range");
  return tables_[id];
}

void PseudoLabelStore::record(std::uint32_t image_id, const LabelMap& prediction,
                              std::uint64_t iteration) {
  if (prediction.height != height_ || prediction.width != width_)
    throw ShapeError("record_votes", Shape{prediction.height, prediction.width},
                     Shape{height_, width_});
  auto& t = table(image_id);
  const std::uint32_t gamma = schedule_.at(iteration);
  const std::uint32_t cap = max_votes();
  if (t.pixels.empty()) t.pixels.resize(height_ * width_);
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const auto c = prediction.labels[i];
    if (c == kIgnore) continue;
    if (c >= classes_) throw std::out_of_range("record_votes: class out of range");
    auto& list = t.pixels[i];
    auto it = std::find_if(list.begin(), list.end(),
                           [c](const Entry& e) { return e.cls == c; });
    const std::uint32_t current = it == list.end() ? 0 : it->votes;
    if (current + gamma > cap) {
      throw std::overflow_error("vote count overflow at image " + std::to_string(image_id) +
                                " pixel " + std::to_string(i) +
                                "; use a wider vote width");
    }
    if (it == list.end())
      list.push_back({c, static_cast<std::uint16_t>(gamma)});
    else
      it->votes = static_cast<std::uint16_t>(current + gamma);
  }
  ++t.recordings;
}

LabelMap PseudoLabelStore::majority(std::uint32_t image_id) const {
  const auto& t = table(image_id);
  LabelMap out(height_, width_);
  if (t.pixels.empty()) return out;
  for (std::size_t i = 0; i < t.pixels.size(); ++i) {
    const auto& list = t.pixels[i];
    if (list.empty()) continue;
    Entry best = list.front();
    for (const auto& e : list)
      if (e.votes > best.votes || (e.votes == best.votes && e.cls < best.cls)) best = e;
    out.labels[i] = best.cls;
  }
  return out;
}

std::size_t PseudoLabelStore::entry_count() const {
  std::size_t n = 0;
  for (const auto& t : tables_)
    for (const auto& list : t.pixels) n += list.size();
  return n;
}

double PseudoLabelStore::density() const {
  const double slots = static_cast<double>(tables_.size() * height_ * width_ * classes_);
  return slots > 0 ? static_cast<double>(entry_count()) / slots : 0.0;
}

std::uint32_t PseudoLabelStore::recordings(std::uint32_t image_id) const {
  return table(image_id).recordings;
}

void PseudoLabelStore::set_recordings(std::uint32_t image_id, std::uint32_t n) {
  table(image_id).recordings = n;
}

std::span<const PseudoLabelStore::Entry> PseudoLabelStore::votes(
    std::uint32_t image_id, std::size_t pixel) const {
  const auto& t = table(image_id);
  if (t.pixels.empty()) return {};
  return t.pixels.at(pixel);
}

void PseudoLabelStore::set_votes(std::uint32_t image_id, std::size_t pixel,
                                 std::uint8_t cls, std::uint16_t count) {
  if (cls >= classes_) throw std::out_of_range("set_votes: class out of range");
  if (count > max_votes()) throw std::overflow_error("set_votes: count exceeds vote width");
  auto& t = table(image_id);
  if (t.pixels.empty()) t.pixels.resize(height_ * width_);
  auto& list = t.pixels.at(pixel);
  auto it = std::find_if(list.begin(), list.end(),
                         [cls](const Entry& e) { return e.cls == cls; });
  if (count == 0) {
    if (it != list.end()) list.erase(it);
  } else if (it == list.end()) {
    list.push_back({cls, count});
  } else {
    it->votes = count;
  }
}

}  // namespace clst
