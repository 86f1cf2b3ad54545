#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clst/labels.hpp"
#include "clst/tensor.hpp"

namespace clst {

/// Per-pixel softmax entropy, natural log, probabilities floored at 1e-12.
std::vector<double> entropy_map(const Tensor& probabilities);

/// Keeps the ceil(fraction * H * W) lowest-entropy pixels of one image,
/// labeled with their argmax; the rest are kIgnore. Equal entropies are
/// ordered by pixel index.
LabelMap confident_labels(const Tensor& probabilities, double fraction);

/// Integer weight of the ensemble update: initial + increment * floor(i / interval).
struct GammaSchedule {
  std::uint32_t initial = 1;
  std::uint32_t increment = 1;
  std::uint64_t interval = 2000;

  std::uint32_t at(std::uint64_t iteration) const;

  friend bool operator==(const GammaSchedule&, const GammaSchedule&) = default;
};

enum class VoteWidth : std::uint8_t { bits8 = 8, bits16 = 16 };

/// Sparse temporal ensemble of hard target predictions. Only non-zero
/// (class, votes) pairs are stored, one short list per pixel.
class PseudoLabelStore {
 public:
  struct Entry {
    std::uint8_t cls;
    std::uint16_t votes;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  PseudoLabelStore(std::size_t images, std::size_t height, std::size_t width,
                   std::size_t classes, GammaSchedule schedule = {},
                   VoteWidth width_bits = VoteWidth::bits16);

  /// votes[pixel][prediction] += gamma(iteration). Throws std::overflow_error
  /// instead of wrapping when a count would exceed the vote width.
  void record(std::uint32_t image_id, const LabelMap& prediction,
              std::uint64_t iteration);

  /// Class with the most votes per pixel, lowest index on ties; kIgnore for
  /// pixels (or images) with no recordings.
  LabelMap majority(std::uint32_t image_id) const;

  /// Stored entries / (images * H * W * C).
  double density() const;
  std::size_t entry_count() const;
  bool empty() const { return entry_count() == 0; }
  std::uint32_t recordings(std::uint32_t image_id) const;

  std::span<const Entry> votes(std::uint32_t image_id, std::size_t pixel) const;
  /// Direct write used when restoring from disk; count 0 removes the entry.
  void set_votes(std::uint32_t image_id, std::size_t pixel, std::uint8_t cls,
                 std::uint16_t count);
  void set_recordings(std::uint32_t image_id, std::uint32_t n);

  std::size_t images() const { return tables_.size(); }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t classes() const { return classes_; }
  const GammaSchedule& schedule() const { return schedule_; }
  VoteWidth vote_width() const { return width_bits_; }
  std::uint32_t max_votes() const;

  friend bool operator==(const PseudoLabelStore&, const PseudoLabelStore&) = default;

 private:
  struct ImageTable {
    std::vector<std::vector<Entry>> pixels;  // empty until first recording
    std::uint32_t recordings = 0;
    friend bool operator==(const ImageTable&, const ImageTable&) = default;
  };

  ImageTable& table(std::uint32_t image_id);
  const ImageTable& table(std::uint32_t image_id) const;

  std::size_t height_, width_, classes_;
  GammaSchedule schedule_;
  VoteWidth width_bits_;
  std::vector<ImageTable> tables_;
};

}  // namespace clst
