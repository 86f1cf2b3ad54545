#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clst/pseudo.hpp"
#include "clst/segnet.hpp"
#include "helpers.hpp"

using namespace clst;
using clst::testing::random_labels;
using clst::testing::random_probs;

namespace {

/// Dense H*W*C counter used as the reference for the sparse store.
struct DenseVotes {
  std::size_t pixels, classes;
  std::vector<std::uint64_t> counts;
  DenseVotes(std::size_t p, std::size_t c) : pixels(p), classes(c), counts(p * c, 0) {}
  void record(const LabelMap& pred, std::uint32_t gamma) {
    for (std::size_t i = 0; i < pixels; ++i) counts[i * classes + pred.labels[i]] += gamma;
  }
  std::uint8_t majority(std::size_t i) const {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (counts[i * classes + c] > counts[i * classes + best]) best = c;
    return counts[i * classes + best] ? static_cast<std::uint8_t>(best) : kIgnore;
  }
};

/// Full sort by (entropy, index), keep the first ceil(f * n).
std::vector<bool> sort_oracle(const std::vector<double>& e, double f) {
  std::vector<std::size_t> idx(e.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return e[a] != e[b] ? e[a] < e[b] : a < b;
  });
  const auto keep = static_cast<std::size_t>(std::ceil(f * static_cast<double>(e.size()) - 1e-9));
  std::vector<bool> sel(e.size(), false);
  for (std::size_t k = 0; k < keep; ++k) sel[idx[k]] = true;
  return sel;
}

}  // namespace

TEST_CASE("entropy spot values") {
  const auto uniform = Tensor::full({2, 3, 4}, 0.25);
  for (double e : entropy_map(uniform)) CHECK(std::abs(e - std::log(4.0)) <= 1e-12);

  const auto onehot = Tensor::from({1, 1, 4}, {0, 1, 0, 0});
  CHECK(entropy_map(onehot)[0] == doctest::Approx(0.0).epsilon(1e-9));

  const auto half = Tensor::from({1, 1, 4}, {0.5, 0.5, 0, 0});
  CHECK(std::abs(entropy_map(half)[0] - 0.693147) < 1e-6);
}

TEST_CASE("entropy never exceeds ln C") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t C = 2 + rng.index(8);
    for (double e : entropy_map(random_probs(5, 5, C, rng)))
      CHECK(e <= std::log(static_cast<double>(C)) + 1e-9);
  }
}

TEST_CASE("confident labels") {
  Rng rng(1);
  const auto p = random_probs(10, 13, 5, rng);
  const auto argmax = argmax_labels(p);

  SUBCASE("fraction 1 keeps every argmax") { CHECK(confident_labels(p, 1.0) == argmax); }

  SUBCASE("valid count is ceil(0.3 HW)") {
    CHECK(confident_labels(p, 0.3).valid_count() == 39);
    CHECK(confident_labels(random_probs(7, 7, 3, rng), 0.3).valid_count() == 15);
  }

  SUBCASE("kept pixels carry their argmax") {
    const auto l = confident_labels(p, 0.3);
    for (std::size_t i = 0; i < l.size(); ++i)
      if (l.valid(i)) CHECK(l.labels[i] == argmax.labels[i]);
  }

  SUBCASE("fraction outside (0, 1] is rejected") {
    CHECK_THROWS(confident_labels(p, 0.0));
    CHECK_THROWS(confident_labels(p, 1.5));
  }
}

TEST_CASE("selection equals the full-sort oracle including ties") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto p = random_probs(12, 9, 4, rng);
    if (seed % 2) {
      // Duplicate some rows so equal entropies occur.
      auto v = p.mutable_values();
      for (std::size_t i = 0; i < 40; ++i) {
        const auto src = rng.index(108), dst = rng.index(108);
        for (std::size_t c = 0; c < 4; ++c) v[dst * 4 + c] = v[src * 4 + c];
      }
    }
    const double f = seed % 3 == 0 ? 0.3 : rng.uniform(0.05, 1.0);
    const auto l = confident_labels(p, f);
    const auto e = entropy_map(p);
    const auto ref = sort_oracle(e, f);
    double max_kept = -1, min_rejected = 1e9;
    for (std::size_t i = 0; i < l.size(); ++i) {
      CHECK(l.valid(i) == ref[i]);
      if (l.valid(i)) max_kept = std::max(max_kept, e[i]);
      else min_rejected = std::min(min_rejected, e[i]);
    }
    CHECK(max_kept <= min_rejected);
  }
}

TEST_CASE("gamma schedule is a non-decreasing staircase from 1") {
  const GammaSchedule g{1, 1, 2000};
  CHECK(g.at(0) == 1);
  CHECK(g.at(1999) == 1);
  CHECK(g.at(2000) == 2);
  CHECK(g.at(5999) == 3);
  CHECK(g.at(6000) == 4);
  std::uint32_t prev = g.at(0);
  for (std::uint64_t j = 1; j < 10000; ++j) {
    CHECK(g.at(j) >= prev);
    CHECK(g.at(j) - prev <= 1);
    prev = g.at(j);
  }
}

TEST_CASE("vote store basics") {
  PseudoLabelStore store(2, 2, 3, 5);
  CHECK(store.density() == 0.0);
  CHECK(store.majority(0).valid_count() == 0);

  Rng rng(4);
  const auto pred = random_labels(2, 3, 5, rng);
  store.record(0, pred, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(store.votes(0, i).size() == 1);
    CHECK(store.votes(0, i)[0].votes == 1);
  }
  CHECK(store.majority(0) == pred);
  CHECK(store.majority(1).valid_count() == 0);
  CHECK(store.density() == doctest::Approx(1.0 / 5.0 / 2.0));

  PseudoLabelStore single(1, 2, 3, 5);
  single.record(0, pred, 1);
  CHECK(single.density() == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(store.record(7, pred, 1), std::out_of_range);
}

TEST_CASE("weighted recount example") {
  PseudoLabelStore store(1, 1, 1, 3, GammaSchedule{1, 1, 10});
  LabelMap c0(1, 1, 0), c1(1, 1, 1);
  store.record(0, c0, 1);   // gamma 1
  store.record(0, c1, 2);   // gamma 1
  store.record(0, c1, 10);  // gamma 2
  const auto v = store.votes(0, 0);
  REQUIRE(v.size() == 2);
  std::uint32_t n0 = 0, n1 = 0;
  for (const auto& e : v) (e.cls == 0 ? n0 : n1) = e.votes;
  CHECK(n0 == 1);
  CHECK(n1 == 3);
  CHECK(store.majority(0).labels[0] == 1);
}

TEST_CASE("ties go to the lowest class") {
  PseudoLabelStore store(1, 1, 1, 3);
  store.record(0, LabelMap(1, 1, 2), 1);
  store.record(0, LabelMap(1, 1, 1), 1);
  store.record(0, LabelMap(1, 1, 2), 1);
  store.record(0, LabelMap(1, 1, 1), 1);
  CHECK(store.majority(0).labels[0] == 1);
}

TEST_CASE("overflow is a hard error, never a wrap") {
  PseudoLabelStore narrow(1, 1, 1, 2, GammaSchedule{100, 0, 1}, VoteWidth::bits8);
  narrow.record(0, LabelMap(1, 1, 0), 1);
  narrow.record(0, LabelMap(1, 1, 0), 2);
  CHECK_THROWS_AS(narrow.record(0, LabelMap(1, 1, 0), 3), std::overflow_error);
  CHECK(narrow.votes(0, 0)[0].votes == 200);

  PseudoLabelStore wide(1, 1, 1, 2, GammaSchedule{100, 0, 1}, VoteWidth::bits16);
  for (int i = 0; i < 3; ++i) wide.record(0, LabelMap(1, 1, 0), 1);
  CHECK(wide.votes(0, 0)[0].votes == 300);
}

TEST_CASE("sparse store equals a dense recount on randomized streams") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t H = 25, W = 40, C = 5;  // 1000 pixels
    const GammaSchedule g{1, 1, 7};
    PseudoLabelStore store(1, H, W, C, g);
    DenseVotes dense(H * W, C);
    // Biased streams so majorities are non-trivial.
    const auto favourite = random_labels(H, W, C, rng);
    for (std::uint64_t n = 1; n <= 50; ++n) {
      LabelMap pred = favourite;
      for (auto& l : pred.labels)
        if (rng.bernoulli(0.6)) l = static_cast<std::uint8_t>(rng.index(C));
      store.record(0, pred, n);
      dense.record(pred, g.at(n));
    }
    const auto maj = store.majority(0);
    for (std::size_t i = 0; i < H * W; ++i) {
      CHECK(maj.labels[i] == dense.majority(i));
      CHECK(store.votes(0, i).size() <= std::min<std::size_t>(50, C));
      for (const auto& e : store.votes(0, i)) {
        CHECK(e.votes > 0);
        CHECK(e.votes == dense.counts[i * C + e.cls]);
      }
    }
  }
}

TEST_CASE("order of equal-gamma recordings does not matter") {
  Rng rng(12);
  std::vector<LabelMap> preds;
  for (int k = 0; k < 12; ++k) preds.push_back(random_labels(6, 6, 4, rng));
  PseudoLabelStore a(1, 6, 6, 4), b(1, 6, 6, 4);
  for (std::size_t k = 0; k < preds.size(); ++k) a.record(0, preds[k], 1 + k);
  for (std::size_t k = preds.size(); k-- > 0;) b.record(0, preds[k], 100 - k);
  CHECK(a.majority(0) == b.majority(0));
}

TEST_CASE("set_votes restores entries and removes zeros") {
  PseudoLabelStore s(1, 1, 2, 3);
  s.set_votes(0, 1, 2, 5);
  CHECK(s.votes(0, 1).size() == 1);
  s.set_votes(0, 1, 2, 0);
  CHECK(s.votes(0, 1).empty());
  CHECK_THROWS_AS(s.set_votes(0, 0, 3, 1), std::out_of_range);
}
