#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clst/balance.hpp"
#include "clst/errors.hpp"
#include "clst/rng.hpp"

using namespace clst;

namespace {

// Direct evaluation of the capped inverse-occurrence weights.
std::vector<double> oracle_weights(const std::vector<double>& o, double beta) {
  std::vector<double> w(o.size());
  double total = 0.0;
  for (std::size_t c = 0; c < o.size(); ++c) total += w[c] = std::min(1.0 / o[c], beta);
  for (auto& x : w) x /= total;
  return w;
}

}  // namespace

TEST_CASE("occurrence starts at one") {
  OccurrenceEstimator e(4, 0.01);
  CHECK(e.occurrence() == std::vector<double>(4, 1.0));
}

TEST_CASE("eta = 1 snaps to the last presence") {
  OccurrenceEstimator e(3, 1.0);
  e.update({false, true, false});
  e.update({true, true, true});
  CHECK(e.occurrence() == std::vector<double>(3, 1.0));
}

TEST_CASE("100 absent updates decay as (1 - eta)^k") {
  OccurrenceEstimator e(2, 0.01);
  for (int k = 0; k < 100; ++k) e.update({true, false});
  CHECK(e.occurrence()[0] == 1.0);
  CHECK(e.occurrence()[1] == doctest::Approx(std::pow(0.99, 100)).epsilon(1e-12));
  CHECK(e.occurrence()[1] == doctest::Approx(0.366).epsilon(1e-3));
}

TEST_CASE("only 0 and 1 are fixed points of the update") {
  OccurrenceEstimator e(1, 0.1);
  e.update({true});
  CHECK(e.occurrence()[0] == 1.0);
  e.update({false});
  const double o = e.occurrence()[0];
  CHECK(o < 1.0);
  e.update({false});
  CHECK(e.occurrence()[0] < o);
}

TEST_CASE("balance weight spot values") {
  const std::vector<double> uniform{1, 1, 1};
  for (double beta : {1.0, 5.0, 100.0})
    for (double a : balance_weights(uniform, beta)) CHECK(std::abs(a - 1.0 / 3.0) < 1e-12);

  const auto w = balance_weights(std::vector<double>{1, 0.1, 0.5}, 5.0);
  CHECK(std::abs(w[0] - 0.125) < 1e-12);
  CHECK(std::abs(w[1] - 0.625) < 1e-12);
  CHECK(std::abs(w[2] - 0.25) < 1e-12);

  for (double a : balance_weights(std::vector<double>{1, 0.01, 0.3, 0.7}, 1.0))
    CHECK(std::abs(a - 0.25) < 1e-12);
}

TEST_CASE("beta below one is a config error") {
  CHECK_THROWS_AS(balance_weights(std::vector<double>{1, 1}, 0.5), ConfigError);
}

TEST_CASE("weights agree with direct evaluation and keep their invariants") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::size_t C = 2 + rng.index(10);
    std::vector<double> o(C);
    for (auto& x : o) x = rng.uniform(0.01, 1.0);
    const double beta = rng.uniform(1.0, 20.0);
    const auto w = balance_weights(o, beta);
    const auto ref = oracle_weights(o, beta);
    for (std::size_t c = 0; c < C; ++c) CHECK(std::abs(w[c] - ref[c]) < 1e-12);
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-12);

    // Permutation equivariance.
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = C; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    std::vector<double> op(C);
    for (std::size_t c = 0; c < C; ++c) op[c] = o[perm[c]];
    const auto wp = balance_weights(op, beta);
    for (std::size_t c = 0; c < C; ++c) CHECK(std::abs(wp[c] - w[perm[c]]) < 1e-12);

    // Lowering one occurrence never lowers its weight.
    const std::size_t k = rng.index(C);
    auto lower = o;
    lower[k] *= rng.uniform(0.1, 1.0);
    CHECK(balance_weights(lower, beta)[k] >= w[k] - 1e-15);
  }
}

TEST_CASE("online estimate tracks the true occurrence rate") {
  OccurrenceEstimator e(2, 0.01);
  Rng rng(3);
  for (int i = 0; i < 5000; ++i) e.update({true, rng.bernoulli(0.3)});
  CHECK(e.occurrence()[1] == doctest::Approx(0.3).epsilon(0.5));
  for (double o : e.occurrence()) CHECK((o >= 0.0 && o <= 1.0));
}
