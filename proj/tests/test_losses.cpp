#include <doctest.h>

#include <cmath>

#include "clst/balance.hpp"
#include "clst/losses.hpp"
#include "clst/segnet.hpp"
#include "helpers.hpp"

using namespace clst;
using clst::testing::random_labels;
using clst::testing::random_probs;
using clst::testing::random_tensor;

namespace {

const std::vector<double> kHalf{0.5, 0.5};

CentroidBank bank_from(const std::vector<std::vector<double>>& g) {
  CentroidBank bank(g.size(), g.front().size(), 0.02, 100);
  std::vector<double> flat;
  for (const auto& row : g) flat.insert(flat.end(), row.begin(), row.end());
  bank.restore(flat, std::vector<bool>(g.size(), true), 0);
  return bank;
}

TargetMeans means_of(std::vector<std::size_t> classes, std::vector<double> m, std::size_t k) {
  const auto rows = classes.size();
  return TargetMeans{std::move(classes), Tensor::from({rows, k}, std::move(m))};
}

std::vector<double> random_alpha(std::size_t C, Rng& rng) {
  std::vector<double> o(C);
  for (auto& x : o) x = rng.uniform(0.05, 1.0);
  return balance_weights(o, 5.0);
}

}  // namespace

TEST_CASE("source cross-entropy spot values") {
  const auto p = Tensor::from({1, 1, 2}, {0.5, 0.5});
  const double l = source_ce(p, LabelMap(1, 1, 0), kHalf).item();
  CHECK(std::abs(l - 0.25 * std::log(2.0)) < 1e-15);
  CHECK(l == doctest::Approx(0.1733).epsilon(1e-3));

  // Perfect prediction (clamped one-hot) is bounded by C * alpha_max * |log(1 - eps)|.
  const double eps = 1e-9;
  const auto y = LabelMap(1, 1, 1);
  const auto sharp = Tensor::from({1, 1, 3}, {eps / 2, 1 - eps, eps / 2});
  const std::vector<double> a{0.2, 0.5, 0.3};
  CHECK(source_ce(sharp, y, a).item() <= 3 * 0.5 * std::abs(std::log(1 - eps)) + 1e-18);
}

TEST_CASE("target cross-entropy") {
  Rng rng(1);
  SUBCASE("all ignored is zero") {
    const auto p = random_probs(4, 5, 3, rng);
    const std::vector<double> a{0.2, 0.3, 0.5};
    CHECK(target_ce(p, LabelMap(4, 5), a).item() == 0.0);
    CHECK(target_ce(p, LabelMap(4, 5), a, TargetNorm::valid_pixels).item() == 0.0);
  }
  SUBCASE("one valid pixel divides by the full map") {
    const std::size_t H = 3, W = 4;
    const auto p = Tensor::full({H, W, 2}, 0.5);
    LabelMap pseudo(H, W);
    pseudo.labels[5] = 0;
    const double l = target_ce(p, pseudo, kHalf).item();
    CHECK(std::abs(l - 0.25 * std::log(2.0) / double(H * W)) < 1e-15);
    CHECK(std::abs(target_ce(p, pseudo, kHalf, TargetNorm::valid_pixels).item() -
                   0.25 * std::log(2.0)) < 1e-15);
  }
  SUBCASE("equals the source loss on true, fully valid labels") {
    const auto p = random_probs(5, 6, 4, rng);
    const auto y = random_labels(5, 6, 4, rng);
    const auto a = random_alpha(4, rng);
    CHECK(target_ce(p, y, a).item() == source_ce(p, y, a).item());
  }
}

TEST_CASE("cross-entropy terms are non-negative and differentiable") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto logits = random_tensor({3, 4, 5}, rng);
    const auto y = random_labels(3, 4, 5, rng);
    const auto pseudo = random_labels(3, 4, 5, rng, 0.5);
    const auto a = random_alpha(5, rng);
    CHECK(source_ce(softmax(logits), y, a).item() >= 0.0);
    CHECK(target_ce(softmax(logits), pseudo, a).item() >= 0.0);
    CHECK(finite_diff_check([&](const Tensor& t) { return source_ce(softmax(t), y, a); }, logits, 1e-5) < 1e-4);
    CHECK(finite_diff_check([&](const Tensor& t) { return target_ce(softmax(t), pseudo, a); }, logits, 1e-5) < 1e-4);
  }
}

TEST_CASE("gradient descent on one pixel drives p to the label") {
  const std::vector<double> a{0.3, 0.4, 0.3};
  auto logits = Tensor::from({1, 1, 3}, {0.5, 0.2, -0.1}, true);
  const LabelMap y(1, 1, 2);
  double prev = 1e9;
  for (int step = 0; step < 2000; ++step) {
    logits.zero_grad();
    auto loss = source_ce(softmax(logits), y, a);
    CHECK(loss.item() <= prev);
    prev = loss.item();
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i) logits.mutable_values()[i] -= 50.0 * logits.grad()[i];
  }
  CHECK(softmax(logits.detach())[2] > 0.99);
}

TEST_CASE("contrastive two-class hand case") {
  const auto bank = bank_from({{1, 0}, {0, 1}});
  const std::vector<TargetMeans> t{means_of({0}, {1, 0}, 2)};
  CHECK(std::abs(contrastive_loss(bank, t, kHalf).item() - (-0.5)) <= 1e-12);
}

TEST_CASE("contrastive with equal similarities is alpha ln(C - 1)") {
  for (std::size_t C : {3u, 5u}) {
    std::vector<std::vector<double>> g(C, std::vector<double>(C, 0.0));
    for (std::size_t c = 0; c < C; ++c) g[c][c] = 1.0;
    const auto bank = bank_from(g);
    Rng rng(C);
    const auto a = random_alpha(C, rng);
    for (std::size_t c = 0; c < C; ++c) {
      const std::vector<TargetMeans> t{means_of({c}, std::vector<double>(C, 0.7), C)};
      CHECK(std::abs(contrastive_loss(bank, t, a).item() - a[c] * std::log(double(C - 1))) < 1e-12);
    }
  }
}

TEST_CASE("contrastive is scale invariant in g and m") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t C = 4, K = 6;
    std::vector<std::vector<double>> g(C, std::vector<double>(K));
    for (auto& r : g)
      for (auto& x : r) x = rng.uniform(-1, 1);
    const auto m = random_tensor({3, K}, rng);
    const auto a = random_alpha(C, rng);
    const double sg = rng.uniform(0.01, 100), sm = rng.uniform(0.01, 100);
    auto g2 = g;
    for (auto& r : g2)
      for (auto& x : r) x *= sg;
    const std::vector<TargetMeans> t1{TargetMeans{{0, 2, 3}, m}};
    const std::vector<TargetMeans> t2{TargetMeans{{0, 2, 3}, scale(m, sm)}};
    CHECK(std::abs(contrastive_loss(bank_from(g), t1, a).item() -
                   contrastive_loss(bank_from(g2), t2, a).item()) < 1e-9);
  }
}

TEST_CASE("contrastive skips uninitialized centroids and averages over images") {
  CentroidBank bank(3, 2, 0.02, 100);
  bank.restore({1, 0, 0, 1, 5, 5}, {true, true, false}, 0);
  const std::vector<double> a{0.25, 0.25, 0.5};
  // Class 2 is uninitialized: its row contributes nothing, and g_2 is not a negative.
  const std::vector<TargetMeans> one{means_of({0, 2}, {1, 0, 0.3, 0.7}, 2)};
  CHECK(std::abs(contrastive_loss(bank, one, a).item() - (-0.25)) < 1e-12);
  const std::vector<TargetMeans> two{one[0], TargetMeans{}};
  CHECK(std::abs(contrastive_loss(bank, two, a).item() - (-0.125)) < 1e-12);
  // A single initialized class has no negatives at all.
  CentroidBank lonely(2, 2, 0.02, 100);
  lonely.restore({1, 0, 0, 0}, {true, false}, 0);
  const std::vector<TargetMeans> both{means_of({0, 1}, {1, 0, 0.3, 0.7}, 2)};
  CHECK(contrastive_loss(lonely, both, kHalf).item() == 0.0);
}

TEST_CASE("contrastive rejects zero-norm vectors") {
  const auto bank = bank_from({{1, 0}, {0, 1}});
  const std::vector<TargetMeans> t{means_of({0}, {0, 0}, 2)};
  CHECK_THROWS_AS(contrastive_loss(bank, t, kHalf), std::domain_error);
  const auto degenerate = bank_from({{0, 0}, {0, 1}});
  const std::vector<TargetMeans> ok{means_of({1}, {1, 1}, 2)};
  CHECK_THROWS_AS(contrastive_loss(degenerate, ok, kHalf), std::domain_error);
}

TEST_CASE("contrastive gradient and descent toward the matching centroid") {
  int config = 0;
  for (std::size_t C : {3u, 5u})
    for (std::uint64_t seed = 0; seed < 5; ++seed, ++config) {
      Rng rng(100 * C + seed);
      const std::size_t K = 8;
      std::vector<std::vector<double>> g(C, std::vector<double>(K));
      for (auto& r : g)
        for (auto& x : r) x = rng.normal();
      const auto bank = bank_from(g);
      const auto a = random_alpha(C, rng);
      const std::size_t c = rng.index(C);
      const auto m = random_tensor({1, K}, rng);

      auto f = [&](const Tensor& x) {
        const std::vector<TargetMeans> t{TargetMeans{{c}, x}};
        return contrastive_loss(bank, t, a);
      };
      CHECK(finite_diff_check(f, m, 1e-5) < 1e-4);

      // Tangent direction on the sphere from m toward g_c.
      double nm = 0, ng = 0, dot_gm = 0;
      for (std::size_t k = 0; k < K; ++k) {
        nm += m[k] * m[k];
        ng += g[c][k] * g[c][k];
      }
      nm = std::sqrt(nm), ng = std::sqrt(ng);
      for (std::size_t k = 0; k < K; ++k) dot_gm += g[c][k] / ng * m[k] / nm;
      auto x = m.detach();
      x.set_requires_grad(true);
      f(x).backward();
      double deriv = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double d = g[c][k] / ng - dot_gm * m[k] / nm;
        deriv += x.grad()[k] * d;
      }
      CAPTURE(config);
      CHECK(deriv < 0.0);
    }
}

TEST_CASE("total loss") {
  const auto ls = Tensor::scalar(1), lt = Tensor::scalar(2), lc = Tensor::scalar(3);
  CHECK(total_loss(ls, lt, lc, LossWeights{0.1, 0.1}).item() == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(total_loss(ls, lt, lc, LossWeights{0, 0}).item() == 1.0);
  CHECK(LossWeights{}.self_training == 0.1);
  CHECK(LossWeights{}.contrastive == 0.1);
  CHECK_THROWS(LossWeights{-1, 0}.validate());
  CHECK_THROWS(LossWeights{0, NAN}.validate());
}

namespace {

struct Terms {
  Tensor source, target, contrast;
};

/// Every loss term on a 4x4 image, as a function of one network parameter.
Terms terms_for(const NetworkParams& p, const Tensor& img_s, const LabelMap& y,
                const Tensor& img_t, const LabelMap& pseudo, const CentroidBank& bank,
                const std::vector<double>& a) {
  const auto s = forward(p, img_s);
  const auto t = forward(p, img_t);
  const std::vector<TargetMeans> means{target_image_means(t.projections, pseudo, p.config.classes)};
  return {source_ce(s.probabilities, y, a), target_ce(t.probabilities, pseudo, a),
          contrastive_loss(bank, means, a)};
}

NetworkParams with_param(const NetworkParams& base, std::size_t k, const Tensor& w) {
  NetworkParams p = base;
  Tensor* slots[] = {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b,
                     &p.head_w,  &p.head_b,  &p.proj_w,  &p.proj_b};
  *slots[k] = w;
  return p;
}

}  // namespace

TEST_CASE("end-to-end gradients and routing on a 4x4 image") {
  Rng rng(21);
  const NetworkConfig cfg{3, 4, 6, 3};
  auto params = init_network(cfg, rng);
  // Non-zero biases so their gradients are exercised at a generic point.
  for (auto* b : {&params.conv1_b, &params.conv2_b, &params.head_b, &params.proj_b})
    for (auto& v : b->mutable_values()) v = rng.uniform(-0.1, 0.1);
  const auto img_s = random_tensor({4, 4, 3}, rng, 0, 1);
  const auto img_t = random_tensor({4, 4, 3}, rng, 0, 1);
  const auto y = random_labels(4, 4, 3, rng);
  LabelMap pseudo = random_labels(4, 4, 3, rng, 0.3);
  pseudo.labels[0] = 0, pseudo.labels[1] = 1, pseudo.labels[2] = 2;
  std::vector<std::vector<double>> g(3, std::vector<double>(3));
  for (auto& r : g)
    for (auto& x : r) x = rng.normal();
  const auto bank = bank_from(g);
  const std::vector<double> a{0.2, 0.5, 0.3};
  const LossWeights w{0.1, 0.1};

  const auto names = params.named();
  for (std::size_t k = 0; k < names.size(); ++k) {
    CAPTURE(names[k].first);
    const auto x = names[k].second.detach();
    auto term = [&](int which) {
      return [&, which](const Tensor& t) {
        const auto all = terms_for(with_param(params, k, t), img_s, y, img_t, pseudo, bank, a);
        switch (which) {
          case 0: return all.source;
          case 1: return all.target;
          case 2: return all.contrast;
          default: return total_loss(all.source, all.target, all.contrast, w);
        }
      };
    };
    for (int which = 0; which < 4; ++which) {
      CAPTURE(which);
      CHECK(finite_diff_check(term(which), x, 1e-5) < 1e-4);
    }
  }

  // Routing: the head never sees the contrastive term, the projector sees only it.
  auto grads_of = [&](int which) {
    auto p = params.clone();
    enable_grad(p);
    const auto all = terms_for(p, img_s, y, img_t, pseudo, bank, a);
    Tensor l = which == 0 ? add(all.source, all.target) : all.contrast;
    l.backward();
    return p;
  };
  auto is_zero = [](const Tensor& t) {
    if (!t.has_grad()) return true;
    for (double v : t.grad())
      if (v != 0.0) return false;
    return true;
  };
  const auto ce = grads_of(0);
  CHECK(is_zero(ce.proj_w));
  CHECK(is_zero(ce.proj_b));
  CHECK_FALSE(is_zero(ce.head_w));
  CHECK_FALSE(is_zero(ce.conv2_w));
  const auto cl = grads_of(1);
  CHECK(is_zero(cl.head_w));
  CHECK(is_zero(cl.head_b));
  CHECK_FALSE(is_zero(cl.proj_w));
  CHECK_FALSE(is_zero(cl.conv2_w));
}
