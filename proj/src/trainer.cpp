#include "clst/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "clst/losses.hpp"
#include "clst/rng.hpp"

namespace clst {

double poly_lr(std::size_t iter, std::size_t total, double lr0, double power) {
  if (total == 0 || iter >= total) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

void sgd_step(std::span<Tensor> params, OptimizerState& state, double lr, double momentum,
              double weight_decay) {
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  } else if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: optimizer state does not match parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = params[k].has_grad() ? params[k].grad() : std::span<const double>{};
    for (double x : g)
      if (!std::isfinite(x))
        throw std::runtime_error("non-finite gradient in parameter " + std::to_string(k));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto theta = params[k].mutable_values();
    auto& v = state.velocity[k];
    if (v.size() != theta.size()) throw std::invalid_argument("sgd_step: velocity shape mismatch");
    const auto g = params[k].has_grad() ? params[k].grad() : std::span<const double>{};
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = (g.empty() ? 0.0 : g[i]) + weight_decay * theta[i];
      v[i] = momentum * v[i] - lr * d;
      theta[i] += momentum * v[i] - lr * d;
    }
  }
  ++state.iteration;
}

std::string metrics_csv(std::span<const IterationMetrics> rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(9);
  const std::size_t C = rows.empty() ? 0 : rows.front().alpha_source.size();
  os << "iteration,lr,psi,gamma,loss_source,loss_target,loss_contrast,total,"
        "valid_fraction,target_active,ensemble_labels";
  for (const char* name : {"occ_s", "occ_t", "alpha_s", "alpha_t"})
    for (std::size_t c = 0; c < C; ++c) os << ',' << name << c;
  os << '\n';
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.lr << ',' << r.psi << ',' << r.gamma << ','
       << r.loss_source << ',' << r.loss_target << ',' << r.loss_contrast << ','
       << r.total << ',' << r.valid_fraction << ',' << int(r.target_active) << ','
       << int(r.ensemble_labels);
    for (const auto* v : {&r.occurrence_source, &r.occurrence_target, &r.alpha_source,
                          &r.alpha_target})
      for (double x : *v) os << ',' << x;
    os << '\n';
  }
  return os.str();
}

namespace {

/// Uniform sampling without replacement, reshuffled every epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {
    if (n == 0) throw std::invalid_argument("cannot sample from an empty set");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

// Independent streams so that e.g. toggling augmentation never shifts sampling.
enum Stream : std::uint64_t { kInit = 1, kSourceSampler, kTargetSampler, kAugment };

Tensor network_input(const SegSample& s, const TrainConfig& cfg, Rng& aug_rng) {
  if (!cfg.augment) return s.image_tensor();
  return augment(s, cfg.jitter, cfg.augment_blur_sigma, aug_rng).image_tensor();
}

double finite_or_throw(const Tensor& t, const char* what) {
  const double v = t.item();
  if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite ") + what);
  return v;
}

void check_inputs(std::span<const SegSample> source, std::span<const SegSample> target) {
  if (source.empty() || target.empty()) throw std::invalid_argument("train: empty domain");
  const auto h = source.front().height, w = source.front().width;
  for (const auto& s : source) {
    if (!s.label) throw std::invalid_argument("train: source sample without label");
    if (s.height != h || s.width != w) throw std::invalid_argument("train: mixed image sizes");
  }
  for (const auto& s : target) {
    if (s.label) throw std::invalid_argument("train: target samples must be unlabeled");
    if (s.height != h || s.width != w) throw std::invalid_argument("train: mixed image sizes");
  }
}

void check_classes(std::span<const SegSample> source, std::size_t classes) {
  for (const auto& s : source)
    for (auto l : s.label->labels)
      if (l != kIgnore && l >= classes)
        throw std::invalid_argument("train: source label " + std::to_string(l) +
                                    " outside network.classes");
}

}  // namespace

TrainResult train(const TrainConfig& cfg, std::span<const SegSample> source,
                  std::span<const SegSample> target, const ProgressFn& progress) {
  cfg.validate();
  check_inputs(source, target);
  const NetworkConfig& net = cfg.network;
  check_classes(source, net.classes);
  const std::size_t C = net.classes;
  const std::size_t H = source.front().height, W = source.front().width;

  Rng init_rng = Rng::derive(cfg.seed, kInit);
  Rng aug_rng = Rng::derive(cfg.seed, kAugment);
  EpochSampler src_sampler(source.size(), Rng::derive(cfg.seed, kSourceSampler));
  EpochSampler tgt_sampler(target.size(), Rng::derive(cfg.seed, kTargetSampler));

  TrainResult res{init_network(net, init_rng),
                  CentroidBank(C, net.projection_channels, cfg.psi0, cfg.iterations),
                  PseudoLabelStore(target.size(), H, W, C, cfg.gamma, cfg.vote_width),
                  {}};
  OccurrenceEstimator occ_s(C, cfg.occurrence_momentum), occ_t(C, cfg.occurrence_momentum);
  OptimizerState opt;
  const LossWeights lambda = cfg.effective_weights();
  res.log.reserve(cfg.iterations);

  for (std::size_t j = 1; j <= cfg.iterations; ++j) {
    IterationMetrics m;
    m.iteration = j;
    m.lr = poly_lr(j - 1, cfg.iterations, cfg.lr, cfg.poly_power);
    m.psi = res.bank.psi();
    m.gamma = cfg.gamma.at(j);
    m.target_active = j > cfg.warmup;
    m.ensemble_labels = j > cfg.ensemble_start;
    res.params.zero_grad();

    // Source: class balance, supervised loss, centroid update.
    std::vector<ForwardOutputs> src_out;
    std::vector<const SegSample*> src_batch;
    for (std::size_t b = 0; b < cfg.batch_source; ++b) {
      const SegSample& s = source[src_sampler.next()];
      src_batch.push_back(&s);
      src_out.push_back(forward(res.params, network_input(s, cfg, aug_rng)));
      occ_s.update(class_presence(*s.label, C));
    }
    const auto alpha_s = balance_weights(occ_s.occurrence(), cfg.beta);
    Tensor loss_s = Tensor::scalar(0.0);
    std::vector<Tensor> src_z;
    std::vector<OneHotMap> src_masks;
    for (std::size_t b = 0; b < src_out.size(); ++b) {
      const auto& out = src_out[b];
      loss_s = add(loss_s, source_ce(out.probabilities, *src_batch[b]->label, alpha_s));
      const std::size_t hz = out.projections.dim(0), wz = out.projections.dim(1);
      src_masks.push_back(correct_mask(resize_onehot(to_one_hot(out.prediction, C), hz, wz),
                                       resize_onehot(to_one_hot(*src_batch[b]->label, C), hz, wz)));
      src_z.push_back(out.projections);
    }
    loss_s = scale(loss_s, 1.0 / static_cast<double>(src_out.size()));
    res.bank.update(batch_source_means(src_z, src_masks));

    // Target: votes, pseudo-labels, class balance.
    std::vector<ForwardOutputs> tgt_out;
    std::vector<LabelMap> pseudo;
    std::size_t valid = 0;
    for (std::size_t b = 0; b < cfg.batch_target; ++b) {
      const auto idx = static_cast<std::uint32_t>(tgt_sampler.next());
      tgt_out.push_back(forward(res.params, network_input(target[idx], cfg, aug_rng)));
      if (m.target_active) res.store.record(idx, tgt_out.back().prediction, j);
      pseudo.push_back(m.ensemble_labels
                           ? res.store.majority(idx)
                           : confident_labels(tgt_out.back().probabilities, cfg.entropy_fraction));
      valid += pseudo.back().valid_count();
      occ_t.update(class_presence(pseudo.back(), C));
    }
    const auto alpha_t = balance_weights(occ_t.occurrence(), cfg.beta);
    m.valid_fraction = static_cast<double>(valid) / static_cast<double>(cfg.batch_target * H * W);

    Tensor total = loss_s;
    m.loss_source = finite_or_throw(loss_s, "source loss");
    if (m.target_active && lambda.self_training > 0.0) {
      Tensor loss_t = Tensor::scalar(0.0);
      for (std::size_t b = 0; b < tgt_out.size(); ++b)
        loss_t = add(loss_t, target_ce(tgt_out[b].probabilities, pseudo[b], alpha_t, cfg.target_norm));
      loss_t = scale(loss_t, 1.0 / static_cast<double>(tgt_out.size()));
      m.loss_target = finite_or_throw(loss_t, "target loss");
      total = add(total, scale(loss_t, lambda.self_training));
    }
    if (m.target_active && lambda.contrastive > 0.0) {
      std::vector<TargetMeans> means;
      for (std::size_t b = 0; b < tgt_out.size(); ++b) {
        const auto& z = tgt_out[b].projections;
        means.push_back(target_image_means(z, resize_labels(pseudo[b], z.dim(0), z.dim(1)), C));
      }
      const Tensor loss_cl = contrastive_loss(res.bank, means, alpha_t);
      m.loss_contrast = finite_or_throw(loss_cl, "contrastive loss");
      total = add(total, scale(loss_cl, lambda.contrastive));
    }
    m.total = finite_or_throw(total, "total loss");

    total.backward();
    auto params = res.params.all();
    sgd_step(params, opt, m.lr, cfg.momentum, cfg.weight_decay);

    m.occurrence_source = occ_s.occurrence();
    m.occurrence_target = occ_t.occurrence();
    m.alpha_source = alpha_s;
    m.alpha_target = alpha_t;
    res.log.push_back(std::move(m));
    if (progress && !progress(res.log.back())) break;
  }
  return res;
}

FineTuneResult fine_tune(const NetworkParams& params, const TrainConfig& cfg,
                         std::span<const SegSample> target, const PseudoLabelStore& store,
                         const ProgressFn& progress) {
  if (store.empty()) throw std::invalid_argument("fine_tune: vote store is empty");
  if (store.images() != target.size())
    throw std::invalid_argument("fine_tune: vote store does not match the target set");
  const std::size_t C = params.config.classes;

  FineTuneResult res{params.clone(), {}, {}};
  enable_grad(res.params);

  // Labels are fixed once here and never refreshed.
  if (cfg.finetune.labels == FineTuneLabels::ensemble) {
    for (std::uint32_t i = 0; i < target.size(); ++i) res.labels.push_back(store.majority(i));
  } else {
    NetworkParams frozen = params.clone();
    enable_grad(frozen, false);
    for (const auto& s : target) res.labels.push_back(forward(frozen, s.image_tensor()).prediction);
  }
  // Occurrence over the frozen labels is known exactly, so no online estimate.
  std::vector<double> occurrence(C, 0.0);
  for (const auto& l : res.labels) {
    const auto present = class_presence(l, C);
    for (std::size_t c = 0; c < C; ++c) occurrence[c] += present[c] ? 1.0 : 0.0;
  }
  for (auto& o : occurrence) o /= static_cast<double>(res.labels.size());
  const auto alpha = balance_weights(occurrence, cfg.beta);

  Rng aug_rng = Rng::derive(cfg.seed, kAugment + 16);
  EpochSampler sampler(target.size(), Rng::derive(cfg.seed, kTargetSampler + 16));
  OptimizerState opt;
  const std::size_t T = cfg.finetune.iterations;
  for (std::size_t j = 1; j <= T; ++j) {
    IterationMetrics m;
    m.iteration = j;
    m.lr = poly_lr(j - 1, T, cfg.finetune.lr, cfg.poly_power);
    m.target_active = true;
    m.ensemble_labels = cfg.finetune.labels == FineTuneLabels::ensemble;
    res.params.zero_grad();
    Tensor loss = Tensor::scalar(0.0);
    std::size_t valid = 0;
    for (std::size_t b = 0; b < cfg.batch_target; ++b) {
      const auto idx = sampler.next();
      const auto out = forward(res.params, network_input(target[idx], cfg, aug_rng));
      loss = add(loss, target_ce(out.probabilities, res.labels[idx], alpha, cfg.target_norm));
      valid += res.labels[idx].valid_count();
    }
    loss = scale(loss, 1.0 / static_cast<double>(cfg.batch_target));
    m.loss_target = m.total = finite_or_throw(loss, "fine-tuning loss");
    m.valid_fraction = static_cast<double>(valid) /
                       static_cast<double>(cfg.batch_target * store.height() * store.width());
    loss.backward();
    auto ps = res.params.all();
    sgd_step(ps, opt, m.lr, cfg.momentum, cfg.weight_decay);
    m.occurrence_target = occurrence;
    m.alpha_target = alpha;
    m.occurrence_source.assign(C, 0.0);
    m.alpha_source.assign(C, 0.0);
    res.log.push_back(std::move(m));
    if (progress && !progress(res.log.back())) break;
  }
  return res;
}

ConfusionMatrix evaluate(const NetworkParams& params, std::span<const SegSample> labeled) {
  NetworkParams frozen = params.clone();
  enable_grad(frozen, false);
  ConfusionMatrix cm(params.config.classes);
  for (const auto& s : labeled) {
    if (!s.label) throw std::invalid_argument("evaluate: sample without label");
    cm.accumulate(forward(frozen, s.image_tensor()).prediction, *s.label);
  }
  return cm;
}

}  // namespace clst
