#include "clst/config.hpp"

#include <cmath>

#include <json.hpp>

#include "clst/errors.hpp"

namespace clst {

using nlohmann::json;

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::source_only: return "source_only";
    case Mode::cl: return "cl";
    case Mode::st: return "st";
    case Mode::clst: return "clst";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::source_only, Mode::cl, Mode::st, Mode::clst})
    if (s == mode_name(m)) return m;
  throw ConfigError("unknown mode '" + s + "' (source_only, cl, st, clst)");
}

TrainConfig TrainConfig::published() {
  TrainConfig c;
  c.lr = 2.5e-4;
  c.weight_decay = 5e-4;
  c.finetune.lr = 2.5e-4;
  return c;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (mode == Mode::source_only || mode == Mode::cl) w.self_training = 0.0;
  if (mode == Mode::source_only || mode == Mode::st) w.contrastive = 0.0;
  return w;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (!(warmup > 0 && warmup <= ensemble_start && ensemble_start <= iterations))
    fail("schedule must satisfy 0 < warmup <= ensemble_start <= iterations");
  if (gamma.initial < 1) fail("gamma.initial must be >= 1");
  if (batch_source < 1 || batch_target < 1) fail("batch sizes must be >= 1");
  auto finite_nonneg = [&](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) fail(std::string(name) + " must be finite and >= 0");
  };
  finite_nonneg(lr, "lr");
  finite_nonneg(poly_power, "poly_power");
  finite_nonneg(weight_decay, "weight_decay");
  finite_nonneg(finetune.lr, "finetune.lr");
  finite_nonneg(augment_blur_sigma, "augment_blur_sigma");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  weights.validate();
  if (!(beta >= 1.0) || !std::isfinite(beta)) fail("beta must be finite and >= 1");
  if (!(occurrence_momentum > 0.0 && occurrence_momentum <= 1.0))
    fail("occurrence_momentum must be in (0, 1]");
  if (!(psi0 > 0.0 && psi0 <= 1.0)) fail("psi0 must be in (0, 1]");
  if (!(entropy_fraction > 0.0 && entropy_fraction <= 1.0))
    fail("entropy_fraction must be in (0, 1]");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must be in [0, 1)");
  if (network.projection_channels >= network.feature_channels)
    fail("network.projection_channels must be below network.feature_channels");
  if (network.classes < 2 || network.classes >= kIgnore)
    fail("network.classes must be in [2, 254]");
  if (network.hidden_channels == 0 || network.projection_channels == 0)
    fail("network channel counts must be positive");
}

namespace {

json to_tree(const TrainConfig& c) {
  json j;
  j["iterations"] = c.iterations;
  j["warmup"] = c.warmup;
  j["ensemble_start"] = c.ensemble_start;
  j["gamma"] = {{"initial", c.gamma.initial},
                {"increment", c.gamma.increment},
                {"interval", c.gamma.interval}};
  j["lr"] = c.lr;
  j["poly_power"] = c.poly_power;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["lambda_st"] = c.weights.self_training;
  j["lambda_cl"] = c.weights.contrastive;
  j["beta"] = c.beta;
  j["occurrence_momentum"] = c.occurrence_momentum;
  j["psi0"] = c.psi0;
  j["entropy_fraction"] = c.entropy_fraction;
  j["target_norm"] = c.target_norm == TargetNorm::full_map ? "full_map" : "valid_pixels";
  j["batch_source"] = c.batch_source;
  j["batch_target"] = c.batch_target;
  j["augment"] = c.augment;
  j["jitter"] = {{"brightness", c.jitter.brightness},
                 {"contrast", c.jitter.contrast},
                 {"saturation", c.jitter.saturation}};
  j["augment_blur_sigma"] = c.augment_blur_sigma;
  j["mode"] = mode_name(c.mode);
  j["seed"] = c.seed;
  j["vote_width"] = static_cast<int>(c.vote_width);
  j["network"] = {{"classes", c.network.classes},
                  {"hidden_channels", c.network.hidden_channels},
                  {"feature_channels", c.network.feature_channels},
                  {"projection_channels", c.network.projection_channels}};
  j["val_fraction"] = c.val_fraction;
  j["finetune"] = {{"iterations", c.finetune.iterations},
                   {"lr", c.finetune.lr},
                   {"labels", c.finetune.labels == FineTuneLabels::ensemble ? "ensemble"
                                                                             : "forward"}};
  return j;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

/// Overlays `patch` onto `base`, refusing keys `base` does not have.
void merge_strict(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value()))
        throw ConfigError("config key '" + key + "' has the wrong type");
      slot = it.value();
    }
  }
}

template <typename T>
T read_uint(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_number_unsigned()) return v.get<T>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<T>(v.get<std::int64_t>());
  throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
}

TrainConfig from_tree(const json& j) {
  TrainConfig c;
  c.iterations = read_uint<std::size_t>(j, "iterations");
  c.warmup = read_uint<std::size_t>(j, "warmup");
  c.ensemble_start = read_uint<std::size_t>(j, "ensemble_start");
  const auto& g = j.at("gamma");
  c.gamma.initial = read_uint<std::uint32_t>(g, "initial");
  c.gamma.increment = read_uint<std::uint32_t>(g, "increment");
  c.gamma.interval = read_uint<std::uint64_t>(g, "interval");
  c.lr = j.at("lr").get<double>();
  c.poly_power = j.at("poly_power").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.weights.self_training = j.at("lambda_st").get<double>();
  c.weights.contrastive = j.at("lambda_cl").get<double>();
  c.beta = j.at("beta").get<double>();
  c.occurrence_momentum = j.at("occurrence_momentum").get<double>();
  c.psi0 = j.at("psi0").get<double>();
  c.entropy_fraction = j.at("entropy_fraction").get<double>();
  const auto norm = j.at("target_norm").get<std::string>();
  if (norm == "full_map") c.target_norm = TargetNorm::full_map;
  else if (norm == "valid_pixels") c.target_norm = TargetNorm::valid_pixels;
  else throw ConfigError("target_norm must be full_map or valid_pixels");
  c.batch_source = read_uint<std::size_t>(j, "batch_source");
  c.batch_target = read_uint<std::size_t>(j, "batch_target");
  c.augment = j.at("augment").get<bool>();
  const auto& jt = j.at("jitter");
  c.jitter = {jt.at("brightness").get<double>(), jt.at("contrast").get<double>(),
              jt.at("saturation").get<double>()};
  c.augment_blur_sigma = j.at("augment_blur_sigma").get<double>();
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.seed = read_uint<std::uint64_t>(j, "seed");
  const auto width = read_uint<unsigned>(j, "vote_width");
  if (width == 8) c.vote_width = VoteWidth::bits8;
  else if (width == 16) c.vote_width = VoteWidth::bits16;
  else throw ConfigError("vote_width must be 8 or 16");
  const auto& n = j.at("network");
  c.network.classes = read_uint<std::size_t>(n, "classes");
  c.network.hidden_channels = read_uint<std::size_t>(n, "hidden_channels");
  c.network.feature_channels = read_uint<std::size_t>(n, "feature_channels");
  c.network.projection_channels = read_uint<std::size_t>(n, "projection_channels");
  c.val_fraction = j.at("val_fraction").get<double>();
  const auto& ft = j.at("finetune");
  c.finetune.iterations = read_uint<std::size_t>(ft, "iterations");
  c.finetune.lr = ft.at("lr").get<double>();
  const auto labels = ft.at("labels").get<std::string>();
  if (labels == "ensemble") c.finetune.labels = FineTuneLabels::ensemble;
  else if (labels == "forward") c.finetune.labels = FineTuneLabels::forward;
  else throw ConfigError("finetune.labels must be ensemble or forward");
  return c;
}

}  // namespace

std::string to_json(const TrainConfig& config) { return to_tree(config).dump(2) + "\n"; }

TrainConfig config_from_json(const std::string& text, const TrainConfig& base) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  json tree = to_tree(base);
  merge_strict(tree, patch, "");
  return from_tree(tree);
}

void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  // Build {"a": {"b": value}} from "a.b" and merge it like a config file.
  json patch = value;
  std::string rest = path;
  std::vector<std::string> keys;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    keys.push_back(rest.substr(0, pos));
  keys.push_back(rest);
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) patch = json{{*it, patch}};
  json tree = to_tree(config);
  merge_strict(tree, patch, "");
  config = from_tree(tree);
}

}  // namespace clst
