// clst: generate the synthetic benchmark, train, fine-tune, evaluate and
// inspect adaptation runs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "clst/checkpoint.hpp"
#include "clst/config.hpp"
#include "clst/errors.hpp"
#include "clst/metrics.hpp"
#include "clst/synthetic.hpp"
#include "clst/trainer.hpp"

namespace fs = std::filesystem;
using namespace clst;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,   // runtime failure (I/O, diverged training, ...)
  kUsage = 2,     // unknown flag or bad command line
  kConfig = 3,    // malformed or invalid config
  kVersion = 4,   // file from an unsupported format version
  kFormat = 5,    // corrupt or truncated file
};

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os || !(os << text)) throw std::runtime_error("cannot write " + p.string());
}

std::size_t thread_cap() {
  const char* env = std::getenv("CLST_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("CLST_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", path, "JSON config; missing keys take desk defaults")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override a config key, e.g. --set lr=0.01");
  }

  TrainConfig resolve() const {
    TrainConfig c = path.empty() ? TrainConfig::desk() : config_from_json(read_file(path));
    for (const auto& o : overrides) apply_override(c, o);
    return c;
  }
};

void print_iou(std::ostream& os, const IouReport& r) {
  os << std::fixed << std::setprecision(4);
  os << "class  IoU\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    os << std::setw(5) << c << "  ";
    if (r.counted[c]) os << r.per_class[c] << '\n';
    else os << "  -  (absent, excluded)\n";
  }
  os << " mIoU  " << r.mean << '\n';
}

struct Splits {
  std::vector<SegSample> source, target_train, target_val;
};

Splits split_dataset(const Dataset& data, double val_fraction) {
  Splits s;
  s.source = data.of_domain(Domain::source);
  auto t = split_target(data, val_fraction, data.seed);
  s.target_train = std::move(t.train);
  s.target_val = std::move(t.val);
  return s;
}

int run_gen(const std::string& out, std::uint64_t seed, const std::vector<std::string>& sets) {
  DatasetManifest m;
  m.seed = seed;
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("manifest override '" + kv + "' is not key=value");
    const std::string key = kv.substr(0, eq);
    double v = 0.0;
    try {
      v = std::stod(kv.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("manifest override '" + kv + "' needs a number");
    }
    auto count = [&] {
      if (v < 0 || v != std::floor(v)) throw ConfigError("'" + key + "' must be a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    if (key == "source_count") m.source_count = count();
    else if (key == "target_count") m.target_count = count();
    else if (key == "height") m.height = count();
    else if (key == "width") m.width = count();
    else if (key == "classes") m.classes = count();
    else if (key == "hue_rotation_deg") m.shift.hue_rotation_deg = v;
    else if (key == "brightness_offset") m.shift.brightness_offset = v;
    else if (key == "blur_sigma") m.shift.blur_sigma = v;
    else if (key == "noise_sigma") m.shift.noise_sigma = v;
    else throw ConfigError("unknown manifest key '" + key + "'");
  }
  m.validate();
  const Dataset d = generate(m);
  save_dataset(d, out);
  std::cout << "wrote " << d.samples.size() << " samples (" << m.height << "x" << m.width
            << ", C=" << m.classes << ") to " << out << '\n';
  return kOk;
}

int run_train(const ConfigArgs& cargs, const std::string& data_path, const fs::path& out,
              const std::string& mode, bool aug, std::optional<std::uint64_t> seed) {
  TrainConfig cfg = cargs.resolve();
  const Dataset data = load_dataset(data_path);
  cfg.network.classes = data.classes;
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  if (aug) cfg.augment = true;
  if (seed) cfg.seed = *seed;
  cfg.validate();

  fs::create_directories(out);
  write_file(out / "resolved_config.json", to_json(cfg));
  const Splits s = split_dataset(data, cfg.val_fraction);
  const std::size_t every = std::max<std::size_t>(1, cfg.iterations / 10);
  auto result = train(cfg, s.source, s.target_train, [&](const IterationMetrics& m) {
    if (m.iteration % every == 0)
      std::cerr << "iter " << m.iteration << "/" << cfg.iterations << "  loss " << m.total << '\n';
    return true;
  });
  write_file(out / "metrics.csv", metrics_csv(result.log));
  save_checkpoint(out / "checkpoint.bin", &result.params, &result.bank);
  save_checkpoint(out / "votes.bin", nullptr, nullptr, &result.store);
  std::cout << "vote density " << std::setprecision(6) << result.store.density() << '\n';
  if (!s.target_val.empty()) {
    const auto r = iou(evaluate(result.params, s.target_val));
    std::cout << "target val mIoU " << std::fixed << std::setprecision(4) << r.mean << '\n';
  }
  return kOk;
}

int run_finetune(const ConfigArgs& cargs, const std::string& ck_path, const std::string& votes_path,
                 const std::string& data_path, const fs::path& out) {
  TrainConfig cfg = cargs.resolve();
  const Dataset data = load_dataset(data_path);
  cfg.network.classes = data.classes;
  cfg.validate();
  auto ck = load_checkpoint(ck_path);
  if (!ck.params) throw FormatError(ck_path + ": no network weights");
  auto votes = load_checkpoint(votes_path);
  if (!votes.store) throw FormatError(votes_path + ": no VOTES section");

  fs::create_directories(out);
  write_file(out / "resolved_config.json", to_json(cfg));
  const Splits s = split_dataset(data, cfg.val_fraction);
  auto result = fine_tune(*ck.params, cfg, s.target_train, *votes.store);
  write_file(out / "metrics.csv", metrics_csv(result.log));
  save_checkpoint(out / "checkpoint.bin", &result.params, ck.bank ? &*ck.bank : nullptr);
  if (!s.target_val.empty()) {
    const auto r = iou(evaluate(result.params, s.target_val));
    std::cout << "target val mIoU " << std::fixed << std::setprecision(4) << r.mean << '\n';
  }
  return kOk;
}

int run_eval(const std::string& ck_path, const std::string& data_path, const std::string& split,
             double val_fraction, const std::string& csv) {
  const auto ck = load_checkpoint(ck_path);
  if (!ck.params) throw FormatError(ck_path + ": no network weights");
  const Dataset data = load_dataset(data_path);
  if (data.classes != ck.params->config.classes)
    throw std::runtime_error("checkpoint has " + std::to_string(ck.params->config.classes) +
                             " classes, dataset has " + std::to_string(data.classes));
  std::vector<SegSample> samples;
  if (split == "val") samples = split_target(data, val_fraction, data.seed).val;
  else if (split == "source") samples = data.of_domain(Domain::source);
  else samples = data.of_domain(Domain::target);
  const auto report = iou(evaluate(*ck.params, samples));
  print_iou(std::cout, report);
  if (report.excluded())
    std::cout << report.excluded() << " class(es) absent from both gt and prediction; excluded\n";
  if (!csv.empty()) write_file(csv, iou_csv(report));
  return kOk;
}

int run_inspect(const std::string& ck_path, const std::string& csv) {
  const auto ck = load_checkpoint(ck_path);
  if (!ck.bank) throw FormatError(ck_path + ": no centroid bank");
  const std::size_t C = ck.bank->classes();
  const auto sim = ck.bank->cosine_matrix();
  std::ostringstream os;
  os << std::fixed << std::setprecision(9) << "class";
  for (std::size_t c = 0; c < C; ++c) os << ",c" << c;
  os << '\n';
  for (std::size_t a = 0; a < C; ++a) {
    os << a;
    for (std::size_t b = 0; b < C; ++b) {
      os << ',';
      if (std::isnan(sim[a * C + b])) os << "nan";
      else os << sim[a * C + b];
    }
    os << '\n';
  }
  if (csv.empty()) std::cout << os.str();
  else write_file(csv, os.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive learning + self-training for segmentation domain adaptation"};
  app.require_subcommand(1);

  std::string out, data, ck, votes, mode, split = "val", csv;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> train_seed;
  std::vector<std::string> manifest_sets;
  bool aug = false;
  double val_fraction = 0.2;
  ConfigArgs train_cfg, ft_cfg;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic two-domain benchmark");
  gen->add_option("--out", out, "Dataset file")->required();
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--set", manifest_sets,
                  "Manifest override: source_count, target_count, height, width, classes, "
                  "hue_rotation_deg, brightness_offset, blur_sigma, noise_sigma");

  auto* tr = app.add_subcommand("train", "Train one ablation mode");
  train_cfg.add_to(tr);
  tr->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--mode", mode, "source_only | cl | st | clst")
      ->check(CLI::IsMember({"source_only", "cl", "st", "clst"}));
  tr->add_flag("--aug", aug, "Colour jitter + Gaussian blur on network inputs");
  tr->add_option("--seed", train_seed, "Training seed");

  auto* ft = app.add_subcommand("finetune", "Fine-tune on frozen ensemble pseudo-labels");
  ft_cfg.add_to(ft);
  ft->add_option("--checkpoint", ck, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--votes", votes, "Vote store written by train")->required()->check(CLI::ExistingFile);
  ft->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Per-class IoU and mIoU");
  ev->add_option("--checkpoint", ck, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "val | source | target")
      ->check(CLI::IsMember({"val", "source", "target"}));
  ev->add_option("--val-fraction", val_fraction, "Held-out share of target images");
  ev->add_option("--csv", csv, "Also write the table as CSV");

  auto* in = app.add_subcommand("inspect", "Centroid cosine-similarity matrix");
  in->add_option("--checkpoint", ck, "Checkpoint")->required()->check(CLI::ExistingFile);
  in->add_option("--csv", csv, "Write to file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    thread_cap();
    if (*gen) return run_gen(out, seed, manifest_sets);
    if (*tr) return run_train(train_cfg, data, out, mode, aug, train_seed);
    if (*ft) return run_finetune(ft_cfg, ck, votes, data, out);
    if (*ev) return run_eval(ck, data, split, val_fraction, csv);
    if (*in) return run_inspect(ck, csv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const VersionError& e) {
    std::cerr << "version mismatch: " << e.what() << '\n';
    return kVersion;
  } catch (const FormatError& e) {
    std::cerr << "bad file: " << e.what() << '\n';
    return kFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
