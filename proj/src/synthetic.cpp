#include "clst/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "clst/errors.hpp"

namespace clst {

namespace {

constexpr double kPixelNoise = 0.04;
constexpr double kColorJitter = 0.05;
constexpr std::size_t kMinSide = 8;
constexpr int kMaxLayoutAttempts = 200;

enum class LayerKind { background, road, sky, circle, rectangle };

LayerKind kind_of(std::size_t cls) {
  switch (cls) {
    case 0: return LayerKind::background;
    case 1: return LayerKind::road;
    case 2: return LayerKind::sky;
    case 3: return LayerKind::circle;
    case 4: return LayerKind::rectangle;
    default: return cls % 2 == 1 ? LayerKind::circle : LayerKind::rectangle;
  }
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::array<double, 3> base_color(std::size_t cls) {
  static constexpr std::array<std::array<double, 3>, 5> kPalette{{
      {0.55, 0.52, 0.45},  // background
      {0.30, 0.30, 0.34},  // road
      {0.50, 0.68, 0.90},  // sky
      {0.85, 0.30, 0.22},  // circle
      {0.30, 0.68, 0.32},  // rectangle
  }};
  if (cls < kPalette.size()) return kPalette[cls];
  return hsv_to_rgb(std::fmod(static_cast<double>(cls) * 0.618033988749895, 1.0),
                    0.6, 0.75);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Pixel coverage test for one drawn layer.
bool covers(const SceneLayout::Layer& l, double y, double x, double H, double W) {
  switch (kind_of(l.cls)) {
    case LayerKind::background: return true;
    case LayerKind::road: return y >= (l.a + l.b * (x / W - 0.5)) * H;
    case LayerKind::sky: return y < l.a * H;
    case LayerKind::circle: {
      const double dy = y - l.b, dx = x - l.a;
      return dx * dx + dy * dy <= l.c * l.c;
    }
    case LayerKind::rectangle:
      return x >= l.a && x < l.a + l.c && y >= l.b && y < l.b + l.d;
  }
  return false;
}

LabelMap paint_labels(const DatasetManifest& m, const SceneLayout& layout) {
  LabelMap label(m.height, m.width, 0);
  const double H = static_cast<double>(m.height), W = static_cast<double>(m.width);
  for (const auto& layer : layout.layers) {
    if (!layer.present || layer.cls == 0) continue;
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x)
        if (covers(layer, y + 0.5, x + 0.5, H, W))
          label.labels[y * m.width + x] = static_cast<std::uint8_t>(layer.cls);
  }
  return label;
}

std::vector<std::size_t> forced_classes(const DatasetManifest& m, Domain d,
                                        std::size_t id) {
  std::vector<std::size_t> out;
  if (d != Domain::source) return out;
  for (std::size_t c = 1; c < m.classes; ++c)
    if ((c - 1) % m.source_count == id) out.push_back(c);
  return out;
}

SegSample make_sample(const DatasetManifest& m, Domain domain, std::size_t id) {
  Rng rng = Rng::derive(m.seed, (static_cast<std::uint64_t>(domain) << 32) | id);
  const auto forced = forced_classes(m, domain, id);
  SceneLayout layout;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxLayoutAttempts) {
      throw ConfigError("generate: could not place every class; image too small");
    }
    layout = sample_layout(m, domain, rng);
    for (auto c : forced) layout.layers[c].present = true;
    if (forced.empty()) break;
    const auto present = class_presence(paint_labels(m, layout), m.classes);
    if (std::all_of(forced.begin(), forced.end(),
                    [&](std::size_t c) { return present[c]; }))
      break;
  }
  SegSample s = render_scene(m, layout, rng);
  s.domain = domain;
  s.id = static_cast<std::uint32_t>(id);
  if (domain == Domain::target) apply_shift(s, m.shift, rng);
  for (auto& v : s.image) v = static_cast<double>(static_cast<float>(v));
  return s;
}

}  // namespace

const char* domain_name(Domain d) {
  return d == Domain::source ? "source" : "target";
}

Tensor SegSample::image_tensor() const {
  return Tensor::from({height, width, 3}, image);
}

DomainShift DatasetManifest::default_shift() {
  DomainShift s;
  s.hue_rotation_deg = 60.0;
  s.brightness_offset = -0.08;
  s.blur_sigma = 0.8;
  s.noise_sigma = 0.03;
  return s;
}

void DatasetManifest::validate() const {
  if (source_count == 0 || target_count == 0)
    throw ConfigError("manifest: N and M must be >= 1");
  if (classes < 2 || classes >= kIgnore)
    throw ConfigError("manifest: classes must be in [2, 254]");
  if (height < kMinSide || width < kMinSide)
    throw ConfigError("manifest: H and W must be >= " + std::to_string(kMinSide) +
                      " to place shapes");
  for (double v : {shift.hue_rotation_deg, shift.brightness_offset,
                   shift.blur_sigma, shift.noise_sigma})
    if (!std::isfinite(v)) throw ConfigError("manifest: shift parameters must be finite");
  if (shift.blur_sigma < 0 || shift.noise_sigma < 0)
    throw ConfigError("manifest: blur and noise sigma must be >= 0");
}

std::vector<SegSample> Dataset::of_domain(Domain d) const {
  std::vector<SegSample> out;
  for (const auto& s : samples)
    if (s.domain == d) out.push_back(s);
  return out;
}

double class_prior(std::size_t cls, Domain domain) {
  const bool src = domain == Domain::source;
  switch (kind_of(cls)) {
    case LayerKind::background: return 1.0;
    case LayerKind::road: return src ? 0.85 : 0.70;
    case LayerKind::sky: return src ? 0.60 : 0.80;
    case LayerKind::circle: return cls == 3 ? (src ? 0.50 : 0.35) : 0.40;
    case LayerKind::rectangle: return cls == 4 ? (src ? 0.30 : 0.45) : 0.40;
  }
  return 0.0;
}

SceneLayout sample_layout(const DatasetManifest& m, Domain domain, Rng& rng) {
  const double H = static_cast<double>(m.height), W = static_cast<double>(m.width);
  SceneLayout layout;
  layout.layers.resize(m.classes);
  layout.colors.resize(m.classes);
  for (std::size_t c = 0; c < m.classes; ++c) {
    auto& l = layout.layers[c];
    l.cls = c;
    l.present = rng.bernoulli(class_prior(c, domain));
    switch (kind_of(c)) {
      case LayerKind::background: break;
      case LayerKind::road:
        l.a = rng.uniform(0.60, 0.80);
        l.b = rng.uniform(-0.15, 0.15);
        break;
      case LayerKind::sky: l.a = rng.uniform(0.15, 0.35); break;
      case LayerKind::circle:
        l.c = rng.uniform(0.10, 0.22) * H;
        l.a = rng.uniform(0.1, 0.9) * W;
        l.b = rng.uniform(0.25, 0.75) * H;
        break;
      case LayerKind::rectangle:
        l.c = rng.uniform(0.12, 0.30) * W;
        l.d = rng.uniform(0.15, 0.35) * H;
        l.a = rng.uniform(0.0, W - l.c);
        l.b = rng.uniform(0.2 * H, H - l.d);
        break;
    }
    const auto base = base_color(c);
    for (int k = 0; k < 3; ++k)
      layout.colors[c][k] = clamp01(base[k] + rng.normal(0.0, kColorJitter));
  }
  return layout;
}

SegSample render_scene(const DatasetManifest& m, const SceneLayout& layout,
                       Rng& rng) {
  SegSample s;
  s.height = m.height;
  s.width = m.width;
  s.label = paint_labels(m, layout);
  s.image.resize(m.height * m.width * 3);
  for (std::size_t i = 0; i < m.height * m.width; ++i) {
    const auto& col = layout.colors[s.label->labels[i]];
    for (int k = 0; k < 3; ++k)
      s.image[i * 3 + k] = clamp01(col[k] + rng.normal(0.0, kPixelNoise));
  }
  return s;
}

void apply_shift(SegSample& s, const DomainShift& shift, Rng& rng) {
  const std::size_t n = s.height * s.width;
  if (shift.hue_rotation_deg != 0.0) {
    // Rotation about the grey axis of RGB space.
    const double th = shift.hue_rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    const double t = (1.0 - c) / 3.0, q = std::sqrt(1.0 / 3.0) * sn;
    const double R[3][3] = {{c + t, t - q, t + q}, {t + q, c + t, t - q},
                            {t - q, t + q, c + t}};
    for (std::size_t i = 0; i < n; ++i) {
      double* px = s.image.data() + i * 3;
      const double r = px[0], g = px[1], b = px[2];
      for (int k = 0; k < 3; ++k)
        px[k] = clamp01(R[k][0] * r + R[k][1] * g + R[k][2] * b);
    }
  }
  if (shift.brightness_offset != 0.0)
    for (auto& v : s.image) v = clamp01(v + shift.brightness_offset);
  if (shift.blur_sigma > 0.0) gaussian_blur(s.image, s.height, s.width, shift.blur_sigma);
  if (shift.noise_sigma > 0.0)
    for (auto& v : s.image) v = clamp01(v + rng.normal(0.0, shift.noise_sigma));
}

Dataset generate(const DatasetManifest& manifest) {
  manifest.validate();
  Dataset out;
  out.height = manifest.height;
  out.width = manifest.width;
  out.classes = manifest.classes;
  out.seed = manifest.seed;
  out.samples.reserve(manifest.source_count + manifest.target_count);
  for (std::size_t i = 0; i < manifest.source_count; ++i)
    out.samples.push_back(make_sample(manifest, Domain::source, i));
  for (std::size_t i = 0; i < manifest.target_count; ++i)
    out.samples.push_back(make_sample(manifest, Domain::target, i));
  return out;
}

void gaussian_blur(std::vector<double>& image, std::size_t height,
                   std::size_t width, double sigma) {
  if (!(sigma > 0.0)) return;
  const long radius = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (auto& k : kernel) k /= total;

  const long H = static_cast<long>(height), W = static_cast<long>(width);
  std::vector<double> tmp(image.size());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long xx = std::clamp(x + i, 0L, W - 1);
          acc += kernel[i + radius] * image[(y * W + xx) * 3 + c];
        }
        tmp[(y * W + x) * 3 + c] = acc;
      }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long yy = std::clamp(y + i, 0L, H - 1);
          acc += kernel[i + radius] * tmp[(yy * W + x) * 3 + c];
        }
        image[(y * W + x) * 3 + c] = acc;
      }
}

SegSample augment(const SegSample& sample, const JitterParams& jitter,
                  double blur_sigma, Rng& rng) {
  SegSample out = sample;
  const double sb = std::clamp(jitter.brightness, 0.0, 1.0);
  const double sc = std::clamp(jitter.contrast, 0.0, 1.0);
  const double ss = std::clamp(jitter.saturation, 0.0, 1.0);
  const double sigma = std::isfinite(blur_sigma) ? std::clamp(blur_sigma, 0.0, 8.0) : 0.0;
  auto& img = out.image;
  const std::size_t n = out.height * out.width;

  if (sb > 0.0) {
    const double f = rng.uniform(1.0 - sb, 1.0 + sb);
    for (auto& v : img) v = clamp01(v * f);
  }
  if (sc > 0.0) {
    const double f = rng.uniform(1.0 - sc, 1.0 + sc);
    double mean_gray = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      mean_gray += 0.299 * img[3 * i] + 0.587 * img[3 * i + 1] + 0.114 * img[3 * i + 2];
    mean_gray /= static_cast<double>(n);
    for (auto& v : img) v = clamp01((v - mean_gray) * f + mean_gray);
  }
  if (ss > 0.0) {
    const double f = rng.uniform(1.0 - ss, 1.0 + ss);
    for (std::size_t i = 0; i < n; ++i) {
      double* px = img.data() + 3 * i;
      const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      for (int k = 0; k < 3; ++k) px[k] = clamp01(gray + (px[k] - gray) * f);
    }
  }
  if (sigma > 0.0) gaussian_blur(img, out.height, out.width, sigma);
  return out;
}

TargetSplit split_target(const Dataset& data, double val_fraction,
                         std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("split_target: fraction must be in [0, 1)");
  auto target = data.of_domain(Domain::target);
  std::vector<std::size_t> order(target.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0x5b117);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.index(i)]);
  const auto n_val = static_cast<std::size_t>(
      std::ceil(val_fraction * static_cast<double>(target.size()) - 1e-9));
  std::vector<bool> is_val(target.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  TargetSplit split;
  for (std::size_t i = 0; i < target.size(); ++i)
    (is_val[i] ? split.val : split.train).push_back(target[i]);
  split.train = strip_labels(std::move(split.train));
  return split;
}

std::vector<SegSample> strip_labels(std::vector<SegSample> samples) {
  for (auto& s : samples) s.label.reset();
  return samples;
}

namespace {
constexpr std::string_view kDatasetMagic = "CLSTDS1";
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  io::put_bytes(os, kDatasetMagic);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(data.height));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(data.width));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(data.classes));
  io::put<std::uint64_t>(os, data.samples.size());
  io::put<std::uint64_t>(os, data.seed);
  const std::size_t n = data.height * data.width;
  for (const auto& s : data.samples) {
    if (s.height != data.height || s.width != data.width || s.image.size() != n * 3)
      throw std::invalid_argument("save_dataset: sample size does not match header");
    for (double v : s.image) io::put<float>(os, static_cast<float>(v));
    for (std::size_t i = 0; i < n; ++i)
      io::put<std::uint8_t>(os, s.label ? s.label->labels[i] : kIgnore);
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.domain));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  io::check_magic(is, kDatasetMagic, "dataset");
  Dataset d;
  d.height = io::get<std::uint32_t>(is, "height");
  d.width = io::get<std::uint32_t>(is, "width");
  d.classes = io::get<std::uint32_t>(is, "classes");
  const auto count = io::get<std::uint64_t>(is, "count");
  d.seed = io::get<std::uint64_t>(is, "seed");
  const std::size_t n = d.height * d.width;
  std::uint32_t next_id[2] = {0, 0};
  for (std::uint64_t k = 0; k < count; ++k) {
    SegSample s;
    s.height = d.height;
    s.width = d.width;
    s.image.resize(n * 3);
    for (auto& v : s.image) v = io::get<float>(is, "image");
    LabelMap label(d.height, d.width);
    for (auto& v : label.labels) v = io::get<std::uint8_t>(is, "label");
    const auto dom = io::get<std::uint8_t>(is, "domain");
    if (dom > 1) throw FormatError("dataset: bad domain byte");
    s.domain = static_cast<Domain>(dom);
    s.id = next_id[dom]++;
    if (label.valid_count() > 0) s.label = std::move(label);
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace clst
