#include "clst/checkpoint.hpp"

#include <fstream>
#include <map>
#include <string_view>

#include "binary_io.hpp"
#include "clst/errors.hpp"

namespace clst {

namespace {

constexpr std::string_view kMagic = "CLSTCK1";
constexpr std::string_view kVotesTag = "VOTES";
constexpr std::string_view kEndTag = "END..";
constexpr std::string_view kBankPrefix = "centroids.";

struct Layer {
  Shape shape;
  std::vector<double> values;
};

void put_layer(std::ostream& os, const std::string& name, const Shape& shape,
               std::span<const double> values) {
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  io::put_bytes(os, name);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) io::put<std::uint64_t>(os, d);
  for (double v : values) io::put<double>(os, v);
}

Layer get_layer(std::istream& is, std::string& name) {
  const auto len = io::get<std::uint32_t>(is, "layer name length");
  if (len > 4096) throw FormatError("checkpoint: implausible layer name length");
  name = io::get_bytes(is, len, "layer name");
  const auto rank = io::get<std::uint32_t>(is, "layer rank");
  if (rank > 8) throw FormatError("checkpoint: implausible layer rank for " + name);
  Layer l;
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    l.shape.push_back(io::get<std::uint64_t>(is, "layer shape"));
    n *= l.shape.back();
  }
  if (n > (std::size_t{1} << 28)) throw FormatError("checkpoint: implausible layer size for " + name);
  l.values.resize(n);
  for (auto& v : l.values) v = io::get<double>(is, "layer values");
  return l;
}

Tensor take(std::map<std::string, Layer>& layers, const std::string& name) {
  auto it = layers.find(name);
  if (it == layers.end()) throw FormatError("checkpoint: missing layer " + name);
  Tensor t = Tensor::from(it->second.shape, std::move(it->second.values));
  layers.erase(it);
  return t;
}

NetworkParams rebuild_network(std::map<std::string, Layer>& layers) {
  NetworkParams p;
  p.conv1_w = take(layers, "extractor.conv1.weight");
  p.conv1_b = take(layers, "extractor.conv1.bias");
  p.conv2_w = take(layers, "extractor.conv2.weight");
  p.conv2_b = take(layers, "extractor.conv2.bias");
  p.head_w = take(layers, "head.weight");
  p.head_b = take(layers, "head.bias");
  p.proj_w = take(layers, "projector.weight");
  p.proj_b = take(layers, "projector.bias");
  for (const auto& t : {p.conv1_w, p.conv2_w, p.head_w, p.proj_w})
    if (t.rank() != 4) throw FormatError("checkpoint: convolution weights must be rank 4");
  p.config.hidden_channels = p.conv1_w.dim(3);
  p.config.feature_channels = p.conv2_w.dim(3);
  p.config.classes = p.head_w.dim(3);
  p.config.projection_channels = p.proj_w.dim(3);
  const auto& c = p.config;
  const bool ok = p.conv1_w.shape() == Shape{3, 3, 3, c.hidden_channels} &&
                  p.conv2_w.shape() == Shape{3, 3, c.hidden_channels, c.feature_channels} &&
                  p.head_w.shape() == Shape{1, 1, c.feature_channels, c.classes} &&
                  p.proj_w.shape() == Shape{1, 1, c.feature_channels, c.projection_channels} &&
                  p.conv1_b.shape() == Shape{c.hidden_channels} &&
                  p.conv2_b.shape() == Shape{c.feature_channels} &&
                  p.head_b.shape() == Shape{c.classes} &&
                  p.proj_b.shape() == Shape{c.projection_channels};
  if (!ok) throw FormatError("checkpoint: inconsistent network layer shapes");
  enable_grad(p);
  return p;
}

void put_votes(std::ostream& os, const PseudoLabelStore& store) {
  io::put_bytes(os, kVotesTag);
  io::put<std::uint64_t>(os, store.images());
  io::put<std::uint64_t>(os, store.height());
  io::put<std::uint64_t>(os, store.width());
  io::put<std::uint64_t>(os, store.classes());
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(store.vote_width()));
  io::put<std::uint32_t>(os, store.schedule().initial);
  io::put<std::uint32_t>(os, store.schedule().increment);
  io::put<std::uint64_t>(os, store.schedule().interval);
  for (std::uint32_t i = 0; i < store.images(); ++i) io::put<std::uint32_t>(os, store.recordings(i));
  io::put<std::uint64_t>(os, store.entry_count());
  const std::size_t pixels = store.height() * store.width();
  for (std::uint32_t i = 0; i < store.images(); ++i) {
    for (std::size_t p = 0; p < pixels; ++p)
      for (const auto& e : store.votes(i, p)) {
        io::put<std::uint32_t>(os, i);
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(p));
        io::put<std::uint8_t>(os, e.cls);
        io::put<std::uint16_t>(os, e.votes);
      }
  }
}

PseudoLabelStore get_votes(std::istream& is) {
  const auto images = io::get<std::uint64_t>(is, "vote store images");
  const auto h = io::get<std::uint64_t>(is, "vote store height");
  const auto w = io::get<std::uint64_t>(is, "vote store width");
  const auto c = io::get<std::uint64_t>(is, "vote store classes");
  const auto width = io::get<std::uint8_t>(is, "vote width");
  if (width != 8 && width != 16) throw FormatError("vote store: bad vote width");
  GammaSchedule s;
  s.initial = io::get<std::uint32_t>(is, "gamma initial");
  s.increment = io::get<std::uint32_t>(is, "gamma increment");
  s.interval = io::get<std::uint64_t>(is, "gamma interval");
  if (images > (1u << 24) || h * w > (1u << 24))
    throw FormatError("vote store: implausible dimensions");
  PseudoLabelStore store(images, h, w, c, s, static_cast<VoteWidth>(width));
  for (std::uint32_t i = 0; i < images; ++i)
    store.set_recordings(i, io::get<std::uint32_t>(is, "vote recordings"));
  const auto entries = io::get<std::uint64_t>(is, "vote entry count");
  for (std::uint64_t k = 0; k < entries; ++k) {
    const auto id = io::get<std::uint32_t>(is, "vote image id");
    const auto pixel = io::get<std::uint32_t>(is, "vote pixel");
    const auto cls = io::get<std::uint8_t>(is, "vote class");
    const auto count = io::get<std::uint16_t>(is, "vote count");
    if (id >= images || pixel >= h * w || cls >= c || count == 0)
      throw FormatError("vote store: entry out of range");
    store.set_votes(id, pixel, cls, count);
  }
  return store;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkParams* params,
                     const CentroidBank* bank, const PseudoLabelStore* store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  io::put_bytes(os, kMagic);
  io::put<std::uint32_t>(os, kCheckpointVersion);

  std::uint32_t count = 0;
  if (params) count += static_cast<std::uint32_t>(params->named().size());
  if (bank) count += 3;
  io::put<std::uint32_t>(os, count);
  if (params)
    for (const auto& [name, t] : params->named()) put_layer(os, name, t.shape(), t.values());
  if (bank) {
    const std::size_t C = bank->classes(), K = bank->dims();
    put_layer(os, "centroids.g", {C, K}, bank->data());
    std::vector<double> init(C);
    for (std::size_t c = 0; c < C; ++c) init[c] = bank->initialized(c) ? 1.0 : 0.0;
    put_layer(os, "centroids.initialized", {C}, init);
    const std::vector<double> state{bank->psi0(), static_cast<double>(bank->total_steps()),
                                    static_cast<double>(bank->step())};
    put_layer(os, "centroids.state", {3}, state);
  }
  if (store) put_votes(os, *store);
  io::put_bytes(os, kEndTag);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  io::check_magic(is, kMagic, "checkpoint");
  const auto version = io::get<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: unsupported version " + std::to_string(version) +
                       " (expected " + std::to_string(kCheckpointVersion) + ")");

  const auto count = io::get<std::uint32_t>(is, "layer count");
  std::map<std::string, Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Layer l = get_layer(is, name);
    if (!layers.emplace(name, std::move(l)).second)
      throw FormatError("checkpoint: duplicate layer " + name);
  }

  Checkpoint out;
  if (layers.contains("centroids.g")) {
    Tensor g = take(layers, "centroids.g");
    Tensor init = take(layers, "centroids.initialized");
    Tensor state = take(layers, "centroids.state");
    if (g.rank() != 2 || init.numel() != g.dim(0) || state.numel() != 3)
      throw FormatError("checkpoint: inconsistent centroid bank");
    const auto sv = state.values();
    CentroidBank bank(g.dim(0), g.dim(1), sv[0], static_cast<std::size_t>(sv[1]));
    std::vector<bool> flags;
    for (double v : init.values()) flags.push_back(v != 0.0);
    bank.restore(std::vector<double>(g.values().begin(), g.values().end()), std::move(flags),
                 static_cast<std::size_t>(sv[2]));
    out.bank = std::move(bank);
  }
  if (!layers.empty()) {
    out.params = rebuild_network(layers);
    if (!layers.empty()) throw FormatError("checkpoint: unexpected layer " + layers.begin()->first);
  }

  const auto tag = io::get_bytes(is, kVotesTag.size(), "section tag");
  if (tag == kVotesTag) {
    out.store = get_votes(is);
    if (io::get_bytes(is, kEndTag.size(), "end tag") != kEndTag)
      throw FormatError("checkpoint: missing end marker");
  } else if (tag != kEndTag) {
    throw FormatError("checkpoint: unknown section '" + tag + "'");
  }
  return out;
}

}  // namespace clst
