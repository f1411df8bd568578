#include "icehrnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <optional>

#include "icehrnet/config.hpp"
#include "icehrnet/error.hpp"

namespace icehrnet {

using nn::ConvGeometry;
using nn::Parameter;
using nn::Var;

const char* head_name(HeadKind h) { return h == HeadKind::kDecoder ? "decoder" : "fcn"; }
const char* low_level_name(LowLevelSource s) { return s == LowLevelSource::kConv1 ? "conv1" : "conv2"; }

HeadKind parse_head(const std::string& s) {
  if (s == "decoder") return HeadKind::kDecoder;
  if (s == "fcn") return HeadKind::kFcn;
  throw ValidationError("unknown head '" + s + "'");
}

LowLevelSource parse_low_level(const std::string& s) {
  if (s == "conv1") return LowLevelSource::kConv1;
  if (s == "conv2") return LowLevelSource::kConv2;
  throw ValidationError("unknown low-level source '" + s + "'");
}

int SegConfig::backbone_channels() const {
  return branch_widths[0] + branch_widths[1] + branch_widths[2] + branch_widths[3];
}

void SegConfig::validate() const {
  if (num_classes < 2 || num_classes > 255) throw ValidationError("num_classes must lie in [2, 255]");
  for (int w : branch_widths) {
    if (w <= 0) throw ValidationError("branch widths must be positive");
  }
  for (int i = 0; i < 4; ++i) {
    if (stage_blocks[i] < 1) throw ValidationError("every stage needs at least one block");
    if (stage_modules[i] < 1) throw ValidationError("every stage needs at least one module");
  }
  if (stem_channels <= 0 || layer1_planes <= 0) throw ValidationError("stem widths must be positive");
  if (head == HeadKind::kFcn && use_aspp) throw ValidationError("the FCN head is wired without ASPP");
  if (use_aspp) {
    if (aspp_out_channels <= 0) throw ValidationError("aspp_out_channels must be positive");
    if (aspp_rates.empty()) throw ValidationError("ASPP needs at least one rate");
    for (int r : aspp_rates) {
      if (r < 1) throw ValidationError("ASPP rates must be >= 1");
    }
  }
  if (head == HeadKind::kDecoder && (decoder_low_level_channels <= 0 || decoder_channels <= 0)) {
    throw ValidationError("decoder widths must be positive");
  }
  if (normalization.std[0] <= 0 || normalization.std[1] <= 0 || normalization.std[2] <= 0) {
    throw ValidationError("normalization std must be positive");
  }
}

SegConfig SegConfig::w48(int num_classes) {
  SegConfig c;
  c.num_classes = num_classes;
  return c;
}

SegConfig SegConfig::toy(int num_classes) {
  SegConfig c;
  c.num_classes = num_classes;
  c.branch_widths = {8, 16, 32, 64};
  c.stage_blocks = {1, 1, 1, 1};
  c.stage_modules = {1, 1, 1, 1};
  c.layer1_planes = 16;
  c.aspp_out_channels = 32;
  c.aspp_rates = {1, 2, 4, 6};
  c.decoder_low_level_channels = 16;
  c.decoder_channels = 32;
  return c;
}

SegConfig ablation_variant(char tag, const SegConfig& base) {
  SegConfig c = base;
  switch (tag) {
    case 'a':
      c.head = HeadKind::kFcn;
      c.use_aspp = false;
      break;
    case 'b':
      c.head = HeadKind::kDecoder;
      c.use_aspp = false;
      c.low_level = LowLevelSource::kConv2;
      break;
    case 'c':
      c.head = HeadKind::kDecoder;
      c.use_aspp = true;
      c.low_level = LowLevelSource::kConv2;
      break;
    case 'd':
      c.head = HeadKind::kDecoder;
      c.use_aspp = false;
      c.low_level = LowLevelSource::kConv1;
      break;
    case 'e':
      c.head = HeadKind::kDecoder;
      c.use_aspp = true;
      c.low_level = LowLevelSource::kConv1;
      break;
    default:
      throw ValidationError(std::string("unknown ablation variant '") + tag + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(const std::string& name, Shape shape, double fill, bool trainable) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name " + name);
  params_.push_back(Parameter{name, Tensor(shape, fill), Tensor(), trainable});
  Parameter& p = params_.back();
  index_[name] = &p;
  return p;
}

Parameter& ParamStore::add_conv(const std::string& name, int out, int in, int k, Rng& rng) {
  Parameter& p = add(name, Shape{out, in, k, k});
  const double stddev = std::sqrt(2.0 / (static_cast<double>(out) * k * k));
  for (double& v : p.value.values()) v = rng.normal() * stddev;
  return p;
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    if (!p.grad.empty()) p.grad.fill(0.0);
  }
}

// ---------------------------------------------------------------------------
// Layers

ConvBnAct ConvBnAct::make(ParamStore& store, const std::string& name, int in, int out, int k, ConvGeometry g,
                          bool relu, Rng& rng) {
  ConvBnAct u;
  u.weight = &store.add_conv(name + ".conv.weight", out, in, k, rng);
  u.gamma = &store.add(name + ".bn.weight", Shape{1, out, 1, 1}, 1.0);
  u.beta = &store.add(name + ".bn.bias", Shape{1, out, 1, 1}, 0.0);
  u.running_mean = &store.add(name + ".bn.running_mean", Shape{1, out, 1, 1}, 0.0, false);
  u.running_var = &store.add(name + ".bn.running_var", Shape{1, out, 1, 1}, 1.0, false);
  u.geometry = g;
  u.relu = relu;
  return u;
}

Var ConvBnAct::apply(Var x, bool training) const {
  nn::Tape& tape = *x.tape();
  Var y = nn::conv2d(x, tape.param(*weight), nullptr, geometry);
  y = nn::batch_norm(y, tape.param(*gamma), tape.param(*beta), *running_mean, *running_var,
                     nn::BatchNormOptions{training});
  return relu ? nn::relu(y) : y;
}

Conv Conv::make(ParamStore& store, const std::string& name, int in, int out, int k, bool bias, Rng& rng) {
  Conv c;
  c.weight = &store.add_conv(name + ".weight", out, in, k, rng);
  if (bias) c.bias = &store.add(name + ".bias", Shape{1, out, 1, 1}, 0.0);
  c.geometry = ConvGeometry{1, k / 2, 1};
  return c;
}

Var Conv::apply(Var x) const {
  nn::Tape& tape = *x.tape();
  if (bias) {
    const Var b = tape.param(*bias);
    return nn::conv2d(x, tape.param(*weight), &b, geometry);
  }
  return nn::conv2d(x, tape.param(*weight), nullptr, geometry);
}

namespace {

ConvGeometry same3(int stride = 1) { return ConvGeometry{stride, 1, 1}; }
constexpr ConvGeometry kPointwise{1, 0, 1};

struct BasicBlock {
  ConvBnAct c1, c2;
  std::optional<ConvBnAct> down;

  BasicBlock(ParamStore& s, const std::string& name, int in, int out, Rng& rng)
      : c1(ConvBnAct::make(s, name + ".conv1", in, out, 3, same3(), true, rng)),
        c2(ConvBnAct::make(s, name + ".conv2", out, out, 3, same3(), false, rng)) {
    if (in != out) down = ConvBnAct::make(s, name + ".downsample", in, out, 1, kPointwise, false, rng);
  }
  Var apply(Var x, bool training) const {
    Var y = c2.apply(c1.apply(x, training), training);
    Var res = down ? down->apply(x, training) : x;
    return nn::relu(nn::add(y, res));
  }
};

struct Bottleneck {
  ConvBnAct c1, c2, c3;
  std::optional<ConvBnAct> down;

  Bottleneck(ParamStore& s, const std::string& name, int in, int planes, Rng& rng)
      : c1(ConvBnAct::make(s, name + ".conv1", in, planes, 1, kPointwise, true, rng)),
        c2(ConvBnAct::make(s, name + ".conv2", planes, planes, 3, same3(), true, rng)),
        c3(ConvBnAct::make(s, name + ".conv3", planes, planes * 4, 1, kPointwise, false, rng)) {
    if (in != planes * 4) down = ConvBnAct::make(s, name + ".downsample", in, planes * 4, 1, kPointwise, false, rng);
  }
  Var apply(Var x, bool training) const {
    Var y = c3.apply(c2.apply(c1.apply(x, training), training), training);
    Var res = down ? down->apply(x, training) : x;
    return nn::relu(nn::add(y, res));
  }
};

// One multi-resolution module: per-branch residual blocks, then exchange
// across every pair of resolutions.
struct HrModule {
  std::vector<std::vector<BasicBlock>> branches;
  // fuse[i][j]: path from branch j into branch i (empty for j == i).
  std::vector<std::vector<std::vector<ConvBnAct>>> fuse;

  HrModule(ParamStore& s, const std::string& name, const std::vector<int>& widths, int blocks, Rng& rng) {
    const int nb = static_cast<int>(widths.size());
    branches.resize(nb);
    for (int b = 0; b < nb; ++b) {
      for (int k = 0; k < blocks; ++k) {
        branches[b].emplace_back(s, name + ".branches." + std::to_string(b) + "." + std::to_string(k), widths[b],
                                 widths[b], rng);
      }
    }
    fuse.resize(nb);
    for (int i = 0; i < nb; ++i) {
      fuse[i].resize(nb);
      for (int j = 0; j < nb; ++j) {
        const std::string p = name + ".fuse." + std::to_string(i) + "." + std::to_string(j);
        if (j > i) {
          fuse[i][j].push_back(ConvBnAct::make(s, p, widths[j], widths[i], 1, kPointwise, false, rng));
        } else if (j < i) {
          for (int k = 0; k < i - j; ++k) {
            const bool last = k == i - j - 1;
            fuse[i][j].push_back(ConvBnAct::make(s, p + "." + std::to_string(k), widths[j],
                                                 last ? widths[i] : widths[j], 3, same3(2), !last, rng));
          }
        }
      }
    }
  }

  std::vector<Var> apply(std::vector<Var> xs, bool training) const {
    const int nb = static_cast<int>(branches.size());
    for (int b = 0; b < nb; ++b) {
      for (const auto& blk : branches[b]) xs[b] = blk.apply(xs[b], training);
    }
    std::vector<Var> out(nb);
    for (int i = 0; i < nb; ++i) {
      Var acc = xs[i];
      for (int j = 0; j < nb; ++j) {
        if (j == i) continue;
        Var y = xs[j];
        for (const auto& u : fuse[i][j]) y = u.apply(y, training);
        if (j > i) y = nn::resize_bilinear(y, xs[i].shape().h, xs[i].shape().w);
        acc = nn::add(acc, y);
      }
      out[i] = nn::relu(acc);
    }
    return out;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Heads

Aspp::Aspp(ParamStore& store, const std::string& prefix, int in_channels, std::vector<int> rates, int out_channels,
           Rng& rng)
    : rates_(std::move(rates)), out_channels_(out_channels) {
  if (rates_.empty()) throw ValidationError("ASPP needs at least one rate");
  for (std::size_t i = 0; i < rates_.size(); ++i) {
    const int r = rates_[i];
    if (r < 1) throw ValidationError("ASPP rates must be >= 1");
    const std::string name = prefix + ".branch" + std::to_string(i);
    if (r == 1) {
      branches_.push_back(ConvBnAct::make(store, name, in_channels, out_channels, 1, kPointwise, true, rng));
    } else {
      branches_.push_back(
          ConvBnAct::make(store, name, in_channels, out_channels, 3, ConvGeometry{1, r, r}, true, rng));
    }
  }
  pool_ = ConvBnAct::make(store, prefix + ".pool", in_channels, out_channels, 1, kPointwise, true, rng);
  project_ = ConvBnAct::make(store, prefix + ".project", out_channels * static_cast<int>(rates_.size() + 1),
                             out_channels, 1, kPointwise, true, rng);
}

std::vector<Var> Aspp::branch_outputs(Var x, bool training) const {
  const Shape s = x.shape();
  for (int r : rates_) {
    if (r > 1 && (r >= s.h || r >= s.w)) {
      throw ValidationError("ASPP rate " + std::to_string(r) + " is degenerate for a " + std::to_string(s.h) + "x" +
                            std::to_string(s.w) + " feature map");
    }
  }
  std::vector<Var> parts;
  for (const auto& b : branches_) parts.push_back(b.apply(x, training));
  Var pooled = pool_.apply(nn::global_avg_pool(x), training);
  parts.push_back(nn::resize_bilinear(pooled, s.h, s.w));
  return parts;
}

Var Aspp::forward(Var x, bool training) const {
  const std::vector<Var> parts = branch_outputs(x, training);
  return project_.apply(nn::concat_channels(parts), training);
}

DecoderHead::DecoderHead(ParamStore& store, const std::string& prefix, int deep_channels, int low_level_channels,
                         int low_level_proj, int width, int num_classes, Rng& rng)
    : low_proj_(ConvBnAct::make(store, prefix + ".low_proj", low_level_channels, low_level_proj, 1, kPointwise, true,
                                rng)),
      fuse1_(ConvBnAct::make(store, prefix + ".fuse1", deep_channels + low_level_proj, width, 3, same3(), true, rng)),
      fuse2_(ConvBnAct::make(store, prefix + ".fuse2", width, width, 3, same3(), true, rng)),
      classifier_(Conv::make(store, prefix + ".classifier", width, num_classes, 1, true, rng)) {}

Var DecoderHead::forward(Var deep, Var low_level, int out_h, int out_w, bool training) const {
  const Shape ls = low_level.shape();
  Var up = nn::resize_bilinear(deep, ls.h, ls.w);
  Var low = low_proj_.apply(low_level, training);
  if (up.shape().h != low.shape().h || up.shape().w != low.shape().w) {
    throw ValidationError("decoder resolution mismatch after upsampling");
  }
  const Var parts[] = {up, low};
  Var y = fuse2_.apply(fuse1_.apply(nn::concat_channels(parts), training), training);
  return nn::resize_bilinear(classifier_.apply(y), out_h, out_w);
}

FcnHead::FcnHead(ParamStore& store, const std::string& prefix, int channels, int num_classes, Rng& rng)
    : mix_(ConvBnAct::make(store, prefix + ".mix", channels, channels, 1, kPointwise, true, rng)),
      classifier_(Conv::make(store, prefix + ".classifier", channels, num_classes, 1, true, rng)) {}

Var FcnHead::forward(Var features, int out_h, int out_w, bool training) const {
  return nn::resize_bilinear(classifier_.apply(mix_.apply(features, training)), out_h, out_w);
}

// ---------------------------------------------------------------------------
// Network

struct SegModel::Impl {
  ConvBnAct conv1, conv2;
  std::vector<Bottleneck> layer1;
  // transitions[t][b]: path creating/adapting branch b entering stage t + 2.
  std::vector<std::vector<std::optional<ConvBnAct>>> transitions;
  std::vector<std::vector<HrModule>> stages;
  std::optional<Aspp> aspp;
  std::optional<DecoderHead> decoder;
  std::optional<FcnHead> fcn;
};

SegModel::SegModel(SegConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed), impl_(std::make_unique<Impl>()) {
  config_.validate();
  Rng rng(seed);
  ParamStore& s = store_;
  Impl& m = *impl_;
  const SegConfig& c = config_;
  m.conv1 = ConvBnAct::make(s, "stem.conv1", 3, c.stem_channels, 3, same3(2), true, rng);
  m.conv2 = ConvBnAct::make(s, "stem.conv2", c.stem_channels, c.stem_channels, 3, same3(2), true, rng);

  int in = c.stem_channels;
  for (int k = 0; k < c.stage_blocks[0]; ++k) {
    m.layer1.emplace_back(s, "layer1." + std::to_string(k), in, c.layer1_planes, rng);
    in = c.layer1_planes * 4;
  }

  std::vector<int> prev{in};
  for (int stage = 2; stage <= 4; ++stage) {
    std::vector<int> widths(c.branch_widths.begin(), c.branch_widths.begin() + stage);
    std::vector<std::optional<ConvBnAct>> trans(stage);
    const std::string tname = "transition" + std::to_string(stage - 1) + ".";
    for (int b = 0; b < stage; ++b) {
      if (b < static_cast<int>(prev.size())) {
        if (prev[b] != widths[b]) {
          trans[b] = ConvBnAct::make(s, tname + std::to_string(b), prev[b], widths[b], 3, same3(), true, rng);
        }
      } else {
        trans[b] = ConvBnAct::make(s, tname + std::to_string(b), prev.back(), widths[b], 3, same3(2), true, rng);
      }
    }
    m.transitions.push_back(std::move(trans));
    std::vector<HrModule> modules;
    for (int k = 0; k < c.stage_modules[stage - 1]; ++k) {
      modules.emplace_back(s, "stage" + std::to_string(stage) + "." + std::to_string(k), widths,
                           c.stage_blocks[stage - 1], rng);
    }
    m.stages.push_back(std::move(modules));
    prev = widths;
  }

  const int backbone = c.backbone_channels();
  if (c.head == HeadKind::kFcn) {
    m.fcn.emplace(s, "head.fcn", backbone, c.num_classes, rng);
  } else {
    int deep = backbone;
    if (c.use_aspp) {
      m.aspp.emplace(s, "aspp", backbone, c.aspp_rates, c.aspp_out_channels, rng);
      deep = c.aspp_out_channels;
    }
    m.decoder.emplace(s, "head.decoder", deep, c.stem_channels, c.decoder_low_level_channels, c.decoder_channels,
                      c.num_classes, rng);
  }
}

SegModel::~SegModel() = default;

Var SegModel::forward(Var input, bool training, FeatureBundle* features) {
  const Shape s = input.shape();
  if (s.c != 3) throw ValidationError("input must have 3 channels, got " + std::to_string(s.c));
  if (s.n < 1 || s.h < 4 || s.w < 4 || s.h % 4 != 0 || s.w % 4 != 0) {
    throw ValidationError("input spatial size must be a positive multiple of 4, got " + s.str());
  }
  const Impl& m = *impl_;
  Var c1 = m.conv1.apply(input, training);
  Var c2 = m.conv2.apply(c1, training);
  Var x = c2;
  for (const auto& b : m.layer1) x = b.apply(x, training);

  std::vector<Var> branches{x};
  for (std::size_t t = 0; t < m.stages.size(); ++t) {
    const auto& trans = m.transitions[t];
    std::vector<Var> next(trans.size());
    for (std::size_t b = 0; b < trans.size(); ++b) {
      Var src = b < branches.size() ? branches[b] : branches.back();
      next[b] = trans[b] ? trans[b]->apply(src, training) : src;
    }
    branches = std::move(next);
    for (const auto& mod : m.stages[t]) branches = mod.apply(branches, training);
  }
  const int bh = branches[0].shape().h, bw = branches[0].shape().w;
  std::vector<Var> ups{branches[0]};
  for (std::size_t b = 1; b < branches.size(); ++b) ups.push_back(nn::resize_bilinear(branches[b], bh, bw));
  Var backbone = nn::concat_channels(ups);

  Var aspp_out;
  Var logits;
  if (m.fcn) {
    logits = m.fcn->forward(backbone, s.h, s.w, training);
  } else {
    Var deep = backbone;
    if (m.aspp) {
      aspp_out = m.aspp->forward(backbone, training);
      deep = aspp_out;
    }
    Var low = config_.low_level == LowLevelSource::kConv1 ? c1 : c2;
    logits = m.decoder->forward(deep, low, s.h, s.w, training);
  }
  if (features) *features = FeatureBundle{c1, c2, backbone, aspp_out};
  return logits;
}

Tensor SegModel::predict(const Tensor& input) const {
  nn::Tape tape(false);
  // Evaluation mode reads parameters and running statistics only.
  auto& self = const_cast<SegModel&>(*this);
  return self.forward(tape.constant(input), false).value();
}

Tensor SegModel::normalize(std::span<const RgbImage* const> images) const {
  if (images.empty()) throw ValidationError("empty image batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor t(Shape{static_cast<int>(images.size()), 3, h, w});
  const Normalization& norm = config_.normalization;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage& img = *images[n];
    if (img.height != h || img.width != w) throw ValidationError("batch images differ in size");
    for (int c = 0; c < 3; ++c) {
      double* p = t.plane(static_cast<int>(n), c);
      for (std::size_t i = 0; i < img.pixel_count(); ++i) p[i] = (img.pixels[i * 3 + c] - norm.mean[c]) / norm.std[c];
    }
  }
  return t;
}

std::unique_ptr<SegModel> build_model(const SegConfig& config, std::uint64_t seed) {
  return std::make_unique<SegModel>(config, seed);
}

std::vector<Mask> argmax_masks(const Tensor& logits) {
  const Shape s = logits.shape();
  std::vector<Mask> out;
  for (int n = 0; n < s.n; ++n) {
    Mask m(s.h, s.w);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      int best = 0;
      double best_v = logits.plane(n, 0)[i];
      for (int c = 1; c < s.c; ++c) {
        const double v = logits.plane(n, c)[i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      m.labels[i] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kBlobMagic[8] = {'I', 'H', 'N', 'B', 'L', 'O', 'B', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ValidationError("truncated tensor blob");
  return v;
}

}  // namespace

void write_tensor_blob(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kBlobMagic, sizeof(kBlobMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(os, t.trainable ? 1 : 0);
    const Shape s = t.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!os) throw IoError("short write to " + path.string());
}

std::vector<NamedTensor> read_tensor_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[sizeof(kBlobMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0) {
    throw ValidationError(path.string() + " is not a tensor blob");
  }
  const auto count = get<std::uint32_t>(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = get<std::uint32_t>(is);
    if (len > 4096) throw ValidationError("corrupt tensor blob name length");
    t.name.resize(len);
    is.read(t.name.data(), len);
    t.trainable = get<std::uint8_t>(is) != 0;
    Shape s;
    s.n = get<std::int32_t>(is);
    s.c = get<std::int32_t>(is);
    s.h = get<std::int32_t>(is);
    s.w = get<std::int32_t>(is);
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw ValidationError("corrupt tensor blob shape");
    Tensor v(s);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is) throw ValidationError("truncated tensor blob " + path.string());
    t.value = std::move(v);
    out.push_back(std::move(t));
  }
  return out;
}

void load_parameters(SegModel& model, const std::filesystem::path& blob) {
  const auto tensors = read_tensor_blob(blob);
  if (tensors.size() != model.params().all().size()) {
    throw ValidationError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(model.params().all().size()));
  }
  for (const auto& t : tensors) {
    Parameter* p = model.params().find(t.name);
    if (!p) throw ValidationError("checkpoint tensor '" + t.name + "' is not a model parameter");
    if (!(p->value.shape() == t.value.shape())) {
      throw ValidationError("checkpoint tensor '" + t.name + "' has shape " + t.value.shape().str() + ", expected " +
                            p->value.shape().str());
    }
    p->value = t.value;
  }
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& stem, const CheckpointInfo& info) {
  std::vector<NamedTensor> tensors;
  for (const auto& p : model.params().all()) tensors.push_back({p.name, p.value, p.trainable});
  write_tensor_blob(std::filesystem::path(stem.string() + ".bin"), tensors);
  nlohmann::json side;
  side["seg_config"] = seg_config_to_json(model.config());
  side["seed"] = model.seed();
  side["iteration"] = info.iteration;
  side["normalization"] = {{"mean", model.config().normalization.mean}, {"std", model.config().normalization.std}};
  side["parameter_count"] = model.parameter_count();
  std::ofstream os(stem.string() + ".json");
  if (!os) throw IoError("cannot write " + stem.string() + ".json");
  os << side.dump(2) << '\n';
}

std::unique_ptr<SegModel> load_checkpoint(const std::filesystem::path& stem, CheckpointInfo* info) {
  const std::filesystem::path side_path = stem.string() + ".json";
  std::ifstream is(side_path);
  if (!is) throw IoError("cannot open " + side_path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint sidecar: " + std::string(e.what()));
  }
  SegConfig config = seg_config_from_json(side.at("seg_config"));
  auto model = build_model(config, side.at("seed").get<std::uint64_t>());
  load_parameters(*model, stem.string() + ".bin");
  if (info) info->iteration = side.value("iteration", 0L);
  return model;
}

}  // namespace icehrnet
