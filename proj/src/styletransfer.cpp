#include "icehrnet/styletransfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "icehrnet/autograd.hpp"
#include "icehrnet/error.hpp"
#include "icehrnet/model.hpp"
#include "icehrnet/random.hpp"

namespace icehrnet {

namespace fs = std::filesystem;
using nlohmann::json;

ChannelStats channel_stats(const Tensor& features) {
  const Shape s = features.shape();
  if (s.n != 1) throw ValidationError("channel statistics expect a single (1, C, H, W) tensor");
  if (s.plane() == 0) throw ValidationError("channel statistics of an empty spatial extent");
  ChannelStats st;
  const double count = static_cast<double>(s.plane());
  for (int c = 0; c < s.c; ++c) {
    const double* p = features.plane(0, c);
    double sum = 0;
    for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
    const double mean = sum / count;
    double sq = 0;
    for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mean) * (p[i] - mean);
    st.mean.push_back(mean);
    st.std.push_back(std::sqrt(sq / count));
  }
  return st;
}

Tensor adain(const Tensor& content, const ChannelStats& style, double epsilon) {
  if (!(epsilon > 0)) throw ValidationError("adain epsilon must be positive");
  const Shape s = content.shape();
  if (static_cast<int>(style.mean.size()) != s.c || static_cast<int>(style.std.size()) != s.c) {
    throw ValidationError("adain channel mismatch: content has " + std::to_string(s.c) + ", style has " +
                          std::to_string(style.mean.size()));
  }
  const ChannelStats cs = channel_stats(content);
  Tensor out(s);
  for (int c = 0; c < s.c; ++c) {
    const double* p = content.plane(0, c);
    double* o = out.plane(0, c);
    // Floor rather than offset: moments stay exact unless the channel is flat.
    const double k = style.std[c] / std::max(cs.std[c], epsilon);
    for (std::size_t i = 0; i < s.plane(); ++i) o[i] = k * (p[i] - cs.mean[c]) + style.mean[c];
  }
  return out;
}

Tensor adain(const Tensor& content, const Tensor& style, double epsilon) {
  if (style.shape().c != content.shape().c) {
    throw ValidationError("adain channel mismatch: content " + content.shape().str() + ", style " +
                          style.shape().str());
  }
  return adain(content, channel_stats(style), epsilon);
}

const char* style_mode_name(StyleMode m) {
  switch (m) {
    case StyleMode::kNone:
      return "none";
    case StyleMode::kConventional:
      return "conventional";
    case StyleMode::kAdvanced:
      return "advanced";
  }
  return "?";
}

StyleMode parse_style_mode(const std::string& s) {
  if (s == "none") return StyleMode::kNone;
  if (s == "conventional") return StyleMode::kConventional;
  if (s == "advanced") return StyleMode::kAdvanced;
  throw ValidationError("unknown stylization mode '" + s + "'");
}

const char* backend_name(BackendKind k) { return k == BackendKind::kStatistical ? "statistical" : "neural"; }

BackendKind parse_backend(const std::string& s) {
  if (s == "statistical") return BackendKind::kStatistical;
  if (s == "neural") return BackendKind::kNeural;
  throw ValidationError("unknown transfer backend '" + s + "'");
}

namespace {

// Rows are the luminance and two opponent axes; the matrix is orthonormal,
// so its transpose is the inverse.
constexpr double kInvSqrt3 = 0.57735026918962576451;
constexpr double kInvSqrt6 = 0.40824829046386301637;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kOpponent[3][3] = {
    {kInvSqrt3, kInvSqrt3, kInvSqrt3},
    {kInvSqrt6, kInvSqrt6, -2 * kInvSqrt6},
    {kInvSqrt2, -kInvSqrt2, 0.0},
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor image_to_unit(const RgbImage& image) {
  Tensor t(Shape{1, 3, image.height, image.width});
  for (int c = 0; c < 3; ++c) {
    double* p = t.plane(0, c);
    for (std::size_t i = 0; i < image.pixel_count(); ++i) p[i] = image.pixels[i * 3 + c] / 255.0;
  }
  return t;
}

RgbImage unit_to_image(const Tensor& t) {
  RgbImage img(t.shape().h, t.shape().w);
  for (int c = 0; c < 3; ++c) {
    const double* p = t.plane(0, c);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(p[i] * 255.0), 0L, 255L));
    }
  }
  return img;
}

nn::Var run_layers(nn::Var x, const std::vector<NeuralWeights::Layer>& layers, bool relu_last) {
  nn::Tape& tape = *x.tape();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const nn::Var w = tape.constant(l.weight);
    const nn::Var b = tape.constant(l.bias);
    const int k = l.weight.shape().h;
    x = nn::conv2d(x, w, &b, nn::ConvGeometry{1, k / 2, 1});
    if (relu_last || i + 1 < layers.size()) x = nn::relu(x);
  }
  return x;
}

RgbImage neural_stylize(const RgbImage& content, const RgbImage& style, const TransferBackend& backend) {
  const NeuralWeights& w = *backend.neural;
  nn::Tape tape(false);
  const Tensor fc = run_layers(tape.constant(image_to_unit(content)), w.encoder, true).value();
  const Tensor fs = run_layers(tape.constant(image_to_unit(style)), w.encoder, true).value();
  Tensor t = adain(fc, fs, backend.epsilon);
  if (backend.alpha < 1.0) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = backend.alpha * t[i] + (1 - backend.alpha) * fc[i];
  }
  return unit_to_image(run_layers(tape.constant(std::move(t)), w.decoder, false).value());
}

}  // namespace

Tensor image_to_color_space(const RgbImage& image, ColorSpace space) {
  Tensor t(Shape{1, 3, image.height, image.width});
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const double rgb[3] = {static_cast<double>(image.pixels[i * 3]), static_cast<double>(image.pixels[i * 3 + 1]),
                           static_cast<double>(image.pixels[i * 3 + 2])};
    for (int c = 0; c < 3; ++c) {
      t.plane(0, c)[i] = space == ColorSpace::kRgb
                             ? rgb[c]
                             : kOpponent[c][0] * rgb[0] + kOpponent[c][1] * rgb[1] + kOpponent[c][2] * rgb[2];
    }
  }
  return t;
}

RgbImage color_space_to_image(const Tensor& values, ColorSpace space) {
  const Shape s = values.shape();
  if (s.n != 1 || s.c != 3) throw ValidationError("color tensor must be (1, 3, H, W)");
  RgbImage img(s.h, s.w);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double v[3] = {values.plane(0, 0)[i], values.plane(0, 1)[i], values.plane(0, 2)[i]};
    for (int c = 0; c < 3; ++c) {
      const double x = space == ColorSpace::kRgb
                           ? v[c]
                           : kOpponent[0][c] * v[0] + kOpponent[1][c] * v[1] + kOpponent[2][c] * v[2];
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(x), 0L, 255L));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Backends

void NeuralWeights::validate() const {
  if (encoder.empty() || decoder.empty()) throw ValidationError("neural backend needs encoder and decoder layers");
  int channels = 3;
  const auto check = [&](const std::vector<Layer>& layers, const char* part) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Shape ws = layers[i].weight.shape();
      if (ws.c != channels || ws.h != ws.w || ws.h % 2 == 0 || layers[i].bias.shape().c != ws.n) {
        throw ValidationError(std::string("neural ") + part + " layer " + std::to_string(i) + " has inconsistent shape " +
                              ws.str());
      }
      channels = ws.n;
    }
  };
  check(encoder, "encoder");
  check(decoder, "decoder");
  if (channels != 3) throw ValidationError("neural decoder must end with 3 channels");
}

NeuralWeights NeuralWeights::load(const fs::path& blob) {
  if (!fs::exists(blob)) throw ValidationError("neural backend weights missing: " + blob.string());
  std::map<std::string, Tensor> by_name;
  for (auto& t : read_tensor_blob(blob)) by_name[t.name] = std::move(t.value);
  NeuralWeights w;
  for (const char* part : {"encoder", "decoder"}) {
    auto& layers = std::string(part) == "encoder" ? w.encoder : w.decoder;
    for (int i = 0;; ++i) {
      const std::string base = std::string(part) + "." + std::to_string(i);
      auto wi = by_name.find(base + ".weight");
      if (wi == by_name.end()) break;
      auto bi = by_name.find(base + ".bias");
      if (bi == by_name.end()) throw ValidationError("neural weights missing " + base + ".bias");
      layers.push_back({wi->second, bi->second});
    }
  }
  w.validate();
  return w;
}

void NeuralWeights::save(const fs::path& blob) const {
  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    tensors.push_back({"encoder." + std::to_string(i) + ".weight", encoder[i].weight, true});
    tensors.push_back({"encoder." + std::to_string(i) + ".bias", encoder[i].bias, true});
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    tensors.push_back({"decoder." + std::to_string(i) + ".weight", decoder[i].weight, true});
    tensors.push_back({"decoder." + std::to_string(i) + ".bias", decoder[i].bias, true});
  }
  write_tensor_blob(blob, tensors);
}

TransferBackend TransferBackend::statistical(ColorSpace space) {
  TransferBackend b;
  b.color_space = space;
  return b;
}

TransferBackend TransferBackend::neural_from(std::shared_ptr<const NeuralWeights> weights, double alpha) {
  TransferBackend b;
  b.kind = BackendKind::kNeural;
  b.neural = std::move(weights);
  b.alpha = alpha;
  b.validate();
  return b;
}

void TransferBackend::validate() const {
  if (!(epsilon > 0)) throw ValidationError("transfer epsilon must be positive");
  if (kind == BackendKind::kNeural) {
    if (!neural) throw ValidationError("neural backend selected but its parameter blobs are missing");
    neural->validate();
    if (alpha < 0 || alpha > 1) throw ValidationError("neural alpha must lie in [0, 1]");
  }
}

RgbImage stylize_image(const RgbImage& content, const RgbImage& style, const TransferBackend& backend) {
  backend.validate();
  if (style.pixel_count() == 0) throw ValidationError("style patch is empty");
  if (content.pixel_count() == 0) throw ValidationError("content image is empty");
  if (backend.kind == BackendKind::kNeural) return neural_stylize(content, style, backend);
  const Tensor c = image_to_color_space(content, backend.color_space);
  const ChannelStats s = channel_stats(image_to_color_space(style, backend.color_space));
  return color_space_to_image(adain(c, s, backend.epsilon), backend.color_space);
}

// ---------------------------------------------------------------------------
// Style bank

void StyleBank::validate() const {
  for (const auto& [cls, patches] : styles) {
    if (cls < 0 || cls > 254) throw ValidationError("style bank class index " + std::to_string(cls) + " out of range");
    if (patches.empty()) throw ValidationError("style bank class " + std::to_string(cls) + " has no patches");
    for (const auto& p : patches) {
      if (p.height < 16 || p.width < 16) {
        throw ValidationError("style patch for class " + std::to_string(cls) + " is smaller than 16x16");
      }
    }
  }
}

StyleBank load_style_bank(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open style bank " + path.string());
  StyleBank bank;
  try {
    const json j = json::parse(in);
    bank.source_note = j.value("source_note", "");
    for (const auto& [key, list] : j.at("styles").items()) {
      const int cls = std::stoi(key);
      for (const auto& rel : list) {
        const std::string name = rel.get<std::string>();
        bank.styles[cls].push_back(read_image(path.parent_path() / name));
        bank.patch_names[cls].push_back(name);
      }
    }
    if (j.contains("global")) {
      bank.global_patch_name = j.at("global").get<std::string>();
      bank.global_patch = read_image(path.parent_path() / bank.global_patch_name);
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed style bank " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw ValidationError("style bank keys must be class indices");
  }
  bank.validate();
  return bank;
}

fs::path save_style_bank(const StyleBank& bank, const fs::path& dir) {
  bank.validate();
  json j;
  j["source_note"] = bank.source_note;
  j["styles"] = json::object();
  for (const auto& [cls, patches] : bank.styles) {
    json list = json::array();
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const std::string name = "patches/class" + std::to_string(cls) + "_" + std::to_string(i) + ".png";
      write_image(dir / name, patches[i]);
      list.push_back(name);
    }
    j["styles"][std::to_string(cls)] = list;
  }
  if (bank.global_patch) {
    const std::string name = "patches/global.png";
    write_image(dir / name, *bank.global_patch);
    j["global"] = name;
  }
  const fs::path out = dir / "style_bank.json";
  std::ofstream os(out);
  if (!os) throw IoError("cannot write " + out.string());
  os << j.dump(2) << '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Stylization strategies

StylizedSample stylize_global(const LabeledImage& content, const RgbImage& style_patch,
                              const TransferBackend& backend, const std::string& patch_name) {
  StylizedSample out;
  out.mode = StyleMode::kConventional;
  out.sample.id = content.id;
  out.sample.mask = content.mask;
  out.sample.image = stylize_image(content.image, style_patch, backend);
  out.styles_used[-1] = patch_name;
  return out;
}

std::map<int, int> assign_classes(int source_classes, int target_classes,
                                  const std::optional<std::map<int, int>>& mapping) {
  if (target_classes < 1) throw ValidationError("target class count must be positive");
  if (source_classes < target_classes) {
    throw ValidationError("source domain has " + std::to_string(source_classes) + " classes, fewer than the " +
                          std::to_string(target_classes) + " target classes");
  }
  std::map<int, int> out;
  if (mapping) {
    for (int c = 0; c < source_classes; ++c) {
      auto it = mapping->find(c);
      if (it == mapping->end()) throw ValidationError("class mapping misses source class " + std::to_string(c));
      if (it->second < 0 || it->second >= target_classes) {
        throw ValidationError("class mapping sends " + std::to_string(c) + " outside the target classes");
      }
      out[c] = it->second;
    }
    if (mapping->size() != static_cast<std::size_t>(source_classes)) {
      throw ValidationError("class mapping names classes outside the source domain");
    }
    return out;
  }
  for (int c = 0; c < source_classes; ++c) out[c] = c % target_classes;
  return out;
}

std::size_t choose_patch(const StyleBank& bank, int target_class, const std::string& sample_id, std::uint64_t seed) {
  auto it = bank.styles.find(target_class);
  if (it == bank.styles.end() || it->second.empty()) {
    throw ValidationError("style bank has no entry for class " + std::to_string(target_class));
  }
  Rng rng(mix_seed(seed, fnv1a(sample_id), static_cast<std::uint64_t>(target_class)));
  return static_cast<std::size_t>(rng.index(it->second.size()));
}

StylizedSample stylize_per_class(const LabeledImage& content, const StyleBank& bank, const TransferBackend& backend,
                                 std::uint64_t seed, const std::map<int, int>& assignment) {
  if (content.mask.pixel_count() == 0) throw ValidationError("sample '" + content.id + "': empty mask");
  if (content.mask.height != content.image.height || content.mask.width != content.image.width) {
    throw ValidationError("sample '" + content.id + "': image and mask differ in size");
  }
  std::set<int> present;
  for (std::uint8_t v : content.mask.labels) {
    if (v != kIgnoreValue) present.insert(v);
  }
  StylizedSample out;
  out.mode = StyleMode::kAdvanced;
  out.sample = content;
  for (int cls : present) {
    int target = cls;
    if (!assignment.empty()) {
      auto it = assignment.find(cls);
      if (it == assignment.end()) {
        throw ValidationError("sample '" + content.id + "': class " + std::to_string(cls) + " has no assigned style");
      }
      target = it->second;
    }
    auto entry = bank.styles.find(target);
    if (entry == bank.styles.end() || entry->second.empty()) {
      throw ValidationError("sample '" + content.id + "': style bank has no entry for class " + std::to_string(target));
    }
    const std::size_t k = choose_patch(bank, target, content.id, seed);
    const RgbImage rendered = stylize_image(content.image, entry->second[k], backend);
    for (std::size_t i = 0; i < content.mask.pixel_count(); ++i) {
      if (content.mask.labels[i] == cls) std::copy_n(&rendered.pixels[i * 3], 3, &out.sample.image.pixels[i * 3]);
    }
    auto names = bank.patch_names.find(target);
    out.styles_used[target] =
        names != bank.patch_names.end() && k < names->second.size() ? names->second[k] : std::to_string(k);
  }
  return out;
}

Dataset stylize_dataset(const Dataset& dataset, const StyleBank& bank, StyleMode mode, const TransferBackend& backend,
                        std::uint64_t seed, const std::map<int, int>& assignment) {
  Dataset out;
  out.manifest = dataset.manifest;
  out.samples.reserve(dataset.samples.size());
  if (mode == StyleMode::kConventional && !bank.global_patch) {
    throw ValidationError("conventional stylization needs a designated global style patch in the bank");
  }
  for (const auto& s : dataset.samples) {
    try {
      switch (mode) {
        case StyleMode::kNone:
          out.samples.push_back(s);
          break;
        case StyleMode::kConventional:
          out.samples.push_back(stylize_global(s, *bank.global_patch, backend, bank.global_patch_name).sample);
          break;
        case StyleMode::kAdvanced:
          out.samples.push_back(stylize_per_class(s, bank, backend, seed, assignment).sample);
          break;
      }
    } catch (const ValidationError& e) {
      const std::string what = e.what();
      if (what.find(s.id) != std::string::npos) throw;
      throw ValidationError("sample '" + s.id + "': " + what);
    }
  }
  return out;
}

}  // namespace icehrnet
