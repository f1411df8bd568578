#include "icehrnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "icehrnet/error.hpp"
#include "icehrnet/random.hpp"

namespace icehrnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Smooth value noise: N(0,1) lattice values, smoothstep-bilinear in between.
std::vector<double> value_noise(int h, int w, double spacing, Rng& rng) {
  const int gh = static_cast<int>(std::ceil(h / spacing)) + 2;
  const int gw = static_cast<int>(std::ceil(w / spacing)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
  for (double& v : lattice) v = rng.normal();
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  for (int y = 0; y < h; ++y) {
    const double fy = y / spacing;
    const int y0 = static_cast<int>(fy);
    const double ty = smooth(fy - y0);
    for (int x = 0; x < w; ++x) {
      const double fx = x / spacing;
      const int x0 = static_cast<int>(fx);
      const double tx = smooth(fx - x0);
      const double a = lattice[y0 * gw + x0], b = lattice[y0 * gw + x0 + 1];
      const double c = lattice[(y0 + 1) * gw + x0], d = lattice[(y0 + 1) * gw + x0 + 1];
      out[static_cast<std::size_t>(y) * w + x] = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  }
  return out;
}

std::vector<double> class_fractions(const Mask& m, int num_classes) {
  std::vector<double> f(num_classes, 0.0);
  for (auto v : m.labels) f[v] += 1.0;
  for (double& v : f) v /= static_cast<double>(m.pixel_count());
  return f;
}

void check_texture(const TextureSpec& t, const std::string& where) {
  for (double c : t.base_color) {
    if (!(c >= 0.0 && c <= 255.0)) throw ValidationError(where + ": base_color components must lie in [0, 255]");
  }
  if (!(t.amplitude >= 0.0) || !(t.speckle >= 0.0)) throw ValidationError(where + ": amplitude and speckle must be >= 0");
  if (!(t.grain >= 1.0)) throw ValidationError(where + ": grain must be >= 1 pixel");
}

json texture_to_json(const TextureSpec& t) {
  return {{"base_color", t.base_color}, {"amplitude", t.amplitude}, {"grain", t.grain},
          {"speckle", t.speckle},       {"monochrome", t.monochrome}};
}

TextureSpec texture_from_json(const json& j) {
  TextureSpec t;
  for (const auto& [key, value] : j.items()) {
    if (key != "base_color" && key != "amplitude" && key != "grain" && key != "speckle" && key != "monochrome") {
      throw ValidationError("unknown texture key '" + key + "'");
    }
  }
  t.base_color = j.value("base_color", t.base_color);
  t.amplitude = j.value("amplitude", t.amplitude);
  t.grain = j.value("grain", t.grain);
  t.speckle = j.value("speckle", t.speckle);
  t.monochrome = j.value("monochrome", t.monochrome);
  return t;
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

SyntheticDomainParams SyntheticDomainParams::defaults() {
  SyntheticDomainParams p;
  // Source: pale pink background, dark purple grainy cells.
  p.source_textures = {
      {{226, 192, 204}, 6.0, 8.0, 3.0, true},
      {{150, 72, 142}, 14.0, 3.0, 5.0, false},
  };
  // Target: dark blue water, grey speckled ice. Noisy enough that the
  // colour ranges of the two classes touch.
  p.target_textures = {
      {{60, 80, 100}, 14.0, 10.0, 4.0, true},
      {{160, 170, 184}, 20.0, 4.0, 8.0, true},
  };
  p.class_names = {"water", "ice"};
  return p;
}

void SyntheticDomainParams::validate() const {
  if (height < 16 || width < 16) throw ValidationError("synthetic images must be at least 16x16");
  if (height % 4 != 0 || width % 4 != 0) throw ValidationError("synthetic image size must be a multiple of 4");
  if (num_classes < 2 || num_classes > 254) throw ValidationError("synthetic num_classes must be in [2, 254]");
  if (static_cast<int>(class_names.size()) != num_classes) throw ValidationError("class_names must have num_classes entries");
  if (static_cast<int>(source_textures.size()) != num_classes || static_cast<int>(target_textures.size()) != num_classes) {
    throw ValidationError("need one source and one target texture per class");
  }
  for (int c = 0; c < num_classes; ++c) {
    check_texture(source_textures[c], "source texture " + std::to_string(c));
    check_texture(target_textures[c], "target texture " + std::to_string(c));
  }
  if (min_blobs < 1 || max_blobs < min_blobs) throw ValidationError("blob counts must satisfy 1 <= min_blobs <= max_blobs");
  if (!(min_radius > 0.0) || max_radius < min_radius) throw ValidationError("blob radii must satisfy 0 < min <= max");
  if (!(min_class_fraction >= 0.0) || min_class_fraction * num_classes > 1.0) {
    throw ValidationError("min_class_fraction is infeasible");
  }
  if (train_count < 1 || val_count < 1 || test_count < 1) throw ValidationError("every split needs at least one sample");
  if (patch_size < 16 || patch_size > std::min(height, width)) {
    throw ValidationError("patch_size must be between 16 and the image size");
  }
  if (patches_per_class < 1) throw ValidationError("patches_per_class must be >= 1");

  double total = 0.0;
  for (int c = 0; c < num_classes; ++c) total += color_distance(source_textures[c].base_color, target_textures[c].base_color);
  const double mean = total / num_classes;
  if (mean < min_domain_distance) {
    throw ValidationError("source and target textures are too similar: mean class color distance " +
                          std::to_string(mean) + " < " + std::to_string(min_domain_distance));
  }
}

json synthetic_params_to_json(const SyntheticDomainParams& p) {
  json src = json::array(), tgt = json::array();
  for (const auto& t : p.source_textures) src.push_back(texture_to_json(t));
  for (const auto& t : p.target_textures) tgt.push_back(texture_to_json(t));
  return {
      {"height", p.height},
      {"width", p.width},
      {"num_classes", p.num_classes},
      {"class_names", p.class_names},
      {"source_textures", src},
      {"target_textures", tgt},
      {"min_blobs", p.min_blobs},
      {"max_blobs", p.max_blobs},
      {"min_radius", p.min_radius},
      {"max_radius", p.max_radius},
      {"min_class_fraction", p.min_class_fraction},
      {"train_count", p.train_count},
      {"val_count", p.val_count},
      {"test_count", p.test_count},
      {"patch_size", p.patch_size},
      {"patches_per_class", p.patches_per_class},
      {"min_domain_distance", p.min_domain_distance},
      {"seed", p.seed},
  };
}

SyntheticDomainParams synthetic_params_from_json(const json& j, const SyntheticDomainParams& base) {
  static const std::set<std::string> known = {
      "height",     "width",      "num_classes",        "class_names", "source_textures", "target_textures",
      "min_blobs",  "max_blobs",  "min_radius",         "max_radius",  "min_class_fraction", "train_count",
      "val_count",  "test_count", "patch_size",         "patches_per_class", "min_domain_distance", "seed"};
  if (!j.is_object()) throw ValidationError("synthetic parameters must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ValidationError("unknown synthetic key '" + key + "'");
  }
  SyntheticDomainParams p = base;
  try {
    p.height = j.value("height", p.height);
    p.width = j.value("width", p.width);
    p.num_classes = j.value("num_classes", p.num_classes);
    p.class_names = j.value("class_names", p.class_names);
    if (j.contains("source_textures")) {
      p.source_textures.clear();
      for (const auto& t : j.at("source_textures")) p.source_textures.push_back(texture_from_json(t));
    }
    if (j.contains("target_textures")) {
      p.target_textures.clear();
      for (const auto& t : j.at("target_textures")) p.target_textures.push_back(texture_from_json(t));
    }
    p.min_blobs = j.value("min_blobs", p.min_blobs);
    p.max_blobs = j.value("max_blobs", p.max_blobs);
    p.min_radius = j.value("min_radius", p.min_radius);
    p.max_radius = j.value("max_radius", p.max_radius);
    p.min_class_fraction = j.value("min_class_fraction", p.min_class_fraction);
    p.train_count = j.value("train_count", p.train_count);
    p.val_count = j.value("val_count", p.val_count);
    p.test_count = j.value("test_count", p.test_count);
    p.patch_size = j.value("patch_size", p.patch_size);
    p.patches_per_class = j.value("patches_per_class", p.patches_per_class);
    p.min_domain_distance = j.value("min_domain_distance", p.min_domain_distance);
    p.seed = j.value("seed", p.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad synthetic parameter: ") + e.what());
  }
  p.validate();
  return p;
}

Mask generate_blob_mask(const SyntheticDomainParams& p, std::uint64_t seed) {
  for (int attempt = 0; attempt < 256; ++attempt) {
    Rng rng(mix_seed(seed, 0xB10B, attempt));
    Mask m(p.height, p.width, 0);
    // Low-frequency wobble so blob outlines are not perfect ellipses.
    const std::vector<double> wobble = value_noise(p.height, p.width, 12.0, rng);
    const int blobs = p.min_blobs + static_cast<int>(rng.index(p.max_blobs - p.min_blobs + 1));
    for (int b = 0; b < blobs; ++b) {
      const double cy = rng.uniform(0.0, p.height), cx = rng.uniform(0.0, p.width);
      const double ry = rng.uniform(p.min_radius, p.max_radius), rx = rng.uniform(p.min_radius, p.max_radius);
      const auto label = static_cast<std::uint8_t>(1 + b % (p.num_classes - 1));
      for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
          const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
          const double r = std::sqrt(dy * dy + dx * dx) + 0.12 * wobble[static_cast<std::size_t>(y) * p.width + x];
          if (r < 1.0) m.at(y, x) = label;
        }
      }
    }
    const auto frac = class_fractions(m, p.num_classes);
    if (*std::min_element(frac.begin(), frac.end()) >= p.min_class_fraction) return m;
  }
  throw ValidationError("blob parameters cannot produce masks with every class present");
}

RgbImage render_textures(const Mask& mask, const std::vector<TextureSpec>& textures, std::uint64_t seed) {
  Rng rng(seed);
  const int h = mask.height, w = mask.width;
  std::vector<std::array<std::vector<double>, 3>> fields(textures.size());
  for (std::size_t c = 0; c < textures.size(); ++c) {
    const auto& t = textures[c];
    fields[c][0] = value_noise(h, w, t.grain, rng);
    if (t.monochrome) {
      fields[c][1] = fields[c][0];
      fields[c][2] = fields[c][0];
    } else {
      fields[c][1] = value_noise(h, w, t.grain, rng);
      fields[c][2] = value_noise(h, w, t.grain, rng);
    }
  }
  RgbImage img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int c = mask.at(y, x);
      if (c >= static_cast<int>(textures.size())) throw ValidationError("mask class without a texture");
      const auto& t = textures[c];
      std::uint8_t* px = img.at(y, x);
      for (int k = 0; k < 3; ++k) {
        const double v = t.base_color[k] + t.amplitude * fields[c][k][static_cast<std::size_t>(y) * w + x] +
                         t.speckle * rng.normal();
        px[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return img;
}

namespace {

Dataset make_domain(const SyntheticDomainParams& p, const std::string& name, const std::vector<TextureSpec>& textures,
                    std::uint64_t domain_tag) {
  Dataset d;
  d.manifest.name = name;
  d.manifest.num_classes = p.num_classes;
  d.manifest.class_names = p.class_names;
  const int total = p.train_count + p.val_count + p.test_count;
  for (int i = 0; i < total; ++i) {
    LabeledImage s;
    char id[32];
    std::snprintf(id, sizeof id, "%s_%03d", name.c_str(), i);
    s.id = id;
    s.mask = generate_blob_mask(p, mix_seed(p.seed, domain_tag, 2 * i));
    s.image = render_textures(s.mask, textures, mix_seed(p.seed, domain_tag, 2 * i + 1));
    const Split split = i < p.train_count ? Split::kTrain : i < p.train_count + p.val_count ? Split::kVal : Split::kTest;
    d.manifest.samples.push_back({s.id, "images/" + s.id + ".png", "masks/" + s.id + ".png"});
    d.manifest.split[s.id] = split;
    d.samples.push_back(std::move(s));
  }
  return d;
}

RgbImage crop(const RgbImage& img, int y0, int x0, int size) {
  RgbImage out(size, size);
  for (int y = 0; y < size; ++y) std::copy_n(img.at(y0 + y, x0), size * 3, out.at(y, 0));
  return out;
}

// First fully class-pure window in the sample, scanning from the centre out.
// Window of the given size with the most pixels of cls (at least
// min_fraction of it), ties broken toward the image center.
std::optional<std::array<int, 2>> pure_window(const Mask& m, int cls, int size, double min_fraction = 1.0) {
  // Integral image of "pixel == cls".
  const int W = m.width + 1;
  std::vector<int> integral(static_cast<std::size_t>(m.height + 1) * W, 0);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      integral[(y + 1) * W + x + 1] =
          (m.at(y, x) == cls) + integral[y * W + x + 1] + integral[(y + 1) * W + x] - integral[y * W + x];
    }
  }
  std::optional<std::array<int, 2>> best;
  double best_d = 1e300;
  int best_count = static_cast<int>(std::ceil(min_fraction * size * size));
  const double cy = (m.height - size) / 2.0, cx = (m.width - size) / 2.0;
  for (int y = 0; y + size <= m.height; ++y) {
    for (int x = 0; x + size <= m.width; ++x) {
      const int count = integral[(y + size) * W + x + size] - integral[y * W + x + size] -
                        integral[(y + size) * W + x] + integral[y * W + x];
      if (count < best_count) continue;
      const double d = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      if (count > best_count || d < best_d) {
        best_count = count;
        best_d = d;
        best = std::array<int, 2>{y, x};
      }
    }
  }
  return best;
}

}  // namespace

SyntheticDomains gen_synthetic_domains(const SyntheticDomainParams& params) {
  params.validate();
  SyntheticDomains out;
  out.source = make_domain(params, "source", params.source_textures, 0x5012CE);
  out.target = make_domain(params, "target", params.target_textures, 0x7A26E7);

  // Class-pure crops from target training images only.
  std::vector<const LabeledImage*> pool;
  for (const auto& s : out.target.samples) {
    if (out.target.manifest.split.at(s.id) == Split::kTrain) pool.push_back(&s);
  }
  for (int c = 0; c < params.num_classes; ++c) {
    for (int size = params.patch_size; size >= 16 && out.bank.styles[c].empty(); size -= 4) {
      for (const LabeledImage* s : pool) {
        if (static_cast<int>(out.bank.styles[c].size()) == params.patches_per_class) break;
        const auto at = pure_window(s->mask, c, size);
        if (!at) continue;
        out.bank.styles[c].push_back(crop(s->image, (*at)[0], (*at)[1], size));
        const std::string src = s->id + "@" + std::to_string((*at)[0]) + "," + std::to_string((*at)[1]);
        out.bank.patch_names[c].push_back(src);
        out.patch_sources[c].push_back(src);
      }
    }
    if (out.bank.styles[c].empty()) {
      // Small or crowded images: settle for one nearly pure crop.
      for (const LabeledImage* s : pool) {
        const auto at = pure_window(s->mask, c, 16, 0.95);
        if (!at) continue;
        out.bank.styles[c].push_back(crop(s->image, (*at)[0], (*at)[1], 16));
        const std::string src = s->id + "@" + std::to_string((*at)[0]) + "," + std::to_string((*at)[1]);
        out.bank.patch_names[c].push_back(src);
        out.patch_sources[c].push_back(src);
        break;
      }
    }
    if (out.bank.styles[c].empty()) {
      throw ValidationError("no class-pure style patch found for target class " + std::to_string(c));
    }
  }
  out.bank.global_patch = pool.front()->image;
  out.bank.global_patch_name = pool.front()->id;
  out.bank.source_note = "class-pure crops of target training images";
  return out;
}

SyntheticPaths write_synthetic_domains(const SyntheticDomains& domains, const fs::path& out) {
  SyntheticPaths paths;
  paths.source_manifest = save_dataset(domains.source, out / "source");
  paths.target_manifest = save_dataset(domains.target, out / "target");
  StyleBank bank = domains.bank;
  json origins = json::object();
  for (const auto& [cls, list] : domains.patch_sources) origins[std::to_string(cls)] = list;
  bank.source_note += "; origins " + origins.dump() + "; global " + bank.global_patch_name;
  paths.style_bank = save_style_bank(bank, out / "style_bank");
  return paths;
}

}  // namespace icehrnet
