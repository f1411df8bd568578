#include "icehrnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <set>

#include "icehrnet/error.hpp"
#include "icehrnet/random.hpp"

namespace icehrnet {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ValidationError("unknown split name '" + name + "'");
}

std::vector<std::string> DatasetManifest::ids_in(Split s) const {
  std::vector<std::string> ids;
  for (const auto& e : samples) {
    auto it = split.find(e.id);
    if (it != split.end() && it->second == s) ids.push_back(e.id);
  }
  return ids;
}

DatasetManifest parse_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.name = j.at("name").get<std::string>();
    m.num_classes = j.at("num_classes").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("image").get<std::string>(),
                           s.at("mask").get<std::string>()});
    }
    if (j.contains("split")) {
      for (const auto& [id, name] : j.at("split").items()) m.split[id] = parse_split(name.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (m.num_classes < 2) throw ValidationError("manifest num_classes must be >= 2");
  if (m.num_classes > 255) throw ValidationError("manifest num_classes must be <= 255");
  if (static_cast<int>(m.class_names.size()) != m.num_classes) {
    throw ValidationError("manifest class_names has " + std::to_string(m.class_names.size()) + " entries, expected " +
                          std::to_string(m.num_classes));
  }
  std::set<std::string> ids;
  for (const auto& s : m.samples) {
    if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id '" + s.id + "'");
  }
  for (const auto& [id, split] : m.split) {
    if (!ids.count(id)) throw ValidationError("split references unknown sample '" + id + "'");
  }
  return m;
}

void validate_sample(const LabeledImage& sample, int num_classes) {
  const auto fail = [&](const std::string& why) { throw ValidationError("sample '" + sample.id + "': " + why); };
  if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width) {
    fail("image " + std::to_string(sample.image.height) + "x" + std::to_string(sample.image.width) +
         " does not match mask " + std::to_string(sample.mask.height) + "x" + std::to_string(sample.mask.width));
  }
  if (sample.image.pixels.size() != sample.image.pixel_count() * 3 ||
      sample.mask.labels.size() != sample.mask.pixel_count()) {
    fail("raster buffer size mismatch");
  }
  for (std::uint8_t v : sample.mask.labels) {
    if (v != kIgnoreValue && v >= num_classes) {
      fail("mask value " + std::to_string(v) + " >= num_classes " + std::to_string(num_classes));
    }
  }
}

namespace {

LabeledImage load_sample(const DatasetManifest& m, const SampleEntry& e) {
  LabeledImage s;
  s.id = e.id;
  try {
    s.image = read_image(m.root / e.image);
    s.mask = read_mask(m.root / e.mask);
  } catch (const IoError& err) {
    throw IoError("sample '" + e.id + "': " + err.what());
  } catch (const ValidationError& err) {
    throw ValidationError("sample '" + e.id + "': " + err.what());
  }
  validate_sample(s, m.num_classes);
  return s;
}

}  // namespace

Dataset load_dataset(const fs::path& path, std::optional<Split> only) {
  Dataset d;
  d.manifest = parse_manifest(path);
  for (const auto& e : d.manifest.samples) {
    if (only) {
      auto it = d.manifest.split.find(e.id);
      if (it == d.manifest.split.end() || it->second != *only) continue;
    }
    d.samples.push_back(load_sample(d.manifest, e));
  }
  return d;
}

DatasetManifest load_manifest(const fs::path& path) { return load_dataset(path).manifest; }

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  json j;
  j["name"] = m.name;
  j["num_classes"] = m.num_classes;
  j["class_names"] = m.class_names;
  j["samples"] = json::array();
  for (const auto& s : m.samples) j["samples"].push_back({{"id", s.id}, {"image", s.image}, {"mask", s.mask}});
  if (!m.split.empty()) {
    json split = json::object();
    for (const auto& [id, sp] : m.split) split[id] = split_name(sp);
    j["split"] = split;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path save_dataset(const Dataset& dataset, const fs::path& dir) {
  DatasetManifest m = dataset.manifest;
  m.root = dir;
  m.samples.clear();
  for (const auto& s : dataset.samples) {
    validate_sample(s, m.num_classes);
    SampleEntry e{s.id, "images/" + s.id + ".png", "masks/" + s.id + ".png"};
    write_image(dir / e.image, s.image);
    write_mask(dir / e.mask, s.mask);
    m.samples.push_back(e);
  }
  std::erase_if(m.split, [&](const auto& kv) {
    return std::none_of(m.samples.begin(), m.samples.end(), [&](const SampleEntry& e) { return e.id == kv.first; });
  });
  const fs::path manifest_path = dir / "manifest.json";
  write_manifest(m, manifest_path);
  return manifest_path;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> ratios, std::uint64_t seed) {
  const std::size_t n = manifest.samples.size();
  if (n < 3) throw ValidationError("split needs at least 3 samples, got " + std::to_string(n));
  for (double r : ratios) {
    if (r < 0) throw ValidationError("split ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ValidationError("split ratios must sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
  const auto count = [n](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
  const std::size_t train = count(ratios[0]);
  const std::size_t val = std::min(count(ratios[1]), n - train);

  DatasetManifest out = manifest;
  out.split.clear();
  for (std::size_t k = 0; k < n; ++k) {
    const Split s = k < train ? Split::kTrain : (k < train + val ? Split::kVal : Split::kTest);
    out.split[manifest.samples[order[k]].id] = s;
  }
  return out;
}

AugmentOp AugmentOp::random_scale(double lo, double hi) {
  if (!(lo > 0 && hi >= lo)) throw ValidationError("invalid scale range");
  AugmentOp op;
  op.kind = Kind::kRandomScale;
  op.min_scale = lo;
  op.max_scale = hi;
  return op;
}

AugmentOp AugmentOp::random_flip(double p, bool vertical) {
  if (p < 0 || p > 1) throw ValidationError("flip probability must lie in [0, 1]");
  AugmentOp op;
  op.kind = Kind::kRandomFlip;
  op.flip_probability = p;
  op.vertical = vertical;
  return op;
}

AugmentOp AugmentOp::random_crop(int h, int w) {
  if (h <= 0 || w <= 0) throw ValidationError("crop size must be positive");
  AugmentOp op;
  op.kind = Kind::kRandomCrop;
  op.crop_height = h;
  op.crop_width = w;
  return op;
}

AugmentOp AugmentOp::random_rotate(double lo_deg, double hi_deg) {
  if (hi_deg < lo_deg) throw ValidationError("invalid rotation range");
  AugmentOp op;
  op.kind = Kind::kRandomRotate;
  op.min_angle_deg = lo_deg;
  op.max_angle_deg = hi_deg;
  return op;
}

std::vector<AugmentOp> default_augment_ops(int crop_height, int crop_width) {
  return {AugmentOp::random_scale(), AugmentOp::random_flip(), AugmentOp::random_rotate(),
          AugmentOp::random_crop(crop_height, crop_width)};
}

namespace {

std::uint8_t sample_bilinear(const RgbImage& img, double sy, double sx, int ch) {
  sy = std::clamp(sy, 0.0, img.height - 1.0);
  sx = std::clamp(sx, 0.0, img.width - 1.0);
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double fy = sy - y0, fx = sx - x0;
  const double top = img.at(y0, x0)[ch] * (1 - fx) + img.at(y0, x1)[ch] * fx;
  const double bot = img.at(y1, x0)[ch] * (1 - fx) + img.at(y1, x1)[ch] * fx;
  return static_cast<std::uint8_t>(std::clamp(std::lround(top * (1 - fy) + bot * fy), 0L, 255L));
}

LabeledImage scale_sample(const LabeledImage& s, double factor) {
  const int h = std::max(1, static_cast<int>(std::lround(s.height() * factor)));
  const int w = std::max(1, static_cast<int>(std::lround(s.width() * factor)));
  LabeledImage out{s.id, RgbImage(h, w), Mask(h, w)};
  const double ry = static_cast<double>(s.height()) / h;
  const double rx = static_cast<double>(s.width()) / w;
  for (int y = 0; y < h; ++y) {
    const double sy = (y + 0.5) * ry - 0.5;
    const int my = std::min(static_cast<int>(std::floor((y + 0.5) * ry)), s.height() - 1);
    for (int x = 0; x < w; ++x) {
      const double sx = (x + 0.5) * rx - 0.5;
      const int mx = std::min(static_cast<int>(std::floor((x + 0.5) * rx)), s.width() - 1);
      for (int c = 0; c < 3; ++c) out.image.at(y, x)[c] = sample_bilinear(s.image, sy, sx, c);
      out.mask.at(y, x) = s.mask.at(my, mx);
    }
  }
  return out;
}

LabeledImage flip_sample(const LabeledImage& s, bool vertical) {
  LabeledImage out{s.id, RgbImage(s.height(), s.width()), Mask(s.height(), s.width())};
  for (int y = 0; y < s.height(); ++y) {
    for (int x = 0; x < s.width(); ++x) {
      const int sy = vertical ? s.height() - 1 - y : y;
      const int sx = vertical ? x : s.width() - 1 - x;
      std::copy_n(s.image.at(sy, sx), 3, out.image.at(y, x));
      out.mask.at(y, x) = s.mask.at(sy, sx);
    }
  }
  return out;
}

LabeledImage rotate_sample(const LabeledImage& s, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (s.height() - 1) / 2.0, cx = (s.width() - 1) / 2.0;
  LabeledImage out{s.id, RgbImage(s.height(), s.width()), Mask(s.height(), s.width(), kIgnoreValue)};
  for (int y = 0; y < s.height(); ++y) {
    for (int x = 0; x < s.width(); ++x) {
      // Inverse rotation of the destination coordinate.
      const double dy = y - cy, dx = x - cx;
      const double sy = cs * dy - sn * dx + cy;
      const double sx = sn * dy + cs * dx + cx;
      const long ny = std::lround(sy), nx = std::lround(sx);
      if (ny < 0 || nx < 0 || ny >= s.height() || nx >= s.width()) continue;
      out.mask.at(y, x) = s.mask.at(static_cast<int>(ny), static_cast<int>(nx));
      for (int c = 0; c < 3; ++c) out.image.at(y, x)[c] = sample_bilinear(s.image, sy, sx, c);
    }
  }
  return out;
}

LabeledImage crop_sample(const LabeledImage& s, int ch, int cw, Rng& rng) {
  // Smaller inputs are padded (image 0, mask ignore) up to the crop size.
  const int ph = std::max(ch, s.height());
  const int pw = std::max(cw, s.width());
  const int oy = static_cast<int>(rng.index(static_cast<std::uint64_t>(ph - ch + 1)));
  const int ox = static_cast<int>(rng.index(static_cast<std::uint64_t>(pw - cw + 1)));
  LabeledImage out{s.id, RgbImage(ch, cw), Mask(ch, cw, kIgnoreValue)};
  for (int y = 0; y < ch; ++y) {
    const int sy = y + oy;
    if (sy >= s.height()) continue;
    for (int x = 0; x < cw; ++x) {
      const int sx = x + ox;
      if (sx >= s.width()) continue;
      std::copy_n(s.image.at(sy, sx), 3, out.image.at(y, x));
      out.mask.at(y, x) = s.mask.at(sy, sx);
    }
  }
  return out;
}

}  // namespace

LabeledImage augment_sample(const LabeledImage& sample, const std::vector<AugmentOp>& ops, std::uint64_t seed) {
  Rng rng(seed);
  LabeledImage cur = sample;
  for (const AugmentOp& op : ops) {
    switch (op.kind) {
      case AugmentOp::Kind::kRandomScale:
        cur = scale_sample(cur, rng.uniform(op.min_scale, op.max_scale));
        break;
      case AugmentOp::Kind::kRandomFlip:
        if (rng.bernoulli(op.flip_probability)) cur = flip_sample(cur, op.vertical);
        break;
      case AugmentOp::Kind::kRandomRotate:
        cur = rotate_sample(cur, rng.uniform(op.min_angle_deg, op.max_angle_deg));
        break;
      case AugmentOp::Kind::kRandomCrop:
        cur = crop_sample(cur, op.crop_height, op.crop_width, rng);
        break;
    }
  }
  return cur;
}

std::vector<LabeledImage> augment_expand(const std::vector<LabeledImage>& samples, const std::vector<AugmentOp>& ops,
                                         int copies, std::uint64_t seed) {
  if (copies < 0) throw ValidationError("copies must be >= 0");
  for (const auto& s : samples) {
    for (const auto& op : ops) {
      if (op.kind == AugmentOp::Kind::kRandomCrop && (op.crop_height > s.height() || op.crop_width > s.width())) {
        throw ValidationError("sample '" + s.id + "': crop " + std::to_string(op.crop_height) + "x" +
                              std::to_string(op.crop_width) + " larger than image " + std::to_string(s.height()) +
                              "x" + std::to_string(s.width()));
      }
    }
  }
  std::vector<LabeledImage> out = samples;
  out.reserve(samples.size() * (static_cast<std::size_t>(copies) + 1));
  for (int k = 1; k <= copies; ++k) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      LabeledImage aug = augment_sample(samples[i], ops, mix_seed(seed, i, static_cast<std::uint64_t>(k)));
      aug.id = samples[i].id + "_aug" + std::to_string(k);
      out.push_back(std::move(aug));
    }
  }
  return out;
}

}  // namespace icehrnet
