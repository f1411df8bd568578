#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icehrnet/image.hpp"

namespace icehrnet {

inline constexpr std::uint8_t kIgnoreValue = 255;

struct LabeledImage {
  std::string id;
  RgbImage image;
  Mask mask;

  int height() const { return image.height; }
  int width() const { return image.width; }
};

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct SampleEntry {
  std::string id;
  std::string image;  // relative to the manifest directory
  std::string mask;
};

struct DatasetManifest {
  std::string name;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<SampleEntry> samples;
  std::map<std::string, Split> split;
  // Directory relative sample paths resolve against.
  std::filesystem::path root;

  std::vector<std::string> ids_in(Split s) const;
};

// Manifest plus decoded pixels for (a subset of) its samples.
struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledImage> samples;
};

// Parses manifest JSON and checks its structure without touching sample files.
DatasetManifest parse_manifest(const std::filesystem::path& path);

// Full validation: every referenced file exists and decodes to a valid sample.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Loads and validates the samples of one split, or all of them. Files of
// samples outside the requested split are never opened.
Dataset load_dataset(const std::filesystem::path& path, std::optional<Split> only = std::nullopt);

// Throws ValidationError naming the sample on any invariant violation.
void validate_sample(const LabeledImage& sample, int num_classes);

// Writes images/, masks/ and manifest.json under dir; returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Seeded shuffle, then floor(r_train * N) train, floor(r_val * N) val, the
// remainder test.
DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> ratios, std::uint64_t seed);

struct AugmentOp {
  enum class Kind { kRandomScale, kRandomFlip, kRandomCrop, kRandomRotate };
  Kind kind = Kind::kRandomFlip;
  double min_scale = 0.75;
  double max_scale = 1.25;
  double flip_probability = 0.5;
  bool vertical = false;
  int crop_height = 64;
  int crop_width = 64;
  double min_angle_deg = -15.0;
  double max_angle_deg = 15.0;

  static AugmentOp random_scale(double lo = 0.75, double hi = 1.25);
  static AugmentOp random_flip(double p = 0.5, bool vertical = false);
  static AugmentOp random_crop(int h, int w);
  static AugmentOp random_rotate(double lo_deg = -15.0, double hi_deg = 15.0);
};

// Scale, flip, rotate and crop with the default ranges.
std::vector<AugmentOp> default_augment_ops(int crop_height, int crop_width);

// Applies the op list once to a single sample with the given generator seed.
LabeledImage augment_sample(const LabeledImage& sample, const std::vector<AugmentOp>& ops, std::uint64_t seed);

// Originals first (unchanged), then `copies` augmented variants per sample.
std::vector<LabeledImage> augment_expand(const std::vector<LabeledImage>& samples, const std::vector<AugmentOp>& ops,
                                         int copies, std::uint64_t seed);

// splitmix64 step, used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace icehrnet
