#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <json.hpp>
#include <vector>

#include "icehrnet/dataset.hpp"
#include "icehrnet/styletransfer.hpp"

namespace icehrnet {

struct TextureSpec {
  std::array<double, 3> base_color{128, 128, 128};
  // Standard deviation of the smooth noise field, in intensity levels.
  double amplitude = 12.0;
  // Lattice spacing of the noise in pixels; larger means coarser grain.
  double grain = 4.0;
  // Per-pixel white noise added on top, in intensity levels.
  double speckle = 3.0;
  // Luminance noise shared by all channels (true) or independent per channel.
  bool monochrome = true;
};

struct SyntheticDomainParams {
  int height = 64;
  int width = 64;
  int num_classes = 2;
  std::vector<std::string> class_names{"background", "foreground"};
  std::vector<TextureSpec> source_textures;
  std::vector<TextureSpec> target_textures;
  // Blob geometry shared by both domains.
  int min_blobs = 2;
  int max_blobs = 5;
  double min_radius = 10.0;
  double max_radius = 20.0;
  // Minimum fraction of pixels every class must cover in each mask.
  double min_class_fraction = 0.08;
  int train_count = 30;
  int val_count = 10;
  int test_count = 10;
  int patch_size = 24;
  int patches_per_class = 3;
  // Required mean distance between per-class base colors of the two domains.
  double min_domain_distance = 40.0;
  std::uint64_t seed = 0;

  void validate() const;
  // Light "stained cell" source classes versus dark-water / bright-ice target
  // classes: luminance ordering of the classes is reversed across domains.
  static SyntheticDomainParams defaults();
};

nlohmann::json synthetic_params_to_json(const SyntheticDomainParams& p);
SyntheticDomainParams synthetic_params_from_json(const nlohmann::json& j,
                                                 const SyntheticDomainParams& base = SyntheticDomainParams::defaults());

struct SyntheticDomains {
  Dataset source;
  Dataset target;
  StyleBank bank;
  // "<target id>@<y>,<x>" for each bank patch, per class.
  std::map<int, std::vector<std::string>> patch_sources;
};

Mask generate_blob_mask(const SyntheticDomainParams& p, std::uint64_t seed);
RgbImage render_textures(const Mask& mask, const std::vector<TextureSpec>& textures, std::uint64_t seed);

SyntheticDomains gen_synthetic_domains(const SyntheticDomainParams& params);

struct SyntheticPaths {
  std::filesystem::path source_manifest;
  std::filesystem::path target_manifest;
  std::filesystem::path style_bank;
};

// Writes out/source, out/target and out/style_bank.
SyntheticPaths write_synthetic_domains(const SyntheticDomains& domains, const std::filesystem::path& out);

}  // namespace icehrnet
