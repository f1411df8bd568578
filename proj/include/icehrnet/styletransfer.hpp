#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icehrnet/dataset.hpp"
#include "icehrnet/tensor.hpp"

namespace icehrnet {

inline constexpr double kAdainEpsilon = 1e-6;

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation
};

// Statistics per channel over the spatial positions of a (1, C, H, W) tensor.
ChannelStats channel_stats(const Tensor& features);

// Adaptive instance normalization: per channel,
//   out = style_std * (x - content_mean) / max(content_std, epsilon) + style_mean.
// Inputs are (1, C, H, W) with matching C.
Tensor adain(const Tensor& content, const Tensor& style, double epsilon = kAdainEpsilon);
Tensor adain(const Tensor& content, const ChannelStats& style, double epsilon = kAdainEpsilon);

enum class StyleMode { kNone, kConventional, kAdvanced };
enum class BackendKind { kStatistical, kNeural };
// kOpponent is an orthonormal luminance / opponent-chroma rotation of RGB.
enum class ColorSpace { kOpponent, kRgb };

const char* style_mode_name(StyleMode m);
StyleMode parse_style_mode(const std::string& s);
const char* backend_name(BackendKind k);
BackendKind parse_backend(const std::string& s);

// Pixel value (0..255 per channel) to/from the working color space.
Tensor image_to_color_space(const RgbImage& image, ColorSpace space);
RgbImage color_space_to_image(const Tensor& values, ColorSpace space);

// Convolutional encoder/decoder for the neural backend. Every encoder layer
// is followed by ReLU; decoder layers are too, except the last one.
struct NeuralWeights {
  struct Layer {
    Tensor weight;  // (out, in, k, k)
    Tensor bias;    // (1, out, 1, 1)
  };
  std::vector<Layer> encoder;
  std::vector<Layer> decoder;

  // Layers named encoder.<i>.weight / .bias and decoder.<i>.weight / .bias.
  static NeuralWeights load(const std::filesystem::path& blob);
  void save(const std::filesystem::path& blob) const;
  void validate() const;
};

struct TransferBackend {
  BackendKind kind = BackendKind::kStatistical;
  ColorSpace color_space = ColorSpace::kOpponent;
  double epsilon = kAdainEpsilon;
  double alpha = 1.0;  // neural only: feature blend toward the content
  std::shared_ptr<const NeuralWeights> neural;

  static TransferBackend statistical(ColorSpace space = ColorSpace::kOpponent);
  static TransferBackend neural_from(std::shared_ptr<const NeuralWeights> weights, double alpha = 1.0);
  void validate() const;
};

struct StyleBank {
  // Target class index -> patches (each at least 16x16).
  std::map<int, std::vector<RgbImage>> styles;
  std::map<int, std::vector<std::string>> patch_names;
  // Designated whole-image patch for global stylization.
  std::optional<RgbImage> global_patch;
  std::string global_patch_name;
  std::string source_note;

  void validate() const;
};

StyleBank load_style_bank(const std::filesystem::path& path);
// Writes patches under dir/patches and the bank JSON; returns its path.
std::filesystem::path save_style_bank(const StyleBank& bank, const std::filesystem::path& dir);

struct StylizedSample {
  LabeledImage sample;
  StyleMode mode = StyleMode::kNone;
  // Target class -> patch identifier used for it ("global" entries use -1).
  std::map<int, std::string> styles_used;
};

RgbImage stylize_image(const RgbImage& content, const RgbImage& style, const TransferBackend& backend);

StylizedSample stylize_global(const LabeledImage& content, const RgbImage& style_patch,
                              const TransferBackend& backend, const std::string& patch_name = "global");

// Source class -> target class whose style it receives. Default: identity on
// the first target_classes indices, surplus classes round-robin.
std::map<int, int> assign_classes(int source_classes, int target_classes,
                                  const std::optional<std::map<int, int>>& mapping = std::nullopt);

// Index of the patch of bank.styles[target_class] used for a given sample.
std::size_t choose_patch(const StyleBank& bank, int target_class, const std::string& sample_id, std::uint64_t seed);

// Stylizes the whole image once per present class and keeps, at each pixel,
// the rendering of that pixel's class. Ignored pixels keep the content.
StylizedSample stylize_per_class(const LabeledImage& content, const StyleBank& bank, const TransferBackend& backend,
                                 std::uint64_t seed, const std::map<int, int>& assignment = {});

Dataset stylize_dataset(const Dataset& dataset, const StyleBank& bank, StyleMode mode, const TransferBackend& backend,
                        std::uint64_t seed, const std::map<int, int>& assignment = {});

}  // namespace icehrnet
