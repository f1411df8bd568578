#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "icehrnet/autograd.hpp"
#include "icehrnet/image.hpp"
#include "icehrnet/random.hpp"

namespace icehrnet {

enum class HeadKind { kDecoder, kFcn };
enum class LowLevelSource { kConv1, kConv2 };

const char* head_name(HeadKind h);
const char* low_level_name(LowLevelSource s);
HeadKind parse_head(const std::string& s);
LowLevelSource parse_low_level(const std::string& s);

// Per-channel input normalization applied to 8-bit RGB values.
struct Normalization {
  std::array<double, 3> mean{123.675, 116.28, 103.53};
  std::array<double, 3> std{58.395, 57.12, 57.375};
};

struct SegConfig {
  int num_classes = 2;
  std::array<int, 4> branch_widths{48, 96, 192, 384};
  // Residual blocks per branch in each stage; stage 1 is the bottleneck layer.
  std::array<int, 4> stage_blocks{4, 4, 4, 4};
  // Multi-resolution modules per stage (stage 1 always has one).
  std::array<int, 4> stage_modules{1, 1, 4, 3};
  int stem_channels = 64;
  int layer1_planes = 64;
  HeadKind head = HeadKind::kDecoder;
  bool use_aspp = true;
  LowLevelSource low_level = LowLevelSource::kConv1;
  int aspp_out_channels = 256;
  // Rate 1 is the pointwise branch; other rates are dilated 3x3 branches.
  std::vector<int> aspp_rates{1, 6, 12, 18};
  int decoder_low_level_channels = 48;
  int decoder_channels = 256;
  Normalization normalization;

  int backbone_channels() const;
  void validate() const;

  // Full-width HRNet-W48 wiring.
  static SegConfig w48(int num_classes);
  // Narrow, shallow wiring for desk-scale runs.
  static SegConfig toy(int num_classes);
};

// Table-of-ablations wiring: a = FCN head; b = decoder + conv2; c = b + ASPP;
// d = decoder + conv1; e = d + ASPP (the full network).
SegConfig ablation_variant(char tag, const SegConfig& base);

// Named parameter storage with stable addresses.
class ParamStore {
 public:
  nn::Parameter& add(const std::string& name, Shape shape, double fill = 0.0, bool trainable = true);
  // Kaiming-normal (fan-out) initialized convolution weight.
  nn::Parameter& add_conv(const std::string& name, int out, int in, int k, Rng& rng);

  nn::Parameter* find(const std::string& name);
  const nn::Parameter* find(const std::string& name) const;

  std::deque<nn::Parameter>& all() { return params_; }
  const std::deque<nn::Parameter>& all() const { return params_; }
  std::size_t trainable_count() const;
  void zero_grad();

 private:
  std::deque<nn::Parameter> params_;
  std::map<std::string, nn::Parameter*> index_;
};

struct ConvBnAct {
  nn::Parameter* weight = nullptr;
  nn::Parameter* gamma = nullptr;
  nn::Parameter* beta = nullptr;
  nn::Parameter* running_mean = nullptr;
  nn::Parameter* running_var = nullptr;
  nn::ConvGeometry geometry;
  bool relu = true;

  static ConvBnAct make(ParamStore& store, const std::string& name, int in, int out, int k, nn::ConvGeometry g,
                        bool relu, Rng& rng);
  nn::Var apply(nn::Var x, bool training) const;
};

struct Conv {
  nn::Parameter* weight = nullptr;
  nn::Parameter* bias = nullptr;
  nn::ConvGeometry geometry;

  static Conv make(ParamStore& store, const std::string& name, int in, int out, int k, bool bias, Rng& rng);
  nn::Var apply(nn::Var x) const;
};

// Parallel pointwise / dilated branches plus an image-pooling branch,
// concatenated and projected to out_channels.
class Aspp {
 public:
  Aspp(ParamStore& store, const std::string& prefix, int in_channels, std::vector<int> rates, int out_channels,
       Rng& rng);
  nn::Var forward(nn::Var x, bool training) const;
  // Per-branch outputs before concatenation (pooling branch last).
  std::vector<nn::Var> branch_outputs(nn::Var x, bool training) const;
  int out_channels() const { return out_channels_; }

 private:
  std::vector<int> rates_;
  int out_channels_;
  std::vector<ConvBnAct> branches_;
  ConvBnAct pool_;
  ConvBnAct project_;
};

class DecoderHead {
 public:
  DecoderHead(ParamStore& store, const std::string& prefix, int deep_channels, int low_level_channels,
              int low_level_proj, int width, int num_classes, Rng& rng);
  nn::Var forward(nn::Var deep, nn::Var low_level, int out_h, int out_w, bool training) const;
  const Conv& classifier() const { return classifier_; }

 private:
  ConvBnAct low_proj_;
  ConvBnAct fuse1_;
  ConvBnAct fuse2_;
  Conv classifier_;
};

class FcnHead {
 public:
  FcnHead(ParamStore& store, const std::string& prefix, int channels, int num_classes, Rng& rng);
  nn::Var forward(nn::Var features, int out_h, int out_w, bool training) const;
  const Conv& classifier() const { return classifier_; }

 private:
  ConvBnAct mix_;
  Conv classifier_;
};

struct FeatureBundle {
  nn::Var conv1;     // 1/2 resolution, stem_channels
  nn::Var conv2;     // 1/4 resolution, stem_channels
  nn::Var backbone;  // 1/4 resolution, sum(branch_widths)
  nn::Var aspp;      // 1/4 resolution, aspp_out_channels (unset without ASPP)
};

class SegModel {
 public:
  SegModel(SegConfig config, std::uint64_t seed);
  ~SegModel();
  SegModel(const SegModel&) = delete;
  SegModel& operator=(const SegModel&) = delete;

  const SegConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  // input: (B, 3, H, W) normalized, H and W multiples of 4.
  nn::Var forward(nn::Var input, bool training, FeatureBundle* features = nullptr);

  // Evaluation-mode logits. Does not modify the model.
  Tensor predict(const Tensor& input) const;

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t parameter_count() const { return store_.trainable_count(); }

  Tensor normalize(std::span<const RgbImage* const> images) const;

 private:
  struct Impl;
  SegConfig config_;
  std::uint64_t seed_;
  ParamStore store_;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<SegModel> build_model(const SegConfig& config, std::uint64_t seed);

// Per-pixel argmax over class logits, one Mask per batch entry.
std::vector<Mask> argmax_masks(const Tensor& logits);

// Raw tensor blob: ordered (name, tensor) records with a magic header.
struct NamedTensor {
  std::string name;
  Tensor value;
  bool trainable = true;
};
void write_tensor_blob(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensor_blob(const std::filesystem::path& path);

struct CheckpointInfo {
  long iteration = 0;
};

// Writes <stem>.bin (parameters) and <stem>.json (configuration sidecar).
void save_checkpoint(const SegModel& model, const std::filesystem::path& stem, const CheckpointInfo& info = {});
std::unique_ptr<SegModel> load_checkpoint(const std::filesystem::path& stem, CheckpointInfo* info = nullptr);
// Replaces parameter values of an existing model from a blob.
void load_parameters(SegModel& model, const std::filesystem::path& blob);

}  // namespace icehrnet
