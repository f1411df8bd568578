#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icehrnet/dataset.hpp"
#include "icehrnet/metrics.hpp"
#include "icehrnet/model.hpp"

namespace icehrnet {

struct TrainConfig {
  double base_lr = 1e-4;
  long warmup_iters = 1000;
  double warmup_start_lr = 1e-5;
  std::vector<long> milestones{30000, 36000};
  double decay_gamma = 0.1;
  double weight_decay = 0.005;
  double grad_clip_norm = 1.0;
  long total_iters = 40000;
  int batch_size = 8;
  int crop_height = 512;
  int crop_width = 512;
  std::uint64_t seed = 0;
  long val_interval = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool random_flip = true;

  void validate() const;

  // Warmup and milestones scaled from the 40k-iteration schedule.
  static TrainConfig desk(long total_iters = 500);
};

// Linear warmup from warmup_start_lr to base_lr, then base_lr decayed by
// decay_gamma at every milestone <= iter.
double lr_at(long iter, const TrainConfig& config);

// Mean per-pixel cross-entropy over non-ignored pixels of (B, C, H, W)
// logits against (B, H, W) labels.
double cross_entropy_loss(const Tensor& logits, std::span<const std::uint8_t> labels);

// Scales every trainable gradient so the global L2 norm is at most max_norm;
// returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);
double grad_norm(const ParamStore& params);

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(ParamStore& params, double lr);
  long steps() const { return steps_; }

  std::vector<NamedTensor> state() const;
  void set_state(long steps, const std::vector<NamedTensor>& tensors);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long steps_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct EvalReport {
  ConfusionMatrix matrix;
  double accuracy = 0.0;
  double miou = 0.0;
  std::vector<double> per_class_iou;
  std::uint64_t pixels = 0;
  std::vector<std::string> class_names;
};

// Whole-image evaluation-mode inference, argmax, one confusion matrix.
EvalReport evaluate(const SegModel& model, const std::vector<LabeledImage>& samples, int num_classes,
                    std::vector<Mask>* predictions = nullptr);

// Recomputes accuracy and mIoU from the stored matrix.
EvalReport replay_report(const ConfusionMatrix& matrix);

struct IterationRecord {
  long iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct ValidationRecord {
  long iteration = 0;
  double miou = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<IterationRecord> history;
  std::vector<ValidationRecord> validations;
  double best_val_miou = -1.0;
  long best_iteration = -1;
  std::vector<NamedTensor> best_parameters;
};

// Owns the optimizer, data order and random state of one training run.
class Trainer {
 public:
  Trainer(SegModel& model, std::vector<LabeledImage> train_set, std::vector<LabeledImage> val_set,
          TrainConfig config);

  // One optimization step at the current iteration; returns its record.
  IterationRecord step();
  // Steps until `iteration() == until` (or total_iters), validating on cadence.
  void run(long until = -1);

  long iteration() const { return iteration_; }
  const TrainResult& result() const { return result_; }
  const TrainConfig& config() const { return config_; }

  // Log lines "iteration lr loss" are appended when set.
  void set_log_path(std::filesystem::path path) { log_path_ = std::move(path); }
  // The best-validation checkpoint is written here (as <dir>/best) when set.
  void set_checkpoint_dir(std::filesystem::path dir) { checkpoint_dir_ = std::move(dir); }

  // Complete resumable state: parameters, moments, cursor, random state.
  void save_state(const std::filesystem::path& dir) const;
  void load_state(const std::filesystem::path& dir);

 private:
  std::vector<std::size_t> next_batch();
  void validate_now();

  SegModel& model_;
  std::vector<LabeledImage> train_;
  std::vector<LabeledImage> val_;
  TrainConfig config_;
  AdamW optimizer_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  long iteration_ = 0;
  TrainResult result_;
  std::optional<std::filesystem::path> log_path_;
  std::optional<std::filesystem::path> checkpoint_dir_;
};

TrainResult train(SegModel& model, const std::vector<LabeledImage>& train_set,
                  const std::vector<LabeledImage>& val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace icehrnet
