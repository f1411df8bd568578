#include "icehrnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "icehrnet/error.hpp"

namespace icehrnet {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(base_lr > 0 && warmup_start_lr > 0 && decay_gamma > 0)) throw ValidationError("rates must be positive");
  if (total_iters <= 0) throw ValidationError("total_iters must be positive");
  if (warmup_iters < 0) throw ValidationError("warmup_iters must be non-negative");
  if (milestones.empty()) throw ValidationError("at least one milestone is required");
  if (!std::is_sorted(milestones.begin(), milestones.end())) throw ValidationError("milestones must be sorted");
  if (!(warmup_iters < milestones.front() && milestones.back() < total_iters)) {
    throw ValidationError("schedule requires warmup_iters < first milestone and last milestone < total_iters");
  }
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (crop_height <= 0 || crop_width <= 0 || crop_height % 4 || crop_width % 4) {
    throw ValidationError("crop size must be a positive multiple of 4");
  }
  if (weight_decay < 0 || grad_clip_norm <= 0) throw ValidationError("invalid regularization settings");
}

TrainConfig TrainConfig::desk(long total_iters) {
  TrainConfig c;
  c.total_iters = total_iters;
  c.warmup_iters = std::max(1L, total_iters * 1000 / 40000);
  c.milestones = {total_iters * 30000 / 40000, total_iters * 36000 / 40000};
  c.crop_height = 64;
  c.crop_width = 64;
  c.batch_size = 8;
  return c;
}

double lr_at(long iter, const TrainConfig& c) {
  if (iter < 0 || iter >= c.total_iters) {
    throw ValidationError("iteration " + std::to_string(iter) + " outside [0, " + std::to_string(c.total_iters) + ")");
  }
  if (iter < c.warmup_iters) {
    const double t = static_cast<double>(iter) / static_cast<double>(c.warmup_iters);
    return c.warmup_start_lr * (1.0 - t) + c.base_lr * t;
  }
  const auto k = std::count_if(c.milestones.begin(), c.milestones.end(), [iter](long m) { return m <= iter; });
  // Dividing by (1/gamma)^k keeps decimal anchors exact: 1e-4 / 100 == 1e-6,
  // while 1e-4 * 0.1 * 0.1 is not.
  return c.base_lr / std::pow(1.0 / c.decay_gamma, static_cast<double>(k));
}

double cross_entropy_loss(const Tensor& logits, std::span<const std::uint8_t> labels) {
  nn::Tape tape(false);
  return nn::cross_entropy(tape.constant(logits), labels).value()[0];
}

double grad_norm(const ParamStore& params) {
  double sq = 0;
  for (const auto& p : params.all()) {
    if (!p.trainable || p.grad.empty()) continue;
    for (double g : p.grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params.all()) {
      if (p.trainable && !p.grad.empty()) p.grad.scale_(scale);
    }
  }
  return norm;
}

void AdamW::step(ParamStore& params, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (auto& p : params.all()) {
    if (!p.trainable) continue;
    if (p.grad.empty()) p.grad = Tensor(p.value.shape());
    Tensor& m = m_.try_emplace(p.name, p.value.shape()).first->second;
    Tensor& v = v_.try_emplace(p.name, p.value.shape()).first->second;
    const double decay = 1.0 - lr * weight_decay_;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] = p.value[i] * decay - lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::vector<NamedTensor> AdamW::state() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : m_) out.push_back({"m." + name, t, true});
  for (const auto& [name, t] : v_) out.push_back({"v." + name, t, true});
  return out;
}

void AdamW::set_state(long steps, const std::vector<NamedTensor>& tensors) {
  steps_ = steps;
  m_.clear();
  v_.clear();
  for (const auto& t : tensors) {
    if (t.name.rfind("m.", 0) == 0) {
      m_[t.name.substr(2)] = t.value;
    } else if (t.name.rfind("v.", 0) == 0) {
      v_[t.name.substr(2)] = t.value;
    } else {
      throw ValidationError("unexpected optimizer state entry '" + t.name + "'");
    }
  }
}

EvalReport replay_report(const ConfusionMatrix& matrix) {
  EvalReport r;
  r.matrix = matrix;
  r.pixels = matrix.total();
  r.accuracy = accuracy(matrix);
  const IouResult iou = mean_iou(matrix);
  r.miou = iou.mean;
  r.per_class_iou = iou.per_class;
  return r;
}

EvalReport evaluate(const SegModel& model, const std::vector<LabeledImage>& samples, int num_classes,
                    std::vector<Mask>* predictions) {
  if (samples.empty()) throw ValidationError("evaluation dataset is empty");
  if (num_classes != model.config().num_classes) {
    throw ValidationError("model predicts " + std::to_string(model.config().num_classes) +
                          " classes but the dataset has " + std::to_string(num_classes));
  }
  ConfusionMatrix matrix(num_classes);
  for (const auto& s : samples) {
    const RgbImage* img = &s.image;
    const Tensor logits = model.predict(model.normalize(std::span<const RgbImage* const>(&img, 1)));
    Mask pred = std::move(argmax_masks(logits).front());
    matrix.accumulate(pred, s.mask);
    if (predictions) predictions->push_back(std::move(pred));
  }
  return replay_report(matrix);
}

Trainer::Trainer(SegModel& model, std::vector<LabeledImage> train_set, std::vector<LabeledImage> val_set,
                 TrainConfig config)
    : model_(model),
      train_(std::move(train_set)),
      val_(std::move(val_set)),
      config_(std::move(config)),
      optimizer_(config_.adam_beta1, config_.adam_beta2, config_.adam_eps, config_.weight_decay),
      rng_(config_.seed) {
  config_.validate();
  if (train_.empty()) throw ValidationError("training set is empty");
  for (const auto& s : train_) validate_sample(s, model_.config().num_classes);
  for (const auto& s : val_) validate_sample(s, model_.config().num_classes);
}

std::vector<std::size_t> Trainer::next_batch() {
  std::vector<std::size_t> batch;
  for (int k = 0; k < config_.batch_size; ++k) {
    if (cursor_ >= order_.size()) {
      order_.resize(train_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

IterationRecord Trainer::step() {
  if (iteration_ >= config_.total_iters) throw ValidationError("training already finished");
  const auto batch = next_batch();
  std::vector<AugmentOp> ops;
  if (config_.random_flip) ops.push_back(AugmentOp::random_flip(0.5));
  ops.push_back(AugmentOp::random_crop(config_.crop_height, config_.crop_width));

  std::vector<LabeledImage> views;
  views.reserve(batch.size());
  for (std::size_t idx : batch) views.push_back(augment_sample(train_[idx], ops, rng_.next()));
  std::vector<const RgbImage*> images;
  std::vector<std::uint8_t> labels;
  for (const auto& v : views) {
    images.push_back(&v.image);
    labels.insert(labels.end(), v.mask.labels.begin(), v.mask.labels.end());
  }

  IterationRecord rec;
  rec.iteration = iteration_;
  rec.lr = lr_at(iteration_, config_);
  {
    nn::Tape tape;
    nn::Var input = tape.constant(model_.normalize(images));
    nn::Var logits = model_.forward(input, true);
    nn::Var loss = nn::cross_entropy(logits, labels);
    rec.loss = loss.value()[0];
    if (!std::isfinite(rec.loss)) {
      throw DivergenceError(iteration_, "non-finite loss at iteration " + std::to_string(iteration_));
    }
    model_.params().zero_grad();
    tape.backward(loss);
  }
  rec.grad_norm = clip_grad_norm(model_.params(), config_.grad_clip_norm);
  optimizer_.step(model_.params(), rec.lr);
  result_.history.push_back(rec);
  ++iteration_;

  if (log_path_) {
    std::ofstream log(*log_path_, std::ios::app);
    char line[128];
    std::snprintf(line, sizeof(line), "%ld %.9e %.17g\n", rec.iteration, rec.lr, rec.loss);
    log << line;
  }
  if (config_.val_interval > 0 && (iteration_ % config_.val_interval == 0 || iteration_ == config_.total_iters)) {
    validate_now();
  }
  return rec;
}

void Trainer::validate_now() {
  if (val_.empty()) return;
  const EvalReport r = evaluate(model_, val_, model_.config().num_classes);
  result_.validations.push_back({iteration_, r.miou, r.accuracy});
  if (r.miou > result_.best_val_miou) {
    result_.best_val_miou = r.miou;
    result_.best_iteration = iteration_;
    result_.best_parameters.clear();
    for (const auto& p : model_.params().all()) result_.best_parameters.push_back({p.name, p.value, p.trainable});
    if (checkpoint_dir_) save_checkpoint(model_, *checkpoint_dir_ / "best", CheckpointInfo{iteration_});
  }
}

void Trainer::run(long until) {
  if (until < 0 || until > config_.total_iters) until = config_.total_iters;
  while (iteration_ < until) step();
}

void Trainer::save_state(const fs::path& dir) const {
  fs::create_directories(dir);
  save_checkpoint(model_, dir / "model", CheckpointInfo{iteration_});
  write_tensor_blob(dir / "optimizer.bin", optimizer_.state());
  if (!result_.best_parameters.empty()) write_tensor_blob(dir / "best.bin", result_.best_parameters);
  json j;
  j["iteration"] = iteration_;
  j["optimizer_steps"] = optimizer_.steps();
  j["rng"] = rng_.state();
  j["order"] = order_;
  j["cursor"] = cursor_;
  j["best_val_miou"] = result_.best_val_miou;
  j["best_iteration"] = result_.best_iteration;
  json hist = json::array();
  for (const auto& r : result_.history) hist.push_back({r.iteration, r.lr, r.loss, r.grad_norm});
  j["history"] = hist;
  json vals = json::array();
  for (const auto& v : result_.validations) vals.push_back({v.iteration, v.miou, v.accuracy});
  j["validations"] = vals;
  std::ofstream os(dir / "state.json");
  if (!os) throw IoError("cannot write training state in " + dir.string());
  os << j.dump() << '\n';
}

void Trainer::load_state(const fs::path& dir) {
  load_parameters(model_, dir / "model.bin");
  std::ifstream is(dir / "state.json");
  if (!is) throw IoError("cannot open training state in " + dir.string());
  json j;
  try {
    j = json::parse(is);
    optimizer_.set_state(j.at("optimizer_steps").get<long>(), read_tensor_blob(dir / "optimizer.bin"));
    iteration_ = j.at("iteration").get<long>();
    rng_.set_state(j.at("rng").get<std::string>());
    order_ = j.at("order").get<std::vector<std::size_t>>();
    cursor_ = j.at("cursor").get<std::size_t>();
    result_ = TrainResult{};
    result_.best_val_miou = j.at("best_val_miou").get<double>();
    result_.best_iteration = j.at("best_iteration").get<long>();
    for (const auto& r : j.at("history")) {
      result_.history.push_back({r[0].get<long>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()});
    }
    for (const auto& v : j.at("validations")) {
      result_.validations.push_back({v[0].get<long>(), v[1].get<double>(), v[2].get<double>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed training state: " + std::string(e.what()));
  }
  if (fs::exists(dir / "best.bin")) result_.best_parameters = read_tensor_blob(dir / "best.bin");
}

TrainResult train(SegModel& model, const std::vector<LabeledImage>& train_set,
                  const std::vector<LabeledImage>& val_set, const TrainConfig& config,
                  const std::optional<fs::path>& out_dir) {
  Trainer trainer(model, train_set, val_set, config);
  if (out_dir) {
    fs::create_directories(*out_dir);
    const fs::path log = *out_dir / "train_log.txt";
    std::ofstream(log, std::ios::trunc).flush();
    trainer.set_log_path(log);
    trainer.set_checkpoint_dir(*out_dir);
  }
  trainer.run();
  if (out_dir) save_checkpoint(model, *out_dir / "final", CheckpointInfo{trainer.iteration()});
  return trainer.result();
}

}  // namespace icehrnet
