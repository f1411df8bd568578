#include "icehrnet/config.hpp"

#include <cmath>
#include <set>

#include "icehrnet/error.hpp"

namespace icehrnet {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ValidationError(std::string("unknown ") + what + " key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json seg_config_to_json(const SegConfig& c) {
  return {
      {"num_classes", c.num_classes},
      {"branch_widths", c.branch_widths},
      {"stage_blocks", c.stage_blocks},
      {"stage_modules", c.stage_modules},
      {"stem_channels", c.stem_channels},
      {"layer1_planes", c.layer1_planes},
      {"head", head_name(c.head)},
      {"use_aspp", c.use_aspp},
      {"low_level", low_level_name(c.low_level)},
      {"aspp_out_channels", c.aspp_out_channels},
      {"aspp_rates", c.aspp_rates},
      {"decoder_low_level_channels", c.decoder_low_level_channels},
      {"decoder_channels", c.decoder_channels},
      {"normalization", {{"mean", c.normalization.mean}, {"std", c.normalization.std}}},
  };
}

SegConfig seg_config_from_json(const json& j, const SegConfig& base) {
  reject_unknown(j,
                 {"num_classes", "branch_widths", "stage_blocks", "stage_modules", "stem_channels", "layer1_planes",
                  "head", "use_aspp", "low_level", "aspp_out_channels", "aspp_rates", "decoder_low_level_channels",
                  "decoder_channels", "normalization", "preset", "variant"},
                 "seg_config");
  SegConfig c = base;
  if (j.contains("preset")) {
    const std::string preset = j.at("preset").get<std::string>();
    const int n = j.value("num_classes", base.num_classes);
    if (preset == "w48") {
      c = SegConfig::w48(n);
    } else if (preset == "toy") {
      c = SegConfig::toy(n);
    } else {
      throw ValidationError("unknown seg_config preset '" + preset + "'");
    }
  }
  read(j, "num_classes", c.num_classes);
  read(j, "branch_widths", c.branch_widths);
  read(j, "stage_blocks", c.stage_blocks);
  read(j, "stage_modules", c.stage_modules);
  read(j, "stem_channels", c.stem_channels);
  read(j, "layer1_planes", c.layer1_planes);
  if (j.contains("head")) c.head = parse_head(j.at("head").get<std::string>());
  read(j, "use_aspp", c.use_aspp);
  if (j.contains("low_level")) c.low_level = parse_low_level(j.at("low_level").get<std::string>());
  read(j, "aspp_out_channels", c.aspp_out_channels);
  read(j, "aspp_rates", c.aspp_rates);
  read(j, "decoder_low_level_channels", c.decoder_low_level_channels);
  read(j, "decoder_channels", c.decoder_channels);
  if (j.contains("normalization")) {
    const json& n = j.at("normalization");
    read(n, "mean", c.normalization.mean);
    read(n, "std", c.normalization.std);
  }
  if (j.contains("variant")) {
    const std::string v = j.at("variant").get<std::string>();
    if (v.size() != 1) throw ValidationError("variant must be a single letter a-e");
    c = ablation_variant(v[0], c);
  }
  c.validate();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {
      {"base_lr", c.base_lr},
      {"warmup_iters", c.warmup_iters},
      {"warmup_start_lr", c.warmup_start_lr},
      {"milestones", c.milestones},
      {"decay_gamma", c.decay_gamma},
      {"weight_decay", c.weight_decay},
      {"grad_clip_norm", c.grad_clip_norm},
      {"total_iters", c.total_iters},
      {"batch_size", c.batch_size},
      {"crop_size", {c.crop_height, c.crop_width}},
      {"seed", c.seed},
      {"val_interval", c.val_interval},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"random_flip", c.random_flip},
  };
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  reject_unknown(j,
                 {"base_lr", "warmup_iters", "warmup_start_lr", "milestones", "decay_gamma", "weight_decay",
                  "grad_clip_norm", "total_iters", "batch_size", "crop_size", "seed", "val_interval", "adam_beta1",
                  "adam_beta2", "adam_eps", "random_flip", "preset"},
                 "train_config");
  TrainConfig c = base;
  if (j.contains("preset")) {
    const std::string preset = j.at("preset").get<std::string>();
    if (preset == "desk") {
      c = TrainConfig::desk(j.value("total_iters", 500L));
    } else if (preset == "full") {
      c = TrainConfig{};
    } else {
      throw ValidationError("unknown train_config preset '" + preset + "'");
    }
  }
  read(j, "base_lr", c.base_lr);
  read(j, "warmup_iters", c.warmup_iters);
  read(j, "warmup_start_lr", c.warmup_start_lr);
  read(j, "milestones", c.milestones);
  read(j, "decay_gamma", c.decay_gamma);
  read(j, "weight_decay", c.weight_decay);
  read(j, "grad_clip_norm", c.grad_clip_norm);
  read(j, "total_iters", c.total_iters);
  read(j, "batch_size", c.batch_size);
  if (j.contains("crop_size")) {
    const json& cs = j.at("crop_size");
    if (cs.is_number_integer()) {
      c.crop_height = c.crop_width = cs.get<int>();
    } else {
      const auto v = cs.get<std::vector<int>>();
      if (v.size() != 2) throw ValidationError("crop_size must be an integer or [height, width]");
      c.crop_height = v[0];
      c.crop_width = v[1];
    }
  }
  read(j, "seed", c.seed);
  read(j, "val_interval", c.val_interval);
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "random_flip", c.random_flip);
  c.validate();
  return c;
}

json report_to_json(const EvalReport& r) {
  json per_class = json::array();
  for (std::size_t i = 0; i < r.per_class_iou.size(); ++i) {
    json entry = {{"class", i}};
    if (i < r.class_names.size()) entry["name"] = r.class_names[i];
    if (std::isnan(r.per_class_iou[i])) {
      entry["iou"] = nullptr;
    } else {
      entry["iou"] = r.per_class_iou[i];
    }
    per_class.push_back(entry);
  }
  return {
      {"acc", r.accuracy},
      {"miou", r.miou},
      {"per_class_iou", per_class},
      {"pixels", r.pixels},
      {"num_classes", r.matrix.num_classes()},
      {"confusion_matrix", r.matrix.counts()},
  };
}

}  // namespace icehrnet
