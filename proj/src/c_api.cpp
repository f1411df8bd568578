#include "icehrnet/icehrnet.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "icehrnet/config.hpp"
#include "icehrnet/error.hpp"
#include "icehrnet/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace icehrnet;

struct ihn_manifest {
  DatasetManifest manifest;
};

struct ihn_model {
  std::unique_ptr<SegModel> model;
};

struct ihn_report {
  EvalReport report;
  std::string json_text;
};

struct ihn_matrix {
  MatrixReport report;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
ihn_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return IHN_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<ihn_status>(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return IHN_ERR_VALIDATION;
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return IHN_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return IHN_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return IHN_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw ValidationError(std::string(what) + " must not be NULL");
}

ExperimentConfig load_config(const char* path) {
  if (path) return load_experiment_config(path);
  return experiment_config_from_json(json{{"synthetic", json::object()}});
}

ihn_report* make_report(const EvalReport& r) {
  auto* out = new ihn_report{r, {}};
  out->json_text = report_to_json(r).dump(2);
  return out;
}

}  // namespace

extern "C" {

const char* ihn_last_error(void) { return g_last_error.c_str(); }
const char* ihn_version(void) { return "0.1.0"; }

ihn_status ihn_manifest_load(const char* path, ihn_manifest** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ihn_manifest{load_manifest(path)};
  });
}

int ihn_manifest_num_classes(const ihn_manifest* m) { return m ? m->manifest.num_classes : 0; }
size_t ihn_manifest_num_samples(const ihn_manifest* m) { return m ? m->manifest.samples.size() : 0; }

size_t ihn_manifest_split_size(const ihn_manifest* m, const char* split) {
  if (!m || !split) return 0;
  try {
    return m->manifest.ids_in(parse_split(split)).size();
  } catch (const std::exception&) {
    return 0;
  }
}

void ihn_manifest_free(ihn_manifest* m) { delete m; }

ihn_status ihn_synth(const char* config_path, const char* out_dir, ihn_seed seed) {
  return guard([&] {
    require(out_dir, "out_dir");
    SyntheticDomainParams p = SyntheticDomainParams::defaults();
    if (config_path) {
      const ExperimentConfig c = load_experiment_config(config_path);
      if (c.synthetic) p = *c.synthetic;
    }
    if (seed) p.seed = *seed;
    write_synthetic_domains(gen_synthetic_domains(p), out_dir);
  });
}

void ihn_stylize_options_init(ihn_stylize_options* o) {
  if (!o) return;
  *o = ihn_stylize_options{"advanced", nullptr, "statistical", "opponent", nullptr, 1.0, 0};
}

ihn_status ihn_stylize(const char* in_manifest, const char* out_dir, const ihn_stylize_options* options) {
  return guard([&] {
    require(in_manifest, "in_manifest");
    require(out_dir, "out_dir");
    require(options, "options");
    const StyleMode mode = parse_style_mode(options->mode ? options->mode : "advanced");
    BackendSpec spec;
    spec.kind = parse_backend(options->backend ? options->backend : "statistical");
    const std::string cs = options->color_space ? options->color_space : "opponent";
    if (cs == "rgb") {
      spec.color_space = ColorSpace::kRgb;
    } else if (cs != "opponent") {
      throw ValidationError("unknown color space '" + cs + "' (opponent, rgb)");
    }
    if (options->neural_weights) spec.neural_weights = fs::path(options->neural_weights);
    spec.alpha = options->alpha;
    const Dataset in = load_dataset(in_manifest);
    StyleBank bank;
    if (mode != StyleMode::kNone) {
      require(options->bank, "bank");
      bank = load_style_bank(options->bank);
    }
    std::map<int, int> assignment;
    if (mode == StyleMode::kAdvanced) {
      if (bank.styles.empty()) throw ValidationError("style bank has no class patches");
      assignment = assign_classes(in.manifest.num_classes, bank.styles.rbegin()->first + 1);
    }
    Dataset out = stylize_dataset(in, bank, mode, mode == StyleMode::kNone ? TransferBackend{} : spec.build(),
                                  options->seed, assignment);
    out.manifest.name = in.manifest.name + "_" + style_mode_name(mode);
    save_dataset(out, out_dir);
  });
}

ihn_status ihn_adain(const double* content, int channels, int height, int width, const double* style,
                     int style_height, int style_width, double epsilon, double* out) {
  return guard([&] {
    require(content, "content");
    require(style, "style");
    require(out, "out");
    if (channels < 1 || height < 1 || width < 1 || style_height < 1 || style_width < 1) {
      throw ValidationError("adain dimensions must be positive");
    }
    const Shape cs{1, channels, height, width}, ss{1, channels, style_height, style_width};
    Tensor c(cs, std::vector<double>(content, content + cs.size()));
    Tensor s(ss, std::vector<double>(style, style + ss.size()));
    const Tensor r = adain(c, s, epsilon);
    std::memcpy(out, r.data(), cs.size() * sizeof(double));
  });
}

ihn_status ihn_model_create(const char* seg_config_json, uint64_t seed, ihn_model** out) {
  return guard([&] {
    require(out, "out");
    SegConfig c = SegConfig::toy(2);
    if (seg_config_json) {
      json j;
      try {
        j = json::parse(seg_config_json);
      } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed seg config JSON: ") + e.what());
      }
      c = seg_config_from_json(j, c);
    }
    *out = new ihn_model{build_model(c, seed)};
  });
}

ihn_status ihn_model_load(const char* stem, ihn_model** out) {
  return guard([&] {
    require(stem, "stem");
    require(out, "out");
    *out = new ihn_model{load_checkpoint(stem)};
  });
}

ihn_status ihn_model_save(const ihn_model* model, const char* stem) {
  return guard([&] {
    require(model, "model");
    require(stem, "stem");
    save_checkpoint(*model->model, stem);
  });
}

size_t ihn_model_parameter_count(const ihn_model* model) { return model ? model->model->parameter_count() : 0; }
int ihn_model_num_classes(const ihn_model* model) { return model ? model->model->config().num_classes : 0; }
int ihn_model_backbone_channels(const ihn_model* model) {
  return model ? model->model->config().backbone_channels() : 0;
}

ihn_status ihn_model_forward(const ihn_model* model, const double* input, int n, int height, int width, double* out,
                             size_t out_len) {
  return guard([&] {
    require(model, "model");
    require(input, "input");
    require(out, "out");
    if (n < 1 || height < 1 || width < 1) throw ValidationError("input dimensions must be positive");
    const Shape s{n, 3, height, width};
    const Tensor logits = model->model->predict(Tensor(s, std::vector<double>(input, input + s.size())));
    if (out_len < logits.shape().size()) {
      throw ValidationError("output buffer holds " + std::to_string(out_len) + " values, need " +
                            std::to_string(logits.shape().size()));
    }
    std::memcpy(out, logits.data(), logits.shape().size() * sizeof(double));
  });
}

ihn_status ihn_model_predict_rgb(const ihn_model* model, const uint8_t* rgb, int height, int width,
                                 uint8_t* mask_out) {
  return guard([&] {
    require(model, "model");
    require(rgb, "rgb");
    require(mask_out, "mask_out");
    if (height < 1 || width < 1) throw ValidationError("image dimensions must be positive");
    RgbImage img(height, width);
    std::memcpy(img.pixels.data(), rgb, img.pixels.size());
    const RgbImage* ptr = &img;
    const Tensor logits = model->model->predict(model->model->normalize({&ptr, 1}));
    const Mask m = argmax_masks(logits).front();
    std::memcpy(mask_out, m.labels.data(), m.labels.size());
  });
}

void ihn_model_free(ihn_model* model) { delete model; }

ihn_status ihn_train(const char* config_path, const char* manifest, const char* out_dir, ihn_seed seed) {
  return guard([&] {
    require(manifest, "manifest");
    require(out_dir, "out_dir");
    ExperimentConfig c = load_config(config_path);
    if (seed) c.train.seed = *seed;
    const Dataset tr = load_dataset(manifest, Split::kTrain);
    const Dataset va = load_dataset(manifest, Split::kVal);
    if (tr.samples.empty()) throw ValidationError("manifest has no train samples");
    c.seg.num_classes = tr.manifest.num_classes;
    c.seg.validate();
    auto model = build_model(c.seg, c.train.seed);
    train(*model, tr.samples, va.samples, c.train, fs::path(out_dir));
  });
}

ihn_status ihn_evaluate(const char* checkpoint_stem, const char* manifest, const char* split,
                        const char* report_path, ihn_report** out) {
  return guard([&] {
    require(checkpoint_stem, "checkpoint_stem");
    require(manifest, "manifest");
    const auto model = load_checkpoint(checkpoint_stem);
    const Dataset d = load_dataset(manifest, parse_split(split ? split : "test"));
    if (d.samples.empty()) throw ValidationError("split has no samples");
    EvalReport r = evaluate(*model, d.samples, d.manifest.num_classes);
    r.class_names = d.manifest.class_names;
    if (report_path) {
      std::ofstream os(report_path);
      if (!os) throw IoError(std::string("cannot write ") + report_path);
      os << report_to_json(r).dump(2) << '\n';
    }
    if (out) *out = make_report(r);
  });
}

double ihn_report_accuracy(const ihn_report* r) { return r ? r->report.accuracy : std::nan(""); }
double ihn_report_miou(const ihn_report* r) { return r ? r->report.miou : std::nan(""); }
int ihn_report_num_classes(const ihn_report* r) { return r ? r->report.matrix.num_classes() : 0; }

double ihn_report_class_iou(const ihn_report* r, int cls) {
  if (!r || cls < 0 || cls >= static_cast<int>(r->report.per_class_iou.size())) return std::nan("");
  return r->report.per_class_iou[cls];
}

uint64_t ihn_report_confusion(const ihn_report* r, int truth, int pred) {
  if (!r) return 0;
  const int n = r->report.matrix.num_classes();
  if (truth < 0 || pred < 0 || truth >= n || pred >= n) return 0;
  return r->report.matrix.at(truth, pred);
}

const char* ihn_report_json(const ihn_report* r) { return r ? r->json_text.c_str() : ""; }
void ihn_report_free(ihn_report* r) { delete r; }

ihn_status ihn_experiment(const char* config_path, const char* arm, const char* out_dir, ihn_seed seed,
                          ihn_report** out) {
  return guard([&] {
    require(arm, "arm");
    require(out_dir, "out_dir");
    ExperimentConfig c = load_config(config_path);
    const Arm a = parse_arm(arm);
    c.arms = {a};
    const std::uint64_t s = seed ? *seed : c.seeds.front();
    c = materialize_domains(c, fs::path(out_dir) / "data");
    const ArmResult r = run_experiment(c, a, s, fs::path(out_dir) / arm_name(a));
    if (out) *out = make_report(r.report);
  });
}

ihn_status ihn_matrix_run(const char* config_path, const char* out_dir, ihn_seed seed, ihn_matrix** out) {
  return guard([&] {
    require(out_dir, "out_dir");
    ExperimentConfig c = load_config(config_path);
    if (seed) {
      for (std::size_t i = 0; i < c.seeds.size(); ++i) c.seeds[i] = *seed + i;
    }
    c = materialize_domains(c, fs::path(out_dir) / "data");
    MatrixReport r = run_matrix(c, out_dir);
    if (out) *out = new ihn_matrix{std::move(r)};
  });
}

const char* ihn_matrix_table(const ihn_matrix* m) { return m ? m->report.table.c_str() : ""; }

double ihn_matrix_median_miou(const ihn_matrix* m, const char* arm) {
  if (!m || !arm) return std::nan("");
  try {
    const MatrixCell* cell = m->report.find(parse_arm(arm));
    if (!cell || cell->error) return std::nan("");
    return cell->median_miou;
  } catch (const std::exception&) {
    return std::nan("");
  }
}

const char* ihn_matrix_arm_error(const ihn_matrix* m, const char* arm) {
  if (!m || !arm) return nullptr;
  try {
    const MatrixCell* cell = m->report.find(parse_arm(arm));
    return cell && cell->error ? cell->error->c_str() : nullptr;
  } catch (const std::exception&) {
    return nullptr;
  }
}

ihn_status ihn_matrix_arm_status(const ihn_matrix* m, const char* arm) {
  if (!m || !arm) return IHN_OK;
  try {
    const MatrixCell* cell = m->report.find(parse_arm(arm));
    return cell && cell->error ? static_cast<ihn_status>(cell->error_code) : IHN_OK;
  } catch (const std::exception&) {
    return IHN_OK;
  }
}

void ihn_matrix_free(ihn_matrix* m) { delete m; }

}  // extern "C"
