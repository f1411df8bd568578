#include "icehrnet/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "icehrnet/config.hpp"
#include "icehrnet/error.hpp"

namespace icehrnet {

namespace fs = std::filesystem;
using nlohmann::json;

const char* arm_name(Arm a) {
  switch (a) {
    case Arm::kSupervised: return "supervised";
    case Arm::kNone: return "none";
    case Arm::kConventional: return "conventional";
    case Arm::kAdvanced: return "advanced";
  }
  return "?";
}

Arm parse_arm(const std::string& s) {
  if (s == "supervised") return Arm::kSupervised;
  if (s == "none") return Arm::kNone;
  if (s == "conventional") return Arm::kConventional;
  if (s == "advanced") return Arm::kAdvanced;
  throw ValidationError("unknown experiment arm '" + s + "' (supervised, none, conventional, advanced)");
}

const char* arm_column(Arm a) {
  switch (a) {
    case Arm::kSupervised: return "Supervised";
    case Arm::kNone: return "None Stylized";
    case Arm::kConventional: return "Conventional Stylized";
    case Arm::kAdvanced: return "Advanced Stylized";
  }
  return "?";
}

namespace {

const char* color_space_name(ColorSpace c) { return c == ColorSpace::kRgb ? "rgb" : "opponent"; }

ColorSpace parse_color_space(const std::string& s) {
  if (s == "opponent") return ColorSpace::kOpponent;
  if (s == "rgb") return ColorSpace::kRgb;
  throw ValidationError("unknown color space '" + s + "' (opponent, rgb)");
}

StyleMode arm_style(Arm a) {
  switch (a) {
    case Arm::kConventional: return StyleMode::kConventional;
    case Arm::kAdvanced: return StyleMode::kAdvanced;
    default: return StyleMode::kNone;
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

fs::path canonical_or_self(const fs::path& p) {
  std::error_code ec;
  fs::path c = fs::weakly_canonical(p, ec);
  return ec ? p.lexically_normal() : c;
}

}  // namespace

TransferBackend BackendSpec::build() const {
  if (kind == BackendKind::kStatistical) return TransferBackend::statistical(color_space);
  if (!neural_weights) throw ValidationError("neural backend requires neural_weights");
  auto w = std::make_shared<const NeuralWeights>(NeuralWeights::load(*neural_weights));
  TransferBackend b = TransferBackend::neural_from(std::move(w), alpha);
  b.validate();
  return b;
}

void ExperimentConfig::validate() const {
  if (target_manifest.empty()) throw ValidationError("experiment needs target_manifest");
  if (seeds.empty()) throw ValidationError("experiment needs at least one seed");
  if (arms.empty()) throw ValidationError("experiment needs at least one arm");
  std::set<Arm> seen;
  for (Arm a : arms) {
    if (!seen.insert(a).second) throw ValidationError(std::string("duplicate arm '") + arm_name(a) + "'");
    if (a != Arm::kSupervised && source_manifest.empty()) {
      throw ValidationError(std::string("arm '") + arm_name(a) + "' needs source_manifest");
    }
    if ((a == Arm::kConventional || a == Arm::kAdvanced) && style_bank.empty()) {
      throw ValidationError(std::string("arm '") + arm_name(a) + "' needs style_bank");
    }
  }
  if (eval_checkpoint != "final" && eval_checkpoint != "best") {
    throw ValidationError("eval_checkpoint must be 'final' or 'best'");
  }
  if (!(backend.alpha >= 0.0 && backend.alpha <= 1.0)) throw ValidationError("backend alpha must lie in [0, 1]");
  seg.validate();
  train.validate();
}

json experiment_config_to_json(const ExperimentConfig& c) {
  json arms = json::array();
  for (Arm a : c.arms) arms.push_back(arm_name(a));
  json backend = {{"kind", backend_name(c.backend.kind)},
                  {"color_space", color_space_name(c.backend.color_space)},
                  {"alpha", c.backend.alpha}};
  if (c.backend.neural_weights) backend["neural_weights"] = c.backend.neural_weights->string();
  json j = {
      {"source_manifest", c.source_manifest.string()},
      {"target_manifest", c.target_manifest.string()},
      {"style_bank", c.style_bank.string()},
      {"seg_config", seg_config_to_json(c.seg)},
      {"train_config", train_config_to_json(c.train)},
      {"backend", backend},
      {"seeds", c.seeds},
      {"arms", arms},
      {"eval_checkpoint", c.eval_checkpoint},
      {"model_name", c.model_name},
      {"write_overlays", c.write_overlays},
  };
  if (c.synthetic) j["synthetic"] = synthetic_params_to_json(*c.synthetic);
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j, const fs::path& base_dir) {
  static const std::set<std::string> known = {"source_manifest", "target_manifest", "style_bank",   "seg_config",
                                              "train_config",    "backend",         "seeds",        "arms",
                                              "eval_checkpoint", "model_name",      "write_overlays", "synthetic"};
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ValidationError("unknown experiment key '" + key + "'");
  }
  ExperimentConfig c;
  c.seg = SegConfig::toy(2);
  c.train = TrainConfig::desk();
  try {
    if (j.contains("synthetic")) c.synthetic = synthetic_params_from_json(j.at("synthetic"));
    if (c.synthetic) c.seg.num_classes = c.synthetic->num_classes;
    c.source_manifest = resolve(j.value("source_manifest", std::string()), base_dir);
    c.target_manifest = resolve(j.value("target_manifest", std::string()), base_dir);
    c.style_bank = resolve(j.value("style_bank", std::string()), base_dir);
    if (j.contains("seg_config")) c.seg = seg_config_from_json(j.at("seg_config"), c.seg);
    if (j.contains("train_config")) c.train = train_config_from_json(j.at("train_config"), c.train);
    if (j.contains("backend")) {
      const json& b = j.at("backend");
      for (const auto& [key, value] : b.items()) {
        if (key != "kind" && key != "color_space" && key != "neural_weights" && key != "alpha") {
          throw ValidationError("unknown backend key '" + key + "'");
        }
      }
      if (b.contains("kind")) c.backend.kind = parse_backend(b.at("kind").get<std::string>());
      if (b.contains("color_space")) c.backend.color_space = parse_color_space(b.at("color_space").get<std::string>());
      if (b.contains("neural_weights") && !b.at("neural_weights").is_null()) {
        c.backend.neural_weights = resolve(b.at("neural_weights").get<std::string>(), base_dir);
      }
      c.backend.alpha = b.value("alpha", c.backend.alpha);
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("arms")) {
      c.arms.clear();
      for (const auto& a : j.at("arms")) c.arms.push_back(parse_arm(a.get<std::string>()));
    }
    c.eval_checkpoint = j.value("eval_checkpoint", c.eval_checkpoint);
    c.model_name = j.value("model_name", c.model_name);
    c.write_overlays = j.value("write_overlays", c.write_overlays);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

ExperimentConfig materialize_domains(ExperimentConfig config, const fs::path& data_dir) {
  if (!config.synthetic || !config.target_manifest.empty()) return config;
  const SyntheticPaths paths = write_synthetic_domains(gen_synthetic_domains(*config.synthetic), data_dir);
  config.source_manifest = paths.source_manifest;
  config.target_manifest = paths.target_manifest;
  config.style_bank = paths.style_bank;
  return config;
}

void check_zero_shot(const ExperimentConfig& config) {
  const DatasetManifest target = parse_manifest(config.target_manifest);
  std::set<fs::path> target_files, target_masks;
  for (const auto& s : target.samples) {
    target_files.insert(canonical_or_self(target.root / s.image));
    target_files.insert(canonical_or_self(target.root / s.mask));
    target_masks.insert(canonical_or_self(target.root / s.mask));
  }

  const bool needs_source = std::any_of(config.arms.begin(), config.arms.end(), [](Arm a) { return a != Arm::kSupervised; });
  if (needs_source) {
    if (canonical_or_self(config.source_manifest) == canonical_or_self(config.target_manifest)) {
      throw ZeroShotViolation("source manifest is the target manifest " + config.target_manifest.string());
    }
    const DatasetManifest source = parse_manifest(config.source_manifest);
    for (const auto& s : source.samples) {
      for (const std::string* rel : {&s.image, &s.mask}) {
        if (target_files.count(canonical_or_self(source.root / *rel))) {
          throw ZeroShotViolation("source sample '" + s.id + "' uses target file " + *rel);
        }
      }
    }
  }

  const bool needs_bank = std::any_of(config.arms.begin(), config.arms.end(),
                                      [](Arm a) { return a == Arm::kConventional || a == Arm::kAdvanced; });
  if (needs_bank) {
    std::ifstream in(config.style_bank);
    if (!in) throw IoError("cannot open style bank " + config.style_bank.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError("malformed style bank " + config.style_bank.string() + ": " + e.what());
    }
    const fs::path dir = config.style_bank.parent_path();
    auto check = [&](const std::string& rel) {
      if (target_masks.count(canonical_or_self(dir / rel))) {
        throw ZeroShotViolation("style patch " + rel + " is a target label mask");
      }
    };
    if (j.contains("styles")) {
      for (const auto& [cls, list] : j.at("styles").items()) {
        for (const auto& rel : list) check(rel.get<std::string>());
      }
    }
    if (j.contains("global")) check(j.at("global").get<std::string>());
  }
}

std::vector<std::array<std::uint8_t, 3>> default_palette(int num_classes) {
  static const std::array<std::uint8_t, 3> base[] = {
      {0, 0, 0}, {255, 255, 255}, {230, 25, 75}, {60, 180, 75}, {0, 130, 200}, {255, 225, 25}, {145, 30, 180}, {245, 130, 48}};
  std::vector<std::array<std::uint8_t, 3>> out;
  for (int c = 0; c < num_classes; ++c) {
    if (c < 8) {
      out.push_back(base[c]);
    } else {
      // Golden-ratio hue walk for the rest.
      const double h = std::fmod(c * 0.618033988749895, 1.0) * 6.0;
      const int i = static_cast<int>(h);
      const double f = h - i;
      const double v = 220, p = 40, q = 220 - 180 * f, t = 40 + 180 * f;
      const double rgb[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
      out.push_back({static_cast<std::uint8_t>(rgb[i][0]), static_cast<std::uint8_t>(rgb[i][1]),
                     static_cast<std::uint8_t>(rgb[i][2])});
    }
  }
  return out;
}

RgbImage emit_overlay(const RgbImage& image, const Mask& prediction,
                      const std::vector<std::array<std::uint8_t, 3>>& palette, double alpha) {
  if (image.height != prediction.height || image.width != prediction.width) {
    throw ValidationError("overlay: prediction " + std::to_string(prediction.height) + "x" +
                          std::to_string(prediction.width) + " does not match image " + std::to_string(image.height) +
                          "x" + std::to_string(image.width));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("overlay alpha must lie in [0, 1]");
  RgbImage out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const int c = prediction.at(y, x);
      if (c >= static_cast<int>(palette.size())) {
        throw ValidationError("overlay: class index " + std::to_string(c) + " has no palette entry");
      }
      std::uint8_t* px = out.at(y, x);
      for (int k = 0; k < 3; ++k) {
        px[k] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * px[k] + alpha * palette[c][k]));
      }
    }
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ArmResult run_experiment(const ExperimentConfig& config, Arm arm, std::uint64_t seed, const fs::path& out_dir) {
  config.validate();
  if (arm != Arm::kSupervised) {
    ExperimentConfig single = config;
    single.arms = {arm};
    check_zero_shot(single);
  }
  const auto start = std::chrono::steady_clock::now();

  std::vector<LabeledImage> train_set, val_set;
  int num_classes = 0;
  std::vector<std::string> class_names;
  if (arm == Arm::kSupervised) {
    const Dataset tr = load_dataset(config.target_manifest, Split::kTrain);
    const Dataset va = load_dataset(config.target_manifest, Split::kVal);
    train_set = tr.samples;
    val_set = va.samples;
    num_classes = tr.manifest.num_classes;
  } else {
    Dataset tr = load_dataset(config.source_manifest, Split::kTrain);
    Dataset va = load_dataset(config.source_manifest, Split::kVal);
    const StyleMode mode = arm_style(arm);
    if (mode != StyleMode::kNone) {
      const StyleBank bank = load_style_bank(config.style_bank);
      const TransferBackend backend = config.backend.build();
      const DatasetManifest target = parse_manifest(config.target_manifest);
      const auto assignment = assign_classes(tr.manifest.num_classes, target.num_classes);
      tr = stylize_dataset(tr, bank, mode, backend, seed, assignment);
      va = stylize_dataset(va, bank, mode, backend, seed, assignment);
    }
    train_set = std::move(tr.samples);
    val_set = std::move(va.samples);
    num_classes = tr.manifest.num_classes;
  }

  // Only the test split of the target is read from here on.
  const Dataset test = load_dataset(config.target_manifest, Split::kTest);
  class_names = test.manifest.class_names;
  if (test.samples.empty()) throw ValidationError("target manifest has no test samples");

  SegConfig seg = config.seg;
  seg.num_classes = std::max(num_classes, test.manifest.num_classes);
  TrainConfig tc = config.train;
  tc.seed = seed;

  fs::create_directories(out_dir);
  auto model = build_model(seg, seed);
  const TrainResult tr = train(*model, train_set, val_set, tc, out_dir);
  if (config.eval_checkpoint == "best" && !tr.best_parameters.empty()) {
    load_parameters(*model, out_dir / "best.bin");
  }

  ArmResult r;
  r.arm = arm;
  r.seed = seed;
  std::vector<Mask> preds;
  r.report = evaluate(*model, test.samples, test.manifest.num_classes, &preds);
  r.report.class_names = class_names;
  r.iterations = tc.total_iters;
  r.final_loss = tr.history.empty() ? 0.0 : tr.history.back().loss;
  r.best_val_miou = tr.best_val_miou;
  r.best_iteration = tr.best_iteration;
  r.out_dir = out_dir;
  if (config.write_overlays) {
    const auto palette = default_palette(test.manifest.num_classes);
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
      const fs::path p = out_dir / "overlays" / (test.samples[i].id + ".png");
      write_image(p, emit_overlay(test.samples[i].image, preds[i], palette));
      r.overlays.push_back(p);
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json report = arm_result_to_json(r);
  report["config"] = experiment_config_to_json(config);
  std::ofstream os(out_dir / "report.json");
  if (!os) throw IoError("cannot write " + (out_dir / "report.json").string());
  os << report.dump(2) << '\n';
  return r;
}

json arm_result_to_json(const ArmResult& r) {
  json overlays = json::array();
  for (const auto& p : r.overlays) overlays.push_back(p.filename().string());
  return {
      {"arm", arm_name(r.arm)},
      {"seed", r.seed},
      {"metrics", report_to_json(r.report)},
      {"iterations", r.iterations},
      {"final_loss", r.final_loss},
      {"best_val_miou", r.best_val_miou},
      {"best_iteration", r.best_iteration},
      {"seconds", r.seconds},
      {"overlays", overlays},
  };
}

const MatrixCell* MatrixReport::find(Arm arm) const {
  for (const auto& c : cells) {
    if (c.arm == arm) return &c;
  }
  return nullptr;
}

MatrixReport run_matrix(const ExperimentConfig& config, const fs::path& out_dir) {
  config.validate();
  MatrixReport report;
  report.model_name = config.model_name;
  for (Arm a : config.arms) {
    MatrixCell cell;
    cell.arm = a;
    cell.runs.resize(config.seeds.size());
    report.cells.push_back(std::move(cell));
  }

  struct Task {
    std::size_t cell, seed_index;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    for (std::size_t s = 0; s < config.seeds.size(); ++s) tasks.push_back({c, s});
  }
  std::vector<std::optional<std::string>> errors(tasks.size());
  std::vector<int> codes(tasks.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < tasks.size();) {
      const Task& task = tasks[t];
      MatrixCell& cell = report.cells[task.cell];
      const std::uint64_t seed = config.seeds[task.seed_index];
      try {
        cell.runs[task.seed_index] =
            run_experiment(config, cell.arm, seed, out_dir / arm_name(cell.arm) / ("seed" + std::to_string(seed)));
      } catch (const Error& e) {
        errors[t] = e.what();
        codes[t] = static_cast<int>(e.code());
      } catch (const std::exception& e) {
        errors[t] = e.what();
        codes[t] = static_cast<int>(ErrorCode::kInternal);
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t nthreads = std::min<std::size_t>(hw, tasks.size());
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    MatrixCell& cell = report.cells[tasks[t].cell];
    if (errors[t] && !cell.error) {
      cell.error = *errors[t];
      cell.error_code = codes[t];
    }
  }
  for (auto& cell : report.cells) {
    if (cell.error) {
      cell.runs.clear();
      continue;
    }
    std::vector<double> mious, accs;
    for (const auto& r : cell.runs) {
      mious.push_back(r.report.miou);
      accs.push_back(r.report.accuracy);
    }
    cell.median_miou = median(mious);
    cell.median_accuracy = median(accs);
  }
  report.table = render_table(report);

  fs::create_directories(out_dir);
  {
    std::ofstream os(out_dir / "matrix.json");
    if (!os) throw IoError("cannot write " + (out_dir / "matrix.json").string());
    json j = matrix_report_to_json(report);
    j["config"] = experiment_config_to_json(config);
    os << j.dump(2) << '\n';
  }
  std::ofstream(out_dir / "table.txt") << report.table;
  return report;
}

std::string render_table(const MatrixReport& report) {
  std::vector<std::string> header{"Method"};
  for (const auto& c : report.cells) header.push_back(arm_column(c.arm));
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> rows{header};
  std::vector<std::string> miou_row{report.model_name + " mIoU"}, acc_row{report.model_name + " Acc"};
  for (const auto& c : report.cells) {
    miou_row.push_back(c.error ? "error" : fmt(c.median_miou));
    acc_row.push_back(c.error ? "error" : fmt(c.median_accuracy));
  }
  rows.push_back(miou_row);
  rows.push_back(acc_row);

  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      os << (i ? " | " : "") << rows[r][i] << std::string(widths[i] - rows[r][i].size(), ' ');
    }
    os << '\n';
    if (r == 0) {
      for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "-|-" : "") << std::string(widths[i], '-');
      os << '\n';
    }
  }
  os << '\n';
  for (const auto& c : report.cells) {
    os << arm_name(c.arm) << ": ";
    if (c.error) {
      os << "error: " << *c.error << '\n';
      continue;
    }
    os << "median mIoU " << fmt(c.median_miou) << ", median Acc " << fmt(c.median_accuracy) << " over "
       << c.runs.size() << " seed(s)";
    for (const auto& r : c.runs) {
      os << "; seed " << r.seed << " mIoU " << fmt(r.report.miou) << " IoU [";
      for (std::size_t k = 0; k < r.report.per_class_iou.size(); ++k) {
        os << (k ? ", " : "") << (std::isnan(r.report.per_class_iou[k]) ? "n/a" : fmt(r.report.per_class_iou[k]));
      }
      os << "]";
    }
    os << '\n';
  }
  return os.str();
}

json matrix_report_to_json(const MatrixReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json cell = {{"arm", arm_name(c.arm)}, {"column", arm_column(c.arm)}};
    if (c.error) {
      cell["error"] = *c.error;
    } else {
      cell["median_miou"] = c.median_miou;
      cell["median_acc"] = c.median_accuracy;
      json runs = json::array();
      for (const auto& run : c.runs) runs.push_back(arm_result_to_json(run));
      cell["runs"] = runs;
    }
    cells.push_back(cell);
  }
  return {{"model", r.model_name}, {"cells", cells}, {"table", r.table}};
}

}  // namespace icehrnet
