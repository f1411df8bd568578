// Exercises the shared library through its C interface only.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "icehrnet/icehrnet.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path path;
  explicit Scratch(const char* tag) {
    path = fs::temp_directory_path() / ("ihn_capi_" + std::string(tag) + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() { fs::remove_all(path); }
  std::string operator/(const char* s) const { return (path / s).string(); }
};

// Small domains and a very short schedule so each call finishes quickly.
std::string write_small_config(const Scratch& dir) {
  const std::string p = dir / "config.json";
  std::ofstream os(p);
  os << R"({
    "synthetic": {"height": 48, "width": 48, "min_radius": 7, "max_radius": 11,
                  "train_count": 4, "val_count": 2, "test_count": 2,
                  "patch_size": 16, "patches_per_class": 2},
    "seg_config": {"preset": "toy"},
    "train_config": {"total_iters": 6, "warmup_iters": 1, "milestones": [4, 5],
                     "batch_size": 2, "crop_size": 32, "val_interval": 3},
    "seeds": [0],
    "write_overlays": false
  })";
  return p;
}

}  // namespace

TEST_CASE("status codes and error text") {
  CHECK(std::strlen(ihn_version()) > 0);
  ihn_manifest* m = nullptr;
  CHECK(ihn_manifest_load("/nonexistent/manifest.json", &m) == IHN_ERR_IO);
  CHECK(m == nullptr);
  CHECK(std::strlen(ihn_last_error()) > 0);
  CHECK(ihn_manifest_load(nullptr, &m) == IHN_ERR_VALIDATION);
  ihn_model* model = nullptr;
  CHECK(ihn_model_create("{\"widths\": 3}", 0, &model) == IHN_ERR_VALIDATION);
  CHECK(ihn_model_create("not json", 0, &model) == IHN_ERR_VALIDATION);
  CHECK(model == nullptr);
}

TEST_CASE("adain through the C interface") {
  std::vector<double> content(2 * 3 * 4), style(2 * 5 * 5), out(content.size());
  for (std::size_t i = 0; i < content.size(); ++i) content[i] = std::sin(static_cast<double>(i)) * 3 + 1;
  for (std::size_t i = 0; i < style.size(); ++i) style[i] = std::cos(static_cast<double>(i) * 0.7) * 0.5 - 2;
  REQUIRE(ihn_adain(content.data(), 2, 3, 4, style.data(), 5, 5, 1e-5, out.data()) == IHN_OK);
  for (int c = 0; c < 2; ++c) {
    double sm = 0, om = 0;
    for (int i = 0; i < 25; ++i) sm += style[c * 25 + i];
    for (int i = 0; i < 12; ++i) om += out[c * 12 + i];
    CHECK(om / 12 == doctest::Approx(sm / 25));
  }
  CHECK(ihn_adain(content.data(), 0, 3, 4, style.data(), 5, 5, 1e-5, out.data()) == IHN_ERR_VALIDATION);
}

TEST_CASE("model lifecycle") {
  Scratch dir("model");
  ihn_model* m = nullptr;
  REQUIRE(ihn_model_create(nullptr, 3, &m) == IHN_OK);
  CHECK(ihn_model_num_classes(m) == 2);
  CHECK(ihn_model_backbone_channels(m) == 120);
  CHECK(ihn_model_parameter_count(m) > 0);

  ihn_model* w48 = nullptr;
  REQUIRE(ihn_model_create("{\"preset\": \"w48\", \"num_classes\": 2}", 0, &w48) == IHN_OK);
  CHECK(ihn_model_backbone_channels(w48) == 720);
  ihn_model_free(w48);

  std::vector<double> x(3 * 32 * 32, 0.25), logits(2 * 32 * 32);
  REQUIRE(ihn_model_forward(m, x.data(), 1, 32, 32, logits.data(), logits.size()) == IHN_OK);
  CHECK(ihn_model_forward(m, x.data(), 1, 32, 32, logits.data(), 5) == IHN_ERR_VALIDATION);
  CHECK(ihn_model_forward(m, x.data(), 1, 30, 32, logits.data(), logits.size()) == IHN_ERR_VALIDATION);

  REQUIRE(ihn_model_save(m, (dir / "m").c_str()) == IHN_OK);
  ihn_model* back = nullptr;
  REQUIRE(ihn_model_load((dir / "m").c_str(), &back) == IHN_OK);
  std::vector<double> again(logits.size());
  REQUIRE(ihn_model_forward(back, x.data(), 1, 32, 32, again.data(), again.size()) == IHN_OK);
  CHECK(again == logits);

  std::vector<std::uint8_t> rgb(32 * 32 * 3, 90), mask(32 * 32, 77);
  REQUIRE(ihn_model_predict_rgb(back, rgb.data(), 32, 32, mask.data()) == IHN_OK);
  for (auto v : mask) CHECK(v < 2);
  ihn_model_free(back);
  ihn_model_free(m);
  ihn_model_free(nullptr);
}

TEST_CASE("synth, stylize, train and evaluate") {
  Scratch dir("pipeline");
  const std::string cfg = write_small_config(dir);
  const uint64_t seed = 9;
  REQUIRE(ihn_synth(cfg.c_str(), (dir / "data").c_str(), &seed) == IHN_OK);

  ihn_manifest* m = nullptr;
  REQUIRE(ihn_manifest_load((dir / "data/target/manifest.json").c_str(), &m) == IHN_OK);
  CHECK(ihn_manifest_num_classes(m) == 2);
  CHECK(ihn_manifest_num_samples(m) == 8);
  CHECK(ihn_manifest_split_size(m, "train") == 4);
  CHECK(ihn_manifest_split_size(m, "test") == 2);
  CHECK(ihn_manifest_split_size(m, "bogus") == 0);
  ihn_manifest_free(m);

  ihn_stylize_options o;
  ihn_stylize_options_init(&o);
  o.mode = "advanced";
  const std::string bank = dir / "data/style_bank/style_bank.json";
  o.bank = bank.c_str();
  REQUIRE(ihn_stylize((dir / "data/source/manifest.json").c_str(), (dir / "stylized").c_str(), &o) == IHN_OK);
  CHECK(fs::exists(dir / "stylized/manifest.json"));
  o.mode = "sideways";
  CHECK(ihn_stylize((dir / "data/source/manifest.json").c_str(), (dir / "bad").c_str(), &o) == IHN_ERR_VALIDATION);

  REQUIRE(ihn_train(cfg.c_str(), (dir / "stylized/manifest.json").c_str(), (dir / "run").c_str(), nullptr) == IHN_OK);
  CHECK(fs::exists(dir / "run/final.bin"));
  CHECK(fs::exists(dir / "run/train_log.txt"));

  ihn_report* r = nullptr;
  REQUIRE(ihn_evaluate((dir / "run/final").c_str(), (dir / "data/target/manifest.json").c_str(), "test",
                       (dir / "eval.json").c_str(), &r) == IHN_OK);
  CHECK(ihn_report_num_classes(r) == 2);
  uint64_t total = 0, diag = 0;
  for (int t = 0; t < 2; ++t)
    for (int p = 0; p < 2; ++p) {
      total += ihn_report_confusion(r, t, p);
      if (t == p) diag += ihn_report_confusion(r, t, p);
    }
  CHECK(total == 2u * 48 * 48);
  CHECK(ihn_report_accuracy(r) == static_cast<double>(diag) / static_cast<double>(total));
  CHECK(std::string(ihn_report_json(r)).find("\"miou\"") != std::string::npos);
  CHECK(fs::exists(dir / "eval.json"));
  ihn_report_free(r);

  CHECK(ihn_evaluate((dir / "run/final").c_str(), (dir / "data/target/manifest.json").c_str(), "holdout", nullptr,
                     nullptr) == IHN_ERR_VALIDATION);
}

TEST_CASE("experiment and matrix") {
  Scratch dir("matrix");
  const std::string cfg = write_small_config(dir);
  ihn_report* r = nullptr;
  REQUIRE(ihn_experiment(cfg.c_str(), "none", (dir / "one").c_str(), nullptr, &r) == IHN_OK);
  CHECK(ihn_report_miou(r) >= 0.0);
  CHECK(ihn_report_miou(r) <= 1.0);
  ihn_report_free(r);
  CHECK(ihn_experiment(cfg.c_str(), "bogus", (dir / "two").c_str(), nullptr, nullptr) == IHN_ERR_VALIDATION);

  ihn_matrix* mx = nullptr;
  REQUIRE(ihn_matrix_run(cfg.c_str(), (dir / "all").c_str(), nullptr, &mx) == IHN_OK);
  const std::string table = ihn_matrix_table(mx);
  CHECK(table.find("Advanced Stylized") != std::string::npos);
  for (const char* arm : {"supervised", "none", "conventional", "advanced"}) {
    CAPTURE(arm);
    CHECK(ihn_matrix_arm_status(mx, arm) == IHN_OK);
    CHECK(ihn_matrix_arm_error(mx, arm) == nullptr);
    CHECK(std::isfinite(ihn_matrix_median_miou(mx, arm)));
  }
  CHECK(std::isnan(ihn_matrix_median_miou(mx, "nope")));
  ihn_matrix_free(mx);
}
