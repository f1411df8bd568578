#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "icehrnet/error.hpp"
#include "icehrnet/model.hpp"
#include "icehrnet/styletransfer.hpp"
#include "icehrnet/synthetic.hpp"
#include "icehrnet/training.hpp"

namespace icehrnet {

// Supervised trains on labeled target data; the other arms train on
// (optionally stylized) source data and never see target labels.
enum class Arm { kSupervised, kNone, kConventional, kAdvanced };

const char* arm_name(Arm a);
Arm parse_arm(const std::string& s);
const char* arm_column(Arm a);

struct BackendSpec {
  BackendKind kind = BackendKind::kStatistical;
  ColorSpace color_space = ColorSpace::kOpponent;
  std::optional<std::filesystem::path> neural_weights;
  double alpha = 1.0;

  TransferBackend build() const;
};

struct ExperimentConfig {
  std::filesystem::path source_manifest;
  std::filesystem::path target_manifest;
  std::filesystem::path style_bank;
  SegConfig seg;
  TrainConfig train;
  BackendSpec backend;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<Arm> arms{Arm::kSupervised, Arm::kNone, Arm::kConventional, Arm::kAdvanced};
  // "final" evaluates the last iterate, "best" the best-validation weights.
  std::string eval_checkpoint = "final";
  std::string model_name = "IceHrNet";
  bool write_overlays = true;
  // Present when the domains are generated on the fly by the experiment.
  std::optional<SyntheticDomainParams> synthetic;

  void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
// Relative paths resolve against base_dir.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// When the config carries synthetic parameters and no target manifest,
// generates the domains under data_dir and points the config at them.
ExperimentConfig materialize_domains(ExperimentConfig config, const std::filesystem::path& data_dir);

// Throws ZeroShotViolation when target labels could reach a non-supervised
// arm: source and target manifests are the same file, source samples point at
// target files, or style patches are target mask files.
void check_zero_shot(const ExperimentConfig& config);

struct ArmResult {
  Arm arm = Arm::kNone;
  std::uint64_t seed = 0;
  EvalReport report;
  long iterations = 0;
  double final_loss = 0.0;
  double best_val_miou = -1.0;
  long best_iteration = -1;
  double seconds = 0.0;
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> overlays;
};

// One arm, one seed. Artifacts go to out_dir.
ArmResult run_experiment(const ExperimentConfig& config, Arm arm, std::uint64_t seed,
                         const std::filesystem::path& out_dir);

nlohmann::json arm_result_to_json(const ArmResult& r);

struct MatrixCell {
  Arm arm = Arm::kNone;
  std::vector<ArmResult> runs;  // one per seed
  std::optional<std::string> error;
  int error_code = 0;  // ErrorCode value of the failure
  double median_miou = 0.0;
  double median_accuracy = 0.0;
};

struct MatrixReport {
  std::string model_name;
  std::vector<MatrixCell> cells;
  std::string table;  // human-readable rendering

  const MatrixCell* find(Arm arm) const;
};

// Runs every configured arm for every seed. A failing arm is recorded in its
// cell and does not stop the others.
MatrixReport run_matrix(const ExperimentConfig& config, const std::filesystem::path& out_dir);
std::string render_table(const MatrixReport& report);
nlohmann::json matrix_report_to_json(const MatrixReport& r);

// Deterministic distinct colors, one per class.
std::vector<std::array<std::uint8_t, 3>> default_palette(int num_classes);
RgbImage emit_overlay(const RgbImage& image, const Mask& prediction,
                      const std::vector<std::array<std::uint8_t, 3>>& palette, double alpha = 0.5);

double median(std::vector<double> values);

}  // namespace icehrnet
