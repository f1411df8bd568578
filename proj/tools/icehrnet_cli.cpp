#include <CLI11.hpp>
#include <cstdio>
#include <optional>
#include <string>

#include "icehrnet/icehrnet.h"

namespace {

// IO and internal failures surface as validation-class exits.
int exit_code(ihn_status s) {
  if (s == IHN_OK) return 0;
  std::fprintf(stderr, "error: %s\n", ihn_last_error());
  switch (s) {
    case IHN_ERR_DIVERGENCE: return 2;
    case IHN_ERR_ZERO_SHOT: return 3;
    default: return 1;
  }
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation with per-class style transfer for zero-shot domain transfer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ihn_version());

  std::optional<uint64_t> seed;
  std::string config, out;
  app.add_option("--seed", seed, "Seed override")->type_name("N");
  app.add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", out, "Output directory (or report file for eval)");
  app.fallthrough();

  auto* synth = app.add_subcommand("synth", "Generate synthetic source/target domains and a style bank");

  std::string mode = "advanced", bank, backend = "statistical", color_space = "opponent", weights, in;
  double alpha = 1.0;
  auto* stylize = app.add_subcommand("stylize", "Stylize every sample of a dataset");
  stylize->add_option("--mode", mode, "none | conventional | advanced")
      ->check(CLI::IsMember({"none", "conventional", "advanced"}));
  stylize->add_option("--bank", bank, "style_bank.json");
  stylize->add_option("--backend", backend, "statistical | neural")->check(CLI::IsMember({"statistical", "neural"}));
  stylize->add_option("--color-space", color_space, "opponent | rgb")->check(CLI::IsMember({"opponent", "rgb"}));
  stylize->add_option("--neural-weights", weights, "Encoder/decoder tensor blob");
  stylize->add_option("--alpha", alpha, "Neural feature blend")->check(CLI::Range(0.0, 1.0));
  stylize->add_option("--in", in, "Input manifest")->required();

  std::string data;
  auto* train = app.add_subcommand("train", "Train on the train split of a manifest");
  train->add_option("--data", data, "Dataset manifest")->required();

  std::string checkpoint, split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint stem (without .bin)")->required();
  eval->add_option("--data", data, "Dataset manifest")->required();
  eval->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));

  std::string arm;
  auto* experiment = app.add_subcommand("experiment", "Run one arm of the transfer experiment");
  experiment->add_option("--mode", arm, "supervised | none | conventional | advanced")
      ->required()
      ->check(CLI::IsMember({"supervised", "none", "conventional", "advanced"}));

  auto* matrix = app.add_subcommand("matrix", "Run all configured arms and print the comparison table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors are validation errors; --help and --version exit 0.
    return app.exit(e) == 0 ? 0 : 1;
  }

  const uint64_t seed_value = seed.value_or(0);
  const uint64_t* seed_ptr = seed ? &seed_value : nullptr;
  auto need_out = [&]() -> bool {
    if (!out.empty()) return true;
    std::fprintf(stderr, "error: --out is required\n");
    return false;
  };

  if (synth->parsed()) {
    if (!need_out()) return 1;
    const int rc = exit_code(ihn_synth(opt(config), out.c_str(), seed_ptr));
    if (rc == 0) std::printf("wrote %s/{source,target,style_bank}\n", out.c_str());
    return rc;
  }
  if (stylize->parsed()) {
    if (!need_out()) return 1;
    ihn_stylize_options o;
    ihn_stylize_options_init(&o);
    o.mode = mode.c_str();
    o.bank = opt(bank);
    o.backend = backend.c_str();
    o.color_space = color_space.c_str();
    o.neural_weights = opt(weights);
    o.alpha = alpha;
    o.seed = seed_value;
    const int rc = exit_code(ihn_stylize(in.c_str(), out.c_str(), &o));
    if (rc == 0) std::printf("wrote %s/manifest.json\n", out.c_str());
    return rc;
  }
  if (train->parsed()) {
    if (!need_out()) return 1;
    const int rc = exit_code(ihn_train(opt(config), data.c_str(), out.c_str(), seed_ptr));
    if (rc == 0) std::printf("wrote %s/final.bin\n", out.c_str());
    return rc;
  }
  if (eval->parsed()) {
    ihn_report* r = nullptr;
    const int rc = exit_code(ihn_evaluate(checkpoint.c_str(), data.c_str(), split.c_str(), opt(out), &r));
    if (rc == 0) {
      std::printf("%s\n", ihn_report_json(r));
      ihn_report_free(r);
    }
    return rc;
  }
  if (experiment->parsed()) {
    if (!need_out()) return 1;
    ihn_report* r = nullptr;
    const int rc = exit_code(ihn_experiment(opt(config), arm.c_str(), out.c_str(), seed_ptr, &r));
    if (rc == 0) {
      std::printf("%s: acc %.4f mIoU %.4f\n", arm.c_str(), ihn_report_accuracy(r), ihn_report_miou(r));
      ihn_report_free(r);
    }
    return rc;
  }
  if (matrix->parsed()) {
    if (!need_out()) return 1;
    ihn_matrix* m = nullptr;
    const int rc = exit_code(ihn_matrix_run(opt(config), out.c_str(), seed_ptr, &m));
    if (rc != 0) return rc;
    std::printf("%s", ihn_matrix_table(m));
    // A failed arm fails the run; the highest exit class wins.
    int worst = 0;
    for (const char* a : {"supervised", "none", "conventional", "advanced"}) {
      if (const char* err = ihn_matrix_arm_error(m, a)) {
        std::fprintf(stderr, "arm %s failed: %s\n", a, err);
        const ihn_status s = ihn_matrix_arm_status(m, a);
        const int code = s == IHN_ERR_DIVERGENCE ? 2 : s == IHN_ERR_ZERO_SHOT ? 3 : 1;
        if (code > worst) worst = code;
      }
    }
    ihn_matrix_free(m);
    return worst;
  }
  return 0;
}
