#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dir/domains.hpp"
#include "dir/gan.hpp"
#include "dir/metrics.hpp"
#include "dir/trainer.hpp"

namespace dir {

/// Declarative experiment description. Parsing is strict: unknown keys are
/// rejected so a typo cannot silently fall back to a default.
struct ExperimentConfig {
  enum class Kind { circles, rotated_mixture, rotated_mnist, gan_pipeline };
  enum class TransformSource { ground_truth, learned, identity };

  Kind kind = Kind::circles;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool target_all = false;
  int target = -1;
  TransformSource transform_source = TransformSource::ground_truth;
  std::string method = "dir";  // "dir" | "deepall"

  TrainConfig train;
  GanConfig gan;

  // model
  std::vector<int> hidden = {64, 64};
  int z_dim = 64;
  int conv_c1 = 32, conv_c2 = 64;

  // dataset (kind-dependent)
  int n_per_class = 100;
  std::vector<double> radii, arc_offsets;          // circles
  int num_classes = 2;                             // circles
  std::vector<DensityModel::GaussianComponent> components;  // mixtures
  std::vector<double> angles_deg;                  // mixtures
  std::string data_dir = "data/mnist";             // rotated_mnist
  std::vector<double> degrees = {0, 15, 30, 45, 60, 75};

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;  // fully resolved echo
  void validate() const;
};

struct RunResult {
  int target_domain = -1;
  double target_accuracy = 0.0;
  AlignmentReport alignment;
  TrainReport train_report;
};

/// Builds every domain of the configured dataset (sources and target).
std::vector<LabeledDomain> build_domains(const ExperimentConfig& config);

/// Executes one held-out-target experiment and writes report.json,
/// curves.csv, model.json and scatter exports into config.out_dir.
/// Throws std::invalid_argument / DataError / NumericError; the CLI maps
/// those to exit codes 1 / 2 / 3.
RunResult run_experiment(const ExperimentConfig& config);

/// Runs one experiment per held-out domain (requires target = "all" or
/// >= 2 domains) and writes an aggregate CSV with one column per domain
/// plus the average.
std::vector<RunResult> sweep_experiment(const ExperimentConfig& config);

}  // namespace dir
