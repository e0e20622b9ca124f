#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "dir/experiment.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> target;
  std::optional<double> lambda;
  std::optional<int> epochs;

  void apply(dir::ExperimentConfig& c) const {
    if (seed) c.seed = *seed;
    if (out) c.out_dir = *out;
    if (target) {
      if (*target == "all") {
        c.target_all = true;
      } else {
        c.target_all = false;
        c.target = std::stoi(*target);
      }
    }
    if (lambda) c.train.invariance_weight = *lambda;
    if (epochs) c.train.epochs = *epochs;
    c.validate();
  }
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "Override the experiment seed");
  cmd->add_option("--out", ov.out, "Override the output directory");
  cmd->add_option("--target", ov.target, "Override the held-out domain id (or \"all\")");
  cmd->add_option("--lambda", ov.lambda, "Override the invariance weight");
  cmd->add_option("--epochs", ov.epochs, "Override the epoch count");
}

int dispatch(const std::string& config_path, const Overrides& ov, bool sweep) {
  try {
    dir::ExperimentConfig config = dir::ExperimentConfig::load(config_path);
    ov.apply(config);
    if (sweep) {
      auto results = dir::sweep_experiment(config);
      for (const auto& r : results)
        std::cout << "target d" << r.target_domain << ": accuracy " << r.target_accuracy
                  << "\n";
    } else {
      auto r = dir::run_experiment(config);
      std::cout << "target d" << r.target_domain << ": accuracy " << r.target_accuracy << "\n";
    }
    return 0;
  } catch (const dir::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dir::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-invariant representation learning experiments"};
  app.require_subcommand(1);

  std::string run_config, sweep_config;
  Overrides run_ov, sweep_ov;

  auto* run = app.add_subcommand("run", "Run one held-out-target experiment");
  run->add_option("config", run_config, "JSON experiment config")->required();
  add_override_flags(run, run_ov);

  auto* sweep = app.add_subcommand("sweep", "Hold out each domain in turn");
  sweep->add_option("config", sweep_config, "JSON experiment config")->required();
  add_override_flags(sweep, sweep_ov);

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return dispatch(run_config, run_ov, false);
  return dispatch(sweep_config, sweep_ov, true);
}
