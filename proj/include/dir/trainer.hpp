#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dir/domains.hpp"
#include "dir/nets.hpp"

namespace dir {

struct SgdConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  OptimizerConfig optimizer = AdamConfig{};
  double invariance_weight = 1.0;  // lambda; 1.0 is the plain unweighted sum
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  double cls_loss = 0.0;
  double inv_loss = 0.0;
  double total_loss = 0.0;
  double accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
  void write_curves_csv(const std::string& path) const;
  const EpochStats& final_epoch() const { return epochs.back(); }
};

/// SGD-with-momentum / Adam over a fixed parameter list. step() consumes the
/// gradients currently stored on the parameters.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Tensor> params);
  void step();
  void zero_grad();

 private:
  OptimizerConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;  // momentum / first+second moments
  long t_ = 0;
};

/// Invariance-regularized training: per batch, sample a source domain d and a
/// batch from it, draw d' != d uniformly, and minimize
/// cross_entropy + lambda * mean ||g(x) - g(f_{d,d'}(x))||^2.
TrainReport dir_train(const std::vector<LabeledDomain>& domains,
                      const TransformProvider& transforms, TrainedModel& model,
                      const TrainConfig& config);

/// Pooled-source baseline; identical sampling schedule with the invariance
/// term dropped (equals dir_train at lambda = 0 for the same seed).
TrainReport deepall_train(const std::vector<LabeledDomain>& domains, TrainedModel& model,
                          const TrainConfig& config);

/// Gathers rows `idx` of a domain's samples into an autodiff leaf tensor.
Tensor batch_tensor(const NdArray& xs, const std::vector<int>& idx);

}  // namespace dir
