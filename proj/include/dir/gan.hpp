#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dir/domains.hpp"
#include "dir/nets.hpp"
#include "dir/trainer.hpp"

namespace dir {

struct GanConfig {
  int iterations = 2000;
  int batch = 64;
  AdamConfig optimizer{};
  double w_adv = 1.0, w_cls = 1.0, w_rec = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GanStepStats {
  double d_loss = 0.0;
  double g_adv = 0.0, g_cls = 0.0, g_rec = 0.0, g_total = 0.0;
};

struct GanReport {
  std::vector<GanStepStats> steps;
  void write_curves_csv(const std::string& path) const;
};

/// Domain-conditioned generator x' = x + mlp(x, one-hot d, one-hot d').
/// The residual form starts near the identity map.
class Generator {
 public:
  Generator() = default;
  Generator(int data_dim, std::vector<int> domain_ids, std::vector<int> hidden,
            std::uint64_t seed);

  Tensor forward(const Tensor& x, int d_from, int d_to) const;
  NdArray apply(const NdArray& x, int d_from, int d_to) const;
  std::vector<Tensor> parameters() const { return mlp_.parameters(); }

  int data_dim() const { return data_dim_; }
  const std::vector<int>& domain_ids() const { return domain_ids_; }
  int domain_index(int domain_id) const;  // throws on unknown id

  nlohmann::json to_json() const;
  static Generator from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Generator load(const std::string& path);

 private:
  int data_dim_ = 0;
  std::vector<int> domain_ids_;
  Mlp mlp_;
};

/// Shared trunk with a real/fake logit and a domain-classification head.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int data_dim, int num_domains, std::vector<int> hidden, std::uint64_t seed);

  Tensor adv_logits(const Tensor& x) const;     // [N, 1]
  Tensor domain_logits(const Tensor& x) const;  // [N, num_domains]
  std::vector<Tensor> parameters() const;

 private:
  Mlp trunk_;
  Linear adv_, cls_;
};

/// Alternating D/G optimization with non-saturating logistic adversarial
/// loss, domain classification, and an L1 cycle term. Aborts with
/// NumericError if any loss goes non-finite or past 1e3.
GanReport gan_train(const std::vector<LabeledDomain>& domains, Generator& g,
                    const GanConfig& config);

/// Wraps one (d, d') slice of the generator as a forward-only Transform.
Transform as_transform(const Generator& g, int d_from, int d_to);

/// TransformProvider backed by a trained generator.
TransformProvider learned_provider(const Generator& g);

}  // namespace dir
