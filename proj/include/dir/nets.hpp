#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dir/tensor.hpp"

namespace dir {

/// Fully connected layer, w: [in,out], b: [out]. Glorot-uniform init.
struct Linear {
  Tensor w, b;
  static Linear init(int in, int out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const { return add(matmul(x, w), b); }
};

/// Plain multilayer perceptron. Hidden layers use `act`; the output layer is
/// activated only when `activate_output` is set.
class Mlp {
 public:
  enum class Act { tanh, relu };

  Mlp() = default;
  Mlp(std::vector<int> dims, Act act, bool activate_output, std::uint64_t seed);

  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> parameters() const;
  const std::vector<int>& dims() const { return dims_; }
  Act act() const { return act_; }
  bool activate_output() const { return activate_output_; }

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::vector<int> dims_;
  Act act_ = Act::tanh;
  bool activate_output_ = false;
  std::vector<Linear> layers_;
};

enum class Arch { mlp, smallconv };

/// Representation network g: x -> z, deterministic given parameters.
/// mlp operates on [batch, in_dim] vectors; smallconv on [N,C,H,W] images
/// (conv3x3 -> relu -> pool -> conv3x3 -> relu -> pool -> fc).
class RepresentationNet {
 public:
  RepresentationNet() = default;
  static RepresentationNet make_mlp(int in_dim, std::vector<int> hidden, int z_dim,
                                    std::uint64_t seed);
  static RepresentationNet make_smallconv(int in_channels, int height, int width, int c1, int c2,
                                          int z_dim, std::uint64_t seed);

  Tensor forward(const Tensor& x) const;  // -> [batch, z_dim]
  std::vector<Tensor> parameters() const;
  Arch arch() const { return arch_; }
  int z_dim() const { return z_dim_; }

  nlohmann::json to_json() const;
  static RepresentationNet from_json(const nlohmann::json& j);

 private:
  Arch arch_ = Arch::mlp;
  int z_dim_ = 0;
  Mlp mlp_;
  // smallconv pieces
  int in_channels_ = 0, height_ = 0, width_ = 0, c1_ = 0, c2_ = 0;
  Tensor k1_, cb1_, k2_, cb2_;
  Linear fc_;
};

/// Single linear layer z -> class logits.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int z_dim, int num_classes, std::uint64_t seed);

  Tensor forward(const Tensor& z) const;
  std::vector<Tensor> parameters() const { return {fc_.w, fc_.b}; }
  int z_dim() const { return z_dim_; }
  int num_classes() const { return num_classes_; }

  nlohmann::json to_json() const;
  static ClassifierHead from_json(const nlohmann::json& j);

 private:
  int z_dim_ = 0, num_classes_ = 0;
  Linear fc_;
};

/// Representation net + head + training metadata; checkpoints round-trip
/// bit-exactly through JSON.
struct TrainedModel {
  RepresentationNet rep;
  ClassifierHead head;
  std::string config_hash;
  std::uint64_t seed = 0;
  int epochs = 0;

  std::vector<Tensor> parameters() const;
  Tensor predict_logits(const Tensor& x) const { return head.forward(rep.forward(x)); }

  nlohmann::json to_json() const;
  static TrainedModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static TrainedModel load(const std::string& path);
};

}  // namespace dir
