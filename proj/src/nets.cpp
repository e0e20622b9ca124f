#include "dir/nets.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dir {

using nlohmann::json;

namespace {

Tensor glorot(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), /*requires_grad=*/true);
}

json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.value()}};
}

Tensor tensor_from_json(const json& j, const Shape& expected) {
  Shape shape = j.at("shape").get<Shape>();
  if (!expected.empty() && shape != expected)
    throw std::invalid_argument("checkpoint: expected shape " + shape_str(expected) +
                                ", found " + shape_str(shape));
  return Tensor(std::move(shape), j.at("data").get<std::vector<double>>(),
                /*requires_grad=*/true);
}

}  // namespace

Linear Linear::init(int in, int out, std::mt19937_64& rng) {
  Linear l;
  l.w = glorot({in, out}, in, out, rng);
  l.b = Tensor::zeros({out}, /*requires_grad=*/true);
  return l;
}

Mlp::Mlp(std::vector<int> dims, Act act, bool activate_output, std::uint64_t seed)
    : dims_(std::move(dims)), act_(act), activate_output_(activate_output) {
  if (dims_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i + 1 < dims_.size(); ++i)
    layers_.push_back(Linear::init(dims_[i], dims_[i + 1], rng));
}

Tensor Mlp::forward(const Tensor& x) const {
  if (x.shape().size() != 2 || x.shape()[1] != dims_.front())
    throw ShapeError("Mlp: expected [batch," + std::to_string(dims_.front()) + "], got " +
                     shape_str(x.shape()));
  Tensor h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    const bool last = (i + 1 == layers_.size());
    if (!last || activate_output_) h = act_ == Act::tanh ? dir::tanh(h) : relu(h);
  }
  return h;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> ps;
  for (const auto& l : layers_) {
    ps.push_back(l.w);
    ps.push_back(l.b);
  }
  return ps;
}

json Mlp::to_json() const {
  json layers = json::array();
  for (const auto& l : layers_)
    layers.push_back({{"w", tensor_to_json(l.w)}, {"b", tensor_to_json(l.b)}});
  return {{"dims", dims_},
          {"act", act_ == Act::tanh ? "tanh" : "relu"},
          {"activate_output", activate_output_},
          {"layers", layers}};
}

Mlp Mlp::from_json(const json& j) {
  Mlp m;
  m.dims_ = j.at("dims").get<std::vector<int>>();
  m.act_ = j.at("act").get<std::string>() == "tanh" ? Act::tanh : Act::relu;
  m.activate_output_ = j.at("activate_output").get<bool>();
  const auto& layers = j.at("layers");
  if (layers.size() + 1 != m.dims_.size())
    throw std::invalid_argument("Mlp checkpoint: layer count mismatch");
  for (size_t i = 0; i < layers.size(); ++i) {
    Linear l;
    l.w = tensor_from_json(layers[i].at("w"), {m.dims_[i], m.dims_[i + 1]});
    l.b = tensor_from_json(layers[i].at("b"), {m.dims_[i + 1]});
    m.layers_.push_back(std::move(l));
  }
  return m;
}

RepresentationNet RepresentationNet::make_mlp(int in_dim, std::vector<int> hidden, int z_dim,
                                              std::uint64_t seed) {
  RepresentationNet net;
  net.arch_ = Arch::mlp;
  net.z_dim_ = z_dim;
  std::vector<int> dims = {in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(z_dim);
  // tanh throughout keeps z bounded for 2-D plotting
  net.mlp_ = Mlp(std::move(dims), Mlp::Act::tanh, /*activate_output=*/true, seed);
  return net;
}

RepresentationNet RepresentationNet::make_smallconv(int in_channels, int height, int width,
                                                    int c1, int c2, int z_dim,
                                                    std::uint64_t seed) {
  if (height % 4 != 0 || width % 4 != 0)
    throw std::invalid_argument("smallconv: height/width must be divisible by 4 (two pools)");
  RepresentationNet net;
  net.arch_ = Arch::smallconv;
  net.z_dim_ = z_dim;
  net.in_channels_ = in_channels;
  net.height_ = height;
  net.width_ = width;
  net.c1_ = c1;
  net.c2_ = c2;
  std::mt19937_64 rng(seed);
  net.k1_ = glorot({c1, in_channels, 3, 3}, in_channels * 9, c1 * 9, rng);
  net.cb1_ = Tensor::zeros({c1}, true);
  net.k2_ = glorot({c2, c1, 3, 3}, c1 * 9, c2 * 9, rng);
  net.cb2_ = Tensor::zeros({c2}, true);
  const int flat = c2 * (height / 4) * (width / 4);
  net.fc_ = Linear::init(flat, z_dim, rng);
  return net;
}

Tensor RepresentationNet::forward(const Tensor& x) const {
  if (arch_ == Arch::mlp) return mlp_.forward(x);
  if (x.shape().size() != 4 || x.shape()[1] != in_channels_ || x.shape()[2] != height_ ||
      x.shape()[3] != width_)
    throw ShapeError("smallconv: expected [N," + std::to_string(in_channels_) + "," +
                     std::to_string(height_) + "," + std::to_string(width_) + "], got " +
                     shape_str(x.shape()));
  const int n = x.shape()[0];
  Tensor h = maxpool2x2(relu(add(conv2d(x, k1_), cb1_)));
  h = maxpool2x2(relu(add(conv2d(h, k2_), cb2_)));
  h = reshape(h, {n, c2_ * (height_ / 4) * (width_ / 4)});
  return fc_.forward(h);
}

std::vector<Tensor> RepresentationNet::parameters() const {
  if (arch_ == Arch::mlp) return mlp_.parameters();
  return {k1_, cb1_, k2_, cb2_, fc_.w, fc_.b};
}

json RepresentationNet::to_json() const {
  if (arch_ == Arch::mlp) return {{"arch", "mlp"}, {"z_dim", z_dim_}, {"mlp", mlp_.to_json()}};
  return {{"arch", "smallconv"},
          {"z_dim", z_dim_},
          {"in_channels", in_channels_},
          {"height", height_},
          {"width", width_},
          {"c1", c1_},
          {"c2", c2_},
          {"k1", tensor_to_json(k1_)},
          {"cb1", tensor_to_json(cb1_)},
          {"k2", tensor_to_json(k2_)},
          {"cb2", tensor_to_json(cb2_)},
          {"fc_w", tensor_to_json(fc_.w)},
          {"fc_b", tensor_to_json(fc_.b)}};
}

RepresentationNet RepresentationNet::from_json(const json& j) {
  RepresentationNet net;
  net.z_dim_ = j.at("z_dim").get<int>();
  const std::string arch = j.at("arch").get<std::string>();
  if (arch == "mlp") {
    net.arch_ = Arch::mlp;
    net.mlp_ = Mlp::from_json(j.at("mlp"));
    return net;
  }
  if (arch != "smallconv") throw std::invalid_argument("checkpoint: unknown arch " + arch);
  net.arch_ = Arch::smallconv;
  net.in_channels_ = j.at("in_channels").get<int>();
  net.height_ = j.at("height").get<int>();
  net.width_ = j.at("width").get<int>();
  net.c1_ = j.at("c1").get<int>();
  net.c2_ = j.at("c2").get<int>();
  net.k1_ = tensor_from_json(j.at("k1"), {net.c1_, net.in_channels_, 3, 3});
  net.cb1_ = tensor_from_json(j.at("cb1"), {net.c1_});
  net.k2_ = tensor_from_json(j.at("k2"), {net.c2_, net.c1_, 3, 3});
  net.cb2_ = tensor_from_json(j.at("cb2"), {net.c2_});
  const int flat = net.c2_ * (net.height_ / 4) * (net.width_ / 4);
  net.fc_.w = tensor_from_json(j.at("fc_w"), {flat, net.z_dim_});
  net.fc_.b = tensor_from_json(j.at("fc_b"), {net.z_dim_});
  return net;
}

ClassifierHead::ClassifierHead(int z_dim, int num_classes, std::uint64_t seed)
    : z_dim_(z_dim), num_classes_(num_classes) {
  std::mt19937_64 rng(seed);
  fc_ = Linear::init(z_dim, num_classes, rng);
}

Tensor ClassifierHead::forward(const Tensor& z) const {
  if (z.shape().size() != 2 || z.shape()[1] != z_dim_)
    throw ShapeError("ClassifierHead: expected [batch," + std::to_string(z_dim_) + "], got " +
                     shape_str(z.shape()));
  return fc_.forward(z);
}

json ClassifierHead::to_json() const {
  return {{"z_dim", z_dim_},
          {"num_classes", num_classes_},
          {"w", tensor_to_json(fc_.w)},
          {"b", tensor_to_json(fc_.b)}};
}

ClassifierHead ClassifierHead::from_json(const json& j) {
  ClassifierHead h;
  h.z_dim_ = j.at("z_dim").get<int>();
  h.num_classes_ = j.at("num_classes").get<int>();
  h.fc_.w = tensor_from_json(j.at("w"), {h.z_dim_, h.num_classes_});
  h.fc_.b = tensor_from_json(j.at("b"), {h.num_classes_});
  return h;
}

std::vector<Tensor> TrainedModel::parameters() const {
  auto ps = rep.parameters();
  for (auto& p : head.parameters()) ps.push_back(p);
  return ps;
}

json TrainedModel::to_json() const {
  return {{"format", "dir-model"},
          {"version", 1},
          {"rep", rep.to_json()},
          {"head", head.to_json()},
          {"meta", {{"config_hash", config_hash}, {"seed", seed}, {"epochs", epochs}}}};
}

TrainedModel TrainedModel::from_json(const json& j) {
  if (j.at("format").get<std::string>() != "dir-model" || j.at("version").get<int>() != 1)
    throw std::invalid_argument("checkpoint: unknown format/version");
  TrainedModel m;
  m.rep = RepresentationNet::from_json(j.at("rep"));
  m.head = ClassifierHead::from_json(j.at("head"));
  const auto& meta = j.at("meta");
  m.config_hash = meta.at("config_hash").get<std::string>();
  m.seed = meta.at("seed").get<std::uint64_t>();
  m.epochs = meta.at("epochs").get<int>();
  if (m.rep.z_dim() != m.head.z_dim())
    throw std::invalid_argument("checkpoint: rep/head z_dim mismatch");
  return m;
}

void TrainedModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << to_json().dump();
}

TrainedModel TrainedModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  return from_json(json::parse(in));
}

}  // namespace dir
