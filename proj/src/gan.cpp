#include "dir/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace dir {

using nlohmann::json;

void GanConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("GanConfig: iterations must be >= 1");
  if (batch < 1) throw std::invalid_argument("GanConfig: batch must be >= 1");
  if (w_adv < 0.0 || w_cls < 0.0 || w_rec < 0.0)
    throw std::invalid_argument("GanConfig: loss weights must be >= 0");
  if (optimizer.lr <= 0.0) throw std::invalid_argument("GanConfig: lr must be > 0");
}

void GanReport::write_curves_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "step,d_loss,g_adv,g_cls,g_rec,g_total\n";
  for (size_t i = 0; i < steps.size(); ++i)
    out << i + 1 << "," << steps[i].d_loss << "," << steps[i].g_adv << "," << steps[i].g_cls
        << "," << steps[i].g_rec << "," << steps[i].g_total << "\n";
}

Generator::Generator(int data_dim, std::vector<int> domain_ids, std::vector<int> hidden,
                     std::uint64_t seed)
    : data_dim_(data_dim), domain_ids_(std::move(domain_ids)) {
  if (data_dim < 1) throw std::invalid_argument("Generator: data_dim must be >= 1");
  if (domain_ids_.size() < 2) throw std::invalid_argument("Generator: need >= 2 domains");
  std::vector<int> dims;
  dims.push_back(data_dim + 2 * static_cast<int>(domain_ids_.size()));
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(data_dim);
  mlp_ = Mlp(dims, Mlp::Act::tanh, false, seed);
  // Damp the output layer so the residual map starts close to identity.
  auto ps = mlp_.parameters();
  for (size_t i = ps.size() - 2; i < ps.size(); ++i)
    for (auto& v : ps[i].mutable_value()) v *= 0.1;
}

int Generator::domain_index(int domain_id) const {
  auto it = std::find(domain_ids_.begin(), domain_ids_.end(), domain_id);
  if (it == domain_ids_.end())
    throw std::invalid_argument("Generator: unknown domain id " + std::to_string(domain_id));
  return static_cast<int>(it - domain_ids_.begin());
}

Tensor Generator::forward(const Tensor& x, int d_from, int d_to) const {
  if (x.shape().size() != 2 || x.shape()[1] != data_dim_)
    throw ShapeError("Generator: expected [N," + std::to_string(data_dim_) + "] input");
  const int n = x.shape()[0];
  const int nd = static_cast<int>(domain_ids_.size());
  const int fi = domain_index(d_from), ti = domain_index(d_to);
  std::vector<double> onehot(static_cast<size_t>(n) * 2 * nd, 0.0);
  for (int i = 0; i < n; ++i) {
    onehot[static_cast<size_t>(i) * 2 * nd + fi] = 1.0;
    onehot[static_cast<size_t>(i) * 2 * nd + nd + ti] = 1.0;
  }
  Tensor cond({n, 2 * nd}, std::move(onehot));
  return add(x, mlp_.forward(concat_cols({x, cond})));
}

NdArray Generator::apply(const NdArray& x, int d_from, int d_to) const {
  Tensor out = forward(Tensor(x.shape, x.data), d_from, d_to);
  return NdArray(out.shape(), out.value());
}

json Generator::to_json() const {
  return {{"data_dim", data_dim_}, {"domain_ids", domain_ids_}, {"mlp", mlp_.to_json()}};
}

Generator Generator::from_json(const json& j) {
  Generator g;
  g.data_dim_ = j.at("data_dim").get<int>();
  g.domain_ids_ = j.at("domain_ids").get<std::vector<int>>();
  g.mlp_ = Mlp::from_json(j.at("mlp"));
  if (g.mlp_.dims().back() != g.data_dim_)
    throw std::invalid_argument("Generator: checkpoint output dimension mismatch");
  return g;
}

void Generator::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json().dump(2) << "\n";
}

Generator Generator::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  json j;
  in >> j;
  return from_json(j);
}

Discriminator::Discriminator(int data_dim, int num_domains, std::vector<int> hidden,
                             std::uint64_t seed) {
  if (hidden.empty()) throw std::invalid_argument("Discriminator: need a hidden layer");
  std::vector<int> dims;
  dims.push_back(data_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  trunk_ = Mlp(dims, Mlp::Act::relu, true, seed);
  std::mt19937_64 rng(seed ^ 0xD15C);
  adv_ = Linear::init(hidden.back(), 1, rng);
  cls_ = Linear::init(hidden.back(), num_domains, rng);
}

Tensor Discriminator::adv_logits(const Tensor& x) const { return adv_.forward(trunk_.forward(x)); }

Tensor Discriminator::domain_logits(const Tensor& x) const {
  return cls_.forward(trunk_.forward(x));
}

std::vector<Tensor> Discriminator::parameters() const {
  auto ps = trunk_.parameters();
  ps.push_back(adv_.w);
  ps.push_back(adv_.b);
  ps.push_back(cls_.w);
  ps.push_back(cls_.b);
  return ps;
}

namespace {

Tensor detach(const Tensor& t) { return Tensor(t.shape(), t.value()); }

void guard(double v, const char* what, int step) {
  if (!std::isfinite(v) || std::abs(v) > 1e3)
    throw NumericError(std::string("gan_train: ") + what + " diverged at step " +
                       std::to_string(step + 1) + " (value " + std::to_string(v) + ")");
}

}  // namespace

GanReport gan_train(const std::vector<LabeledDomain>& domains, Generator& g,
                    const GanConfig& config) {
  config.validate();
  if (domains.size() < 2) throw std::invalid_argument("gan_train: need >= 2 domains");
  const int nd = static_cast<int>(domains.size());
  for (const auto& dom : domains) g.domain_index(dom.domain_id);  // ids must be known

  Discriminator disc(g.data_dim(), nd, {64, 64}, config.seed ^ 0xD00D);
  Optimizer opt_g(config.optimizer, g.parameters());
  Optimizer opt_d(config.optimizer, disc.parameters());

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> pick_domain(0, nd - 1);

  GanReport report;
  for (int step = 0; step < config.iterations; ++step) {
    const int di = pick_domain(rng);
    const int ti = pick_domain(rng);  // target may equal source
    const auto& dom = domains[di];
    std::uniform_int_distribution<int> pick_sample(0, dom.size() - 1);
    std::vector<int> idx(config.batch);
    for (auto& i : idx) i = pick_sample(rng);
    Tensor x = batch_tensor(dom.xs, idx);
    const std::vector<int> from_labels(idx.size(), di);
    const std::vector<int> to_labels(idx.size(), ti);

    GanStepStats s;

    // discriminator: real/fake on real + detached fake, domain head on real
    {
      Tensor fake = detach(g.forward(x, dom.domain_id, domains[ti].domain_id));
      Tensor ones = Tensor::full({static_cast<int>(idx.size()), 1}, 1.0);
      Tensor zeros_t = Tensor::zeros({static_cast<int>(idx.size()), 1});
      Tensor d_loss = add(add(sigmoid_bce(disc.adv_logits(x), ones),
                              sigmoid_bce(disc.adv_logits(fake), zeros_t)),
                          scale(softmax_cross_entropy(disc.domain_logits(x), from_labels),
                                config.w_cls));
      s.d_loss = d_loss.item();
      guard(s.d_loss, "discriminator loss", step);
      opt_d.zero_grad();
      backward(d_loss);
      opt_d.step();
    }

    // generator: fool D, land in the target domain, close the cycle
    {
      Tensor fake = g.forward(x, dom.domain_id, domains[ti].domain_id);
      Tensor ones = Tensor::full({static_cast<int>(idx.size()), 1}, 1.0);
      Tensor adv = sigmoid_bce(disc.adv_logits(fake), ones);
      Tensor cls = softmax_cross_entropy(disc.domain_logits(fake), to_labels);
      Tensor cycled = g.forward(fake, domains[ti].domain_id, dom.domain_id);
      Tensor rec = scale(l1_norm(sub(x, cycled)), 1.0 / static_cast<double>(idx.size()));
      Tensor total = add(add(scale(adv, config.w_adv), scale(cls, config.w_cls)),
                         scale(rec, config.w_rec));
      s.g_adv = adv.item();
      s.g_cls = cls.item();
      s.g_rec = rec.item();
      s.g_total = total.item();
      guard(s.g_total, "generator loss", step);
      opt_g.zero_grad();
      backward(total);
      opt_g.step();
    }

    report.steps.push_back(s);
  }
  return report;
}

Transform as_transform(const Generator& g, int d_from, int d_to) {
  g.domain_index(d_from);
  g.domain_index(d_to);
  const std::string tag =
      "gan:" + std::to_string(d_from) + "->" + std::to_string(d_to);
  Generator copy = g;  // shares parameter storage; generator is immutable here
  return Transform::learned_gan(
      tag, [copy, d_from, d_to](const NdArray& x) { return copy.apply(x, d_from, d_to); });
}

TransformProvider learned_provider(const Generator& g) {
  return [g](int d_from, int d_to) { return as_transform(g, d_from, d_to); };
}

}  // namespace dir
