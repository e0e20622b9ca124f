#include "dir/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

namespace dir {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (invariance_weight < 0.0)
    throw std::invalid_argument("TrainConfig: invariance weight must be >= 0");
  const double lr = std::holds_alternative<SgdConfig>(optimizer)
                        ? std::get<SgdConfig>(optimizer).lr
                        : std::get<AdamConfig>(optimizer).lr;
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
}

json TrainReport::to_json() const {
  json eps = json::array();
  for (const auto& e : epochs)
    eps.push_back({{"cls_loss", e.cls_loss},
                   {"inv_loss", e.inv_loss},
                   {"total_loss", e.total_loss},
                   {"accuracy", e.accuracy}});
  return {{"epochs", eps}, {"wall_ms", wall_ms}};
}

void TrainReport::write_curves_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,cls_loss,inv_loss,acc\n";
  out.precision(17);
  for (size_t i = 0; i < epochs.size(); ++i)
    out << i + 1 << "," << epochs[i].cls_loss << "," << epochs[i].inv_loss << ","
        << epochs[i].accuracy << "\n";
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor> params)
    : config_(std::move(config)), params_(std::move(params)) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  ++t_;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].mutable_value();
    if (!params_[i].has_grad()) continue;  // parameter unused this step
    const auto& g = params_[i].node()->grad;
    if (g.size() != p.size()) throw ShapeError("optimizer: gradient shape mismatch");
    if (std::holds_alternative<SgdConfig>(config_)) {
      const auto& c = std::get<SgdConfig>(config_);
      for (size_t k = 0; k < p.size(); ++k) {
        const double grad = g[k] + c.weight_decay * p[k];
        m_[i][k] = c.momentum * m_[i][k] + grad;
        p[k] -= c.lr * m_[i][k];
      }
    } else {
      const auto& c = std::get<AdamConfig>(config_);
      const double bc1 = 1.0 - std::pow(c.beta1, t_);
      const double bc2 = 1.0 - std::pow(c.beta2, t_);
      for (size_t k = 0; k < p.size(); ++k) {
        m_[i][k] = c.beta1 * m_[i][k] + (1.0 - c.beta1) * g[k];
        v_[i][k] = c.beta2 * v_[i][k] + (1.0 - c.beta2) * g[k] * g[k];
        p[k] -= c.lr * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + c.eps);
      }
    }
  }
}

Tensor batch_tensor(const NdArray& xs, const std::vector<int>& idx) {
  Shape shape = xs.shape;
  shape[0] = static_cast<int>(idx.size());
  const auto ss = xs.sample_size();
  std::vector<double> data(static_cast<size_t>(idx.size()) * ss);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(xs.row(idx[i]), ss, data.data() + i * ss);
  return Tensor(std::move(shape), std::move(data));
}

namespace {

NdArray batch_ndarray(const NdArray& xs, const std::vector<int>& idx) {
  Shape shape = xs.shape;
  shape[0] = static_cast<int>(idx.size());
  const auto ss = xs.sample_size();
  NdArray out = NdArray::zeros(shape);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(xs.row(idx[i]), ss, out.row(static_cast<int>(i)));
  return out;
}

int argmax_row(const std::vector<double>& v, int row, int width) {
  int best = 0;
  for (int j = 1; j < width; ++j)
    if (v[static_cast<size_t>(row) * width + j] > v[static_cast<size_t>(row) * width + best])
      best = j;
  return best;
}

TrainReport train_loop(const std::vector<LabeledDomain>& domains,
                       const TransformProvider& transforms, TrainedModel& model,
                       const TrainConfig& config) {
  config.validate();
  if (domains.empty()) throw std::invalid_argument("train: no source domains");
  const int num_domains = static_cast<int>(domains.size());
  const double lambda = config.invariance_weight;

  std::int64_t total = 0;
  for (const auto& d : domains) total += d.size();
  const int steps = static_cast<int>((total + config.batch_size - 1) / config.batch_size);

  Optimizer opt(config.optimizer, model.parameters());
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> pick_domain(0, num_domains - 1);

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochStats stats;
    std::int64_t correct = 0, seen = 0;
    for (int step = 0; step < steps; ++step) {
      const int d = pick_domain(rng);
      const auto& dom = domains[d];
      std::uniform_int_distribution<int> pick_sample(0, dom.size() - 1);
      std::vector<int> idx(config.batch_size);
      for (auto& i : idx) i = pick_sample(rng);
      // d' != d, drawn even when unused so schedules stay comparable
      int d2 = -1;
      if (num_domains >= 2) {
        std::uniform_int_distribution<int> pick_other(0, num_domains - 2);
        d2 = pick_other(rng);
        if (d2 >= d) ++d2;
      }

      Tensor x = batch_tensor(dom.xs, idx);
      std::vector<int> labels(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) labels[i] = dom.ys[idx[i]];

      Tensor z = model.rep.forward(x);
      Tensor logits = model.head.forward(z);
      Tensor cls = softmax_cross_entropy(logits, labels);

      Tensor loss = cls;
      double inv_val = 0.0;
      if (lambda > 0.0 && d2 >= 0) {
        NdArray transported = transforms(dom.domain_id, domains[d2].domain_id)
                                  .apply(batch_ndarray(dom.xs, idx));
        Tensor zt = model.rep.forward(Tensor(transported.shape, std::move(transported.data)));
        Tensor inv = scale(sq_l2_norm(sub(z, zt)), 1.0 / static_cast<double>(idx.size()));
        inv_val = inv.item();
        loss = add(cls, scale(inv, lambda));
      }
      if (!std::isfinite(loss.item()))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                           " step " + std::to_string(step + 1) +
                           " (cls=" + std::to_string(cls.item()) +
                           ", inv=" + std::to_string(inv_val) + ")");

      opt.zero_grad();
      backward(loss);
      opt.step();

      stats.cls_loss += cls.item();
      stats.inv_loss += inv_val;
      stats.total_loss += loss.item();
      const int width = model.head.num_classes();
      for (size_t i = 0; i < idx.size(); ++i)
        if (argmax_row(logits.value(), static_cast<int>(i), width) == labels[i]) ++correct;
      seen += static_cast<std::int64_t>(idx.size());
    }
    stats.cls_loss /= steps;
    stats.inv_loss /= steps;
    stats.total_loss /= steps;
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    report.epochs.push_back(stats);
  }
  report.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  model.seed = config.seed;
  model.epochs = config.epochs;
  return report;
}

}  // namespace

TrainReport dir_train(const std::vector<LabeledDomain>& domains,
                      const TransformProvider& transforms, TrainedModel& model,
                      const TrainConfig& config) {
  if (domains.size() < 2)
    throw std::invalid_argument("dir_train: need at least 2 source domains");
  return train_loop(domains, transforms, model, config);
}

TrainReport deepall_train(const std::vector<LabeledDomain>& domains, TrainedModel& model,
                          const TrainConfig& config) {
  TrainConfig c = config;
  c.invariance_weight = 0.0;
  return train_loop(domains, identity_provider(), model, c);
}

}  // namespace dir
