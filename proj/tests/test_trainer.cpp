#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dir/trainer.hpp"

using namespace dir;

namespace {

TrainedModel make_point_model(std::uint64_t seed) {
  TrainedModel m;
  m.rep = RepresentationNet::make_mlp(2, {16}, 8, seed);
  m.head = ClassifierHead(8, 2, seed + 1);
  return m;
}

std::vector<LabeledDomain> two_circle_domains() {
  return gen_circles(40, {2.0, 3.0}, {0.0, 0.0}, 2, 11);
}

double max_param_diff(const TrainedModel& a, const TrainedModel& b) {
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  double worst = 0.0;
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].size() == pb[i].size());
    for (std::int64_t k = 0; k < pa[i].size(); ++k)
      worst = std::max(worst, std::abs(pa[i].value()[k] - pb[i].value()[k]));
  }
  return worst;
}

}  // namespace

TEST_CASE("config validation rejects bad values") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.invariance_weight = -0.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.optimizer = SgdConfig{.lr = 0.0};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("sgd step matches hand-computed update with momentum") {
  // p = [1, 2], grad = [0.5, -1], lr = 0.1, mu = 0.9, wd = 0.
  // step 1: v = g, p -= lr*v  -> [0.95, 2.1]
  // step 2 (same grad): v = 0.9*g + g = 1.9*g, p -> [0.855, 2.29]
  Tensor p({2}, {1.0, 2.0}, true);
  Optimizer opt(SgdConfig{.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0}, {p});
  auto run_step = [&] {
    opt.zero_grad();
    Tensor loss = sum(mul(p, Tensor({2}, {0.5, -1.0})));
    backward(loss);
    opt.step();
  };
  run_step();
  CHECK(p.value()[0] == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(p.value()[1] == doctest::Approx(2.1).epsilon(1e-12));
  run_step();
  CHECK(p.value()[0] == doctest::Approx(0.855).epsilon(1e-12));
  CHECK(p.value()[1] == doctest::Approx(2.29).epsilon(1e-12));
}

TEST_CASE("sgd weight decay adds wd * p to the gradient") {
  // grad = 0, wd = 0.1, lr = 0.1, mu = 0: p -> p - lr*wd*p = 0.99 * p
  Tensor p({1}, {5.0}, true);
  Optimizer opt(SgdConfig{.lr = 0.1, .momentum = 0.0, .weight_decay = 0.1}, {p});
  opt.zero_grad();
  Tensor loss = scale(sum(p), 0.0);
  backward(loss);
  opt.step();
  CHECK(p.value()[0] == doctest::Approx(5.0 * 0.99).epsilon(1e-12));
}

TEST_CASE("adam first step moves by ~lr regardless of gradient scale") {
  // With bias correction, step 1 gives p -= lr * g/(|g| + eps') ~= lr * sign(g).
  for (double g : {0.001, 1.0, 250.0}) {
    Tensor p({1}, {0.0}, true);
    Optimizer opt(AdamConfig{.lr = 0.01}, {p});
    opt.zero_grad();
    Tensor loss = scale(sum(p), g);
    backward(loss);
    opt.step();
    CHECK(p.value()[0] == doctest::Approx(-0.01).epsilon(1e-4));
  }
}

TEST_CASE("adam matches a hand-rolled two-step reference") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double ref = 3.0, m = 0.0, v = 0.0;
  Tensor p({1}, {3.0}, true);
  Optimizer opt(AdamConfig{.lr = lr, .beta1 = b1, .beta2 = b2, .eps = eps}, {p});
  for (int t = 1; t <= 2; ++t) {
    const double g = 2.0 * ref;  // d/dp p^2 at the reference point
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    ref -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);

    opt.zero_grad();
    Tensor loss = sum(mul(p, p));
    backward(loss);
    opt.step();
    CHECK(p.value()[0] == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("optimizer skips parameters that received no gradient") {
  Tensor used({1}, {1.0}, true);
  Tensor unused({1}, {7.0}, true);
  Optimizer opt(SgdConfig{.lr = 0.1, .momentum = 0.0}, {used, unused});
  opt.zero_grad();
  backward(sum(used));
  opt.step();
  CHECK(used.value()[0] == doctest::Approx(0.9));
  CHECK(unused.value()[0] == 7.0);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto domains = two_circle_domains();
  auto provider = ground_truth_provider(domains);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 42;

  auto m1 = make_point_model(5);
  auto m2 = make_point_model(5);
  auto r1 = dir_train(domains, provider, m1, c);
  auto r2 = dir_train(domains, provider, m2, c);
  CHECK(max_param_diff(m1, m2) == 0.0);
  REQUIRE(r1.epochs.size() == r2.epochs.size());
  for (size_t e = 0; e < r1.epochs.size(); ++e) {
    CHECK(r1.epochs[e].cls_loss == r2.epochs[e].cls_loss);
    CHECK(r1.epochs[e].inv_loss == r2.epochs[e].inv_loss);
  }
}

TEST_CASE("deepall equals dir_train with zero invariance weight, bit for bit") {
  auto domains = two_circle_domains();
  auto provider = ground_truth_provider(domains);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 7;

  auto m_deepall = make_point_model(3);
  deepall_train(domains, m_deepall, c);

  c.invariance_weight = 0.0;
  auto m_dir = make_point_model(3);
  dir_train(domains, provider, m_dir, c);

  CHECK(max_param_diff(m_deepall, m_dir) == 0.0);
}

TEST_CASE("identity transforms give exactly zero invariance loss") {
  auto domains = two_circle_domains();
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 16;
  c.seed = 9;
  auto m = make_point_model(2);
  auto report = dir_train(domains, identity_provider(), m, c);
  CHECK(report.final_epoch().inv_loss == 0.0);
}

TEST_CASE("total loss decomposes as cls + lambda * inv") {
  auto domains = two_circle_domains();
  auto provider = ground_truth_provider(domains);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 16;
  c.seed = 13;
  c.invariance_weight = 2.5;
  auto m = make_point_model(4);
  auto report = dir_train(domains, provider, m, c);
  const auto& e = report.final_epoch();
  CHECK(e.total_loss ==
        doctest::Approx(e.cls_loss + c.invariance_weight * e.inv_loss).epsilon(1e-10));
  CHECK(e.inv_loss > 0.0);
}

TEST_CASE("dir_train requires two source domains") {
  auto domains = two_circle_domains();
  domains.resize(1);
  auto m = make_point_model(1);
  TrainConfig c;
  CHECK_THROWS_AS(dir_train(domains, identity_provider(), m, c), std::invalid_argument);
}

TEST_CASE("deepall fits a single linearly separable domain") {
  // One domain, two well-separated Gaussian blobs.
  DensityModel base = DensityModel::gaussian_mixture(
      {{0.5, {-3.0, 0.0}, {0.1, 0.0, 0.0, 0.1}}, {0.5, {3.0, 0.0}, {0.1, 0.0, 0.0, 0.1}}});
  auto domains = gen_rotated_mixture(base, {0.0}, 60, 21);
  TrainConfig c;
  c.epochs = 40;
  c.batch_size = 32;
  c.optimizer = AdamConfig{.lr = 0.01};
  c.seed = 1;
  auto m = make_point_model(6);
  auto report = deepall_train(domains, m, c);
  CHECK(report.final_epoch().accuracy > 0.95);
  CHECK(report.final_epoch().cls_loss < report.epochs.front().cls_loss);
}

TEST_CASE("invariance term drives representations together across domains") {
  DensityModel base = DensityModel::gaussian_mixture(
      {{0.5, {-3.0, 0.0}, {0.1, 0.0, 0.0, 0.1}}, {0.5, {3.0, 0.0}, {0.1, 0.0, 0.0, 0.1}}});
  auto domains = gen_rotated_mixture(base, {0.0, 1.0471975511965976}, 60, 33);
  auto provider = ground_truth_provider(domains);
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 32;
  c.optimizer = AdamConfig{.lr = 0.01};
  c.seed = 2;
  auto m = make_point_model(8);
  auto report = dir_train(domains, provider, m, c);
  CHECK(report.final_epoch().inv_loss < 0.25 * report.epochs.front().inv_loss);
  CHECK(report.final_epoch().accuracy > 0.9);
}

TEST_CASE("report round trip: json fields and curves csv") {
  TrainReport r;
  r.epochs = {{0.5, 0.1, 0.6, 0.7}, {0.4, 0.05, 0.45, 0.9}};
  r.wall_ms = 12.0;
  auto j = r.to_json();
  CHECK(j["epochs"].size() == 2);
  CHECK(j["epochs"][1]["accuracy"] == 0.9);

  const std::string path = "trainer_curves_test.csv";
  r.write_curves_csv(path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,cls_loss,inv_loss,acc");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 2);
  std::remove(path.c_str());
}
