#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "dir/nets.hpp"

using namespace dir;

TEST_CASE("mlp with zero weights maps everything to zero") {
  auto net = RepresentationNet::make_mlp(2, {8}, 4, 1);
  for (auto& p : net.parameters())
    std::fill(p.mutable_value().begin(), p.mutable_value().end(), 0.0);
  Tensor x({3, 2}, {1.0, -2.0, 0.5, 0.0, 7.0, 3.0});
  Tensor z = net.forward(x);
  REQUIRE(z.shape() == Shape{3, 4});
  for (double v : z.value()) CHECK(v == 0.0);
}

TEST_CASE("identical inputs give identical representations") {
  auto net = RepresentationNet::make_mlp(2, {16, 16}, 2, 7);
  Tensor x({2, 2}, {0.3, -0.4, 0.3, -0.4});
  Tensor z = net.forward(x);
  CHECK(z.value()[0] == z.value()[2]);
  CHECK(z.value()[1] == z.value()[3]);
}

TEST_CASE("smallconv maps a 28x28 image to a 64-dim representation") {
  auto net = RepresentationNet::make_smallconv(1, 28, 28, 32, 64, 64, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> img(2 * 28 * 28);
  for (auto& v : img) v = u(rng);
  Tensor z = net.forward(Tensor({2, 1, 28, 28}, img));
  CHECK(z.shape() == Shape{2, 64});
  for (double v : z.value()) CHECK(std::isfinite(v));
}

TEST_CASE("zero-weight head gives the uniform-softmax cross-entropy") {
  ClassifierHead head(8, 10, 9);
  for (auto& p : head.parameters())
    std::fill(p.mutable_value().begin(), p.mutable_value().end(), 0.0);
  Tensor z = Tensor::full({4, 8}, 0.37);
  Tensor logits = head.forward(z);
  REQUIRE(logits.shape() == Shape{4, 10});
  Tensor loss = softmax_cross_entropy(logits, {1, 2, 3, 4});
  CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  ClassifierHead two(8, 2, 9);
  CHECK(two.forward(z).shape() == Shape{4, 2});
}

TEST_CASE("head rejects mismatched widths") {
  ClassifierHead head(8, 3, 1);
  CHECK_THROWS_AS((void)head.forward(Tensor::zeros({4, 5})), ShapeError);
  auto net = RepresentationNet::make_mlp(2, {8}, 4, 1);
  CHECK_THROWS_AS((void)net.forward(Tensor::zeros({4, 3})), ShapeError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TrainedModel m;
  m.rep = RepresentationNet::make_mlp(2, {32, 32}, 2, 11);
  m.head = ClassifierHead(2, 3, 12);
  m.config_hash = "abc123";
  m.seed = 99;
  m.epochs = 17;

  const std::string path = "test_ckpt.json";
  m.save(path);
  TrainedModel back = TrainedModel::load(path);
  std::remove(path.c_str());

  auto pa = m.parameters(), pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].shape() == pb[i].shape());
    for (size_t k = 0; k < pa[i].value().size(); ++k)
      CHECK(pa[i].value()[k] == pb[i].value()[k]);
  }
  CHECK(back.config_hash == "abc123");
  CHECK(back.seed == 99);
  CHECK(back.epochs == 17);
  // and the serialized form itself is stable
  CHECK(m.to_json().dump() == back.to_json().dump());
}

TEST_CASE("loading rejects corrupted shapes") {
  TrainedModel m;
  m.rep = RepresentationNet::make_mlp(2, {4}, 2, 1);
  m.head = ClassifierHead(2, 2, 2);
  auto j = m.to_json();
  j["head"]["z_dim"] = 5;
  CHECK_THROWS(TrainedModel::from_json(j));
}
