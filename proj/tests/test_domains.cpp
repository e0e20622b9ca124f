#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "dir/domains.hpp"

using namespace dir;

namespace {

constexpr double kPi = std::numbers::pi;

// Minimal IDX writer for synthetic fixtures.
void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void write_idx_pair(const std::string& img_path, const std::string& lab_path,
                    const std::vector<unsigned char>& pixels, const std::vector<unsigned char>& labels,
                    std::uint32_t img_magic = 2051, std::uint32_t lab_magic = 2049,
                    int declared_count = -1) {
  const int n = static_cast<int>(labels.size());
  std::ofstream img(img_path, std::ios::binary);
  write_be32(img, img_magic);
  write_be32(img, declared_count < 0 ? n : declared_count);
  write_be32(img, 28);
  write_be32(img, 28);
  img.write(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  std::ofstream lab(lab_path, std::ios::binary);
  write_be32(lab, lab_magic);
  write_be32(lab, n);
  lab.write(reinterpret_cast<const char*>(labels.data()), labels.size());
}

// Centered blob images so rotation keeps mass away from the borders.
RawMnist synthetic_raw(int per_class, int classes = 10, std::uint64_t seed = 9) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> off(-4.0, 4.0);
  const int n = per_class * classes;
  RawMnist raw;
  raw.images = NdArray::zeros({n, 1, 28, 28});
  raw.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    raw.labels[i] = i % classes;
    const double cy = 13.5 + off(rng), cx = 13.5 + off(rng);
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        raw.images.data[(static_cast<size_t>(i) * 28 + y) * 28 + x] = std::exp(-d2 / 12.0);
      }
  }
  return raw;
}

}  // namespace

TEST_CASE("circle domains lie exactly on their radius") {
  auto doms = gen_circles(50, {2.0, 3.0}, {0.0, 0.0}, 2, 7);
  REQUIRE(doms.size() == 2);
  for (int i = 0; i < doms[0].size(); ++i) {
    const double r = std::hypot(doms[0].xs.data[2 * i], doms[0].xs.data[2 * i + 1]);
    CHECK(std::abs(r - 2.0) < 1e-12);
  }
  for (int i = 0; i < doms[1].size(); ++i) {
    const double r = std::hypot(doms[1].xs.data[2 * i], doms[1].xs.data[2 * i + 1]);
    CHECK(std::abs(r - 3.0) < 1e-12);
  }
}

TEST_CASE("classes partition the circle by angular arc") {
  const double off = 0.4;
  auto doms = gen_circles(40, {2.0}, {off}, 3, 11);
  auto law = DensityModel::uniform_circle(2.0, 3, off);
  for (int i = 0; i < doms[0].size(); ++i) {
    const double angle = std::atan2(doms[0].xs.data[2 * i + 1], doms[0].xs.data[2 * i]);
    CHECK(law.class_of_angle(angle) == doms[0].ys[i]);
  }
}

TEST_CASE("equal offsets align class arcs across domains after normalization") {
  auto doms = gen_circles(60, {2.0, 3.0}, {0.5, 0.5}, 4, 3);
  auto law = DensityModel::uniform_circle(1.0, 4, 0.5);
  for (const auto& d : doms)
    for (int i = 0; i < d.size(); ++i) {
      const double angle = std::atan2(d.xs.data[2 * i + 1], d.xs.data[2 * i]);
      CHECK(law.class_of_angle(angle) == d.ys[i]);
    }
}

TEST_CASE("opposite offsets swap the class regions") {
  auto doms = gen_circles(60, {2.0, 3.0}, {0.0, kPi}, 2, 3);
  auto law0 = DensityModel::uniform_circle(1.0, 2, 0.0);
  // every domain-2 sample normalizes into the *other* class's arc of domain 1
  for (int i = 0; i < doms[1].size(); ++i) {
    const double angle = std::atan2(doms[1].xs.data[2 * i + 1], doms[1].xs.data[2 * i]);
    CHECK(law0.class_of_angle(angle) == 1 - doms[1].ys[i]);
  }
}

TEST_CASE("gen_circles rejects degenerate inputs") {
  CHECK_THROWS_AS((void)gen_circles(0, {2.0}, {0.0}, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)gen_circles(10, {2.0}, {0.0}, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)gen_circles(10, {-2.0}, {0.0}, 2, 1), std::invalid_argument);
}

TEST_CASE("rotated mixture: angle-0 domain reproduces base samples") {
  auto base = DensityModel::gaussian_mixture({
      {0.5, {2.0, 0.0}, {0.2, 0.0, 0.0, 0.2}},
      {0.5, {-2.0, 0.0}, {0.2, 0.0, 0.0, 0.2}},
  });
  const std::uint64_t seed = 21;
  auto doms = gen_rotated_mixture(base, {0.0, kPi / 3}, 30, seed);
  std::mt19937_64 rng(seed);  // domain 0 stream
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 30; ++i) {
      Vec2 x = base.sample_class(c, rng);
      const int idx = c * 30 + i;
      CHECK(doms[0].xs.data[2 * idx] == x[0]);
      CHECK(doms[0].xs.data[2 * idx + 1] == x[1]);
    }
}

TEST_CASE("rotated mixture: class frequencies equal and means rotate") {
  auto base = DensityModel::gaussian_mixture({
      {0.5, {2.0, 0.0}, {0.3, 0.0, 0.0, 0.3}},
      {0.5, {0.0, 2.0}, {0.3, 0.0, 0.0, 0.3}},
  });
  const int n = 400;
  auto doms = gen_rotated_mixture(base, {0.0, 0.9}, n, 5);
  for (const auto& d : doms) {
    auto h = d.class_histogram();
    REQUIRE(h.size() == 2);
    CHECK(h[0] == n);
    CHECK(h[1] == n);
  }
  // empirical class means vs rotated base means, within 3 standard errors
  auto rot = Transform::rotation2d(0.9);
  const double se = std::sqrt(0.3 / n);
  for (int c = 0; c < 2; ++c) {
    double mx = 0, my = 0;
    for (int i = 0; i < doms[1].size(); ++i)
      if (doms[1].ys[i] == c) {
        mx += doms[1].xs.data[2 * i];
        my += doms[1].xs.data[2 * i + 1];
      }
    mx /= n;
    my /= n;
    Vec2 expect = rot.apply_point(base.components()[c].mean);
    CHECK(std::abs(mx - expect[0]) < 3 * se);
    CHECK(std::abs(my - expect[1]) < 3 * se);
  }
}

TEST_CASE("generated datasets are reproducible byte-for-byte") {
  auto a = gen_circles(25, {2.0, 3.0}, {0.0, 1.0}, 3, 77);
  auto b = gen_circles(25, {2.0, 3.0}, {0.0, 1.0}, 3, 77);
  for (size_t d = 0; d < a.size(); ++d) {
    CHECK(a[d].xs == b[d].xs);
    CHECK(a[d].ys == b[d].ys);
  }
}

TEST_CASE("class histograms are identical across domains of one experiment") {
  auto doms = gen_circles(30, {1.0, 2.0, 3.0}, {0.0, 0.3, 0.6}, 5, 13);
  auto h0 = doms[0].class_histogram();
  for (const auto& d : doms) CHECK(d.class_histogram() == h0);
}

TEST_CASE("IDX loader handles the published format and its failure modes") {
  const std::string img = "t_images.idx", lab = "t_labels.idx";
  std::vector<unsigned char> pixels(3 * 784, 0);
  pixels[0] = 255;
  pixels[1] = 128;
  std::vector<unsigned char> labels = {3, 1, 4};

  write_idx_pair(img, lab, pixels, labels);
  RawMnist raw = load_mnist(img, lab);
  CHECK(raw.images.shape == Shape{3, 1, 28, 28});
  CHECK(raw.images.data[0] == 1.0);  // 255 -> 1.0
  CHECK(raw.images.data[1] == doctest::Approx(128.0 / 255.0));
  CHECK(raw.labels == std::vector<int>{3, 1, 4});

  write_idx_pair(img, lab, pixels, labels, 1234, 2049);
  CHECK_THROWS_AS((void)load_mnist(img, lab), DataError);
  write_idx_pair(img, lab, pixels, labels, 2051, 7);
  CHECK_THROWS_AS((void)load_mnist(img, lab), DataError);
  write_idx_pair(img, lab, pixels, labels, 2051, 2049, /*declared_count=*/5);
  CHECK_THROWS_AS((void)load_mnist(img, lab), DataError);  // count mismatch vs labels
  {
    std::ofstream trunc(img, std::ios::binary);
    write_be32(trunc, 2051);
  }
  CHECK_THROWS_AS((void)load_mnist(img, lab), DataError);
  std::remove(img.c_str());
  std::remove(lab.c_str());
}

TEST_CASE("rotated digit domains: counts, zero-rotation identity, mass preservation") {
  RawMnist raw = synthetic_raw(120);
  auto doms = build_rotated_mnist(raw, 42);
  REQUIRE(doms.size() == 6);
  for (const auto& d : doms) {
    CHECK(d.size() == 1000);
    for (int c : d.class_histogram()) CHECK(c == 100);
  }
  // M_0 must be pixel-identical to the sampled subset: rebuild and compare
  auto doms2 = build_rotated_mnist(raw, 42);
  CHECK(doms[0].xs == doms2[0].xs);

  double m0 = 0, m45 = 0;
  for (double v : doms[0].xs.data) m0 += v;
  for (double v : doms[3].xs.data) m45 += v;
  CHECK(std::abs(m45 - m0) / m0 < 0.10);

  CHECK_THROWS_AS((void)build_rotated_mnist(synthetic_raw(50), 1), DataError);
}

TEST_CASE("ground-truth providers transport class-conditional geometry") {
  auto doms = gen_circles(10, {2.0, 3.0}, {0.2, 1.2}, 2, 5);
  auto provider = ground_truth_provider(doms);
  auto f01 = provider(0, 1);
  // a point on circle 0 at class angle a maps to circle 1 at a + offset delta
  Vec2 x = {2.0 * std::cos(0.3), 2.0 * std::sin(0.3)};
  Vec2 y = f01.apply_point(x);
  CHECK(std::hypot(y[0], y[1]) == doctest::Approx(3.0));
  CHECK(std::atan2(y[1], y[0]) == doctest::Approx(0.3 + 1.0));

  auto mix = gen_rotated_mixture(DensityModel::gaussian_mixture({{1.0, {1, 0}, {0.1, 0, 0, 0.1}},
                                                                 {1.0, {-1, 0}, {0.1, 0, 0, 0.1}}}),
                                 {0.0, 0.5}, 5, 1);
  auto fm = ground_truth_provider(mix)(1, 0);
  Vec2 p = fm.apply_point({std::cos(0.5), std::sin(0.5)});
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS((void)provider(0, 9), UnsupportedOperation);
  CHECK(identity_provider()(0, 1).kind() == Transform::Kind::identity);
}

TEST_CASE("split validation") {
  ExperimentSplit s{{0, 1}, 2, 0.9};
  CHECK_NOTHROW(s.validate());
  s.target_id = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("image container round-trips") {
  RawMnist raw = synthetic_raw(12, 10, 3);
  auto doms = build_rotated_mnist(raw, 8, /*per_class=*/10, {0, 30});
  const std::string path = "t_dom.bin";
  save_domain_images(doms[1], path);
  LabeledDomain back = load_domain_images(path);
  std::remove(path.c_str());
  CHECK(back.domain_id == doms[1].domain_id);
  CHECK(back.xs == doms[1].xs);
  CHECK(back.ys == doms[1].ys);
}
