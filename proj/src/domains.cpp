#include "dir/domains.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

namespace dir {

using nlohmann::json;

int LabeledDomain::num_classes() const {
  int m = 0;
  for (int y : ys) m = std::max(m, y + 1);
  return m;
}

std::vector<int> LabeledDomain::class_histogram() const {
  std::vector<int> h(num_classes(), 0);
  for (int y : ys) ++h[y];
  return h;
}

void ExperimentSplit::validate() const {
  if (source_ids.empty()) throw std::invalid_argument("split: no source domains");
  for (int s : source_ids)
    if (s == target_id)
      throw std::invalid_argument("split: target domain appears among sources");
  if (train_fraction <= 0.0 || train_fraction > 1.0)
    throw std::invalid_argument("split: train_fraction out of (0,1]");
}

std::vector<LabeledDomain> gen_circles(int n_per_class, const std::vector<double>& radii,
                                       const std::vector<double>& arc_offsets, int num_classes,
                                       std::uint64_t seed) {
  if (n_per_class <= 0) throw std::invalid_argument("gen_circles: n_per_class must be positive");
  if (num_classes < 2) throw std::invalid_argument("gen_circles: need at least 2 classes");
  if (radii.size() != arc_offsets.size() || radii.empty())
    throw std::invalid_argument("gen_circles: radii/offsets size mismatch");
  for (double r : radii)
    if (r <= 0.0) throw std::invalid_argument("gen_circles: radii must be positive");

  const double arc = 2.0 * std::numbers::pi / num_classes;
  std::vector<LabeledDomain> out;
  for (size_t d = 0; d < radii.size(); ++d) {
    // per-domain RNG stream: independent samples across domains
    std::mt19937_64 rng(seed + d);
    std::uniform_real_distribution<double> u(0.0, arc);
    LabeledDomain dom;
    dom.domain_id = static_cast<int>(d);
    dom.seed = seed;
    dom.generator = {{"kind", "circles"},
                     {"radius", radii[d]},
                     {"arc_offset", arc_offsets[d]},
                     {"num_classes", num_classes},
                     {"n_per_class", n_per_class}};
    dom.xs = NdArray::zeros({n_per_class * num_classes, 2});
    dom.ys.resize(static_cast<size_t>(n_per_class) * num_classes);
    int idx = 0;
    for (int c = 0; c < num_classes; ++c)
      for (int i = 0; i < n_per_class; ++i, ++idx) {
        const double angle = arc_offsets[d] + c * arc + u(rng);
        dom.xs.data[2 * idx] = radii[d] * std::cos(angle);
        dom.xs.data[2 * idx + 1] = radii[d] * std::sin(angle);
        dom.ys[idx] = c;
      }
    out.push_back(std::move(dom));
  }
  return out;
}

std::vector<LabeledDomain> gen_rotated_mixture(const DensityModel& base,
                                               const std::vector<double>& angles,
                                               int n_per_class, std::uint64_t seed) {
  if (!base.is_mixture()) throw std::invalid_argument("gen_rotated_mixture: base must be a mixture");
  if (n_per_class <= 0) throw std::invalid_argument("gen_rotated_mixture: n_per_class must be positive");
  if (std::set<double>(angles.begin(), angles.end()).size() != angles.size())
    throw std::invalid_argument("gen_rotated_mixture: angles must be distinct");
  const int num_classes = base.num_classes();

  std::vector<LabeledDomain> out;
  for (size_t d = 0; d < angles.size(); ++d) {
    std::mt19937_64 rng(seed + d);
    auto rot = Transform::rotation2d(angles[d]);
    LabeledDomain dom;
    dom.domain_id = static_cast<int>(d);
    dom.seed = seed;
    dom.generator = {{"kind", "rotated_mixture"}, {"angle", angles[d]}};
    dom.xs = NdArray::zeros({n_per_class * num_classes, 2});
    dom.ys.resize(static_cast<size_t>(n_per_class) * num_classes);
    int idx = 0;
    for (int c = 0; c < num_classes; ++c)
      for (int i = 0; i < n_per_class; ++i, ++idx) {
        Vec2 x = rot.apply_point(base.sample_class(c, rng));
        dom.xs.data[2 * idx] = x[0];
        dom.xs.data[2 * idx + 1] = x[1];
        dom.ys[idx] = c;
      }
    out.push_back(std::move(dom));
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("truncated IDX file while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace

RawMnist load_mnist(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw DataError("cannot open " + images_path);
  if (read_be32(imgs, "image magic") != 2051)
    throw DataError(images_path + ": bad magic number (expected 2051)");
  const std::uint32_t n = read_be32(imgs, "image count");
  const std::uint32_t rows = read_be32(imgs, "rows");
  const std::uint32_t cols = read_be32(imgs, "cols");
  if (rows != 28 || cols != 28)
    throw DataError(images_path + ": expected 28x28 images");

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw DataError("cannot open " + labels_path);
  if (read_be32(labs, "label magic") != 2049)
    throw DataError(labels_path + ": bad magic number (expected 2049)");
  const std::uint32_t nl = read_be32(labs, "label count");
  if (nl != n)
    throw DataError("count mismatch: " + std::to_string(n) + " images vs " +
                    std::to_string(nl) + " labels");

  RawMnist raw;
  raw.images = NdArray::zeros({static_cast<int>(n), 1, 28, 28});
  raw.labels.resize(n);
  std::vector<unsigned char> buf(static_cast<size_t>(n) * 784);
  if (!imgs.read(reinterpret_cast<char*>(buf.data()), buf.size()))
    throw DataError(images_path + ": truncated pixel data");
  for (size_t i = 0; i < buf.size(); ++i) raw.images.data[i] = buf[i] / 255.0;
  std::vector<unsigned char> lbuf(n);
  if (!labs.read(reinterpret_cast<char*>(lbuf.data()), lbuf.size()))
    throw DataError(labels_path + ": truncated label data");
  for (std::uint32_t i = 0; i < n; ++i) {
    if (lbuf[i] > 9) throw DataError(labels_path + ": label out of range");
    raw.labels[i] = lbuf[i];
  }
  return raw;
}

std::vector<LabeledDomain> build_rotated_mnist(const RawMnist& raw, std::uint64_t seed,
                                               int per_class, std::vector<double> degrees) {
  const int n = raw.images.rows();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> count(10, 0);
  std::vector<int> picked;
  for (int i : order) {
    const int y = raw.labels[i];
    if (count[y] < per_class) {
      ++count[y];
      picked.push_back(i);
    }
  }
  for (int c = 0; c < 10; ++c)
    if (count[c] < per_class)
      throw DataError("build_rotated_mnist: only " + std::to_string(count[c]) +
                      " images of class " + std::to_string(c));

  const int m = static_cast<int>(picked.size());
  NdArray base = NdArray::zeros({m, 1, 28, 28});
  std::vector<int> ys(m);
  for (int i = 0; i < m; ++i) {
    std::copy_n(raw.images.data.data() + static_cast<size_t>(picked[i]) * 784, 784,
                base.data.data() + static_cast<size_t>(i) * 784);
    ys[i] = raw.labels[picked[i]];
  }

  std::vector<LabeledDomain> out;
  for (size_t d = 0; d < degrees.size(); ++d) {
    LabeledDomain dom;
    dom.domain_id = static_cast<int>(d);
    dom.seed = seed;
    dom.generator = {{"kind", "rotated_mnist"}, {"angle_deg", degrees[d]}};
    dom.ys = ys;
    dom.xs = degrees[d] == 0.0
                 ? base
                 : Transform::image_rotation(degrees[d] * std::numbers::pi / 180.0).apply(base);
    out.push_back(std::move(dom));
  }
  return out;
}

TransformProvider ground_truth_provider(const std::vector<LabeledDomain>& domains) {
  // snapshot the per-domain geometry by id
  struct Geo {
    std::string kind;
    double radius = 0, arc_offset = 0, angle = 0, angle_deg = 0;
  };
  auto geos = std::make_shared<std::map<int, Geo>>();
  for (const auto& d : domains) {
    Geo g;
    g.kind = d.generator.value("kind", "");
    g.radius = d.generator.value("radius", 0.0);
    g.arc_offset = d.generator.value("arc_offset", 0.0);
    g.angle = d.generator.value("angle", 0.0);
    g.angle_deg = d.generator.value("angle_deg", 0.0);
    (*geos)[d.domain_id] = g;
  }
  return [geos](int from, int to) -> Transform {
    auto a = geos->find(from), b = geos->find(to);
    if (a == geos->end() || b == geos->end())
      throw UnsupportedOperation("ground_truth_provider: unknown domain id");
    const Geo &ga = a->second, &gb = b->second;
    if (ga.kind != gb.kind)
      throw UnsupportedOperation("ground_truth_provider: mixed domain kinds");
    if (ga.kind == "circles")
      return Transform::composition({Transform::rotation2d(gb.arc_offset - ga.arc_offset),
                                     Transform::scale2d(gb.radius / ga.radius)});
    if (ga.kind == "rotated_mixture") return Transform::rotation2d(gb.angle - ga.angle);
    if (ga.kind == "rotated_mnist")
      return Transform::image_rotation((gb.angle_deg - ga.angle_deg) * std::numbers::pi / 180.0);
    throw UnsupportedOperation("ground_truth_provider: no ground truth for kind '" + ga.kind +
                               "'");
  };
}

TransformProvider identity_provider() {
  return [](int, int) { return Transform::identity(); };
}

void export_csv(const LabeledDomain& d, const std::string& path) {
  if (d.xs.shape.size() != 2)
    throw std::invalid_argument("export_csv: only 2-D point domains");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "x0,x1,y,domain\n";
  out.precision(17);
  for (int i = 0; i < d.size(); ++i)
    out << d.xs.data[2 * i] << "," << d.xs.data[2 * i + 1] << "," << d.ys[i] << ","
        << d.domain_id << "\n";
}

namespace {
constexpr std::uint32_t kImgMagic = 0x44495231;  // "DIR1"
}

void save_domain_images(const LabeledDomain& d, const std::string& path) {
  if (d.xs.shape.size() != 4)
    throw std::invalid_argument("save_domain_images: expected image domain");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  w32(kImgMagic);
  w32(static_cast<std::uint32_t>(d.domain_id));
  for (int s : d.xs.shape) w32(static_cast<std::uint32_t>(s));
  out.write(reinterpret_cast<const char*>(d.xs.data.data()), d.xs.data.size() * sizeof(double));
  for (int y : d.ys) w32(static_cast<std::uint32_t>(y));
}

LabeledDomain load_domain_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  auto r32 = [&]() {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError(path + ": truncated");
    return v;
  };
  if (r32() != kImgMagic) throw DataError(path + ": bad magic");
  LabeledDomain d;
  d.domain_id = static_cast<int>(r32());
  Shape shape(4);
  for (auto& s : shape) s = static_cast<int>(r32());
  d.xs = NdArray::zeros(shape);
  if (!in.read(reinterpret_cast<char*>(d.xs.data.data()), d.xs.data.size() * sizeof(double)))
    throw DataError(path + ": truncated image data");
  d.ys.resize(shape[0]);
  for (auto& y : d.ys) y = static_cast<int>(r32());
  return d;
}

}  // namespace dir
