#include "dir/transforms.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dir {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double det2(const std::array<double, 4>& a) { return a[0] * a[3] - a[1] * a[2]; }

std::array<double, 4> inv2(const std::array<double, 4>& a) {
  const double d = det2(a);
  if (d == 0.0) throw NumericError("affine2d: singular matrix");
  return {a[3] / d, -a[1] / d, -a[2] / d, a[0] / d};
}

Vec2 matvec(const std::array<double, 4>& a, const Vec2& x) {
  return {a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]};
}

void check_points(const NdArray& batch) {
  if (batch.shape.size() != 2 || batch.shape[1] != 2)
    throw ShapeError("transform: expected [N,2] point batch, got " + shape_str(batch.shape));
}

// Bilinear rotation about the image center, zero fill outside.
void rotate_image(const double* src, double* dst, int h, int w, double theta) {
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double c = std::cos(theta), s = std::sin(theta);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // inverse-rotate the output coordinate into the source image
      const double dy = y - cy, dx = x - cx;
      const double sy = c * dy + s * dx + cy;
      const double sx = -s * dy + c * dx + cx;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      double v = 0.0;
      for (int oy = 0; oy <= 1; ++oy)
        for (int ox = 0; ox <= 1; ++ox) {
          const int yy = y0 + oy, xx = x0 + ox;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double wgt = (oy ? fy : 1.0 - fy) * (ox ? fx : 1.0 - fx);
          v += wgt * src[yy * w + xx];
        }
      dst[y * w + x] = v;
    }
  }
}

}  // namespace

Transform Transform::identity() { return Transform(); }

Transform Transform::rotation2d(double theta_rad) {
  Transform t;
  t.kind_ = Kind::rotation2d;
  t.theta_ = theta_rad;
  return t;
}

Transform Transform::scale2d(double s) {
  if (s == 0.0) throw NumericError("scale2d: zero scale is not invertible");
  Transform t;
  t.kind_ = Kind::scale2d;
  t.scale_ = s;
  return t;
}

Transform Transform::affine2d(const std::array<double, 4>& a, const Vec2& b) {
  if (det2(a) == 0.0) throw NumericError("affine2d: singular matrix");
  Transform t;
  t.kind_ = Kind::affine2d;
  t.a_ = a;
  t.b_ = b;
  return t;
}

Transform Transform::image_rotation(double theta_rad) {
  Transform t;
  t.kind_ = Kind::image_rotation;
  t.theta_ = theta_rad;
  return t;
}

Transform Transform::learned_gan(std::string tag, std::function<NdArray(const NdArray&)> forward) {
  Transform t;
  t.kind_ = Kind::learned_gan;
  t.tag_ = std::move(tag);
  t.gan_forward_ = std::move(forward);
  return t;
}

Transform Transform::composition(std::vector<Transform> parts) {
  Transform t;
  t.kind_ = Kind::composition;
  t.parts_ = std::move(parts);
  return t;
}

bool Transform::invertible() const {
  switch (kind_) {
    case Kind::identity:
    case Kind::rotation2d:
    case Kind::scale2d:
    case Kind::affine2d:
      return true;
    case Kind::composition:
      for (const auto& p : parts_)
        if (!p.invertible()) return false;
      return true;
    default:
      return false;
  }
}

Vec2 Transform::apply_point(const Vec2& x) const {
  switch (kind_) {
    case Kind::identity:
      return x;
    case Kind::rotation2d: {
      const double c = std::cos(theta_), s = std::sin(theta_);
      return {c * x[0] - s * x[1], s * x[0] + c * x[1]};
    }
    case Kind::scale2d:
      return {scale_ * x[0], scale_ * x[1]};
    case Kind::affine2d: {
      Vec2 y = matvec(a_, x);
      return {y[0] + b_[0], y[1] + b_[1]};
    }
    case Kind::composition: {
      Vec2 y = x;
      for (const auto& p : parts_) y = p.apply_point(y);
      return y;
    }
    default:
      throw UnsupportedOperation("apply_point: not a point transform");
  }
}

Vec2 Transform::invert_point(const Vec2& xp) const {
  switch (kind_) {
    case Kind::identity:
      return xp;
    case Kind::rotation2d:
      return rotation2d(-theta_).apply_point(xp);
    case Kind::scale2d:
      return {xp[0] / scale_, xp[1] / scale_};
    case Kind::affine2d:
      return matvec(inv2(a_), {xp[0] - b_[0], xp[1] - b_[1]});
    case Kind::composition: {
      Vec2 y = xp;
      for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) y = it->invert_point(y);
      return y;
    }
    default:
      throw UnsupportedOperation("invert: transform kind is forward-only");
  }
}

NdArray Transform::apply(const NdArray& batch) const {
  switch (kind_) {
    case Kind::image_rotation: {
      if (batch.shape.size() < 3)
        throw ShapeError("image_rotation: expected [...,H,W] batch, got " +
                         shape_str(batch.shape));
      const int w = batch.shape.back();
      const int h = batch.shape[batch.shape.size() - 2];
      const std::int64_t planes = numel(batch.shape) / (static_cast<std::int64_t>(h) * w);
      NdArray out = NdArray::zeros(batch.shape);
      for (std::int64_t p = 0; p < planes; ++p)
        rotate_image(batch.data.data() + p * h * w, out.data.data() + p * h * w, h, w, theta_);
      return out;
    }
    case Kind::learned_gan:
      return gan_forward_(batch);
    case Kind::composition: {
      NdArray y = batch;
      for (const auto& p : parts_) y = p.apply(y);
      return y;
    }
    case Kind::identity:
      return batch;
    default: {
      check_points(batch);
      NdArray out = batch;
      for (int i = 0; i < batch.rows(); ++i) {
        Vec2 y = apply_point({batch.data[2 * i], batch.data[2 * i + 1]});
        out.data[2 * i] = y[0];
        out.data[2 * i + 1] = y[1];
      }
      return out;
    }
  }
}

NdArray Transform::invert(const NdArray& batch) const {
  if (!invertible())
    throw UnsupportedOperation("invert: transform kind is forward-only");
  if (kind_ == Kind::identity) return batch;
  check_points(batch);
  NdArray out = batch;
  for (int i = 0; i < batch.rows(); ++i) {
    Vec2 y = invert_point({batch.data[2 * i], batch.data[2 * i + 1]});
    out.data[2 * i] = y[0];
    out.data[2 * i + 1] = y[1];
  }
  return out;
}

double Transform::log_abs_det_jacobian(const Vec2& x) const {
  switch (kind_) {
    case Kind::identity:
      return 0.0;
    case Kind::rotation2d:
      return 0.0;  // rotations are volume-preserving
    case Kind::scale2d:
      return 2.0 * std::log(std::abs(scale_));
    case Kind::affine2d:
      return std::log(std::abs(det2(a_)));
    case Kind::composition: {
      // chain rule: log-dets add along the trajectory
      double acc = 0.0;
      Vec2 y = x;
      for (const auto& p : parts_) {
        acc += p.log_abs_det_jacobian(y);
        y = p.apply_point(y);
      }
      return acc;
    }
    default:
      throw UnsupportedOperation("log_abs_det_jacobian: unsupported for this kind");
  }
}

Transform Transform::inverse() const {
  switch (kind_) {
    case Kind::identity:
      return identity();
    case Kind::rotation2d:
      return rotation2d(-theta_);
    case Kind::scale2d:
      return scale2d(1.0 / scale_);
    case Kind::affine2d: {
      const auto ai = inv2(a_);
      const Vec2 bi = matvec(ai, {-b_[0], -b_[1]});
      return affine2d(ai, bi);
    }
    case Kind::composition: {
      std::vector<Transform> rev;
      for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) rev.push_back(it->inverse());
      return composition(std::move(rev));
    }
    default:
      throw UnsupportedOperation("inverse: transform kind is forward-only");
  }
}

json Transform::to_json() const {
  switch (kind_) {
    case Kind::identity:
      return {{"kind", "identity"}};
    case Kind::rotation2d:
      return {{"kind", "rotation2d"}, {"theta", theta_}};
    case Kind::scale2d:
      return {{"kind", "scale2d"}, {"s", scale_}};
    case Kind::affine2d:
      return {{"kind", "affine2d"}, {"a", a_}, {"b", b_}};
    case Kind::image_rotation:
      return {{"kind", "image_rotation"}, {"theta", theta_}};
    case Kind::learned_gan:
      return {{"kind", "learned_gan"}, {"tag", tag_}};
    case Kind::composition: {
      json parts = json::array();
      for (const auto& p : parts_) parts.push_back(p.to_json());
      return {{"kind", "composition"}, {"parts", parts}};
    }
  }
  throw std::logic_error("unreachable");
}

Transform Transform::from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "identity") return identity();
  if (kind == "rotation2d") return rotation2d(j.at("theta").get<double>());
  if (kind == "scale2d") return scale2d(j.at("s").get<double>());
  if (kind == "affine2d")
    return affine2d(j.at("a").get<std::array<double, 4>>(), j.at("b").get<Vec2>());
  if (kind == "image_rotation") return image_rotation(j.at("theta").get<double>());
  if (kind == "composition") {
    std::vector<Transform> parts;
    for (const auto& pj : j.at("parts")) parts.push_back(from_json(pj));
    return composition(std::move(parts));
  }
  if (kind == "learned_gan")
    throw UnsupportedOperation("learned_gan transforms cannot be rebuilt from JSON");
  throw std::invalid_argument("unknown transform kind: " + kind);
}

// ---- DensityModel ---------------------------------------------------------

DensityModel DensityModel::gaussian_mixture(std::vector<GaussianComponent> comps) {
  if (comps.empty()) throw std::invalid_argument("gaussian_mixture: no components");
  double wsum = 0.0;
  for (const auto& c : comps) {
    if (c.weight < 0.0) throw std::invalid_argument("gaussian_mixture: negative weight");
    if (det2(c.cov) <= 0.0 || c.cov[0] <= 0.0)
      throw std::invalid_argument("gaussian_mixture: covariance not positive definite");
    wsum += c.weight;
  }
  if (wsum <= 0.0) throw std::invalid_argument("gaussian_mixture: zero total weight");
  for (auto& c : comps) c.weight /= wsum;
  DensityModel m;
  m.mixture_ = true;
  m.comps_ = std::move(comps);
  return m;
}

DensityModel DensityModel::uniform_circle(double radius, int num_classes, double arc_offset) {
  if (radius <= 0.0) throw std::invalid_argument("uniform_circle: radius must be positive");
  if (num_classes < 2) throw std::invalid_argument("uniform_circle: need at least 2 classes");
  DensityModel m;
  m.mixture_ = false;
  m.radius_ = radius;
  m.circle_classes_ = num_classes;
  m.arc_offset_ = arc_offset;
  return m;
}

int DensityModel::num_classes() const {
  return mixture_ ? static_cast<int>(comps_.size()) : circle_classes_;
}

double DensityModel::pdf_class(int c, const Vec2& x) const {
  if (!mixture_) throw UnsupportedOperation("pdf: uniform_circle has no 2-D density");
  const auto& g = comps_.at(c);
  const auto ci = inv2(g.cov);
  const double dx = x[0] - g.mean[0], dy = x[1] - g.mean[1];
  const double q = dx * (ci[0] * dx + ci[1] * dy) + dy * (ci[2] * dx + ci[3] * dy);
  return std::exp(-0.5 * q) / (kTwoPi * std::sqrt(det2(g.cov)));
}

double DensityModel::pdf(const Vec2& x) const {
  if (!mixture_) throw UnsupportedOperation("pdf: uniform_circle has no 2-D density");
  double p = 0.0;
  for (size_t c = 0; c < comps_.size(); ++c) p += comps_[c].weight * pdf_class(static_cast<int>(c), x);
  return p;
}

Vec2 DensityModel::sample_class(int c, std::mt19937_64& rng) const {
  if (mixture_) {
    const auto& g = comps_.at(c);
    // Cholesky of the 2x2 covariance
    const double l11 = std::sqrt(g.cov[0]);
    const double l21 = g.cov[2] / l11;
    const double l22 = std::sqrt(g.cov[3] - l21 * l21);
    std::normal_distribution<double> n(0.0, 1.0);
    const double u = n(rng), v = n(rng);
    return {g.mean[0] + l11 * u, g.mean[1] + l21 * u + l22 * v};
  }
  // uniform on this class's arc
  if (c < 0 || c >= circle_classes_) throw std::out_of_range("sample_class: bad class");
  const double arc = kTwoPi / circle_classes_;
  std::uniform_real_distribution<double> u(0.0, arc);
  const double angle = arc_offset_ + c * arc + u(rng);
  return {radius_ * std::cos(angle), radius_ * std::sin(angle)};
}

Vec2 DensityModel::sample(std::mt19937_64& rng) const {
  if (mixture_) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng), acc = 0.0;
    for (size_t c = 0; c < comps_.size(); ++c) {
      acc += comps_[c].weight;
      if (r <= acc) return sample_class(static_cast<int>(c), rng);
    }
    return sample_class(static_cast<int>(comps_.size()) - 1, rng);
  }
  std::uniform_int_distribution<int> cls(0, circle_classes_ - 1);
  return sample_class(cls(rng), rng);
}

int DensityModel::class_of_angle(double angle) const {
  if (mixture_) throw UnsupportedOperation("class_of_angle: mixture density");
  double a = std::fmod(angle - arc_offset_, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  const double arc = kTwoPi / circle_classes_;
  int c = static_cast<int>(a / arc);
  return c >= circle_classes_ ? circle_classes_ - 1 : c;
}

double pushforward_density(const Transform& t, const DensityModel& p, const Vec2& xp) {
  if (!t.invertible())
    throw UnsupportedOperation("pushforward_density: transform not invertible");
  const Vec2 x = t.invert_point(xp);
  const double log_det_inv = t.inverse().log_abs_det_jacobian(xp);
  return p.pdf(x) * std::exp(log_det_inv);
}

}  // namespace dir
