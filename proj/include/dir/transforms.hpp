#pragma once

#include <array>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dir/ndarray.hpp"

namespace dir {

/// Invertible differentiable map between domains. Analytic kinds carry exact
/// inverses and closed-form log|det J|; image_rotation and learned_gan are
/// forward-only.
class Transform {
 public:
  enum class Kind { identity, rotation2d, scale2d, affine2d, image_rotation, learned_gan, composition };

  static Transform identity();
  static Transform rotation2d(double theta_rad);
  static Transform scale2d(double s);
  /// x' = A x + b; requires det A != 0.
  static Transform affine2d(const std::array<double, 4>& a, const Vec2& b);
  static Transform image_rotation(double theta_rad);
  static Transform learned_gan(std::string tag,
                               std::function<NdArray(const NdArray&)> forward);
  static Transform composition(std::vector<Transform> parts);

  Kind kind() const { return kind_; }
  bool invertible() const;

  Vec2 apply_point(const Vec2& x) const;
  Vec2 invert_point(const Vec2& xp) const;
  /// Batched application: [N,2] for point kinds, [N,C,H,W] for image_rotation,
  /// learned_gan takes whatever its generator takes.
  NdArray apply(const NdArray& batch) const;
  NdArray invert(const NdArray& batch) const;

  /// log|det J_f(x)|; exact and constant in x for the affine family.
  double log_abs_det_jacobian(const Vec2& x) const;
  Transform inverse() const;

  nlohmann::json to_json() const;
  static Transform from_json(const nlohmann::json& j);

 private:
  Transform() = default;
  Kind kind_ = Kind::identity;
  double theta_ = 0.0;                 // rotation2d / image_rotation
  double scale_ = 1.0;                 // scale2d
  std::array<double, 4> a_{1, 0, 0, 1};  // affine2d row-major
  Vec2 b_{0, 0};
  std::string tag_;
  std::function<NdArray(const NdArray&)> gan_forward_;
  std::vector<Transform> parts_;
};

/// Analytic density over R^2, evaluable pointwise and sampleable.
/// Gaussian mixtures carry one component per class; uniform_circle places
/// mass on a circle of the given radius with equal class arcs rotated by
/// an offset (no 2-D density; pdf is unsupported for it).
class DensityModel {
 public:
  struct GaussianComponent {
    double weight;
    Vec2 mean;
    std::array<double, 4> cov;  // row-major 2x2, symmetric positive definite
  };

  static DensityModel gaussian_mixture(std::vector<GaussianComponent> comps);
  static DensityModel uniform_circle(double radius, int num_classes, double arc_offset);

  bool is_mixture() const { return mixture_; }
  const std::vector<GaussianComponent>& components() const { return comps_; }
  double radius() const { return radius_; }
  int num_classes() const;
  double arc_offset() const { return arc_offset_; }

  double pdf(const Vec2& x) const;          // mixtures only
  double pdf_class(int c, const Vec2& x) const;  // class-conditional (mixtures)

  Vec2 sample(std::mt19937_64& rng) const;
  Vec2 sample_class(int c, std::mt19937_64& rng) const;
  /// Class of a point on the circle by angular arc (uniform_circle only).
  int class_of_angle(double angle) const;

 private:
  bool mixture_ = true;
  std::vector<GaussianComponent> comps_;
  double radius_ = 1.0;
  int circle_classes_ = 2;
  double arc_offset_ = 0.0;
};

/// Change-of-variables transport: p'(x') = p(f^{-1}(x')) * |det J_{f^{-1}}(x')|.
double pushforward_density(const Transform& t, const DensityModel& p, const Vec2& xp);

}  // namespace dir
