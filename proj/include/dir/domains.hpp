#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dir/ndarray.hpp"
#include "dir/transforms.hpp"

namespace dir {

/// Thrown for malformed or inconsistent input data files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One domain's labeled sample set plus the generator descriptor that makes
/// ground-truth pair transforms reconstructible.
struct LabeledDomain {
  int domain_id = 0;
  NdArray xs;              // [N,2] points or [N,1,H,W] images
  std::vector<int> ys;
  nlohmann::json generator;  // kind + per-domain parameters
  std::uint64_t seed = 0;

  int size() const { return xs.rows(); }
  int num_classes() const;
  std::vector<int> class_histogram() const;
};

struct ExperimentSplit {
  std::vector<int> source_ids;
  int target_id = -1;
  double train_fraction = 0.9;

  void validate() const;  // target must not appear among sources
};

/// f_{d,d'} lookup for ordered domain pairs.
using TransformProvider = std::function<Transform(int d_from, int d_to)>;

/// Two-circles domains: domain d lies exactly on radius
/// radii[d]; classes are equal angular arcs rotated by arc_offsets[d].
std::vector<LabeledDomain> gen_circles(int n_per_class, const std::vector<double>& radii,
                                       const std::vector<double>& arc_offsets, int num_classes,
                                       std::uint64_t seed);

/// Domain d is the rotation2d(angles[d]) pushforward of the base mixture,
/// sampled independently per domain (one Gaussian component per class).
std::vector<LabeledDomain> gen_rotated_mixture(const DensityModel& base,
                                               const std::vector<double>& angles,
                                               int n_per_class, std::uint64_t seed);

struct RawMnist {
  NdArray images;           // [N,1,28,28], values in [0,1]
  std::vector<int> labels;  // 0..9
};

/// IDX readers (big-endian, magic 2051/2049).
RawMnist load_mnist(const std::string& images_path, const std::string& labels_path);

/// M_0 is a seeded per-class subset of raw; M_theta applies image_rotation
/// to the same images. Default layout follows the six-domain benchmark.
std::vector<LabeledDomain> build_rotated_mnist(const RawMnist& raw, std::uint64_t seed,
                                               int per_class = 100,
                                               std::vector<double> degrees = {0, 15, 30, 45, 60,
                                                                              75});

/// Builds f_{d,d'} for every ordered pair from the domains' generator
/// descriptors. Throws UnsupportedOperation for unknown ids/kinds.
TransformProvider ground_truth_provider(const std::vector<LabeledDomain>& domains);

/// Provider that returns identity for every pair.
TransformProvider identity_provider();

void export_csv(const LabeledDomain& d, const std::string& path);       // 2-D points
void save_domain_images(const LabeledDomain& d, const std::string& path);
LabeledDomain load_domain_images(const std::string& path);

}  // namespace dir
