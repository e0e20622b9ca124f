#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dir/domains.hpp"
#include "dir/nets.hpp"

namespace dir {

/// Median of pooled pairwise Euclidean distances between rows of a and b.
/// Falls back to 1.0 when every distance is zero.
double median_heuristic(const NdArray& a, const NdArray& b);

/// Unbiased U-statistic estimate of MMD^2 with an RBF kernel
/// exp(-||x-y||^2 / (2 sigma^2)). Can be slightly negative.
double mmd_sq(const NdArray& a, const NdArray& b, double sigma);

/// Null distribution of mmd_sq under random reassignment of the pooled
/// samples to the two groups (group sizes preserved).
std::vector<double> mmd_permutation_null(const NdArray& a, const NdArray& b, double sigma,
                                         int num_permutations = 200, std::uint64_t seed = 0);

/// Upper q-quantile of a sampled null (q in (0,1)).
double null_quantile(std::vector<double> null_stats, double q);

struct ConditionalMmdEntry {
  int cls = 0;
  int domain_a = 0, domain_b = 0;
  bool missing = false;  // a (class, domain) cell had < 2 samples
  double mmd2 = 0.0;
};

/// MMD^2 between p(z|y,d) and p(z|y,d') for every class y and domain pair.
/// Cells with fewer than 2 samples produce `missing` entries, never zeros.
std::vector<ConditionalMmdEntry> conditional_mmd(
    const std::map<int, std::map<int, NdArray>>& z_by_class_by_domain, double sigma);

/// Mixed discrete/continuous mutual information I(z; d) in nats,
/// k-nearest-neighbour estimator over the continuous variable.
/// Degenerate inputs (all z identical) return 0 and set *degenerate.
double mutual_information(const NdArray& z, const std::vector<int>& domain_labels, int k = 3,
                          bool* degenerate = nullptr);

/// Top-2 principal directions of the sample covariance.
struct Projection2D {
  std::vector<double> pc1, pc2;          // unit vectors, length z_dim
  double explained1 = 0.0, explained2 = 0.0;  // eigenvalue / total variance

  NdArray project(const NdArray& z) const;  // [N, z_dim] -> [N, 2]
};

/// Power iteration with deflation; sign fixed so each component's
/// largest-magnitude coordinate is positive. Throws on zero-variance data.
Projection2D pca2(const NdArray& z);

double accuracy(const TrainedModel& model, const LabeledDomain& domain);

struct AlignmentReport {
  std::map<std::pair<int, int>, double> marginal_mmd2;
  std::vector<ConditionalMmdEntry> conditional_mmd2;
  double mi_nats = 0.0;
  std::map<int, double> accuracy_by_domain;
  double bandwidth = 0.0;
  std::map<int, int> sample_counts;

  double max_marginal() const;
  std::optional<double> max_conditional() const;  // empty if all cells missing
  nlohmann::json to_json() const;
};

/// Runs the representation over each domain and fills every table above.
/// Bandwidth is the median heuristic over the pooled representations.
AlignmentReport compute_alignment(const TrainedModel& model,
                                  const std::vector<LabeledDomain>& domains, int mi_k = 3);

/// Scatter exports of a 2-D projection: one CSV (x,y,class,domain) and one
/// SVG per domain named <prefix>_d<domain>.svg.
void export_scatter_csv(const std::string& path, const NdArray& points2d,
                        const std::vector<int>& classes, const std::vector<int>& domains);
void export_scatter_svg(const std::string& prefix, const NdArray& points2d,
                        const std::vector<int>& classes, const std::vector<int>& domains);

}  // namespace dir
