#include "dir/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>

#include "dir/trainer.hpp"

namespace dir {

using nlohmann::json;

namespace {

double sq_dist(const double* a, const double* b, std::int64_t dim) {
  double s = 0.0;
  for (std::int64_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Gram matrix of the pooled rows of a then b under the RBF kernel.
std::vector<double> rbf_gram(const NdArray& a, const NdArray& b, double sigma) {
  const int m = a.rows(), n = b.rows();
  const std::int64_t dim = a.sample_size();
  const int t = m + n;
  auto row = [&](int i) { return i < m ? a.row(i) : b.row(i - m); };
  std::vector<double> k(static_cast<size_t>(t) * t);
  const double inv = -1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < t; ++i) {
    k[static_cast<size_t>(i) * t + i] = 1.0;
    for (int j = i + 1; j < t; ++j) {
      const double v = std::exp(inv * sq_dist(row(i), row(j), dim));
      k[static_cast<size_t>(i) * t + j] = v;
      k[static_cast<size_t>(j) * t + i] = v;
    }
  }
  return k;
}

// Unbiased MMD^2 from a pooled Gram matrix and a group-A index set.
double mmd_from_gram(const std::vector<double>& k, const std::vector<int>& a_idx,
                     const std::vector<int>& b_idx, int t) {
  const int m = static_cast<int>(a_idx.size()), n = static_cast<int>(b_idx.size());
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) kaa += k[static_cast<size_t>(a_idx[i]) * t + a_idx[j]];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) kbb += k[static_cast<size_t>(b_idx[i]) * t + b_idx[j]];
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) kab += k[static_cast<size_t>(a_idx[i]) * t + b_idx[j]];
  return kaa / (static_cast<double>(m) * (m - 1)) + kbb / (static_cast<double>(n) * (n - 1)) -
         2.0 * kab / (static_cast<double>(m) * n);
}

void check_two_sample(const NdArray& a, const NdArray& b, double sigma) {
  if (a.rows() < 2 || b.rows() < 2)
    throw std::invalid_argument("mmd: each sample set needs at least 2 rows");
  if (a.sample_size() != b.sample_size())
    throw std::invalid_argument("mmd: sample dimensions differ");
  if (sigma <= 0.0) throw std::invalid_argument("mmd: bandwidth must be positive");
}

double digamma(double x) {
  double r = 0.0;
  while (x < 6.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double x2 = 1.0 / (x * x);
  return r + std::log(x) - 0.5 / x -
         x2 * (1.0 / 12.0 - x2 * (1.0 / 120.0 - x2 / 252.0));
}

}  // namespace

double median_heuristic(const NdArray& a, const NdArray& b) {
  const int m = a.rows(), n = b.rows();
  const std::int64_t dim = a.sample_size();
  auto row = [&](int i) { return i < m ? a.row(i) : b.row(i - m); };
  std::vector<double> d;
  d.reserve(static_cast<size_t>(m + n) * (m + n - 1) / 2);
  for (int i = 0; i < m + n; ++i)
    for (int j = i + 1; j < m + n; ++j) d.push_back(std::sqrt(sq_dist(row(i), row(j), dim)));
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  const double med = d[d.size() / 2];
  return med > 0.0 ? med : 1.0;
}

double mmd_sq(const NdArray& a, const NdArray& b, double sigma) {
  check_two_sample(a, b, sigma);
  // Canonical operand order makes mmd_sq(a,b) == mmd_sq(b,a) bit-exact.
  if (std::lexicographical_compare(b.data.begin(), b.data.end(), a.data.begin(), a.data.end()))
    return mmd_sq(b, a, sigma);
  const int m = a.rows(), n = b.rows();
  auto k = rbf_gram(a, b, sigma);
  std::vector<int> ai(m), bi(n);
  for (int i = 0; i < m; ++i) ai[i] = i;
  for (int i = 0; i < n; ++i) bi[i] = m + i;
  return mmd_from_gram(k, ai, bi, m + n);
}

std::vector<double> mmd_permutation_null(const NdArray& a, const NdArray& b, double sigma,
                                         int num_permutations, std::uint64_t seed) {
  check_two_sample(a, b, sigma);
  const int m = a.rows(), n = b.rows(), t = m + n;
  auto k = rbf_gram(a, b, sigma);
  std::vector<int> pool(t);
  for (int i = 0; i < t; ++i) pool[i] = i;
  std::mt19937_64 rng(seed);
  std::vector<double> stats(num_permutations);
  for (int p = 0; p < num_permutations; ++p) {
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> ai(pool.begin(), pool.begin() + m);
    std::vector<int> bi(pool.begin() + m, pool.end());
    stats[p] = mmd_from_gram(k, ai, bi, t);
  }
  return stats;
}

double null_quantile(std::vector<double> null_stats, double q) {
  if (null_stats.empty() || q <= 0.0 || q >= 1.0)
    throw std::invalid_argument("null_quantile: need stats and q in (0,1)");
  const size_t idx = std::min(null_stats.size() - 1,
                              static_cast<size_t>(q * static_cast<double>(null_stats.size())));
  std::nth_element(null_stats.begin(), null_stats.begin() + idx, null_stats.end());
  return null_stats[idx];
}

std::vector<ConditionalMmdEntry> conditional_mmd(
    const std::map<int, std::map<int, NdArray>>& z_by_class_by_domain, double sigma) {
  std::vector<ConditionalMmdEntry> out;
  for (const auto& [cls, by_domain] : z_by_class_by_domain) {
    for (auto it = by_domain.begin(); it != by_domain.end(); ++it) {
      for (auto jt = std::next(it); jt != by_domain.end(); ++jt) {
        ConditionalMmdEntry e;
        e.cls = cls;
        e.domain_a = it->first;
        e.domain_b = jt->first;
        if (it->second.rows() < 2 || jt->second.rows() < 2) {
          e.missing = true;
        } else {
          e.mmd2 = mmd_sq(it->second, jt->second, sigma);
        }
        out.push_back(e);
      }
    }
  }
  return out;
}

double mutual_information(const NdArray& z, const std::vector<int>& domain_labels, int k,
                          bool* degenerate) {
  const int n = z.rows();
  const std::int64_t dim = z.sample_size();
  if (n != static_cast<int>(domain_labels.size()))
    throw std::invalid_argument("mutual_information: label count mismatch");
  if (k < 1) throw std::invalid_argument("mutual_information: k must be >= 1");
  if (degenerate) *degenerate = false;

  bool all_same = true;
  for (int i = 1; i < n && all_same; ++i)
    all_same = sq_dist(z.row(0), z.row(i), dim) == 0.0;
  if (all_same) {
    std::cerr << "mutual_information: degenerate input (all points identical), returning 0\n";
    if (degenerate) *degenerate = true;
    return 0.0;
  }

  std::map<int, int> label_count;
  for (int l : domain_labels) ++label_count[l];

  // Tiny deterministic jitter breaks exact ties, which would otherwise
  // collapse the k-th neighbour radius to zero on clustered data.
  double maxabs = 0.0;
  for (double v : z.data) maxabs = std::max(maxabs, std::abs(v));
  std::vector<double> jz(z.data);
  std::mt19937_64 jrng(0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double eps = 1e-10 * (maxabs > 0.0 ? maxabs : 1.0);
  for (auto& v : jz) v += eps * unit(jrng);
  auto jrow = [&](int i) { return jz.data() + static_cast<size_t>(i) * dim; };

  double sum = 0.0;
  int used = 0;
  std::vector<double> same;
  for (int i = 0; i < n; ++i) {
    const int nl = label_count[domain_labels[i]];
    if (nl < 2) continue;
    const int ki = std::min(k, nl - 1);
    same.clear();
    for (int j = 0; j < n; ++j)
      if (j != i && domain_labels[j] == domain_labels[i])
        same.push_back(sq_dist(jrow(i), jrow(j), dim));
    std::nth_element(same.begin(), same.begin() + (ki - 1), same.end());
    // Shrink the radius so points at exactly the k-th distance are excluded.
    const double radius = std::nextafter(same[ki - 1], 0.0);
    int mi_count = 0;  // neighbours in the full set within the radius, self included
    for (int j = 0; j < n; ++j)
      if (sq_dist(jrow(i), jrow(j), dim) <= radius) ++mi_count;
    mi_count = std::max(mi_count, 1);
    sum += digamma(ki) - digamma(nl) - digamma(mi_count);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("mutual_information: every domain has < 2 samples");
  return digamma(n) + sum / used;
}

NdArray Projection2D::project(const NdArray& z) const {
  const int n = z.rows();
  const std::int64_t dim = z.sample_size();
  if (dim != static_cast<std::int64_t>(pc1.size()))
    throw std::invalid_argument("project: dimension mismatch");
  NdArray out = NdArray::zeros({n, 2});
  for (int i = 0; i < n; ++i) {
    const double* r = z.row(i);
    double x = 0.0, y = 0.0;
    for (std::int64_t j = 0; j < dim; ++j) {
      x += pc1[j] * r[j];
      y += pc2[j] * r[j];
    }
    out.row(i)[0] = x;
    out.row(i)[1] = y;
  }
  return out;
}

namespace {

std::vector<double> covariance(const NdArray& z) {
  const int n = z.rows();
  const std::int64_t d = z.sample_size();
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) mean[j] += z.row(i)[j];
  for (auto& m : mean) m /= n;
  std::vector<double> c(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* r = z.row(i);
    for (std::int64_t p = 0; p < d; ++p)
      for (std::int64_t q = 0; q < d; ++q)
        c[static_cast<size_t>(p) * d + q] += (r[p] - mean[p]) * (r[q] - mean[q]);
  }
  for (auto& v : c) v /= (n - 1);
  return c;
}

// Leading eigenpair of symmetric c, kept orthogonal to `against` if given.
std::pair<std::vector<double>, double> power_iterate(const std::vector<double>& c,
                                                     std::int64_t d,
                                                     const std::vector<double>* against,
                                                     double scale_hint) {
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
  auto orthogonalize = [&](std::vector<double>& u) {
    if (!against) return;
    double dot = 0.0;
    for (std::int64_t i = 0; i < d; ++i) dot += u[i] * (*against)[i];
    for (std::int64_t i = 0; i < d; ++i) u[i] -= dot * (*against)[i];
  };
  orthogonalize(v);
  std::vector<double> w(d);
  for (int it = 0; it < 10000; ++it) {
    for (std::int64_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < d; ++j) s += c[static_cast<size_t>(i) * d + j] * v[j];
      w[i] = s;
    }
    orthogonalize(w);
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-14 * scale_hint) {
      // eigenvalue ~ 0: any unit vector in the remaining subspace works
      std::int64_t best = 0;
      std::vector<double> cand;
      double best_norm = -1.0;
      for (std::int64_t b = 0; b < d; ++b) {
        std::vector<double> e(d, 0.0);
        e[b] = 1.0;
        orthogonalize(e);
        double en = 0.0;
        for (double x : e) en += x * x;
        if (en > best_norm) {
          best_norm = en;
          best = b;
          cand = e;
        }
      }
      (void)best;
      for (auto& x : cand) x /= std::sqrt(best_norm);
      return {cand, 0.0};
    }
    double delta = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      w[i] /= norm;
      delta = std::max(delta, std::abs(std::abs(w[i]) - std::abs(v[i])));
    }
    v = w;
    if (it > 2 && delta < 1e-14) break;
  }
  double lambda = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += c[static_cast<size_t>(i) * d + j] * v[j];
    lambda += v[i] * s;
  }
  return {v, lambda};
}

void fix_sign(std::vector<double>& v) {
  std::int64_t arg = 0;
  for (std::int64_t i = 1; i < static_cast<std::int64_t>(v.size()); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  if (v[arg] < 0.0)
    for (auto& x : v) x = -x;
}

}  // namespace

Projection2D pca2(const NdArray& z) {
  const int n = z.rows();
  const std::int64_t d = z.sample_size();
  if (n < 3) throw std::invalid_argument("pca2: need at least 3 samples");
  if (d < 2) throw std::invalid_argument("pca2: need at least 2 dimensions");
  auto c = covariance(z);
  double trace = 0.0;
  for (std::int64_t i = 0; i < d; ++i) trace += c[static_cast<size_t>(i) * d + i];
  if (trace <= 0.0) throw NumericError("pca2: zero-variance data");

  auto [v1, l1] = power_iterate(c, d, nullptr, trace);
  // deflate: c <- c - l1 v1 v1^T
  auto c2 = c;
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t j = 0; j < d; ++j) c2[static_cast<size_t>(i) * d + j] -= l1 * v1[i] * v1[j];
  auto [v2, l2] = power_iterate(c2, d, &v1, trace);

  Projection2D out;
  fix_sign(v1);
  fix_sign(v2);
  out.pc1 = std::move(v1);
  out.pc2 = std::move(v2);
  out.explained1 = std::max(l1, 0.0) / trace;
  out.explained2 = std::max(l2, 0.0) / trace;
  return out;
}

double accuracy(const TrainedModel& model, const LabeledDomain& domain) {
  const int n = domain.size();
  if (n == 0) throw std::invalid_argument("accuracy: empty domain");
  const int classes = model.head.num_classes();
  const int chunk = 256;
  std::int64_t correct = 0;
  for (int start = 0; start < n; start += chunk) {
    const int stop = std::min(n, start + chunk);
    std::vector<int> idx(stop - start);
    for (int i = start; i < stop; ++i) idx[i - start] = i;
    Tensor logits = model.predict_logits(batch_tensor(domain.xs, idx));
    const auto& v = logits.value();
    for (int i = 0; i < stop - start; ++i) {
      int best = 0;
      for (int j = 1; j < classes; ++j)
        if (v[static_cast<size_t>(i) * classes + j] > v[static_cast<size_t>(i) * classes + best])
          best = j;
      if (best == domain.ys[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / n;
}

double AlignmentReport::max_marginal() const {
  double m = 0.0;
  for (const auto& [k, v] : marginal_mmd2) m = std::max(m, v);
  return m;
}

std::optional<double> AlignmentReport::max_conditional() const {
  std::optional<double> m;
  for (const auto& e : conditional_mmd2)
    if (!e.missing) m = std::max(m.value_or(e.mmd2), e.mmd2);
  return m;
}

json AlignmentReport::to_json() const {
  json marg = json::object();
  for (const auto& [k, v] : marginal_mmd2)
    marg[std::to_string(k.first) + "-" + std::to_string(k.second)] = v;
  json cond = json::array();
  for (const auto& e : conditional_mmd2) {
    json je = {{"class", e.cls}, {"pair", {e.domain_a, e.domain_b}}};
    if (e.missing)
      je["missing"] = true;
    else
      je["mmd2"] = e.mmd2;
    cond.push_back(je);
  }
  json acc = json::object(), counts = json::object();
  for (const auto& [d, a] : accuracy_by_domain) acc[std::to_string(d)] = a;
  for (const auto& [d, c] : sample_counts) counts[std::to_string(d)] = c;
  return {{"marginal_mmd2", marg}, {"conditional_mmd2", cond}, {"mi_nats", mi_nats},
          {"accuracy", acc},       {"bandwidth", bandwidth},   {"sample_counts", counts}};
}

AlignmentReport compute_alignment(const TrainedModel& model,
                                  const std::vector<LabeledDomain>& domains, int mi_k) {
  if (domains.size() < 2) throw std::invalid_argument("compute_alignment: need >= 2 domains");
  const int zd = model.rep.z_dim();

  std::vector<NdArray> zs;
  std::vector<int> pooled_labels;
  std::int64_t pooled_rows = 0;
  for (const auto& dom : domains) {
    const int n = dom.size();
    NdArray z = NdArray::zeros({n, zd});
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
      const int stop = std::min(n, start + chunk);
      std::vector<int> idx(stop - start);
      for (int i = start; i < stop; ++i) idx[i - start] = i;
      Tensor out = model.rep.forward(batch_tensor(dom.xs, idx));
      for (int i = 0; i < stop - start; ++i)
        std::copy_n(out.value().data() + static_cast<size_t>(i) * zd, zd, z.row(start + i));
    }
    pooled_rows += n;
    zs.push_back(std::move(z));
  }

  NdArray pooled = NdArray::zeros({static_cast<int>(pooled_rows), zd});
  int at = 0;
  for (size_t d = 0; d < domains.size(); ++d) {
    for (int i = 0; i < zs[d].rows(); ++i, ++at) {
      std::copy_n(zs[d].row(i), zd, pooled.row(at));
      pooled_labels.push_back(domains[d].domain_id);
    }
  }

  AlignmentReport rep;
  rep.bandwidth = median_heuristic(pooled, NdArray::zeros({0, zd}));
  // Report entries are floored at the estimator's statistical tolerance;
  // the raw U-statistic can dip further below zero on small cells.
  const double floor = -1e-3;
  for (size_t i = 0; i < domains.size(); ++i)
    for (size_t j = i + 1; j < domains.size(); ++j)
      rep.marginal_mmd2[{domains[i].domain_id, domains[j].domain_id}] =
          std::max(floor, mmd_sq(zs[i], zs[j], rep.bandwidth));

  std::map<int, std::map<int, NdArray>> by_class;
  for (size_t d = 0; d < domains.size(); ++d) {
    std::map<int, std::vector<int>> rows_of_class;
    for (int i = 0; i < domains[d].size(); ++i) rows_of_class[domains[d].ys[i]].push_back(i);
    for (const auto& [cls, rows] : rows_of_class) {
      NdArray cell = NdArray::zeros({static_cast<int>(rows.size()), zd});
      for (size_t i = 0; i < rows.size(); ++i) std::copy_n(zs[d].row(rows[i]), zd, cell.row(i));
      by_class[cls].emplace(domains[d].domain_id, std::move(cell));
    }
  }
  rep.conditional_mmd2 = conditional_mmd(by_class, rep.bandwidth);
  for (auto& e : rep.conditional_mmd2)
    if (!e.missing) e.mmd2 = std::max(floor, e.mmd2);

  rep.mi_nats = mutual_information(pooled, pooled_labels, mi_k);
  for (const auto& dom : domains) {
    rep.accuracy_by_domain[dom.domain_id] = accuracy(model, dom);
    rep.sample_counts[dom.domain_id] = dom.size();
  }
  return rep;
}

void export_scatter_csv(const std::string& path, const NdArray& points2d,
                        const std::vector<int>& classes, const std::vector<int>& domains) {
  const int n = points2d.rows();
  if (n != static_cast<int>(classes.size()) || n != static_cast<int>(domains.size()))
    throw std::invalid_argument("export_scatter_csv: length mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "x,y,class,domain\n";
  for (int i = 0; i < n; ++i)
    out << points2d.row(i)[0] << "," << points2d.row(i)[1] << "," << classes[i] << ","
        << domains[i] << "\n";
}

void export_scatter_svg(const std::string& prefix, const NdArray& points2d,
                        const std::vector<int>& classes, const std::vector<int>& domains) {
  const int n = points2d.rows();
  if (n == 0) throw std::invalid_argument("export_scatter_svg: no points");
  if (n != static_cast<int>(classes.size()) || n != static_cast<int>(domains.size()))
    throw std::invalid_argument("export_scatter_svg: length mismatch");
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  double xmin = points2d.row(0)[0], xmax = xmin, ymin = points2d.row(0)[1], ymax = ymin;
  for (int i = 0; i < n; ++i) {
    xmin = std::min(xmin, points2d.row(i)[0]);
    xmax = std::max(xmax, points2d.row(i)[0]);
    ymin = std::min(ymin, points2d.row(i)[1]);
    ymax = std::max(ymax, points2d.row(i)[1]);
  }
  const double sx = xmax > xmin ? 380.0 / (xmax - xmin) : 1.0;
  const double sy = ymax > ymin ? 380.0 / (ymax - ymin) : 1.0;

  std::vector<int> uniq(domains);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  for (int d : uniq) {
    std::ofstream out(prefix + "_d" + std::to_string(d) + ".svg");
    if (!out) throw std::runtime_error("cannot write svg for domain " + std::to_string(d));
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" "
           "viewBox=\"0 0 400 400\">\n"
        << "<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
    for (int i = 0; i < n; ++i) {
      if (domains[i] != d) continue;
      const double px = 10.0 + (points2d.row(i)[0] - xmin) * sx;
      const double py = 390.0 - (points2d.row(i)[1] - ymin) * sy;
      out << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"2.5\" fill=\""
          << palette[((classes[i] % 10) + 10) % 10] << "\"/>\n";
    }
    out << "</svg>\n";
  }
}

}  // namespace dir
