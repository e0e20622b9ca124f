#include "dir/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace dir {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

namespace detail {
std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}
}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.value())
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value in input");
}

bool any_requires_grad(std::initializer_list<Tensor> ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    for (const auto& t : inputs) n->parents.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(n));
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(make_leaf(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty())
    throw std::logic_error("grad() on tensor with no populated gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_finite("matmul", a);
  check_finite("matmul", b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  {
    // staged through Eigen-aligned storage so the vectorized kernel takes the
    // same code path regardless of std::vector buffer alignment
    MatRM A = CMapM(a.value().data(), m, k);
    MatRM B = CMapM(b.value().data(), k, n);
    MatRM C(m, n);
    C.noalias() = A * B;
    MapM(out.data(), m, n) = C;
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result(
      {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
        MatRM dC = CMapM(self.grad.data(), m, n);
        MatRM A = CMapM(an->value.data(), m, k);
        MatRM B = CMapM(bn->value.data(), k, n);
        if (an->requires_grad) {
          MatRM dA(m, k);
          dA.noalias() = dC * B.transpose();
          MapM(an->ensure_grad().data(), m, k) += dA;
        }
        if (bn->requires_grad) {
          MatRM dB(k, n);
          dB.noalias() = A.transpose() * dC;
          MapM(bn->ensure_grad().data(), k, n) += dB;
        }
      });
}

namespace {
enum class AddMode { same, row_bias, channel_bias };
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_finite("add", a);
  check_finite("add", b);
  AddMode mode;
  if (a.shape() == b.shape()) {
    mode = AddMode::same;
  } else if (a.shape().size() == 2 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0]) {
    mode = AddMode::row_bias;
  } else if (a.shape().size() == 4 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0]) {
    mode = AddMode::channel_bias;
  } else {
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " + " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.value());
  if (mode == AddMode::same) {
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  } else if (mode == AddMode::row_bias) {
    const int m = a.shape()[0], n = a.shape()[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += b.value()[j];
  } else {
    const int N = a.shape()[0], F = a.shape()[1];
    const int hw = a.shape()[2] * a.shape()[3];
    for (int i = 0; i < N; ++i)
      for (int f = 0; f < F; ++f) {
        double* p = out.data() + (static_cast<size_t>(i) * F + f) * hw;
        for (int j = 0; j < hw; ++j) p[j] += b.value()[f];
      }
  }
  auto an = a.node();
  auto bn = b.node();
  Shape ash = a.shape();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn, mode, ash](Node& self) {
    if (an->requires_grad) {
      auto& da = an->ensure_grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& db = bn->ensure_grad();
      if (mode == AddMode::same) {
        for (size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i];
      } else if (mode == AddMode::row_bias) {
        const int m = ash[0], n = ash[1];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) db[j] += self.grad[static_cast<size_t>(i) * n + j];
      } else {
        const int N = ash[0], F = ash[1], hw = ash[2] * ash[3];
        for (int i = 0; i < N; ++i)
          for (int f = 0; f < F; ++f) {
            const double* p = self.grad.data() + (static_cast<size_t>(i) * F + f) * hw;
            for (int j = 0; j < hw; ++j) db[f] += p[j];
          }
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_finite("sub", a);
  check_finite("sub", b);
  if (a.shape() != b.shape())
    throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " - " +
                     shape_str(b.shape()));
  std::vector<double> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& da = an->ensure_grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& db = bn->ensure_grad();
      for (size_t i = 0; i < db.size(); ++i) db[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_finite("mul", a);
  check_finite("mul", b);
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  std::vector<double> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& da = an->ensure_grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& db = bn->ensure_grad();
      for (size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  check_finite("scale", a);
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  std::vector<double> out(a.value());
  for (double& v : out) v *= c;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {a}, [an, c](Node& self) {
    if (an->requires_grad) {
      auto& da = an->ensure_grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += c * self.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  check_finite("relu", x);
  std::vector<double> out(x.value());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, [xn](Node& self) {
    if (xn->requires_grad) {
      auto& dx = xn->ensure_grad();
      for (size_t i = 0; i < dx.size(); ++i)
        if (xn->value[i] > 0.0) dx[i] += self.grad[i];
    }
  });
}

Tensor tanh(const Tensor& x) {
  check_finite("tanh", x);
  std::vector<double> out(x.value());
  for (double& v : out) v = std::tanh(v);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, [xn](Node& self) {
    if (xn->requires_grad) {
      auto& dx = xn->ensure_grad();
      for (size_t i = 0; i < dx.size(); ++i) {
        const double t = self.value[i];
        dx[i] += (1.0 - t * t) * self.grad[i];
      }
    }
  });
}

namespace {

// im2col for a single [C,H,W] sample, 3x3 kernel, pad 1: col is [C*9, H*W].
void im2col3x3(const double* x, int C, int H, int W, double* col) {
  const int HW = H * W;
  for (int c = 0; c < C; ++c) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        double* row = col + (static_cast<size_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * HW;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) {
            std::fill(row + y * W, row + (y + 1) * W, 0.0);
            continue;
          }
          const double* src = x + (static_cast<size_t>(c) * H + sy) * W;
          for (int xpos = 0; xpos < W; ++xpos) {
            const int sx = xpos + dx;
            row[y * W + xpos] = (sx < 0 || sx >= W) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

// Scatter-add the col-gradient back onto the input sample.
void col2im3x3(const double* dcol, int C, int H, int W, double* dx_out) {
  const int HW = H * W;
  for (int c = 0; c < C; ++c) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const double* row = dcol + (static_cast<size_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * HW;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          double* dst = dx_out + (static_cast<size_t>(c) * H + sy) * W;
          for (int xpos = 0; xpos < W; ++xpos) {
            const int sx = xpos + dx;
            if (sx >= 0 && sx < W) dst[sx] += row[y * W + xpos];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel) {
  check_finite("conv2d", x);
  check_finite("conv2d", kernel);
  if (x.shape().size() != 4)
    throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (kernel.shape().size() != 4 || kernel.shape()[2] != 3 || kernel.shape()[3] != 3)
    throw ShapeError("conv2d: kernel must be [F,C,3,3], got " + shape_str(kernel.shape()));
  if (kernel.shape()[1] != x.shape()[1])
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                     " vs kernel " + shape_str(kernel.shape()));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int F = kernel.shape()[0];
  const int HW = H * W, K = C * 9;
  std::vector<double> out(static_cast<size_t>(N) * F * HW);
  {
    MatRM Kmat = CMapM(kernel.value().data(), F, K);
    MatRM col(K, HW), o(F, HW);
    for (int nidx = 0; nidx < N; ++nidx) {
      im2col3x3(x.value().data() + static_cast<size_t>(nidx) * C * HW, C, H, W, col.data());
      o.noalias() = Kmat * col;
      MapM(out.data() + static_cast<size_t>(nidx) * F * HW, F, HW) = o;
    }
  }
  auto xn = x.node();
  auto kn = kernel.node();
  return make_result({N, F, H, W}, std::move(out), {x, kernel},
                     [xn, kn, N, C, H, W, F](Node& self) {
                       const int HW = H * W, K = C * 9;
                       MatRM col(K, HW), dcol(K, HW), dOut(F, HW), dK(F, K);
                       MatRM Kmat = CMapM(kn->value.data(), F, K);
                       for (int nidx = 0; nidx < N; ++nidx) {
                         dOut = CMapM(self.grad.data() + static_cast<size_t>(nidx) * F * HW, F, HW);
                         // col is recomputed rather than cached to keep memory flat
                         im2col3x3(xn->value.data() + static_cast<size_t>(nidx) * C * HW, C, H, W,
                                   col.data());
                         if (kn->requires_grad) {
                           dK.noalias() = dOut * col.transpose();
                           MapM(kn->ensure_grad().data(), F, K) += dK;
                         }
                         if (xn->requires_grad) {
                           dcol.noalias() = Kmat.transpose() * dOut;
                           col2im3x3(dcol.data(), C, H, W,
                                     xn->ensure_grad().data() + static_cast<size_t>(nidx) * C * HW);
                         }
                       }
                     });
}

Tensor maxpool2x2(const Tensor& x) {
  check_finite("maxpool2x2", x);
  if (x.shape().size() != 4 || x.shape()[2] % 2 != 0 || x.shape()[3] % 2 != 0)
    throw ShapeError("maxpool2x2: input must be [N,C,H,W] with even H,W, got " +
                     shape_str(x.shape()));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<size_t>(N) * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
  const auto& in = x.value();
  for (int nc = 0; nc < N * C; ++nc) {
    const double* src = in.data() + static_cast<size_t>(nc) * H * W;
    double* dst = out.data() + static_cast<size_t>(nc) * Ho * Wo;
    std::int32_t* am = argmax->data() + static_cast<size_t>(nc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo) {
        int best = (2 * y) * W + 2 * xo;
        double bv = src[best];
        const int cand[3] = {(2 * y) * W + 2 * xo + 1, (2 * y + 1) * W + 2 * xo,
                             (2 * y + 1) * W + 2 * xo + 1};
        for (int c : cand)
          if (src[c] > bv) {
            bv = src[c];
            best = c;
          }
        dst[y * Wo + xo] = bv;
        am[y * Wo + xo] = best;
      }
  }
  auto xn = x.node();
  return make_result({N, C, Ho, Wo}, std::move(out), {x},
                     [xn, argmax, N, C, H, W, Ho, Wo](Node& self) {
                       if (!xn->requires_grad) return;
                       auto& dx = xn->ensure_grad();
                       for (int nc = 0; nc < N * C; ++nc) {
                         double* d = dx.data() + static_cast<size_t>(nc) * H * W;
                         const double* g = self.grad.data() + static_cast<size_t>(nc) * Ho * Wo;
                         const std::int32_t* am = argmax->data() + static_cast<size_t>(nc) * Ho * Wo;
                         for (int i = 0; i < Ho * Wo; ++i) d[am[i]] += g[i];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto xn = x.node();
  return make_result(std::move(shape), std::vector<double>(x.value()), {x}, [xn](Node& self) {
    if (!xn->requires_grad) return;
    auto& dx = xn->ensure_grad();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int m = parts[0].shape().size() == 2 ? parts[0].shape()[0] : -1;
  if (m < 0) throw ShapeError("concat_cols: inputs must be 2-D");
  int total = 0;
  for (const auto& p : parts) {
    check_finite("concat_cols", p);
    if (p.shape().size() != 2 || p.shape()[0] != m)
      throw ShapeError("concat_cols: row mismatch");
    total += p.shape()[1];
  }
  std::vector<double> out(static_cast<size_t>(m) * total);
  int off = 0;
  for (const auto& p : parts) {
    const int n = p.shape()[1];
    for (int i = 0; i < m; ++i)
      std::copy_n(p.value().data() + static_cast<size_t>(i) * n, n,
                  out.data() + static_cast<size_t>(i) * total + off);
    off += n;
  }
  auto node = std::make_shared<Node>();
  node->shape = {m, total};
  node->value = std::move(out);
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    std::vector<NodePtr> ps;
    std::vector<int> widths;
    for (const auto& p : parts) {
      node->parents.push_back(p.node());
      ps.push_back(p.node());
      widths.push_back(p.shape()[1]);
    }
    node->backward_fn = [ps, widths, m, total](Node& self) {
      int off = 0;
      for (size_t pi = 0; pi < ps.size(); ++pi) {
        const int n = widths[pi];
        if (ps[pi]->requires_grad) {
          auto& dp = ps[pi]->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              dp[static_cast<size_t>(i) * n + j] +=
                  self.grad[static_cast<size_t>(i) * total + off + j];
        }
        off += n;
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor mean(const Tensor& x) {
  check_finite("mean", x);
  const double n = static_cast<double>(x.size());
  double s = std::accumulate(x.value().begin(), x.value().end(), 0.0);
  auto xn = x.node();
  return make_result({}, {s / n}, {x}, [xn, n](Node& self) {
    if (!xn->requires_grad) return;
    auto& dx = xn->ensure_grad();
    const double g = self.grad[0] / n;
    for (double& v : dx) v += g;
  });
}

Tensor sum(const Tensor& x) {
  check_finite("sum", x);
  double s = std::accumulate(x.value().begin(), x.value().end(), 0.0);
  auto xn = x.node();
  return make_result({}, {s}, {x}, [xn](Node& self) {
    if (!xn->requires_grad) return;
    auto& dx = xn->ensure_grad();
    for (double& v : dx) v += self.grad[0];
  });
}

Tensor l1_norm(const Tensor& x) {
  check_finite("l1_norm", x);
  double s = 0.0;
  for (double v : x.value()) s += std::abs(v);
  auto xn = x.node();
  return make_result({}, {s}, {x}, [xn](Node& self) {
    if (!xn->requires_grad) return;
    auto& dx = xn->ensure_grad();
    for (size_t i = 0; i < dx.size(); ++i) {
      const double v = xn->value[i];
      // subgradient 0 at the kink
      dx[i] += self.grad[0] * (v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0);
    }
  });
}

Tensor sq_l2_norm(const Tensor& x) {
  check_finite("sq_l2_norm", x);
  double s = 0.0;
  for (double v : x.value()) s += v * v;
  auto xn = x.node();
  return make_result({}, {s}, {x}, [xn](Node& self) {
    if (!xn->requires_grad) return;
    auto& dx = xn->ensure_grad();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * xn->value[i] * self.grad[0];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_finite("softmax_cross_entropy", logits);
  if (logits.shape().size() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be [n, classes], got " +
                     shape_str(logits.shape()));
  const int n = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || y >= c) throw ShapeError("softmax_cross_entropy: label out of range");
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * c);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = logits.value().data() + static_cast<size_t>(i) * c;
    double* p = probs->data() + static_cast<size_t>(i) * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    for (int j = 0; j < c; ++j) p[j] = std::exp(row[j] - logz);
    loss -= row[labels[i]] - logz;
  }
  loss /= n;
  auto ln = logits.node();
  auto labs = std::make_shared<std::vector<int>>(labels);
  return make_result({}, {loss}, {logits}, [ln, probs, labs, n, c](Node& self) {
    if (!ln->requires_grad) return;
    auto& dl = ln->ensure_grad();
    const double g = self.grad[0] / n;
    for (int i = 0; i < n; ++i) {
      const double* p = probs->data() + static_cast<size_t>(i) * c;
      double* d = dl.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) d[j] += g * (p[j] - (j == (*labs)[i] ? 1.0 : 0.0));
    }
  });
}

Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets) {
  check_finite("sigmoid_bce", logits);
  check_finite("sigmoid_bce", targets);
  if (logits.shape() != targets.shape())
    throw ShapeError("sigmoid_bce: shape mismatch " + shape_str(logits.shape()) + " vs " +
                     shape_str(targets.shape()));
  const auto& l = logits.value();
  const auto& t = targets.value();
  const double n = static_cast<double>(l.size());
  double loss = 0.0;
  for (size_t i = 0; i < l.size(); ++i) {
    // stable form: max(l,0) - l*t + log(1 + exp(-|l|))
    loss += std::max(l[i], 0.0) - l[i] * t[i] + std::log1p(std::exp(-std::abs(l[i])));
  }
  loss /= n;
  auto ln = logits.node();
  auto tn = targets.node();
  return make_result({}, {loss}, {logits, targets}, [ln, tn, n](Node& self) {
    const double g = self.grad[0] / n;
    if (ln->requires_grad) {
      auto& dl = ln->ensure_grad();
      for (size_t i = 0; i < dl.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-ln->value[i]));
        dl[i] += g * (s - tn->value[i]);
      }
    }
    if (tn->requires_grad) {
      auto& dt = tn->ensure_grad();
      for (size_t i = 0; i < dt.size(); ++i) dt[i] += g * (-ln->value[i]);
    }
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  auto root = loss.node();
  if (!root->requires_grad) return;  // constants only; nothing to do

  // Iterative post-order DFS for reverse topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace dir
