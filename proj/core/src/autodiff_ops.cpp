#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <Eigen/Core>

#include "instformer/autodiff.hpp"
#include "instformer/error.hpp"

namespace instformer::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_rank2(std::string_view op, const Tensor& t) {
  if (t.rank() != 2) shape_fail(op, "expected a 2-D tensor, got " + to_string(t.shape()));
}

ConstMap as_matrix(const Node& n) {
  return ConstMap(n.value.data(), static_cast<Eigen::Index>(n.shape[0]), static_cast<Eigen::Index>(n.shape[1]));
}

bool wants_grad(const Node& n) { return n.requires_grad; }

MutMap grad_matrix(Node& n) {
  auto& g = n.grad_buffer();
  return MutMap(g.data(), static_cast<Eigen::Index>(n.shape[0]), static_cast<Eigen::Index>(n.shape[1]));
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_axis(std::string_view op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <class F>
Tensor unary(std::string_view op, const Tensor& a, F&& f, std::function<double(double, double)> dfdx_from_xy) {
  std::vector<double> out(a.size());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [d = std::move(dfdx_from_xy)](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * d(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) shape_fail("matmul", "inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(0), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = as_matrix(*a.node()) * as_matrix(*b.node());
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const ConstMap dc(self.grad.data(), self.shape[0], self.shape[1]);
    if (wants_grad(pa)) grad_matrix(pa).noalias() += dc * as_matrix(pb).transpose();
    if (wants_grad(pb)) grad_matrix(pb).noalias() += as_matrix(pa).transpose() * dc;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  if (a.dim(1) != b.dim(1))
    shape_fail("matmul_nt", "inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()) + "^T");
  const std::size_t m = a.dim(0), n = b.dim(0);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = as_matrix(*a.node()) * as_matrix(*b.node()).transpose();
  return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const ConstMap dc(self.grad.data(), self.shape[0], self.shape[1]);
    if (wants_grad(pa)) grad_matrix(pa).noalias() += dc * as_matrix(pb);
    if (wants_grad(pb)) grad_matrix(pb).noalias() += dc.transpose() * as_matrix(pa);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), n, m) = as_matrix(*a.node()).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    grad_matrix(p) += ConstMap(self.grad.data(), self.shape[0], self.shape[1]).transpose();
  });
}

namespace {

// b matches a, or b matches a trailing suffix of a's shape.
std::size_t broadcast_period(std::string_view op, const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return a.size();
  if (sb.size() < sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size())))
    return b.size();
  shape_fail(op, "incompatible shapes " + to_string(sa) + " and " + to_string(sb));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t period = broadcast_period("add", a, b);
  std::vector<double> out(a.value());
  const auto& vb = b.value();
  for (std::size_t base = 0; base < out.size(); base += period)
    for (std::size_t j = 0; j < period; ++j) out[base + j] += vb[j];
  return make_result("add", a.shape(), std::move(out), {a, b}, [period](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (wants_grad(pa)) accumulate(pa, self.grad);
    if (wants_grad(pb)) {
      auto& g = pb.grad_buffer();
      for (std::size_t base = 0; base < self.grad.size(); base += period)
        for (std::size_t j = 0; j < period; ++j) g[j] += self.grad[base + j];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t period = broadcast_period("sub", a, b);
  std::vector<double> out(a.value());
  const auto& vb = b.value();
  for (std::size_t base = 0; base < out.size(); base += period)
    for (std::size_t j = 0; j < period; ++j) out[base + j] -= vb[j];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [period](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (wants_grad(pa)) accumulate(pa, self.grad);
    if (wants_grad(pb)) {
      auto& g = pb.grad_buffer();
      for (std::size_t base = 0; base < self.grad.size(); base += period)
        for (std::size_t j = 0; j < period; ++j) g[j] -= self.grad[base + j];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t period = broadcast_period("mul", a, b);
  std::vector<double> out(a.value());
  const auto& vb = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i % period];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [period](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (wants_grad(pa)) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i % period];
    }
    if (wants_grad(pb)) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % period] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.value());
  for (auto& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) shape_fail("concat", "cannot join " + to_string(first) + " with " + to_string(s) + " on axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
    lens.push_back(s[axis]);
  }
  const AxisSplit total = split_axis("concat", out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const std::size_t chunk = lens[k] * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total.len * total.inner + offset));
    offset += chunk;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat", out_shape, std::move(out), std::move(inputs), [total, lens](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      const std::size_t chunk = lens[k] * total.inner;
      if (wants_grad(p)) {
        auto& g = p.grad_buffer();
        for (std::size_t o = 0; o < total.outer; ++o) {
          const double* src = self.grad.data() + o * total.len * total.inner + offset;
          double* dst = g.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor relu(const Tensor& a) {
  if (auto* rec = branch_recorder()) {
    std::uint64_t word = 0;
    std::size_t bits = 0;
    for (double x : a.value()) {
      word = (word << 1) | (x > 0.0 ? 1u : 0u);
      if (++bits == 64) {
        rec->mix(word);
        word = 0;
        bits = 0;
      }
    }
    rec->mix(word);
  }
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softmax(const Tensor& a, std::size_t axis, std::span<const double> additive_mask) {
  const AxisSplit s = split_axis("softmax", a.shape(), axis);
  if (!additive_mask.empty() && additive_mask.size() != a.size())
    shape_fail("softmax", "mask holds " + std::to_string(additive_mask.size()) + " values for logits " + to_string(a.shape()));
  const auto& x = a.value();
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = base + l * s.inner;
        const double v = additive_mask.empty() ? x[idx] : x[idx] + additive_mask[idx];
        out[idx] = v;
        mx = std::max(mx, v);
      }
      if (mx == -std::numeric_limits<double>::infinity())
        throw NumericError("softmax: every entry of a row is masked");
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = base + l * s.inner;
        out[idx] = std::exp(out[idx] - mx);
        total += out[idx];
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  return make_result("softmax", a.shape(), std::move(out), {a}, [s](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    const auto& y = self.value;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += y[base + l * s.inner] * dy[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          g[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) shape_fail("layer_norm", "scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    shape_fail("layer_norm", "gain/bias of size " + std::to_string(gain.size()) + "/" + std::to_string(bias.size()) +
                                 " for feature width " + std::to_string(d));
  const std::size_t rows = x.size() / d;
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mean) * inv_std[r];
      out[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                     [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const auto& dy = self.grad;
                       if (wants_grad(pg)) {
                         auto& g = pg.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < d; ++i) g[i] += dy[r * d + i] * xhat[r * d + i];
                       }
                       if (wants_grad(pb)) {
                         auto& g = pb.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < d; ++i) g[i] += dy[r * d + i];
                       }
                       if (wants_grad(px)) {
                         auto& g = px.grad_buffer();
                         const auto& gain_v = pg.value;
                         for (std::size_t r = 0; r < rows; ++r) {
                           double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                           for (std::size_t i = 0; i < d; ++i) {
                             const double dxh = dy[r * d + i] * gain_v[i];
                             mean_dxhat += dxh;
                             mean_dxhat_xhat += dxh * xhat[r * d + i];
                           }
                           mean_dxhat /= static_cast<double>(d);
                           mean_dxhat_xhat /= static_cast<double>(d);
                           for (std::size_t i = 0; i < d; ++i) {
                             const double dxh = dy[r * d + i] * gain_v[i];
                             g[r * d + i] += inv_std[r] * (dxh - mean_dxhat - xhat[r * d + i] * mean_dxhat_xhat);
                           }
                         }
                       }
                     });
}

Tensor reduce_max(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis("reduce_max", a.shape(), axis);
  if (s.len == 0) shape_fail("reduce_max", "empty axis");
  const auto& x = a.value();
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      std::size_t best = base;
      for (std::size_t l = 1; l < s.len; ++l) {
        const std::size_t idx = base + l * s.inner;
        if (x[idx] > x[best]) best = idx;
      }
      out[o * s.inner + in] = x[best];
      arg[o * s.inner + in] = best;
    }
  }
  if (auto* rec = branch_recorder())
    for (auto i : arg) rec->mix(i);
  return make_result("reduce_max", drop_axis(a.shape(), axis), std::move(out), {a}, [arg = std::move(arg)](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

Tensor reduce_mean(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis("reduce_mean", a.shape(), axis);
  if (s.len == 0) shape_fail("reduce_mean", "empty axis");
  const auto& x = a.value();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += x[(o * s.len + l) * s.inner + in];
  const double inv = 1.0 / static_cast<double>(s.len);
  for (auto& v : out) v *= inv;
  return make_result("reduce_mean", drop_axis(a.shape(), axis), std::move(out), {a}, [s, inv](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t in = 0; in < s.inner; ++in) g[(o * s.len + l) * s.inner + in] += inv * self.grad[o * s.inner + in];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.value()) total += v;
  return make_result("sum", {1}, {total}, {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor l2_normalize(const Tensor& a, std::size_t axis) {
  constexpr double kGuard = 1e-12;
  const AxisSplit s = split_axis("l2_normalize", a.shape(), axis);
  const auto& x = a.value();
  std::vector<double> out(a.size());
  std::vector<double> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double sq = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) sq += x[base + l * s.inner] * x[base + l * s.inner];
      const double n = std::sqrt(sq);
      norms[o * s.inner + in] = n;
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = x[base + l * s.inner] / (n + kGuard);
    }
  }
  return make_result("l2_normalize", a.shape(), std::move(out), {a}, [s, norms = std::move(norms)](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    const auto& x = p.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        const double n = norms[o * s.inner + in];
        const double denom = n + kGuard;
        double gx = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) gx += self.grad[base + l * s.inner] * x[base + l * s.inner];
        const double coupling = n > 0.0 ? gx / (denom * denom * n) : 0.0;
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          g[idx] += self.grad[idx] / denom - x[idx] * coupling;
        }
      }
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis("slice", a.shape(), axis);
  if (begin >= end || end > s.len)
    shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                            std::to_string(axis) + " of " + to_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  std::vector<double> out(s.outer * chunk);
  const auto& x = a.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((o * s.len + begin) * s.inner), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  return make_result("slice", std::move(out_shape), std::move(out), {a}, [s, begin, chunk](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = g.data() + (o * s.len + begin) * s.inner;
      const double* src = self.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() < 1) shape_fail("gather_rows", "scalar input");
  const std::size_t n = a.dim(0);
  const std::size_t width = a.size() / std::max<std::size_t>(n, 1);
  for (auto r : rows)
    if (r >= n) shape_fail("gather_rows", "row " + std::to_string(r) + " out of range for " + to_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  const auto& x = a.value();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result("gather_rows", std::move(out_shape), std::move(out), {a}, [idx = std::move(idx), width](Node& self) {
    Node& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += self.grad[i * width + j];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", "cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  return make_result("reshape", std::move(shape), a.value(), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (wants_grad(p)) accumulate(p, self.grad);
  });
}

namespace {

using OpFn = std::function<Tensor(std::span<const Tensor>, const OpAttrs&)>;

void arity(std::string_view name, std::span<const Tensor> in, std::size_t n) {
  if (in.size() != n)
    throw InvalidArgument("op_apply(" + std::string(name) + "): expected " + std::to_string(n) + " inputs, got " +
                          std::to_string(in.size()));
}

const std::map<std::string, OpFn, std::less<>>& registry() {
  static const std::map<std::string, OpFn, std::less<>> ops = {
      {"matmul", [](auto in, const auto&) { arity("matmul", in, 2); return matmul(in[0], in[1]); }},
      {"matmul_nt", [](auto in, const auto&) { arity("matmul_nt", in, 2); return matmul_nt(in[0], in[1]); }},
      {"transpose", [](auto in, const auto&) { arity("transpose", in, 1); return transpose(in[0]); }},
      {"add", [](auto in, const auto&) { arity("add", in, 2); return add(in[0], in[1]); }},
      {"sub", [](auto in, const auto&) { arity("sub", in, 2); return sub(in[0], in[1]); }},
      {"mul", [](auto in, const auto&) { arity("mul", in, 2); return mul(in[0], in[1]); }},
      {"scale", [](auto in, const auto& at) { arity("scale", in, 1); return scale(in[0], at.scalar); }},
      {"concat", [](auto in, const auto& at) { return concat(in, at.axis); }},
      {"relu", [](auto in, const auto&) { arity("relu", in, 1); return relu(in[0]); }},
      {"tanh", [](auto in, const auto&) { arity("tanh", in, 1); return tanh(in[0]); }},
      {"softmax", [](auto in, const auto& at) { arity("softmax", in, 1); return softmax(in[0], at.axis, at.mask); }},
      {"layer_norm", [](auto in, const auto&) { arity("layer_norm", in, 3); return layer_norm(in[0], in[1], in[2]); }},
      {"reduce_max", [](auto in, const auto& at) { arity("reduce_max", in, 1); return reduce_max(in[0], at.axis); }},
      {"reduce_mean", [](auto in, const auto& at) { arity("reduce_mean", in, 1); return reduce_mean(in[0], at.axis); }},
      {"sum", [](auto in, const auto&) { arity("sum", in, 1); return sum(in[0]); }},
      {"l2_normalize", [](auto in, const auto& at) { arity("l2_normalize", in, 1); return l2_normalize(in[0], at.axis); }},
      {"slice", [](auto in, const auto& at) { arity("slice", in, 1); return slice(in[0], at.axis, at.begin, at.end); }},
      {"gather_rows", [](auto in, const auto& at) { arity("gather_rows", in, 1); return gather_rows(in[0], at.indices); }},
      {"reshape", [](auto in, const auto& at) { arity("reshape", in, 1); return reshape(in[0], at.shape); }},
  };
  return ops;
}

}  // namespace

std::vector<std::string> op_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

Tensor op_apply(std::string_view name, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  const auto& ops = registry();
  auto it = ops.find(name);
  if (it == ops.end()) throw InvalidArgument("op_apply: unknown operation '" + std::string(name) + "'");
  return it->second(inputs, attrs);
}

}  // namespace instformer::ad
