#include "dualnet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dualnet {

const Tape::Node& Tape::node(ValueId id) const {
  if (id >= nodes_.size())
    throw Error("tape: value id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

ValueId Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = n.value.requires_grad;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

ValueId Tape::record(const char* op, std::vector<ValueId> inputs, Tensor value,
                     BackwardFn backward) {
  bool rg = false;
  for (ValueId in : inputs) rg = rg || node(in).requires_grad;
  value.quantize();
  if (check_finite_ && !value.all_finite())
    throw NumericError(std::string(op) + ": non-finite value produced");
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.value.requires_grad = rg;
  n.requires_grad = rg;
  if (rg) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

const Tensor& Tape::value(ValueId id) const { return node(id).value; }

Tensor* Tape::maybe_grad(ValueId id) {
  if (!in_backward_) throw Error("tape: gradient access outside backward");
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!has_grad_[id]) {
    grads_[id] = Tensor::zeros(n.value.shape());
    has_grad_[id] = 1;
  }
  return &grads_[id];
}

GradMap Tape::backward(ValueId loss) {
  const Node& ln = node(loss);
  if (ln.value.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " +
                     ln.value.shape_str());
  grads_.assign(nodes_.size(), Tensor{});
  has_grad_.assign(nodes_.size(), 0);
  in_backward_ = true;
  grads_[loss] = Tensor::full(ln.value.shape(), 1.0);
  has_grad_[loss] = 1;

  for (ValueId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!has_grad_[id] || !n.backward) continue;
    n.backward(*this, id, grads_[id]);
  }

  GradMap out;
  for (ValueId id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (!n.leaf || !n.requires_grad) continue;
    if (has_grad_[id]) {
      Tensor g = std::move(grads_[id]);
      if (n.value.dtype() == Dtype::f32) {
        g = g.cast(Dtype::f32);
      }
      out.emplace(id, std::move(g));
    } else {
      out.emplace(id, Tensor::zeros(n.value.shape(), n.value.dtype()));
    }
  }
  in_backward_ = false;
  grads_.clear();
  has_grad_.clear();
  return out;
}

namespace ops {
namespace {

void require_rank(const Tensor& x, std::size_t r, const char* op) {
  if (x.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) +
                     ", got shape " + x.shape_str());
}

// a[m,k] x b[k,n], optionally transposing either operand's storage
void mm_into(const std::vector<double>& a, std::size_t ar, std::size_t ac,
             bool ta, const std::vector<double>& b, std::size_t br,
             std::size_t bc, bool tb, std::vector<double>& out, bool accumulate,
             std::size_t a_off = 0, std::size_t b_off = 0,
             std::size_t out_off = 0) {
  const std::size_t m = ta ? ac : ar;
  const std::size_t k = ta ? ar : ac;
  const std::size_t n = tb ? br : bc;
  if (!accumulate) std::fill(out.begin() + out_off, out.begin() + out_off + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[a_off + p * ac + i] : a[a_off + i * ac + p];
      if (av == 0.0) continue;
      const double* brow = tb ? nullptr : &b[b_off + p * bc];
      double* orow = &out[out_off + i * n];
      if (!tb) {
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * b[b_off + j * bc + p];
      }
    }
  }
}

}  // namespace

ValueId matmul(Tape& t, ValueId a, ValueId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  if (av.extent(1) != bv.extent(0))
    throw ShapeError("matmul: inner extents differ, " + av.shape_str() + " x " +
                     bv.shape_str());
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor out({m, n}, av.dtype());
  mm_into(av.data(), m, k, false, bv.data(), k, n, false, out.data(), false);
  return t.record("matmul", {a, b}, std::move(out),
                  [a, b, m, k, n](Tape& tp, ValueId, const Tensor& g) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (Tensor* ga = tp.maybe_grad(a))
                      mm_into(g.data(), m, n, false, bv.data(), k, n, true,
                              ga->data(), true);
                    if (Tensor* gb = tp.maybe_grad(b))
                      mm_into(av.data(), m, k, true, g.data(), m, n, false,
                              gb->data(), true);
                  });
}

ValueId bmm(Tape& t, ValueId a, ValueId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_rank(av, 3, "bmm");
  require_rank(bv, 3, "bmm");
  if (av.extent(0) != bv.extent(0) || av.extent(2) != bv.extent(1))
    throw ShapeError("bmm: incompatible shapes " + av.shape_str() + " x " +
                     bv.shape_str());
  const std::size_t B = av.extent(0), m = av.extent(1), k = av.extent(2),
                    n = bv.extent(2);
  Tensor out({B, m, n}, av.dtype());
  for (std::size_t i = 0; i < B; ++i)
    mm_into(av.data(), m, k, false, bv.data(), k, n, false, out.data(), false,
            i * m * k, i * k * n, i * m * n);
  return t.record(
      "bmm", {a, b}, std::move(out),
      [a, b, B, m, k, n](Tape& tp, ValueId, const Tensor& g) {
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        if (Tensor* ga = tp.maybe_grad(a))
          for (std::size_t i = 0; i < B; ++i)
            mm_into(g.data(), m, n, false, bv.data(), k, n, true, ga->data(),
                    true, i * m * n, i * k * n, i * m * k);
        if (Tensor* gb = tp.maybe_grad(b))
          for (std::size_t i = 0; i < B; ++i)
            mm_into(av.data(), m, k, true, g.data(), m, n, false, gb->data(),
                    true, i * m * k, i * m * n, i * k * n);
      });
}

ValueId transpose2d(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 2, "transpose2d");
  const std::size_t m = xv.extent(0), n = xv.extent(1);
  Tensor out({n, m}, xv.dtype());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = xv(i, j);
  return t.record("transpose2d", {x}, std::move(out),
                  [x, m, n](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                          (*gx)(i, j) += g(j, i);
                  });
}

ValueId transpose_last2(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 3, "transpose_last2");
  const std::size_t B = xv.extent(0), m = xv.extent(1), n = xv.extent(2);
  Tensor out({B, n, m}, xv.dtype());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out(b, j, i) = xv(b, i, j);
  return t.record("transpose_last2", {x}, std::move(out),
                  [x, B, m, n](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                            (*gx)(b, i, j) += g(b, j, i);
                  });
}

ValueId add(Tape& t, ValueId a, ValueId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv))
    throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " +
                     bv.shape_str());
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) += bv(i);
  return t.record("add", {a, b}, std::move(out),
                  [a, b](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* ga = tp.maybe_grad(a))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*ga)(i) += g(i);
                    if (Tensor* gb = tp.maybe_grad(b))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*gb)(i) += g(i);
                  });
}

ValueId mul(Tape& t, ValueId a, ValueId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv))
    throw ShapeError("mul: shape mismatch " + av.shape_str() + " vs " +
                     bv.shape_str());
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) *= bv(i);
  return t.record("mul", {a, b}, std::move(out),
                  [a, b](Tape& tp, ValueId, const Tensor& g) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (Tensor* ga = tp.maybe_grad(a))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*ga)(i) += g(i) * bv(i);
                    if (Tensor* gb = tp.maybe_grad(b))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*gb)(i) += g(i) * av(i);
                  });
}

ValueId affine_scalar(Tape& t, ValueId x, double s, double c) {
  Tensor out = t.value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) = s * out(i) + c;
  return t.record("affine_scalar", {x}, std::move(out),
                  [x, s](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*gx)(i) += s * g(i);
                  });
}

ValueId add_bias_rows(Tape& t, ValueId x, ValueId bias) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(bias);
  require_rank(xv, 2, "add_bias_rows");
  require_rank(bv, 1, "add_bias_rows");
  if (xv.extent(1) != bv.extent(0))
    throw ShapeError("add_bias_rows: " + xv.shape_str() + " with bias " +
                     bv.shape_str());
  const std::size_t m = xv.extent(0), n = xv.extent(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv(j);
  return t.record("add_bias_rows", {x, bias}, std::move(out),
                  [x, bias, m, n](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*gx)(i) += g(i);
                    if (Tensor* gb = tp.maybe_grad(bias))
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                          (*gb)(j) += g(i, j);
                  });
}

ValueId concat_channels(Tape& t, const std::vector<ValueId>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = t.value(xs[0]);
  if (first.rank() < 2)
    throw ShapeError("concat_channels: input 0 has rank " +
                     std::to_string(first.rank()) + ", need at least 2");
  std::vector<std::size_t> lead(first.shape().begin(), first.shape().end() - 1);
  std::size_t total_c = 0;
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& v = t.value(xs[i]);
    bool compatible = v.rank() == first.rank();
    if (compatible) {
      std::vector<std::size_t> l(v.shape().begin(), v.shape().end() - 1);
      compatible = l == lead;
    }
    if (!compatible)
      throw ShapeError("concat_channels: input " + std::to_string(i) +
                       " has shape " + v.shape_str() +
                       ", incompatible with input 0 " + first.shape_str());
    widths.push_back(v.shape().back());
    total_c += v.shape().back();
  }
  std::size_t outer = 1;
  for (std::size_t e : lead) outer *= e;
  std::vector<std::size_t> out_shape = lead;
  out_shape.push_back(total_c);
  Tensor out(out_shape, first.dtype());
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Tensor& v = t.value(xs[i]);
      const std::size_t w = widths[i];
      for (std::size_t j = 0; j < w; ++j)
        out(o * total_c + off + j) = v(o * w + j);
      off += w;
    }
  }
  return t.record(
      "concat_channels", xs, std::move(out),
      [xs, widths, outer, total_c](Tape& tp, ValueId, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
          const std::size_t w = widths[i];
          if (Tensor* gx = tp.maybe_grad(xs[i]))
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t j = 0; j < w; ++j)
                (*gx)(o * w + j) += g(o * total_c + off + j);
          off += w;
        }
      });
}

ValueId activation(Tape& t, ValueId x, Act kind) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  const char* name = "relu";
  switch (kind) {
    case Act::relu:
      for (std::size_t i = 0; i < out.numel(); ++i)
        out(i) = out(i) > 0.0 ? out(i) : 0.0;
      break;
    case Act::sigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < out.numel(); ++i)
        out(i) = 1.0 / (1.0 + std::exp(-out(i)));
      break;
    case Act::tanh:
      name = "tanh";
      for (std::size_t i = 0; i < out.numel(); ++i) out(i) = std::tanh(out(i));
      break;
  }
  return t.record(name, {x}, std::move(out),
                  [x, kind](Tape& tp, ValueId self, const Tensor& g) {
                    Tensor* gx = tp.maybe_grad(x);
                    if (!gx) return;
                    const Tensor& y = tp.value(self);
                    const Tensor& xv = tp.value(x);
                    switch (kind) {
                      case Act::relu:
                        for (std::size_t i = 0; i < g.numel(); ++i)
                          if (xv(i) > 0.0) (*gx)(i) += g(i);
                        break;
                      case Act::sigmoid:
                        for (std::size_t i = 0; i < g.numel(); ++i)
                          (*gx)(i) += g(i) * y(i) * (1.0 - y(i));
                        break;
                      case Act::tanh:
                        for (std::size_t i = 0; i < g.numel(); ++i)
                          (*gx)(i) += g(i) * (1.0 - y(i) * y(i));
                        break;
                    }
                  });
}

ValueId relu(Tape& t, ValueId x) { return activation(t, x, Act::relu); }
ValueId sigmoid(Tape& t, ValueId x) { return activation(t, x, Act::sigmoid); }
ValueId tanh_(Tape& t, ValueId x) { return activation(t, x, Act::tanh); }

ValueId softmax_rows(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 2, "softmax_rows");
  const std::size_t m = xv.extent(0), n = xv.extent(1);
  Tensor out({m, n}, xv.dtype());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = xv(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(xv(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= z;
  }
  return t.record("softmax_rows", {x}, std::move(out),
                  [x, m, n](Tape& tp, ValueId self, const Tensor& g) {
                    Tensor* gx = tp.maybe_grad(x);
                    if (!gx) return;
                    const Tensor& y = tp.value(self);
                    for (std::size_t i = 0; i < m; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j)
                        dot += g(i, j) * y(i, j);
                      for (std::size_t j = 0; j < n; ++j)
                        (*gx)(i, j) += y(i, j) * (g(i, j) - dot);
                    }
                  });
}

ValueId reshape(Tape& t, ValueId x, std::vector<std::size_t> shape) {
  const Tensor& xv = t.value(x);
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  if (n != xv.numel())
    throw ShapeError("reshape: cannot view " + xv.shape_str() + " as " +
                     shape_str(shape));
  Tensor out = Tensor::from(shape, xv.data(), xv.dtype());
  return t.record("reshape", {x}, std::move(out),
                  [x](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*gx)(i) += g(i);
                  });
}

ValueId slice_time(Tape& t, ValueId x, std::size_t p) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 3, "slice_time");
  const std::size_t b = xv.extent(0), L = xv.extent(1), c = xv.extent(2);
  if (p >= L)
    throw ShapeError("slice_time: position " + std::to_string(p) +
                     " out of range for " + xv.shape_str());
  Tensor out({b, c}, xv.dtype());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = xv(i, p, j);
  return t.record("slice_time", {x}, std::move(out),
                  [x, p, b, c](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                          (*gx)(i, p, j) += g(i, j);
                  });
}

ValueId stack_time(Tape& t, const std::vector<ValueId>& steps) {
  if (steps.empty()) throw ShapeError("stack_time: no inputs");
  const Tensor& first = t.value(steps[0]);
  require_rank(first, 2, "stack_time");
  const std::size_t b = first.extent(0), c = first.extent(1),
                    L = steps.size();
  for (std::size_t p = 0; p < L; ++p) {
    const Tensor& v = t.value(steps[p]);
    if (!v.same_shape(first))
      throw ShapeError("stack_time: input " + std::to_string(p) +
                       " has shape " + v.shape_str() + ", expected " +
                       first.shape_str());
  }
  Tensor out({b, L, c}, first.dtype());
  for (std::size_t p = 0; p < L; ++p) {
    const Tensor& v = t.value(steps[p]);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) out(i, p, j) = v(i, j);
  }
  return t.record("stack_time", steps, std::move(out),
                  [steps, b, c](Tape& tp, ValueId, const Tensor& g) {
                    for (std::size_t p = 0; p < steps.size(); ++p)
                      if (Tensor* gs = tp.maybe_grad(steps[p]))
                        for (std::size_t i = 0; i < b; ++i)
                          for (std::size_t j = 0; j < c; ++j)
                            (*gs)(i, j) += g(i, p, j);
                  });
}

ValueId mean_time(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 3, "mean_time");
  const std::size_t b = xv.extent(0), L = xv.extent(1), c = xv.extent(2);
  Tensor out({b, c}, xv.dtype());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t p = 0; p < L; ++p)
      for (std::size_t j = 0; j < c; ++j) out(i, j) += xv(i, p, j);
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) /= double(L);
  return t.record("mean_time", {x}, std::move(out),
                  [x, b, L, c](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t p = 0; p < L; ++p)
                          for (std::size_t j = 0; j < c; ++j)
                            (*gx)(i, p, j) += g(i, j) / double(L);
                  });
}

ValueId depthwise_conv1d(Tape& t, ValueId x, ValueId kernel) {
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(kernel);
  require_rank(xv, 3, "depthwise_conv1d");
  require_rank(kv, 2, "depthwise_conv1d");
  const std::size_t b = xv.extent(0), L = xv.extent(1), c = xv.extent(2);
  const std::size_t K = kv.extent(0);
  if (kv.extent(1) != c)
    throw ShapeError("depthwise_conv1d: kernel " + kv.shape_str() +
                     " does not match " + std::to_string(c) + " channels");
  if (K % 2 == 0)
    throw ShapeError("depthwise_conv1d: kernel size " + std::to_string(K) +
                     " must be odd");
  const std::size_t P = (K - 1) / 2;
  Tensor out({b, L, c}, xv.dtype());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t tt = 0; tt < K; ++tt) {
        const long src = long(l) + long(tt) - long(P);
        if (src < 0 || src >= long(L)) continue;
        for (std::size_t j = 0; j < c; ++j)
          out(i, l, j) += kv(tt, j) * xv(i, std::size_t(src), j);
      }
  return t.record(
      "depthwise_conv1d", {x, kernel}, std::move(out),
      [x, kernel, b, L, c, K, P](Tape& tp, ValueId, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& kv = tp.value(kernel);
        Tensor* gx = tp.maybe_grad(x);
        Tensor* gk = tp.maybe_grad(kernel);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t l = 0; l < L; ++l)
            for (std::size_t tt = 0; tt < K; ++tt) {
              const long src = long(l) + long(tt) - long(P);
              if (src < 0 || src >= long(L)) continue;
              for (std::size_t j = 0; j < c; ++j) {
                if (gx) (*gx)(i, std::size_t(src), j) += kv(tt, j) * g(i, l, j);
                if (gk) (*gk)(tt, j) += xv(i, std::size_t(src), j) * g(i, l, j);
              }
            }
      });
}

ValueId maxpool1d(Tape& t, ValueId x, std::size_t size, std::size_t stride) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 3, "maxpool1d");
  if (size < 1 || stride < 1)
    throw ShapeError("maxpool1d: size and stride must be positive");
  const std::size_t b = xv.extent(0), L = xv.extent(1), c = xv.extent(2);
  const std::size_t Lo = (L + stride - 1) / stride;
  Tensor out({b, Lo, c}, xv.dtype());
  std::vector<std::uint32_t> arg(b * Lo * c);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t l = 0; l < Lo; ++l)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t start = l * stride;
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_p = start;
        for (std::size_t w = 0; w < size; ++w) {
          const std::size_t p = start + w;
          if (p >= L) break;
          if (xv(i, p, j) > best) {
            best = xv(i, p, j);
            best_p = p;
          }
        }
        out(i, l, j) = best;
        arg[(i * Lo + l) * c + j] = std::uint32_t(best_p);
      }
  return t.record("maxpool1d", {x}, std::move(out),
                  [x, b, Lo, c, arg](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t l = 0; l < Lo; ++l)
                          for (std::size_t j = 0; j < c; ++j)
                            (*gx)(i, arg[(i * Lo + l) * c + j], j) +=
                                g(i, l, j);
                  });
}

ValueId batchnorm_train(Tape& t, ValueId x, ValueId gamma, ValueId beta,
                        double eps, std::vector<double>* mean_out,
                        std::vector<double>* var_out) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  require_rank(xv, 3, "batchnorm");
  const std::size_t b = xv.extent(0), L = xv.extent(1), c = xv.extent(2);
  if (gv.numel() != c || bv.numel() != c)
    throw ShapeError("batchnorm: gamma/beta size must match " +
                     std::to_string(c) + " channels");
  if (b < 2)
    throw ShapeError("batchnorm: train mode needs batch >= 2, got " +
                     std::to_string(b));
  const std::size_t N = b * L;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv(i, l, j);
  for (std::size_t j = 0; j < c; ++j) mean[j] /= double(N);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv(i, l, j) - mean[j];
        var[j] += d * d;
      }
  for (std::size_t j = 0; j < c; ++j) var[j] /= double(N);
  if (mean_out) *mean_out = mean;
  if (var_out) *var_out = var;

  Tensor out({b, L, c}, xv.dtype());
  std::vector<double> inv_sd(c);
  for (std::size_t j = 0; j < c; ++j) inv_sd[j] = 1.0 / std::sqrt(var[j] + eps);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < c; ++j)
        out(i, l, j) = gv(j) * (xv(i, l, j) - mean[j]) * inv_sd[j] + bv(j);

  return t.record(
      "batchnorm", {x, gamma, beta}, std::move(out),
      [x, gamma, beta, b, L, c, N, mean, inv_sd](Tape& tp, ValueId,
                                                 const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& gv = tp.value(gamma);
        Tensor* gx = tp.maybe_grad(x);
        Tensor* gg = tp.maybe_grad(gamma);
        Tensor* gb = tp.maybe_grad(beta);
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t l = 0; l < L; ++l)
            for (std::size_t j = 0; j < c; ++j) {
              const double xh = (xv(i, l, j) - mean[j]) * inv_sd[j];
              sum_g[j] += g(i, l, j);
              sum_gx[j] += g(i, l, j) * xh;
            }
        if (gg)
          for (std::size_t j = 0; j < c; ++j) (*gg)(j) += sum_gx[j];
        if (gb)
          for (std::size_t j = 0; j < c; ++j) (*gb)(j) += sum_g[j];
        if (gx)
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t l = 0; l < L; ++l)
              for (std::size_t j = 0; j < c; ++j) {
                const double xh = (xv(i, l, j) - mean[j]) * inv_sd[j];
                (*gx)(i, l, j) += gv(j) * inv_sd[j] / double(N) *
                                  (double(N) * g(i, l, j) - sum_g[j] -
                                   xh * sum_gx[j]);
              }
      });
}

ValueId batchnorm_infer(Tape& t, ValueId x, ValueId gamma, ValueId beta,
                        const std::vector<double>& mean,
                        const std::vector<double>& var, double eps) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  require_rank(xv, 3, "batchnorm");
  const std::size_t b = xv.extent(0), L = xv.extent(1), c = xv.extent(2);
  if (gv.numel() != c || bv.numel() != c || mean.size() != c || var.size() != c)
    throw ShapeError("batchnorm: statistics size must match " +
                     std::to_string(c) + " channels");
  std::vector<double> inv_sd(c);
  for (std::size_t j = 0; j < c; ++j) inv_sd[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor out({b, L, c}, xv.dtype());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < c; ++j)
        out(i, l, j) = gv(j) * (xv(i, l, j) - mean[j]) * inv_sd[j] + bv(j);
  return t.record(
      "batchnorm_infer", {x, gamma, beta}, std::move(out),
      [x, gamma, beta, b, L, c, mean, inv_sd](Tape& tp, ValueId,
                                              const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& gv = tp.value(gamma);
        Tensor* gx = tp.maybe_grad(x);
        Tensor* gg = tp.maybe_grad(gamma);
        Tensor* gb = tp.maybe_grad(beta);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t l = 0; l < L; ++l)
            for (std::size_t j = 0; j < c; ++j) {
              const double xh = (xv(i, l, j) - mean[j]) * inv_sd[j];
              if (gx) (*gx)(i, l, j) += g(i, l, j) * gv(j) * inv_sd[j];
              if (gg) (*gg)(j) += g(i, l, j) * xh;
              if (gb) (*gb)(j) += g(i, l, j);
            }
      });
}

ValueId pick_class(Tape& t, ValueId probs,
                   const std::vector<std::size_t>& labels) {
  const Tensor& pv = t.value(probs);
  require_rank(pv, 2, "pick_class");
  const std::size_t m = pv.extent(0), n = pv.extent(1);
  if (labels.size() != m)
    throw ShapeError("pick_class: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(m) + " rows");
  for (std::size_t i = 0; i < m; ++i)
    if (labels[i] >= n)
      throw DataError("pick_class: label " + std::to_string(labels[i]) +
                      " out of range [0, " + std::to_string(n) + ") at row " +
                      std::to_string(i));
  Tensor out({m}, pv.dtype());
  for (std::size_t i = 0; i < m; ++i) out(i) = pv(i, labels[i]);
  return t.record("pick_class", {probs}, std::move(out),
                  [probs, labels](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gp = tp.maybe_grad(probs))
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        (*gp)(i, labels[i]) += g(i);
                  });
}

ValueId clamp_min(Tape& t, ValueId x, double lo) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out(i) = std::max(out(i), lo);
  return t.record("clamp_min", {x}, std::move(out),
                  [x, lo](Tape& tp, ValueId, const Tensor& g) {
                    Tensor* gx = tp.maybe_grad(x);
                    if (!gx) return;
                    const Tensor& xv = tp.value(x);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                      if (xv(i) > lo) (*gx)(i) += g(i);
                  });
}

ValueId log_(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i) out(i) = std::log(out(i));
  return t.record("log", {x}, std::move(out),
                  [x](Tape& tp, ValueId, const Tensor& g) {
                    Tensor* gx = tp.maybe_grad(x);
                    if (!gx) return;
                    const Tensor& xv = tp.value(x);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                      (*gx)(i) += g(i) / xv(i);
                  });
}

ValueId sum_all(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv(i);
  return t.record("sum_all", {x}, Tensor::scalar(s, xv.dtype()),
                  [x](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < gx->numel(); ++i)
                        (*gx)(i) += g(0);
                  });
}

ValueId mean_all(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  const double n = double(xv.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv(i);
  return t.record("mean_all", {x}, Tensor::scalar(s / n, xv.dtype()),
                  [x, n](Tape& tp, ValueId, const Tensor& g) {
                    if (Tensor* gx = tp.maybe_grad(x))
                      for (std::size_t i = 0; i < gx->numel(); ++i)
                        (*gx)(i) += g(0) / n;
                  });
}

}  // namespace ops
}  // namespace dualnet
