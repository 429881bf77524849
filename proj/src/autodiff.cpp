// Copyright 2026 The Remedis Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "remedis/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "remedis/error.hpp"

namespace remedis::ad {
namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  fail(ErrorCode::kShapeMismatch, std::string(op) + ": " + detail);
}

Tape& same_tape(const char* op, Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    fail(ErrorCode::kInvalidArgument, std::string(op) + ": operands on different tapes");
  }
  return *a.tape;
}

Tape& tape_of(const char* op, Var a) {
  if (a.tape == nullptr) {
    fail(ErrorCode::kInvalidArgument, std::string(op) + ": unbound variable");
  }
  return *a.tape;
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " +
                        shape_str(t.shape()));
  }
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  double* d = dst->raw();
  const double* s = src.raw();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

// Unary elementwise op with derivative expressed via (x, y).
template <typename Fwd, typename Deriv>
Var unary(const char* op, Var a, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(op, a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t out_id = tape.size();
  return tape.record(op, std::move(y), {a.id},
                     [&tape, a, out_id, deriv](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       const Tensor& xv = a.value();
                       const Tensor& yv = tape.value(Var{&tape, out_id});
                       double* d = in[0]->raw();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         d[i] += g[i] * deriv(xv[i], yv[i]);
                       }
                     });
}

}  // namespace

const Tensor& Var::value() const {
  if (tape == nullptr) fail(ErrorCode::kInvalidArgument, "var: unbound variable");
  return tape->value(*this);
}

const Tensor& Gradients::operator[](Var v) const { return at(v.id); }

const Tensor& Gradients::at(std::size_t leaf_id) const {
  auto it = grads_.find(leaf_id);
  if (it == grads_.end()) {
    fail(ErrorCode::kInvalidArgument,
         "gradients: node " + std::to_string(leaf_id) + " is not a grad-requiring leaf");
  }
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) {
    fail(ErrorCode::kNumericOverflow, "leaf: non-finite value");
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Tensor value, std::vector<std::size_t> inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    fail(ErrorCode::kNumericOverflow,
         std::string(op) + ": non-finite output of shape " + shape_str(value.shape()));
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.is_leaf = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) {
      fail(ErrorCode::kInvalidArgument, std::string(op) + ": input recorded after output");
    }
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) fail(ErrorCode::kInvalidArgument, "backward: loss not on this tape");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) {
    fail(ErrorCode::kShapeMismatch,
         "backward: loss must be scalar, got " + shape_str(lv.shape()));
  }
  std::vector<Tensor> grads(loss.id + 1);
  grads[loss.id] = Tensor(lv.shape(), 1.0);
  std::vector<Tensor*> input_grads;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || !node.backward) continue;
    input_grads.clear();
    for (std::size_t in : node.inputs) {
      if (!nodes_[in].requires_grad) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape());
      input_grads.push_back(&grads[in]);
    }
    node.backward(grads[i], input_grads);
  }
  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.is_leaf || !node.requires_grad) continue;
    if (i <= loss.id && !grads[i].empty()) {
      out.grads_.emplace(i, std::move(grads[i]));
    } else {
      out.grads_.emplace(i, Tensor(node.value.shape()));
    }
  }
  return out;
}

Var add(Var a, Var b) {
  Tape& tape = same_tape("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return tape.record("add", std::move(out), {a.id, b.id},
                       [](const Tensor& g, std::span<Tensor* const> in) {
                         accumulate(in[0], g);
                         accumulate(in[1], g);
                       });
  }
  if (y.rank() == 1 && x.rank() >= 1 && x.shape().back() == y.size()) {
    const std::size_t cols = y.size();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % cols];
    return tape.record("add", std::move(out), {a.id, b.id},
                       [cols](const Tensor& g, std::span<Tensor* const> in) {
                         accumulate(in[0], g);
                         if (in[1]) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i % cols] += g[i];
                         }
                       });
  }
  shape_error("add", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) {
    shape_error("sub", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return tape.record("sub", std::move(out), {a.id, b.id},
                     [](const Tensor& g, std::span<Tensor* const> in) {
                       accumulate(in[0], g);
                       if (in[1]) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                       }
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) {
    shape_error("mul", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape.record("mul", std::move(out), {a.id, b.id},
                     [a, b](const Tensor& g, std::span<Tensor* const> in) {
                       const Tensor& xv = a.value();
                       const Tensor& yv = b.value();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (in[0]) (*in[0])[i] += g[i] * yv[i];
                         if (in[1]) (*in[1])[i] += g[i] * xv[i];
                       }
                     });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) fail(ErrorCode::kNumericOverflow, "log: non-positive input");
  }
  return unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of("reshape", a);
  const Tensor& x = a.value();
  if (shape_size(shape) != x.size()) {
    shape_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return tape.record("reshape", x.reshaped(std::move(shape)), {a.id},
                     [](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                     });
}

Var transpose(Var a) {
  Tape& tape = tape_of("transpose", a);
  const Tensor& x = a.value();
  require_rank("transpose", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return tape.record("transpose", std::move(out), {a.id},
                     [rows, cols](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < rows; ++i)
                         for (std::size_t j = 0; j < cols; ++j)
                           (*in[0])[i * cols + j] += g[j * rows + i];
                     });
}

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    shape_error("matmul", shape_str(x.shape()) + " x " + shape_str(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  gemm_nn(x.raw(), y.raw(), out.raw(), m, k, n);
  return tape.record("matmul", std::move(out), {a.id, b.id},
                     [a, b, m, k, n](const Tensor& g, std::span<Tensor* const> in) {
                       if (in[0]) gemm_nt(g.raw(), b.value().raw(), in[0]->raw(), m, n, k);
                       if (in[1]) gemm_tn(a.value().raw(), g.raw(), in[1]->raw(), m, k, n);
                     });
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;

  // Output columns ox for which ix = ox*stride - pad + kx lies in [0, width).
  void valid_range(std::size_t k, std::size_t extent, std::size_t out_extent,
                   std::size_t& lo, std::size_t& hi) const {
    // ox*stride + k >= pad  and  ox*stride + k - pad <= extent - 1
    const long s = static_cast<long>(stride);
    const long kk = static_cast<long>(k);
    const long p = static_cast<long>(pad);
    long first = p - kk <= 0 ? 0 : (p - kk + s - 1) / s;
    long last = (static_cast<long>(extent) - 1 + p - kk);
    last = last < 0 ? -1 : last / s;
    last = std::min(last, static_cast<long>(out_extent) - 1);
    if (first > last) {
      lo = 1;
      hi = 0;
    } else {
      lo = static_cast<std::size_t>(first);
      hi = static_cast<std::size_t>(last);
    }
  }
};

template <typename Body>
void for_each_tap(const ConvGeometry& geo, Body body) {
  for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
    std::size_t ylo, yhi;
    geo.valid_range(ky, geo.height, geo.out_h, ylo, yhi);
    if (ylo > yhi) continue;
    for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
      std::size_t xlo, xhi;
      geo.valid_range(kx, geo.width, geo.out_w, xlo, xhi);
      if (xlo > xhi) continue;
      body(ky, kx, ylo, yhi, xlo, xhi);
    }
  }
}

}  // namespace

Var conv2d(Var input, Var weight, std::size_t stride, std::size_t pad) {
  Tape& tape = same_tape("conv2d", input, weight);
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  if (stride < 1) fail(ErrorCode::kInvalidArgument, "conv2d: stride must be >= 1");
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3)) {
    shape_error("conv2d", "input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  }
  ConvGeometry geo{};
  geo.batch = x.dim(0);
  geo.in_ch = x.dim(1);
  geo.height = x.dim(2);
  geo.width = x.dim(3);
  geo.out_ch = w.dim(0);
  geo.kernel = w.dim(2);
  geo.stride = stride;
  geo.pad = pad;
  if (geo.height + 2 * pad < geo.kernel || geo.width + 2 * pad < geo.kernel) {
    shape_error("conv2d", "kernel larger than padded input " + shape_str(x.shape()));
  }
  geo.out_h = (geo.height + 2 * pad - geo.kernel) / stride + 1;
  geo.out_w = (geo.width + 2 * pad - geo.kernel) / stride + 1;

  Tensor out({geo.batch, geo.out_ch, geo.out_h, geo.out_w});
  const std::size_t in_plane = geo.height * geo.width;
  const std::size_t out_plane = geo.out_h * geo.out_w;
  const std::size_t kk = geo.kernel * geo.kernel;
  for (std::size_t n = 0; n < geo.batch; ++n) {
    for (std::size_t o = 0; o < geo.out_ch; ++o) {
      double* dst = out.raw() + (n * geo.out_ch + o) * out_plane;
      for (std::size_t c = 0; c < geo.in_ch; ++c) {
        const double* src = x.raw() + (n * geo.in_ch + c) * in_plane;
        const double* wk = w.raw() + (o * geo.in_ch + c) * kk;
        for_each_tap(geo, [&](std::size_t ky, std::size_t kx, std::size_t ylo, std::size_t yhi,
                              std::size_t xlo, std::size_t xhi) {
          const double wv = wk[ky * geo.kernel + kx];
          for (std::size_t oy = ylo; oy <= yhi; ++oy) {
            const double* srow = src + (oy * stride + ky - pad) * geo.width;
            double* drow = dst + oy * geo.out_w;
            for (std::size_t ox = xlo; ox <= xhi; ++ox) {
              drow[ox] += wv * srow[ox * stride + kx - pad];
            }
          }
        });
      }
    }
  }
  return tape.record(
      "conv2d", std::move(out), {input.id, weight.id},
      [input, weight, geo, in_plane, out_plane, kk](const Tensor& g,
                                                    std::span<Tensor* const> in) {
        const Tensor& xv = input.value();
        const Tensor& wv = weight.value();
        for (std::size_t n = 0; n < geo.batch; ++n) {
          for (std::size_t o = 0; o < geo.out_ch; ++o) {
            const double* grad = g.raw() + (n * geo.out_ch + o) * out_plane;
            for (std::size_t c = 0; c < geo.in_ch; ++c) {
              const std::size_t src_off = (n * geo.in_ch + c) * in_plane;
              const std::size_t w_off = (o * geo.in_ch + c) * kk;
              for_each_tap(geo, [&](std::size_t ky, std::size_t kx, std::size_t ylo,
                                    std::size_t yhi, std::size_t xlo, std::size_t xhi) {
                const std::size_t tap = ky * geo.kernel + kx;
                if (in[1]) {
                  double acc = 0.0;
                  for (std::size_t oy = ylo; oy <= yhi; ++oy) {
                    const double* srow =
                        xv.raw() + src_off + (oy * geo.stride + ky - geo.pad) * geo.width;
                    const double* grow = grad + oy * geo.out_w;
                    for (std::size_t ox = xlo; ox <= xhi; ++ox) {
                      acc += grow[ox] * srow[ox * geo.stride + kx - geo.pad];
                    }
                  }
                  (*in[1])[w_off + tap] += acc;
                }
                if (in[0]) {
                  const double w_tap = wv[w_off + tap];
                  for (std::size_t oy = ylo; oy <= yhi; ++oy) {
                    double* drow =
                        in[0]->raw() + src_off + (oy * geo.stride + ky - geo.pad) * geo.width;
                    const double* grow = grad + oy * geo.out_w;
                    for (std::size_t ox = xlo; ox <= xhi; ++ox) {
                      drow[ox * geo.stride + kx - geo.pad] += w_tap * grow[ox];
                    }
                  }
                }
              });
            }
          }
        }
      });
}

Var global_avg_pool(Var input) {
  Tape& tape = tape_of("global_avg_pool", input);
  const Tensor& x = input.value();
  require_rank("global_avg_pool", x, 4);
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({batch, ch});
  for (std::size_t i = 0; i < batch * ch; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
    out[i] = acc / static_cast<double>(plane);
  }
  return tape.record("global_avg_pool", std::move(out), {input.id},
                     [batch, ch, plane](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t i = 0; i < batch * ch; ++i) {
                         for (std::size_t p = 0; p < plane; ++p) {
                           (*in[0])[i * plane + p] += g[i] * inv;
                         }
                       }
                     });
}

namespace {

// Normalizes contiguous slices of length `len`; stores xhat and 1/std.
struct SliceNorm {
  std::vector<double> xhat;
  std::vector<double> inv_std;
};

std::shared_ptr<SliceNorm> normalize_slices(const Tensor& x, std::size_t slices,
                                            std::size_t len, double eps) {
  auto state = std::make_shared<SliceNorm>();
  state->xhat.resize(x.size());
  state->inv_std.resize(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    const double* src = x.raw() + s * len;
    double mu = 0.0;
    for (std::size_t i = 0; i < len; ++i) mu += src[i];
    mu /= static_cast<double>(len);
    // One correction pass so constant slices centre to exactly zero.
    double residual = 0.0;
    for (std::size_t i = 0; i < len; ++i) residual += src[i] - mu;
    mu += residual / static_cast<double>(len);
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(len);
    const double inv = 1.0 / std::sqrt(var + eps);
    state->inv_std[s] = inv;
    double* dst = state->xhat.data() + s * len;
    for (std::size_t i = 0; i < len; ++i) dst[i] = (src[i] - mu) * inv;
  }
  return state;
}

// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
void normalize_backward(const SliceNorm& st, const double* dxhat, double* dx,
                        std::size_t slice, std::size_t len) {
  const double* xh = st.xhat.data() + slice * len;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    m1 += dxhat[i];
    m2 += dxhat[i] * xh[i];
  }
  m1 /= static_cast<double>(len);
  m2 /= static_cast<double>(len);
  const double inv = st.inv_std[slice];
  for (std::size_t i = 0; i < len; ++i) dx[i] += inv * (dxhat[i] - m1 - xh[i] * m2);
}

}  // namespace

Var group_norm(Var input, Var gamma, Var beta, std::size_t groups, double eps) {
  Tape& tape = same_tape("group_norm", input, gamma);
  same_tape("group_norm", input, beta);
  const Tensor& x = input.value();
  if (x.rank() < 2) shape_error("group_norm", "input rank < 2: " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), ch = x.dim(1);
  const std::size_t plane = x.size() / (batch * ch);
  if (groups == 0 || ch % groups != 0) {
    shape_error("group_norm", std::to_string(groups) + " groups do not divide " +
                                  std::to_string(ch) + " channels");
  }
  if (gamma.value().size() != ch || beta.value().size() != ch) {
    shape_error("group_norm", "affine params must have " + std::to_string(ch) + " entries");
  }
  const std::size_t per_group = ch / groups;
  const std::size_t len = per_group * plane;
  auto st = normalize_slices(x, batch * groups, len, eps);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(x.shape());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (n * ch + c) * plane + p;
        out[i] = gv[c] * st->xhat[i] + bv[c];
      }
  return tape.record(
      "group_norm", std::move(out), {input.id, gamma.id, beta.id},
      [st, gamma, batch, ch, plane, groups, len](const Tensor& g,
                                                 std::span<Tensor* const> in) {
        const Tensor& gv = gamma.value();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = (n * ch + c) * plane + p;
              if (in[1]) (*in[1])[c] += g[i] * st->xhat[i];
              if (in[2]) (*in[2])[c] += g[i];
            }
        if (!in[0]) return;
        std::vector<double> dxhat(len);
        for (std::size_t s = 0; s < batch * groups; ++s) {
          const std::size_t c0 = (s % groups) * (ch / groups);
          for (std::size_t i = 0; i < len; ++i) dxhat[i] = g[s * len + i] * gv[c0 + i / plane];
          normalize_backward(*st, dxhat.data(), in[0]->raw() + s * len, s, len);
        }
      });
}

Var weight_standardize(Var weight, double eps) {
  Tape& tape = tape_of("weight_standardize", weight);
  const Tensor& w = weight.value();
  if (w.rank() < 2) shape_error("weight_standardize", "rank < 2: " + shape_str(w.shape()));
  const std::size_t slices = w.dim(0);
  const std::size_t len = w.size() / slices;
  auto st = normalize_slices(w, slices, len, eps);
  Tensor out(w.shape(), st->xhat);
  return tape.record("weight_standardize", std::move(out), {weight.id},
                     [st, slices, len](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (std::size_t s = 0; s < slices; ++s) {
                         normalize_backward(*st, g.raw() + s * len, in[0]->raw() + s * len, s,
                                            len);
                       }
                     });
}

Var sum(Var a) {
  Tape& tape = tape_of("sum", a);
  const Tensor& x = a.value();
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return tape.record("sum", Tensor::scalar(acc), {a.id},
                     [](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (double& d : in[0]->data()) d += g[0];
                     });
}

Var mean(Var a) {
  Tape& tape = tape_of("mean", a);
  const Tensor& x = a.value();
  if (x.empty()) fail(ErrorCode::kShapeMismatch, "mean: empty tensor");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  return tape.record("mean", Tensor::scalar(acc * inv), {a.id},
                     [inv](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (double& d : in[0]->data()) d += g[0] * inv;
                     });
}

Var l2_norm(Var a) {
  Tape& tape = tape_of("l2_norm", a);
  const Tensor& x = a.value();
  require_rank("l2_norm", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c] * x[r * cols + c];
    out[r] = std::sqrt(acc);
  }
  const std::size_t out_id = tape.size();
  return tape.record("l2_norm", std::move(out), {a.id},
                     [a, out_id, rows, cols](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       const Tensor& xv = a.value();
                       const Tensor& nv = a.tape->value(Var{a.tape, out_id});
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (nv[r] == 0.0) continue;
                         for (std::size_t c = 0; c < cols; ++c) {
                           (*in[0])[r * cols + c] += g[r] * xv[r * cols + c] / nv[r];
                         }
                       }
                     });
}

Var l2_normalize(Var a) {
  Tape& tape = tape_of("l2_normalize", a);
  const Tensor& x = a.value();
  require_rank("l2_normalize", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto norms = std::make_shared<std::vector<double>>(rows);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c] * x[r * cols + c];
    const double n = std::sqrt(acc);
    if (!(n > 0.0)) {
      fail(ErrorCode::kInvalidArgument,
           "l2_normalize: row " + std::to_string(r) + " has zero norm");
    }
    (*norms)[r] = n;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] / n;
  }
  const std::size_t out_id = tape.size();
  return tape.record(
      "l2_normalize", std::move(out), {a.id},
      [a, norms, out_id, rows, cols](const Tensor& g, std::span<Tensor* const> in) {
        if (!in[0]) return;
        const Tensor& y = a.tape->value(Var{a.tape, out_id});
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
          const double inv = 1.0 / (*norms)[r];
          for (std::size_t c = 0; c < cols; ++c) {
            (*in[0])[r * cols + c] += inv * (g[r * cols + c] - y[r * cols + c] * dot);
          }
        }
      });
}

Var softmax_rows(Var a) {
  Tape& tape = tape_of("softmax_rows", a);
  const Tensor& x = a.value();
  require_rank("softmax_rows", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.raw() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(xr[c] - mx) / z;
  }
  const std::size_t out_id = tape.size();
  return tape.record("softmax_rows", std::move(out), {a.id},
                     [a, out_id, rows, cols](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       const Tensor& y = a.tape->value(Var{a.tape, out_id});
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c)
                           dot += g[r * cols + c] * y[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           (*in[0])[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                         }
                       }
                     });
}

Var cross_entropy_rows(Var logits, const Tensor& targets) {
  Tape& tape = tape_of("cross_entropy_rows", logits);
  const Tensor& x = logits.value();
  require_rank("cross_entropy_rows", x, 2);
  if (targets.shape() != x.shape()) {
    shape_error("cross_entropy_rows",
                "logits " + shape_str(x.shape()) + " targets " + shape_str(targets.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto probs = std::make_shared<Tensor>(x.shape());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.raw() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    const double lse = mx + std::log(z);
    double loss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double t = targets[r * cols + c];
      if (t != 0.0) loss -= t * (xr[c] - lse);
      (*probs)[r * cols + c] = std::exp(xr[c] - lse);
    }
    out[r] = loss;
  }
  auto tgt = std::make_shared<Tensor>(targets);
  return tape.record("cross_entropy_rows", std::move(out), {logits.id},
                     [probs, tgt, rows, cols](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mass = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) mass += (*tgt)[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t i = r * cols + c;
                           (*in[0])[i] += g[r] * ((*probs)[i] * mass - (*tgt)[i]);
                         }
                       }
                     });
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      fail(ErrorCode::kInvalidArgument,
           "one_hot: label " + std::to_string(labels[r]) + " outside [0," +
               std::to_string(classes) + ")");
    }
    out[r * classes + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  return out;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& x = logits.value();
  require_rank("softmax_cross_entropy", x, 2);
  if (labels.size() != x.dim(0)) {
    shape_error("softmax_cross_entropy", std::to_string(labels.size()) + " labels for logits " +
                                             shape_str(x.shape()));
  }
  return mean(cross_entropy_rows(logits, one_hot(labels, x.dim(1))));
}

Var gather(Var a, std::span<const std::size_t> rows) {
  Tape& tape = tape_of("gather", a);
  const Tensor& x = a.value();
  if (x.rank() < 1) shape_error("gather", "scalar input");
  const std::size_t stride = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) {
      shape_error("gather", "row " + std::to_string(rows[r]) + " out of " + shape_str(x.shape()));
    }
    std::copy_n(x.raw() + rows[r] * stride, stride, out.raw() + r * stride);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.record("gather", std::move(out), {a.id},
                     [idx, stride](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < stride; ++j)
                           (*in[0])[idx[r] * stride + j] += g[r * stride + j];
                     });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "concat: no inputs");
  Tape& tape = tape_of("concat", parts[0]);
  Shape shape = parts[0].value().shape();
  if (shape.empty()) shape_error("concat", "scalar input");
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    same_tape("concat", parts[0], p);
    Shape ps = p.value().shape();
    if (ps.size() != shape.size() || !std::equal(ps.begin() + 1, ps.end(), shape.begin() + 1)) {
      shape_error("concat", shape_str(ps) + " vs " + shape_str(shape));
    }
    rows += ps[0];
    ids.push_back(p.id);
  }
  shape[0] = rows;
  Tensor out(shape);
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data().begin(), p.value().data().end(), out.raw() + off);
    off += p.value().size();
  }
  return tape.record("concat", std::move(out), std::move(ids),
                     [offsets](const Tensor& g, std::span<Tensor* const> in) {
                       for (std::size_t k = 0; k < in.size(); ++k) {
                         if (!in[k]) continue;
                         for (std::size_t j = 0; j < in[k]->size(); ++j)
                           (*in[k])[j] += g[offsets[k] + j];
                       }
                     });
}

Var masked_fill(Var a, const std::vector<bool>& mask, double value) {
  Tape& tape = tape_of("masked_fill", a);
  const Tensor& x = a.value();
  if (mask.size() != x.size()) {
    shape_error("masked_fill", "mask of " + std::to_string(mask.size()) + " for " +
                                   shape_str(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = mask[i] ? value : x[i];
  return tape.record("masked_fill", std::move(out), {a.id},
                     [mask](const Tensor& g, std::span<Tensor* const> in) {
                       if (!in[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (!mask[i]) (*in[0])[i] += g[i];
                     });
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorCode::kShapeMismatch, "cosine_similarity: lengths " + std::to_string(u.size()) +
                                        " vs " + std::to_string(v.size()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (!(uu > 0.0) || !(vv > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "cosine_similarity: zero-norm embedding");
  }
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

double finite_difference_check(const ScalarFn& fn, const Tensor& point, double epsilon) {
  require(epsilon > 0.0, "finite_difference_check: epsilon must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point, true);
    Var loss = fn(tape, x);
    analytic = tape.backward(loss)[x];
  }
  auto eval = [&fn](const Tensor& p) {
    Tape tape;
    Var x = tape.leaf(p, false);
    return fn(tape, x).value().item();
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + epsilon;
    const double up = eval(probe);
    probe[i] = orig - epsilon;
    const double down = eval(probe);
    probe[i] = orig;
    const double fd = (up - down) / (2.0 * epsilon);
    const double ad = analytic[i];
    const double denom = std::max({std::abs(ad), std::abs(fd), 1e-8});
    worst = std::max(worst, std::abs(ad - fd) / denom);
  }
  return worst;
}

}  // namespace remedis::ad
