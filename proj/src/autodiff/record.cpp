#include "dultra/autodiff/record.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace dultra::ad {

namespace {

Record& same_record(Var a, Var b) {
  if (&a.record() != &b.record()) throw std::invalid_argument("operands live on different records");
  return a.record();
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Output shape for a broadcasting binary op.
Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

Node make_node(Op op, std::initializer_list<Var> inputs, Tensor value) {
  Node n;
  n.op = op;
  n.owned = std::move(value);
  for (Var v : inputs) {
    n.inputs.push_back(v.id());
    if (v.record().node(v.id()).requires_grad) n.requires_grad = true;
  }
  return n;
}

template <typename F>
Var binary(Op op, std::string_view name, Var a, Var b, F f) {
  Record& r = same_record(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x.shape(), y.shape(), name));
  const std::size_t n = out.size(), nx = x.size(), ny = y.size();
  const double* px = x.raw();
  const double* py = y.raw();
  double* po = out.raw();
  if (nx == n && ny == n) {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(px[i], py[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(px[i % nx], py[i % ny]);
  }
  return r.push(make_node(op, {a, b}, std::move(out)));
}

template <typename F>
Var unary(Op op, Var a, F f) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  const double* px = x.raw();
  double* po = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = f(px[i]);
  return a.record().push(make_node(op, {a}, std::move(out)));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

std::size_t rows_of(const Tensor& t) { return t.size() / t.last_dim(); }

// ---- gradient rules --------------------------------------------------------

const Tensor& input_value(const Record& r, const Node& n, std::size_t k) {
  return r.node(n.inputs[k]).value();
}

void accumulate_broadcast(Tensor* slot, const Tensor& g, double sign) {
  if (!slot) return;
  const std::size_t ns = slot->size();
  double* ps = slot->raw();
  for (std::size_t i = 0; i < g.size(); ++i) ps[i % ns] += sign * g[i];
}

void rule_add(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  accumulate_broadcast(gs.slot(r, n.inputs[0]), g, 1.0);
  accumulate_broadcast(gs.slot(r, n.inputs[1]), g, 1.0);
}

void rule_sub(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  accumulate_broadcast(gs.slot(r, n.inputs[0]), g, 1.0);
  accumulate_broadcast(gs.slot(r, n.inputs[1]), g, -1.0);
}

void rule_mul(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  const Tensor& a = input_value(r, n, 0);
  const Tensor& b = input_value(r, n, 1);
  const std::size_t na = a.size(), nb = b.size();
  if (Tensor* ga = gs.slot(r, n.inputs[0])) {
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i % na] += g[i] * b[i % nb];
  }
  if (Tensor* gb = gs.slot(r, n.inputs[1])) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % nb] += g[i] * a[i % na];
  }
}

void rule_div(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  const Tensor& a = input_value(r, n, 0);
  const Tensor& b = input_value(r, n, 1);
  const std::size_t na = a.size(), nb = b.size();
  if (Tensor* ga = gs.slot(r, n.inputs[0])) {
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i % na] += g[i] / b[i % nb];
  }
  if (Tensor* gb = gs.slot(r, n.inputs[1])) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double bv = b[i % nb];
      (*gb)[i % nb] -= g[i] * a[i % na] / (bv * bv);
    }
  }
}

void rule_maximum(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  const Tensor& a = input_value(r, n, 0);
  const Tensor& b = input_value(r, n, 1);
  const std::size_t na = a.size(), nb = b.size();
  Tensor* ga = gs.slot(r, n.inputs[0]);
  Tensor* gb = gs.slot(r, n.inputs[1]);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (a[i % na] >= b[i % nb]) {
      if (ga) (*ga)[i % na] += g[i];
    } else if (gb) {
      (*gb)[i % nb] += g[i];
    }
  }
}

void rule_matmul(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  const Tensor& a = input_value(r, n, 0);
  const Tensor& b = input_value(r, n, 1);
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  const double* pg = g.raw();
  if (Tensor* ga = gs.slot(r, n.inputs[0])) {
    const double* pb = b.raw();
    double* pa = ga->raw();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* grow = pg + i * cols;
      for (std::size_t k = 0; k < inner; ++k) {
        const double* brow = pb + k * cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) acc += grow[j] * brow[j];
        pa[i * inner + k] += acc;
      }
    }
  }
  if (Tensor* gb = gs.slot(r, n.inputs[1])) {
    const double* pa = a.raw();
    double* pb = gb->raw();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* grow = pg + i * cols;
      for (std::size_t k = 0; k < inner; ++k) {
        const double av = pa[i * inner + k];
        double* brow = pb + k * cols;
        for (std::size_t j = 0; j < cols; ++j) brow[j] += av * grow[j];
      }
    }
  }
}

void rule_transpose(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  Tensor* ga = gs.slot(r, n.inputs[0]);
  if (!ga) return;
  const std::size_t rows = g.dim(0), cols = g.dim(1);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) (*ga)[j * rows + i] += g[i * cols + j];
}

void rule_scale(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.scalar * g[i];
}

void rule_exp(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.owned[i];
}

void rule_log(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  const Tensor& a = input_value(r, n, 0);
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / a[i];
}

void rule_sigmoid(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = n.owned[i];
      (*ga)[i] += g[i] * s * (1.0 - s);
    }
}

void rule_log_sigmoid(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  const Tensor& a = input_value(r, n, 0);
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * stable_sigmoid(-a[i]);
}

void rule_softmax(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  Tensor* ga = gs.slot(r, n.inputs[0]);
  if (!ga) return;
  const Tensor& y = n.owned;
  const std::size_t cols = y.last_dim(), rows = rows_of(y);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t o = i * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += g[o + j] * y[o + j];
    for (std::size_t j = 0; j < cols; ++j) (*ga)[o + j] += y[o + j] * (g[o + j] - dot);
  }
}

void rule_log_softmax(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  Tensor* ga = gs.slot(r, n.inputs[0]);
  if (!ga) return;
  const Tensor& y = n.owned;
  const std::size_t cols = y.last_dim(), rows = rows_of(y);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t o = i * cols;
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += g[o + j];
    for (std::size_t j = 0; j < cols; ++j) (*ga)[o + j] += g[o + j] - std::exp(y[o + j]) * total;
  }
}

void rule_layer_norm(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  Tensor* ga = gs.slot(r, n.inputs[0]);
  if (!ga) return;
  const Tensor& y = n.owned;
  const std::size_t cols = y.last_dim(), rows = rows_of(y);
  const double inv_cols = 1.0 / static_cast<double>(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t o = i * cols;
    double mg = 0.0, mgy = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      mg += g[o + j];
      mgy += g[o + j] * y[o + j];
    }
    mg *= inv_cols;
    mgy *= inv_cols;
    const double inv_std = n.saved[i];
    for (std::size_t j = 0; j < cols; ++j)
      (*ga)[o + j] += inv_std * (g[o + j] - mg - y[o + j] * mgy);
  }
}

void rule_gather(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  Tensor* ga = gs.slot(r, n.inputs[0]);
  if (!ga) return;
  const std::size_t cols = g.last_dim();
  for (std::size_t i = 0; i < n.indices.size(); ++i) {
    double* dst = ga->raw() + n.indices[i] * cols;
    const double* src = g.raw() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
  }
}

void rule_take(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < n.indices.size(); ++i) (*ga)[n.indices[i]] += g[i];
}

void rule_sum(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0];
}

void rule_mean(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  if (Tensor* ga = gs.slot(r, n.inputs[0])) {
    const double w = g[0] / static_cast<double>(ga->size());
    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += w;
  }
}

void rule_sum_last(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  Tensor* ga = gs.slot(r, n.inputs[0]);
  if (!ga) return;
  const std::size_t cols = ga->last_dim(), rows = rows_of(*ga);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) (*ga)[i * cols + j] += g[i];
}

struct SliceGeometry {
  std::size_t outer, extent, inner;
};

SliceGeometry geometry(const Shape& s, std::size_t axis) {
  SliceGeometry geo{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) geo.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) geo.inner *= s[i];
  return geo;
}

void rule_slice(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  Tensor* ga = gs.slot(r, n.inputs[0]);
  if (!ga) return;
  const SliceGeometry geo = geometry(ga->shape(), n.axis);
  const std::size_t len = n.end - n.begin;
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t k = 0; k < len; ++k) {
      double* dst = ga->raw() + (o * geo.extent + n.begin + k) * geo.inner;
      const double* src = g.raw() + (o * len + k) * geo.inner;
      for (std::size_t j = 0; j < geo.inner; ++j) dst[j] += src[j];
    }
}

void rule_concat(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  const SliceGeometry out = geometry(g.shape(), n.axis);
  std::size_t offset = 0;
  for (std::uint32_t id : n.inputs) {
    const std::size_t len = r.node(id).value().dim(n.axis);
    if (Tensor* ga = gs.slot(r, id)) {
      for (std::size_t o = 0; o < out.outer; ++o)
        for (std::size_t k = 0; k < len; ++k) {
          const double* src = g.raw() + (o * out.extent + offset + k) * out.inner;
          double* dst = ga->raw() + (o * len + k) * out.inner;
          for (std::size_t j = 0; j < out.inner; ++j) dst[j] += src[j];
        }
    }
    offset += len;
  }
}

void rule_reshape(const Record& r, const Node& n, const Tensor& g, Gradients& gs) {
  if (Tensor* ga = gs.slot(r, n.inputs[0]))
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
}

constexpr std::array<OpInfo, static_cast<std::size_t>(Op::kCount)> kOpTable{{
    {Op::kLeaf, "leaf", nullptr},
    {Op::kMatMul, "matmul", rule_matmul},
    {Op::kTranspose, "transpose", rule_transpose},
    {Op::kAdd, "add", rule_add},
    {Op::kSub, "subtract", rule_sub},
    {Op::kMul, "multiply", rule_mul},
    {Op::kDiv, "divide", rule_div},
    {Op::kScale, "scale", rule_scale},
    {Op::kExp, "exp", rule_exp},
    {Op::kLog, "log", rule_log},
    {Op::kSigmoid, "sigmoid", rule_sigmoid},
    {Op::kLogSigmoid, "log_sigmoid", rule_log_sigmoid},
    {Op::kSoftmax, "softmax", rule_softmax},
    {Op::kLogSoftmax, "log_softmax", rule_log_softmax},
    {Op::kLayerNorm, "layer_norm", rule_layer_norm},
    {Op::kGather, "gather_rows", rule_gather},
    {Op::kTake, "take", rule_take},
    {Op::kSum, "sum", rule_sum},
    {Op::kMean, "mean", rule_mean},
    {Op::kSumLast, "sum_last", rule_sum_last},
    {Op::kSlice, "slice", rule_slice},
    {Op::kConcat, "concat", rule_concat},
    {Op::kMaximum, "maximum", rule_maximum},
    {Op::kReshape, "reshape", rule_reshape},
    {Op::kStopGradient, "stop_gradient", nullptr},
}};

}  // namespace

// ---- Record ----------------------------------------------------------------

Var Record::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Record::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Record::input(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Record::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  if (mode_ == GradMode::kTrack && !p.frozen) {
    n.parameter = &p;
    n.requires_grad = true;
  }
  return push(std::move(n));
}

Var constant_like(Var like, double value) { return like.record().constant(Tensor::scalar(value)); }

// ---- forward primitives ----------------------------------------------------

Var matmul(Var a, Var b) {
  Record& r = same_record(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + to_string(x.shape()) + " x " +
                     to_string(y.shape()));
  }
  const std::size_t rows = x.dim(0), inner = x.dim(1), cols = y.dim(1);
  Tensor out({rows, cols});
  const double* px = x.raw();
  const double* py = y.raw();
  double* po = out.raw();
  for (std::size_t i = 0; i < rows; ++i) {
    double* orow = po + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double xv = px[i * inner + k];
      const double* yrow = py + k * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += xv * yrow[j];
    }
  }
  return r.push(make_node(Op::kMatMul, {a, b}, std::move(out)));
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return a.record().push(make_node(Op::kTranspose, {a}, std::move(out)));
}

Var add(Var a, Var b) {
  return binary(Op::kAdd, "add", a, b, [](double x, double y) { return x + y; });
}

Var sub(Var a, Var b) {
  return binary(Op::kSub, "subtract", a, b, [](double x, double y) { return x - y; });
}

Var mul(Var a, Var b) {
  return binary(Op::kMul, "multiply", a, b, [](double x, double y) { return x * y; });
}

Var div(Var a, Var b) {
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) throw DomainError("divide: zero divisor at element " + std::to_string(i));
  }
  return binary(Op::kDiv, "divide", a, b, [](double x, double d) { return x / d; });
}

Var scale(Var a, double factor) {
  Var v = unary(Op::kScale, a, [factor](double x) { return factor * x; });
  const_cast<Node&>(v.record().node(v.id())).scalar = factor;
  return v;
}

Var divide_scalar(Var a, double divisor) {
  if (divisor == 0.0) throw DomainError("divide_scalar: zero divisor");
  return scale(a, 1.0 / divisor);
}

Var exp(Var a) {
  return unary(Op::kExp, a, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) {
      throw DomainError("log: nonpositive operand " + std::to_string(x[i]) + " at element " +
                        std::to_string(i));
    }
  }
  return unary(Op::kLog, a, [](double v) { return std::log(v); });
}

Var sigmoid(Var a) { return unary(Op::kSigmoid, a, stable_sigmoid); }

Var log_sigmoid(Var a) { return unary(Op::kLogSigmoid, a, stable_log_sigmoid); }

Var softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  const std::size_t cols = x.last_dim(), rows = rows_of(x);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t o = i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[o + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += (out[o + j] = std::exp(x[o + j] - mx));
    for (std::size_t j = 0; j < cols; ++j) out[o + j] /= total;
  }
  return a.record().push(make_node(Op::kSoftmax, {a}, std::move(out)));
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  const std::size_t cols = x.last_dim(), rows = rows_of(x);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t o = i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[o + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(x[o + j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < cols; ++j) out[o + j] = x[o + j] - lse;
  }
  return a.record().push(make_node(Op::kLogSoftmax, {a}, std::move(out)));
}

Var layer_norm(Var a, double eps) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  const std::size_t cols = x.last_dim(), rows = rows_of(x);
  Tensor inv_std({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t o = i * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += x[o + j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[o + j] - mu) * (x[o + j] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < cols; ++j) out[o + j] = (x[o + j] - mu) * inv;
  }
  Node n = make_node(Op::kLayerNorm, {a}, std::move(out));
  n.scalar = eps;
  n.saved = std::move(inv_std);
  return a.record().push(std::move(n));
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + to_string(t.shape()));
  const std::size_t cols = t.dim(1);
  Tensor out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= t.dim(0)) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                       to_string(t.shape()));
    }
    std::copy_n(t.raw() + ids[i] * cols, cols, out.raw() + i * cols);
  }
  Node n = make_node(Op::kGather, {table}, std::move(out));
  n.indices.assign(ids.begin(), ids.end());
  return table.record().push(std::move(n));
}

Var take(Var a, std::span<const std::size_t> offsets) {
  const Tensor& x = a.value();
  Tensor out({offsets.size()});
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] >= x.size()) {
      throw ShapeError("take: offset " + std::to_string(offsets[i]) + " out of range for " +
                       to_string(x.shape()));
    }
    out[i] = x[offsets[i]];
  }
  Node n = make_node(Op::kTake, {a}, std::move(out));
  n.indices.assign(offsets.begin(), offsets.end());
  return a.record().push(std::move(n));
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.record().push(make_node(Op::kSum, {a}, Tensor::scalar(total)));
}

Var mean(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.record().push(
      make_node(Op::kMean, {a}, Tensor::scalar(total / static_cast<double>(a.value().size()))));
}

Var sum_last(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("sum_last: scalar operand");
  Shape s(x.shape().begin(), x.shape().end() - 1);
  Tensor out(s);
  const std::size_t cols = x.last_dim();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += x[i * cols + j];
    out[i] = total;
  }
  return a.record().push(make_node(Op::kSumLast, {a}, std::move(out)));
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  Shape s = x.shape();
  s[axis] = end - begin;
  Tensor out(s);
  const SliceGeometry geo = geometry(x.shape(), axis);
  const std::size_t len = end - begin;
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      std::copy_n(x.raw() + (o * geo.extent + begin + k) * geo.inner, geo.inner,
                  out.raw() + (o * len + k) * geo.inner);
  Node n = make_node(Op::kSlice, {a}, std::move(out));
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return a.record().push(std::move(n));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Record& r = parts[0].record();
  Shape s = parts[0].shape();
  if (axis >= s.size()) throw ShapeError("concat: axis out of range for " + to_string(s));
  std::size_t extent = 0;
  for (Var p : parts) {
    if (&p.record() != &r) throw std::invalid_argument("concat: operands on different records");
    Shape ps = p.shape();
    if (ps.size() != s.size()) throw ShapeError("concat: rank mismatch " + to_string(ps));
    extent += ps[axis];
    ps[axis] = s[axis];
    if (ps != s) throw ShapeError("concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
  }
  s[axis] = extent;
  Tensor out(s);
  const SliceGeometry geo = geometry(s, axis);
  Node n;
  n.op = Op::kConcat;
  n.axis = axis;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& x = p.value();
    const std::size_t len = x.dim(axis);
    for (std::size_t o = 0; o < geo.outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        std::copy_n(x.raw() + (o * len + k) * geo.inner, geo.inner,
                    out.raw() + (o * geo.extent + offset + k) * geo.inner);
    offset += len;
    n.inputs.push_back(p.id());
    if (r.node(p.id()).requires_grad) n.requires_grad = true;
  }
  n.owned = std::move(out);
  return r.push(std::move(n));
}

Var maximum(Var a, Var b) {
  return binary(Op::kMaximum, "maximum", a, b, [](double x, double y) { return x >= y ? x : y; });
}

Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  return a.record().push(make_node(Op::kReshape, {a}, std::move(out)));
}

Var stop_gradient(Var a) {
  Node n;
  n.op = Op::kStopGradient;
  n.inputs.push_back(a.id());
  n.owned = a.value();
  n.owned.set_requires_grad(false);
  return a.record().push(std::move(n));
}

// ---- reverse mode ----------------------------------------------------------

Tensor Gradients::of(Var v) const {
  if (present_[v.id()]) return grads_[v.id()];
  return Tensor(v.shape());
}

Tensor* Gradients::slot(const Record& record, std::uint32_t id) {
  const Node& n = record.node(id);
  if (!n.requires_grad) return nullptr;
  if (!present_[id]) {
    grads_[id] = Tensor(n.value().shape());
    present_[id] = 1;
  }
  return &grads_[id];
}

std::span<const OpInfo> op_table() { return kOpTable; }

std::string_view op_name(Op op) { return kOpTable[static_cast<std::size_t>(op)].name; }

Gradients backward(const Record& record, Var root) {
  if (&root.record() != &record) throw std::invalid_argument("backward: root is not on this record");
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + to_string(root.shape()));
  }
  Gradients grads(record.size());
  Tensor* seed = grads.slot(record, root.id());
  if (!seed) return grads;
  (*seed)[0] = 1.0;
  for (std::uint32_t id = root.id() + 1; id-- > 0;) {
    if (!grads.present(id)) continue;
    const Node& n = record.node(id);
    const GradientRule rule = kOpTable[static_cast<std::size_t>(n.op)].rule;
    if (rule) rule(record, n, grads.raw(id), grads);
  }
  return grads;
}

void accumulate_parameter_grads(const Record& record, const Gradients& grads) {
  for (std::uint32_t id = 0; id < record.size(); ++id) {
    const Node& n = record.node(id);
    if (!n.parameter || !grads.present(id)) continue;
    const Tensor& g = grads.raw(id);
    Tensor& dst = n.parameter->grad;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

}  // namespace dultra::ad
