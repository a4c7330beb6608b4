#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "dultra/autodiff/parameters.hpp"
#include "dultra/autodiff/tensor.hpp"

namespace dultra::ad {

/// Primitive identifiers. Every non-leaf op has an entry in op_table() with
/// its local gradient rule.
enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kExp,
  kLog,
  kSigmoid,
  kLogSigmoid,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kGather,
  kTake,
  kSum,
  kMean,
  kSumLast,
  kSlice,
  kConcat,
  kMaximum,
  kReshape,
  kStopGradient,
  kCount
};

/// One primitive application on a Record. Attributes are interpreted per op.
struct Node {
  Op op = Op::kLeaf;
  std::vector<std::uint32_t> inputs;
  Tensor owned;
  const Tensor* external = nullptr;  // parameter storage for bound leaves
  Parameter* parameter = nullptr;
  bool requires_grad = false;
  double scalar = 0.0;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::size_t> indices;
  Tensor saved;

  const Tensor& value() const { return external ? *external : owned; }
};

class Record;

/// Handle to a node on a Record.
class Var {
 public:
  Var() = default;

  Record& record() const { return *record_; }
  std::uint32_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool valid() const { return record_ != nullptr; }

 private:
  friend class Record;
  Var(Record* record, std::uint32_t id) : record_(record), id_(id) {}

  Record* record_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class GradMode {
  kTrack,      // parameters are differentiable leaves
  kInference,  // parameters are bound as constants; nothing is differentiable
};

/// The computation record: an append-only, topologically ordered list of
/// primitive applications. Operands always precede their outputs.
class Record {
 public:
  explicit Record(GradMode mode = GradMode::kTrack) : mode_(mode) {}
  Record(const Record&) = delete;
  Record& operator=(const Record&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf that is not tied to a Parameter.
  Var input(Tensor value);
  /// Leaf bound to `p`. Gradients reaching it can be accumulated into p.grad.
  Var parameter(Parameter& p);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  GradMode mode() const noexcept { return mode_; }

  Var push(Node node);
  Var var(std::uint32_t id) { return Var(this, id); }

 private:
  GradMode mode_;
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return record_->node(id_).value(); }

// ---- primitives ------------------------------------------------------------
// Binary elementwise ops broadcast an operand whose shape is a suffix of the
// other's shape (expansion over leading axes, scalars included).

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var divide_scalar(Var a, double divisor);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var log_sigmoid(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var layer_norm(Var a, double eps = 1e-5);
/// Rows of a rank-2 table selected by id: result is [ids.size(), table.dim(1)].
Var gather_rows(Var table, std::span<const std::size_t> ids);
/// Elements at flat row-major offsets: result is [offsets.size()].
Var take(Var a, std::span<const std::size_t> offsets);
Var sum(Var a);
Var mean(Var a);
Var sum_last(Var a);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
Var maximum(Var a, Var b);
Var reshape(Var a, Shape shape);
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Scalar constant on the same record as `like`.
Var constant_like(Var like, double value);

// ---- reverse mode ----------------------------------------------------------

/// Gradients of a scalar root with respect to every differentiable node.
class Gradients {
 public:
  explicit Gradients(std::size_t n) : grads_(n), present_(n, 0) {}

  /// Gradient of `v`, or nullptr when no gradient reached it.
  const Tensor* find(Var v) const { return present_[v.id()] ? &grads_[v.id()] : nullptr; }
  /// Gradient of `v`; zeros of the right shape when nothing reached it.
  Tensor of(Var v) const;

  /// Accumulation slot for node `id`; nullptr when the node is not differentiable.
  Tensor* slot(const Record& record, std::uint32_t id);
  bool present(std::uint32_t id) const { return present_[id] != 0; }
  const Tensor& raw(std::uint32_t id) const { return grads_[id]; }

 private:
  std::vector<Tensor> grads_;
  std::vector<char> present_;
};

using GradientRule = void (*)(const Record&, const Node&, const Tensor& grad_out, Gradients&);

struct OpInfo {
  Op op;
  std::string_view name;
  GradientRule rule;  // nullptr for leaves and stop-gradient
};

/// Table of all primitives with their gradient rules, indexed by Op.
std::span<const OpInfo> op_table();
std::string_view op_name(Op op);

/// Reverse pass from a scalar root. Accumulation across fan-out is additive
/// and the traversal order is fixed, so repeated calls are bitwise identical.
Gradients backward(const Record& record, Var root);

/// Adds the gradients of parameter-bound leaves into their Parameter::grad.
void accumulate_parameter_grads(const Record& record, const Gradients& grads);

}  // namespace dultra::ad
