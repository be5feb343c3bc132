#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdret/tensor.hpp"

namespace kdret {

// A learnable tensor. Tape::backward accumulates into grad; callers zero it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape is
// alive and has not been reset since the handle was created.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id, std::uint64_t gen) : tape_(t), id_(id), generation_(gen) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

enum class OpKind {
  Constant, Input, Param,
  Add, Sub, Mul, Scale, AddScalar,
  MatMul, Transpose, Affine,
  Conv1d, MaxPool1d, LstmCell,
  Sigmoid, Tanh, Exp, Log,
  SoftmaxRows, LogSoftmaxRows,
  ConcatCols, StackRows, SliceCols,
  Sum, Mean, MeanRows,
  GatherRows,
};

const char* op_name(OpKind kind);

// Reverse-mode tape. Records are appended in execution order, so inputs always
// precede the records that consume them. A Train tape may be differentiated
// once; reset() starts a fresh recording and invalidates existing handles.
class Tape {
 public:
  enum class Mode { Train, Inference };
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(Mode mode = Mode::Train);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  bool grad_enabled() const noexcept { return mode_ == Mode::Train; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is readable through grad() after backward().
  Var input(Tensor value);
  // Leaf bound to a parameter; backward() adds its gradient into p.grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  // Zero tensor of the right shape if the node received no gradient.
  Tensor grad(Var v) const;
  OpKind kind(Var v) const;

  void backward(Var loss);
  void reset();

  // --- used by op implementations ---
  Var record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  void check(Var v) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& node_value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  const Tensor& node_grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    Tensor grad;  // empty until something flows in
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::uint64_t id_;
  Mode mode_;
  std::uint64_t generation_ = 1;
  bool consumed_ = false;
  std::deque<Node> nodes_;  // stable addresses: values stay valid as the tape grows
};

// Differentiable operations. All operands must live on the same tape.
// Matrices are rank-2 row-major; a row vector is shape {1, n}.
namespace ag {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
Var transpose(Var a);
// x [m,in], w [in,out], b [1,out] -> x w + b, shape [m,out]
Var affine(Var x, Var w, Var b);

// Valid 1-D convolution over time.
// x [T, in_ch], w [out_ch, width, in_ch], b [1, out_ch] -> [T - width + 1, out_ch]
//   y[t,o] = b[o] + sum_{j,c} w[o,j,c] * x[t+j,c]
Var conv1d(Var x, Var w, Var b);

// Max over windows of `window` consecutive time steps, advancing by `stride`.
// x [T, ch] -> [(T - window) / stride + 1, ch]. Ties go to the lowest time index;
// backward routes the whole incoming gradient to that position.
Var max_pool1d(Var x, std::size_t window, std::size_t stride);
inline Var max_over_time(Var x) { return max_pool1d(x, x.shape()[0], 1); }

// One LSTM step. `gate_inputs` is [T, 4H] and row `step` holds W_x x_t + b
// in gate order (input, forget, candidate, output). `state` is the packed
// previous state [1, 2H] = [h ; c] and `w_hh` is [H, 4H]. Returns the packed
// new state [1, 2H].
Var lstm_cell(Var gate_inputs, std::size_t step, Var state, Var w_hh);

Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);  // NumericsError on non-positive entries

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

// Concatenate matrices with equal row counts side by side.
Var concat_cols(std::span<const Var> parts);
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}
// Stack columns [begin, end) of k row vectors into a [k, end - begin] matrix.
Var stack_rows(std::span<const Var> rows, std::size_t begin, std::size_t end);
// Columns [begin, end) of a matrix.
Var slice_cols(Var a, std::size_t begin, std::size_t end);

Var sum(Var a);        // -> {1}
Var mean(Var a);       // -> {1}
Var mean_rows(Var a);  // [m,n] -> [1,n]

// Embedding lookup: rows `ids` of table [V, D] -> [len(ids), D]. VocabError on
// ids outside [0, V).
Var gather_rows(Var table, std::span<const std::int32_t> ids);

}  // namespace ag

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar function of one tensor. NumericsError if f is not finite at a
// perturbed point.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-5);

// Same check over every coordinate of every parameter. Parameters are restored
// exactly afterwards; their grads are left zeroed.
double grad_check_params(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                         double h = 1e-5);

}  // namespace kdret
