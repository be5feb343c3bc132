#include "kdret/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>

#include "kdret/errors.hpp"

namespace kdret {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using StridedConstMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

std::atomic<std::uint64_t> g_next_tape_id{1};

ConstMap cmap(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap mmap(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

Tape& tape_of(Var v) {
  if (v.tape() == nullptr) throw TapeError("operation on an unbound variable");
  v.tape()->check(v);
  return *v.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw TapeError("operands live on different tapes");
  t.check(b);
  return t;
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericsError(std::string(op) + ": non-finite result");
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F>
Var unary(Var a, OpKind kind, F forward, const char* name,
          std::function<double(double x, double y)> dydx, bool check_finite = false) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  if (check_finite) require_finite(y, name);
  const std::size_t ai = a.id();
  return t.record(kind, std::move(y), {a}, [ai, dydx](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ai)) return;
    const Tensor& g = tp.node_grad(self);
    const Tensor& xv = tp.node_value(ai);
    const Tensor& yv = tp.node_value(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(xv[i], yv[i]);
  });
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Affine: return "affine";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::MaxPool1d: return "max_pool1d";
    case OpKind::LstmCell: return "lstm_cell";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::LogSoftmaxRows: return "log_softmax_rows";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::StackRows: return "stack_rows";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::GatherRows: return "gather_rows";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw TapeError("value() on an unbound variable");
  return tape_->value(*this);
}

Tape::Tape(Mode mode) : id_(g_next_tape_id.fetch_add(1)), mode_(mode) {}

void Tape::check(Var v) const {
  if (v.tape_ != this) throw TapeError("variable belongs to another tape");
  if (v.generation_ != generation_ || v.id_ >= nodes_.size())
    throw TapeError("variable refers to a dead tape recording");
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Constant, std::move(value), {}, false, nullptr, {}});
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{OpKind::Input, std::move(value), {}, grad_enabled(), nullptr, {}});
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::param(Parameter& p) {
  // The node aliases the parameter storage; parameters must not change while
  // this recording is alive. An empty value marks the alias.
  nodes_.push_back(Node{OpKind::Param, Tensor(), {}, grad_enabled(), &p, {}});
  return Var(this, nodes_.size() - 1, generation_);
}

const Tensor& Tape::value(Var v) const {
  check(v);
  const Node& n = nodes_[v.id_];
  return n.param ? n.param->value : n.value;
}

Tensor Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[v.id_];
  if (n.grad.empty()) return Tensor(value(v).shape(), 0.0);
  return n.grad;
}

OpKind Tape::kind(Var v) const {
  check(v);
  return nodes_[v.id_].kind;
}

Var Tape::record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(kind, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    check(in);
    needs = needs || nodes_[in.id_].requires_grad;
  }
  needs = needs && grad_enabled();
  nodes_.push_back(Node{kind, std::move(value), {}, needs, nullptr,
                        needs ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1, generation_);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.param ? n.param->value.shape() : n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (!grad_enabled()) throw TapeError("backward() on an inference tape");
  if (consumed_) throw TapeError("backward() already ran on this recording; reset() first");
  if (value(loss).size() != 1)
    throw NonScalarError("backward() needs a scalar loss, got shape " +
                         shape_str(value(loss).shape()));
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      auto& dst = n.param->grad;
      if (dst.shape() != n.grad.shape()) dst = Tensor(n.grad.shape(), 0.0);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  ++generation_;
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// Ops

namespace ag {

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::Add, std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    for (std::size_t in : {ai, bi}) {
      if (!tp.needs_grad(in)) continue;
      Tensor& gi = tp.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::Sub, std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::Mul, std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    if (tp.needs_grad(ai)) {
      const Tensor& other = tp.node_value(bi);
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * other[i];
    }
    if (tp.needs_grad(bi)) {
      const Tensor& other = tp.node_value(ai);
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * other[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  const std::size_t ai = a.id();
  return t.record(OpKind::Scale, std::move(y), {a}, [ai, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s;
  const std::size_t ai = a.id();
  return t.record(OpKind::AddScalar, std::move(y), {a}, [ai](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  Tensor y({av.rows(), bv.cols()});
  mmap(y).noalias() = cmap(av) * cmap(bv);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(OpKind::MatMul, std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    if (tp.needs_grad(ai))
      mmap(tp.grad_buffer(ai)).noalias() += cmap(g) * cmap(tp.node_value(bi)).transpose();
    if (tp.needs_grad(bi))
      mmap(tp.grad_buffer(bi)).noalias() += cmap(tp.node_value(ai)).transpose() * cmap(g);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  Tensor y({av.cols(), av.rows()});
  mmap(y) = cmap(av).transpose();
  const std::size_t ai = a.id();
  return t.record(OpKind::Transpose, std::move(y), {a}, [ai](Tape& tp, std::size_t self) {
    mmap(tp.grad_buffer(ai)) += cmap(tp.node_grad(self)).transpose();
  });
}

Var affine(Var x, Var w, Var b) {
  Tape& t = tape_of(x, w);
  tape_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_matrix(xv, "affine");
  require_matrix(wv, "affine");
  require_matrix(bv, "affine");
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols())
    throw ShapeError("affine: incompatible shapes x" + shape_str(xv.shape()) + " w" +
                     shape_str(wv.shape()) + " b" + shape_str(bv.shape()));
  Tensor y({xv.rows(), wv.cols()});
  auto ym = mmap(y);
  ym.noalias() = cmap(xv) * cmap(wv);
  ym.rowwise() += cmap(bv).row(0);
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return t.record(OpKind::Affine, std::move(y), {x, w, b}, [xi, wi, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    if (tp.needs_grad(xi))
      mmap(tp.grad_buffer(xi)).noalias() += cmap(g) * cmap(tp.node_value(wi)).transpose();
    if (tp.needs_grad(wi))
      mmap(tp.grad_buffer(wi)).noalias() += cmap(tp.node_value(xi)).transpose() * cmap(g);
    if (tp.needs_grad(bi)) mmap(tp.grad_buffer(bi)) += cmap(g).colwise().sum();
  });
}

Var conv1d(Var x, Var w, Var b) {
  Tape& t = tape_of(x, w);
  tape_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_matrix(xv, "conv1d");
  if (wv.rank() != 3) throw ShapeError("conv1d: kernel must be [out_ch, width, in_ch]");
  const std::size_t out_ch = wv.shape()[0], width = wv.shape()[1], in_ch = wv.shape()[2];
  if (xv.cols() != in_ch)
    throw ShapeError("conv1d: input has " + std::to_string(xv.cols()) + " channels, kernel expects " +
                     std::to_string(in_ch));
  if (bv.size() != out_ch) throw ShapeError("conv1d: bias must have out_ch entries");
  if (width > xv.rows())
    throw WindowError("conv1d: kernel width " + std::to_string(width) + " exceeds sequence length " +
                      std::to_string(xv.rows()));
  const std::size_t steps = xv.rows() - width + 1;
  const std::size_t patch = width * in_ch;
  // Rows t..t+width-1 of x are contiguous, so the patch matrix is a strided view.
  StridedConstMap patches(xv.data().data(), steps, patch, Eigen::OuterStride<>(in_ch));
  ConstMap kernel(wv.data().data(), out_ch, patch);
  Tensor y({steps, out_ch});
  auto ym = mmap(y);
  ym.noalias() = patches * kernel.transpose();
  ym.rowwise() += ConstMap(bv.data().data(), 1, out_ch).row(0);
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return t.record(OpKind::Conv1d, std::move(y), {x, w, b},
                  [xi, wi, bi, steps, patch, in_ch, out_ch](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    const Tensor& xv2 = tp.node_value(xi);
    const Tensor& wv2 = tp.node_value(wi);
    ConstMap gm = cmap(g);
    if (tp.needs_grad(wi)) {
      StridedConstMap pm(xv2.data().data(), steps, patch, Eigen::OuterStride<>(in_ch));
      Tensor& gw = tp.grad_buffer(wi);
      MutMap(gw.data().data(), out_ch, patch).noalias() += gm.transpose() * pm;
    }
    if (tp.needs_grad(xi)) {
      RowMat dpatch = gm * ConstMap(wv2.data().data(), out_ch, patch);
      Tensor& gx = tp.grad_buffer(xi);
      for (std::size_t s = 0; s < steps; ++s) {
        double* dst = gx.data().data() + s * in_ch;
        for (std::size_t j = 0; j < patch; ++j) dst[j] += dpatch(s, j);
      }
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      MutMap(gb.data().data(), 1, out_ch) += gm.colwise().sum();
    }
  });
}

Var max_pool1d(Var x, std::size_t window, std::size_t stride) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require_matrix(xv, "max_pool1d");
  if (window == 0 || stride == 0) throw WindowError("max_pool1d: window and stride must be positive");
  if (window > xv.rows())
    throw WindowError("max_pool1d: window " + std::to_string(window) + " exceeds sequence length " +
                      std::to_string(xv.rows()));
  const std::size_t ch = xv.cols();
  const std::size_t out_steps = (xv.rows() - window) / stride + 1;
  Tensor y({out_steps, ch});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out_steps * ch);
  for (std::size_t o = 0; o < out_steps; ++o) {
    for (std::size_t c = 0; c < ch; ++c) {
      std::size_t best = o * stride;
      for (std::size_t s = best + 1; s < o * stride + window; ++s)
        if (xv.at(s, c) > xv.at(best, c)) best = s;  // strict: ties keep the lowest index
      y.at(o, c) = xv.at(best, c);
      (*argmax)[o * ch + c] = best;
    }
  }
  const std::size_t xi = x.id();
  return t.record(OpKind::MaxPool1d, std::move(y), {x}, [xi, argmax, ch](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& gx = tp.grad_buffer(xi);
    for (std::size_t k = 0; k < g.size(); ++k) gx[(*argmax)[k] * ch + k % ch] += g[k];
  });
}

Var lstm_cell(Var gate_inputs, std::size_t step, Var state, Var w_hh) {
  Tape& t = tape_of(gate_inputs, state);
  tape_of(gate_inputs, w_hh);
  const Tensor& gv = gate_inputs.value();
  const Tensor& sv = state.value();
  const Tensor& wv = w_hh.value();
  require_matrix(gv, "lstm_cell");
  require_matrix(wv, "lstm_cell");
  const std::size_t hidden = wv.rows();
  if (wv.cols() != 4 * hidden || gv.cols() != 4 * hidden || sv.size() != 2 * hidden)
    throw ShapeError("lstm_cell: expected gate inputs [T," + std::to_string(4 * hidden) +
                     "], state [1," + std::to_string(2 * hidden) + "], got " +
                     shape_str(gv.shape()) + " and " + shape_str(sv.shape()));
  if (step >= gv.rows()) throw ShapeError("lstm_cell: step beyond gate input rows");

  const double* h_prev = sv.data().data();
  const double* c_prev = h_prev + hidden;
  // z = gate_inputs[step] + h_prev * W_hh
  auto gates = std::make_shared<std::vector<double>>(4 * hidden);
  Eigen::Map<Eigen::RowVectorXd> z(gates->data(), 4 * hidden);
  z = Eigen::Map<const Eigen::RowVectorXd>(gv.data().data() + step * 4 * hidden, 4 * hidden);
  z.noalias() += Eigen::Map<const Eigen::RowVectorXd>(h_prev, hidden) * cmap(wv);

  Tensor y({1, 2 * hidden});
  double* h = y.data().data();
  double* c = h + hidden;
  double* gi = gates->data();
  double* gf = gi + hidden;
  double* gg = gf + hidden;
  double* go = gg + hidden;
  for (std::size_t k = 0; k < hidden; ++k) {
    gi[k] = stable_sigmoid(gi[k]);
    gf[k] = stable_sigmoid(gf[k]);
    gg[k] = std::tanh(gg[k]);
    go[k] = stable_sigmoid(go[k]);
    c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
    h[k] = go[k] * std::tanh(c[k]);
  }

  const std::size_t xi = gate_inputs.id(), si = state.id(), wi = w_hh.id();
  return t.record(OpKind::LstmCell, std::move(y), {gate_inputs, state, w_hh},
                  [xi, si, wi, step, hidden, gates](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    const double* dh = g.data().data();
    const double* dc_out = dh + hidden;
    const Tensor& prev = tp.node_value(si);
    const double* c_prev2 = prev.data().data() + hidden;
    const double* c_new = tp.node_value(self).data().data() + hidden;
    const double* i = gates->data();
    const double* f = i + hidden;
    const double* cand = f + hidden;
    const double* o = cand + hidden;

    Eigen::RowVectorXd dz(4 * hidden);
    Eigen::RowVectorXd dc_prev(hidden);
    for (std::size_t k = 0; k < hidden; ++k) {
      const double tc = std::tanh(c_new[k]);
      const double dc = dc_out[k] + dh[k] * o[k] * (1.0 - tc * tc);
      dz[k] = dc * cand[k] * i[k] * (1.0 - i[k]);
      dz[hidden + k] = dc * c_prev2[k] * f[k] * (1.0 - f[k]);
      dz[2 * hidden + k] = dc * i[k] * (1.0 - cand[k] * cand[k]);
      dz[3 * hidden + k] = dh[k] * tc * o[k] * (1.0 - o[k]);
      dc_prev[k] = dc * f[k];
    }
    if (tp.needs_grad(xi)) {
      Tensor& gx = tp.grad_buffer(xi);
      Eigen::Map<Eigen::RowVectorXd>(gx.data().data() + step * 4 * hidden, 4 * hidden) += dz;
    }
    if (tp.needs_grad(wi)) {
      Eigen::Map<const Eigen::VectorXd> hp(prev.data().data(), hidden);
      mmap(tp.grad_buffer(wi)).noalias() += hp * dz;
    }
    if (tp.needs_grad(si)) {
      Tensor& gs = tp.grad_buffer(si);
      Eigen::Map<Eigen::RowVectorXd>(gs.data().data(), hidden).noalias() +=
          dz * cmap(tp.node_value(wi)).transpose();
      Eigen::Map<Eigen::RowVectorXd>(gs.data().data() + hidden, hidden) += dc_prev;
    }
  });
}

Var sigmoid(Var a) {
  return unary(a, OpKind::Sigmoid, stable_sigmoid, "sigmoid",
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, OpKind::Tanh, [](double x) { return std::tanh(x); }, "tanh",
               [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, OpKind::Exp, [](double x) { return std::exp(x); }, "exp",
               [](double, double y) { return y; }, true);
}

Var log(Var a) {
  for (double v : a.value().values())
    if (!(v > 0.0)) throw NumericsError("log: non-positive input");
  return unary(a, OpKind::Log, [](double x) { return std::log(x); }, "log",
               [](double x, double) { return 1.0 / x; }, true);
}

namespace {

void softmax_row(const double* x, double* y, std::size_t n) {
  const double mx = *std::max_element(x, x + n);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    z += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= z;
}

}  // namespace

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& xv = a.value();
  require_matrix(xv, "softmax_rows");
  if (!xv.all_finite()) throw NumericsError("softmax_rows: non-finite input");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < m; ++r) softmax_row(xv.data().data() + r * n, y.data().data() + r * n, n);
  const std::size_t ai = a.id();
  return t.record(OpKind::SoftmaxRows, std::move(y), {a}, [ai, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    const Tensor& yv = tp.node_value(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * yv[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += yv[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& xv = a.value();
  require_matrix(xv, "log_softmax_rows");
  if (!xv.all_finite()) throw NumericsError("log_softmax_rows: non-finite input");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = xv.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = x[j] - lz;
  }
  const std::size_t ai = a.id();
  return t.record(OpKind::LogSoftmaxRows, std::move(y), {a}, [ai, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    const Tensor& yv = tp.node_value(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < m; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        ga[r * n + j] += g[r * n + j] - std::exp(yv[r * n + j]) * gsum;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor y({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    mmap(y).middleCols(off, widths[k]) = cmap(parts[k].value());
    off += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record(OpKind::ConcatCols, std::move(y), parts, [ids, widths](Tape& tp, std::size_t self) {
    ConstMap g = cmap(tp.node_grad(self));
    std::size_t off2 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) mmap(tp.grad_buffer(ids[k])) += g.middleCols(off2, widths[k]);
      off2 += widths[k];
    }
  });
}

Var stack_rows(std::span<const Var> rows, std::size_t begin, std::size_t end) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  if (begin >= end) throw ShapeError("stack_rows: empty column range");
  Tape& t = tape_of(rows[0]);
  const std::size_t width = end - begin;
  Tensor y({rows.size(), width});
  std::vector<std::size_t> ids;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    tape_of(rows[0], rows[r]);
    const Tensor& v = rows[r].value();
    if (v.rows() != 1 || v.cols() < end) throw ShapeError("stack_rows: inputs must be rows with >= end columns");
    std::copy(v.data().begin() + begin, v.data().begin() + end, y.data().begin() + r * width);
    ids.push_back(rows[r].id());
  }
  return t.record(OpKind::StackRows, std::move(y), rows, [ids, begin, width](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!tp.needs_grad(ids[r])) continue;
      Tensor& gr = tp.grad_buffer(ids[r]);
      for (std::size_t j = 0; j < width; ++j) gr[begin + j] += g[r * width + j];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "slice_cols");
  if (begin >= end || end > av.cols()) throw ShapeError("slice_cols: bad column range");
  Tensor y({av.rows(), end - begin});
  mmap(y) = cmap(av).middleCols(begin, end - begin);
  const std::size_t ai = a.id();
  return t.record(OpKind::SliceCols, std::move(y), {a}, [ai, begin, end](Tape& tp, std::size_t self) {
    mmap(tp.grad_buffer(ai)).middleCols(begin, end - begin) += cmap(tp.node_grad(self));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ai = a.id();
  return t.record(OpKind::Sum, Tensor::scalar(s), {a}, [ai](Tape& tp, std::size_t self) {
    const double g = tp.node_grad(self)[0];
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const double n = static_cast<double>(a.value().size());
  const std::size_t ai = a.id();
  return t.record(OpKind::Mean, Tensor::scalar(s / n), {a}, [ai, n](Tape& tp, std::size_t self) {
    const double g = tp.node_grad(self)[0] / n;
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "mean_rows");
  const double m = static_cast<double>(av.rows());
  Tensor y({1, av.cols()});
  mmap(y) = cmap(av).colwise().sum() / m;
  const std::size_t ai = a.id();
  return t.record(OpKind::MeanRows, std::move(y), {a}, [ai, m](Tape& tp, std::size_t self) {
    mmap(tp.grad_buffer(ai)).rowwise() += cmap(tp.node_grad(self)).row(0) / m;
  });
}

Var gather_rows(Var table, std::span<const std::int32_t> ids) {
  Tape& t = tape_of(table);
  const Tensor& tv = table.value();
  require_matrix(tv, "gather_rows");
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  const std::size_t vocab = tv.rows(), dim = tv.cols();
  Tensor y({ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
      throw VocabError("token id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    std::copy_n(tv.data().begin() + static_cast<std::size_t>(ids[r]) * dim, dim,
                y.data().begin() + r * dim);
  }
  const std::size_t ti = table.id();
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return t.record(OpKind::GatherRows, std::move(y), {table},
                  [ti, saved = std::move(saved), dim](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& gt = tp.grad_buffer(ti);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      double* dst = gt.data().data() + static_cast<std::size_t>(saved[r]) * dim;
      for (std::size_t j = 0; j < dim; ++j) dst[j] += g[r * dim + j];
    }
  });
}

}  // namespace ag

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

double eval_scalar(const std::function<Var(Tape&)>& f) {
  Tape tape(Tape::Mode::Inference);
  const Tensor& out = f(tape).value();
  if (out.size() != 1) throw NonScalarError("grad_check: function is not scalar-valued");
  if (!std::isfinite(out[0])) throw NumericsError("grad_check: non-finite function value");
  return out[0];
}

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  Tape tape;
  Var xv = tape.input(x);
  Var y = f(tape, xv);
  if (y.value().size() != 1) throw NonScalarError("grad_check: function is not scalar-valued");
  if (!std::isfinite(y.value()[0])) throw NumericsError("grad_check: non-finite function value");
  tape.backward(y);
  const Tensor analytic = tape.grad(xv);

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = eval_scalar([&](Tape& t) { return f(t, t.input(probe)); });
    probe[i] = x[i] - h;
    const double fm = eval_scalar([&](Tape& t) { return f(t, t.input(probe)); });
    probe[i] = x[i];
    worst = std::max(worst, rel_error(analytic[i], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

double grad_check_params(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                         double h) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var y = f(tape);
    if (y.value().size() != 1) throw NonScalarError("grad_check: function is not scalar-valued");
    if (!std::isfinite(y.value()[0])) throw NumericsError("grad_check: non-finite function value");
    tape.backward(y);
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& v = params[k]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = eval_scalar(f);
      v[i] = orig - h;
      const double fm = eval_scalar(f);
      v[i] = orig;
      worst = std::max(worst, rel_error(analytic[k][i], (fp - fm) / (2.0 * h)));
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return worst;
}

}  // namespace kdret
