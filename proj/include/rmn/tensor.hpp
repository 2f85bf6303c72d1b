#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace rmn {

// 64-bit scalars throughout: finite-difference checks are meaningless at
// 32-bit precision and desk-scale training does not need the speed.
using real = double;
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Opt-in NaN/Inf guard on op outputs; off by default for training speed.
inline bool& debug_numerics() {
  static bool flag = false;
  return flag;
}

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until backward first touches this leaf
  bool requires_grad = false;
};

class Tape;
inline Tape*& active_tape_ref() {
  thread_local Tape* tape = nullptr;
  return tape;
}
inline Tape* active_tape() { return active_tape_ref(); }

// Value-semantic handle on a dense row-major array. Copying a Tensor copies
// the handle, not the storage; ops always allocate fresh outputs.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, real fill = 0.0, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(numel(impl_->shape), fill);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<real> values, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    if (numel(shape) != values.size())
      throw ShapeError("tensor init: " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(real v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<real>{v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }

  std::vector<real>& data() { return impl_->data; }
  const std::vector<real>& data() const { return impl_->data; }

  real item() const {
    if (size() != 1) throw ValueError("item(): tensor has " + std::to_string(size()) + " elements");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<real>& grad() const {
    if (impl_->grad.empty())
      throw ValueError("grad(): no gradient accumulated on this tensor");
    return impl_->grad;
  }
  // Mutable gradient buffer, allocated as zeros on first use.
  std::vector<real>& grad_mut() {
    if (impl_->grad.empty()) impl_->grad.assign(size(), 0.0);
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
  void clear_grad() { impl_->grad.clear(); }

  const std::shared_ptr<TensorImpl>& ptr() const { return impl_; }
  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of executed differentiable ops. Each node owns a closure
// that routes the output gradient to its inputs. Execution order is
// topological by construction, so one reverse sweep suffices.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const std::shared_ptr<TensorImpl>& out, BackwardFn fn) {
    nodes_.push_back(Node{out, std::move(fn)});
    produced_.insert(out.get());
  }

  std::size_t num_ops() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void clear() {
    nodes_.clear();
    produced_.clear();
    grads_.clear();
    order_.clear();
    consumed_ = false;
  }

  // Gradient buffer of a tensor during the reverse sweep; null when no
  // gradient has reached it (dead branch).
  const std::vector<real>* grad_of(const TensorImpl* t) const {
    auto it = grads_.find(t);
    return it == grads_.end() ? nullptr : &it->second;
  }

  std::vector<real>& grad_buf(const TensorImpl* t) {
    auto it = grads_.find(t);
    if (it == grads_.end()) {
      order_.push_back(t);
      it = grads_.emplace(t, std::vector<real>(t->data.size(), 0.0)).first;
    }
    return it->second;
  }

  struct LeafGrad {
    TensorImpl* leaf;
    std::vector<real> grad;
  };

  // Reverse sweep; accumulates into the .grad of every requires_grad leaf.
  void backward(const Tensor& loss) {
    run_backward(loss);
    for (const TensorImpl* t : order_) {
      if (t->requires_grad && !produced_.count(t)) {
        auto* leaf = const_cast<TensorImpl*>(t);
        auto& buf = grads_[t];
        if (leaf->grad.empty()) leaf->grad.assign(leaf->data.size(), 0.0);
        for (std::size_t i = 0; i < buf.size(); ++i) leaf->grad[i] += buf[i];
      }
    }
    grads_.clear();
    order_.clear();
  }

  // Same sweep but leaves untouched; the caller merges the returned list
  // (per-worker batching: workers defer, one coordinator reduces).
  std::vector<LeafGrad> backward_deferred(const Tensor& loss) {
    run_backward(loss);
    std::vector<LeafGrad> out;
    for (const TensorImpl* t : order_) {
      if (t->requires_grad && !produced_.count(t))
        out.push_back(LeafGrad{const_cast<TensorImpl*>(t), std::move(grads_[t])});
    }
    grads_.clear();
    order_.clear();
    return out;
  }

  static void apply_leaf_grads(const std::vector<LeafGrad>& grads) {
    for (const auto& lg : grads) {
      if (lg.leaf->grad.empty()) lg.leaf->grad.assign(lg.leaf->data.size(), 0.0);
      for (std::size_t i = 0; i < lg.grad.size(); ++i) lg.leaf->grad[i] += lg.grad[i];
    }
  }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    BackwardFn fn;
  };

  void run_backward(const Tensor& loss) {
    if (consumed_) throw ValueError("backward: tape already consumed; run a new forward pass");
    if (!loss.defined() || loss.size() != 1) throw ValueError("backward: loss must be a scalar");
    grads_.clear();
    order_.clear();
    grad_buf(loss.impl())[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn(*this);
    consumed_ = true;
  }

  std::vector<Node> nodes_;
  std::unordered_set<const TensorImpl*> produced_;
  std::unordered_map<const TensorImpl*, std::vector<real>> grads_;
  std::vector<const TensorImpl*> order_;  // first-touch order: deterministic merge
  bool consumed_ = false;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(active_tape_ref()) { active_tape_ref() = &tape; }
  ~TapeScope() { active_tape_ref() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape_ref()) { active_tape_ref() = nullptr; }
  ~NoGradScope() { active_tape_ref() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline void guard_finite(const Tensor& t, const char* op) {
  if (!debug_numerics()) return;
  for (real v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
}

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

inline Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  bool rg = false;
  for (const Tensor* t : inputs) rg = rg || (*t).requires_grad();
  return Tensor(std::move(shape), 0.0, rg && active_tape() != nullptr);
}

// Right-aligned broadcast: a dimension matches if equal or either side is 1.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per out-dim; 0 where broadcast
  bool trivial = false;                         // equal shapes
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.trivial = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.resize(rank);
  std::vector<std::size_t> da(rank, 1), db(rank, 1);
  for (std::size_t i = 0; i < a.size(); ++i) da[rank - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) db[rank - b.size() + i] = b[i];
  for (std::size_t i = 0; i < rank; ++i) {
    if (da[i] == db[i] || da[i] == 1 || db[i] == 1)
      plan.out[i] = std::max(da[i], db[i]);
    else
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  }
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = rank; i-- > 0;) {
    plan.stride_a[i] = (da[i] == 1) ? 0 : sa;
    plan.stride_b[i] = (db[i] == 1) ? 0 : sb;
    sa *= da[i];
    sb *= db[i];
  }
  return plan;
}

// Calls f(out_index, a_index, b_index) over the broadcast output space.
template <class F>
inline void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t total = numel(plan.out);
  const std::size_t rank = plan.out.size();
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t io = 0; io < total; ++io) {
    f(io, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (counter[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      counter[d] = 0;
    }
  }
}

enum class BinKind { add, sub, mul };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind) {
  const BroadcastPlan plan = broadcast_plan(a.shape(), b.shape());
  Tensor out = make_output(plan.out, {&a, &b});
  const real* pa = a.data().data();
  const real* pb = b.data().data();
  real* po = out.data().data();
  auto apply = [kind](real x, real y) {
    switch (kind) {
      case BinKind::add: return x + y;
      case BinKind::sub: return x - y;
      default: return x * y;
    }
  };
  if (plan.trivial) {
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = apply(pa[i], pb[i]);
  } else {
    for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
      po[io] = apply(pa[ia], pb[ib]);
    });
  }
  guard_finite(out, "binary_op");
  if (should_record({&a, &b})) {
    active_tape()->record(out.ptr(), [pa_t = a.ptr(), pb_t = b.ptr(), po_t = out.ptr(), plan,
                                      kind](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po_t.get());
      if (!g) return;
      const bool need_a = pa_t->requires_grad;
      const bool need_b = pb_t->requires_grad;
      std::vector<real>* ga = need_a ? &tape.grad_buf(pa_t.get()) : nullptr;
      std::vector<real>* gb = need_b ? &tape.grad_buf(pb_t.get()) : nullptr;
      const real* va = pa_t->data.data();
      const real* vb = pb_t->data.data();
      const real* pg = g->data();
      auto accum = [&](std::size_t io, std::size_t ia, std::size_t ib) {
        switch (kind) {
          case BinKind::add:
            if (ga) (*ga)[ia] += pg[io];
            if (gb) (*gb)[ib] += pg[io];
            break;
          case BinKind::sub:
            if (ga) (*ga)[ia] += pg[io];
            if (gb) (*gb)[ib] -= pg[io];
            break;
          case BinKind::mul:
            if (ga) (*ga)[ia] += pg[io] * vb[ib];
            if (gb) (*gb)[ib] += pg[io] * va[ia];
            break;
        }
      };
      if (plan.trivial) {
        for (std::size_t i = 0; i < g->size(); ++i) accum(i, i, i);
      } else {
        for_each_broadcast(plan, accum);
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinKind::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinKind::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinKind::mul); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& a, real c) {
  Tensor out = detail::make_output(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = c * a.data()[i];
  detail::guard_finite(out, "scale");
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr(), c](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += c * (*g)[i];
    });
  }
  return out;
}

inline Tensor operator*(const Tensor& a, real c) { return scale(a, c); }
inline Tensor operator*(real c, const Tensor& a) { return scale(a, c); }
inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// Standard matrix product, rank-2 only. Backward: dA = dC.B^T, dB = A^T.dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = detail::make_output({m, n}, {&a, &b});
  const real* pa = a.data().data();
  const real* pb = b.data().data();
  real* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const real av = pa[i * k + t];
      if (av == 0.0) continue;
      const real* brow = pb + t * n;
      real* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  detail::guard_finite(out, "matmul");
  if (detail::should_record({&a, &b})) {
    active_tape()->record(out.ptr(), [pa_t = a.ptr(), pb_t = b.ptr(), po_t = out.ptr(), m, k,
                                      n](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po_t.get());
      if (!g) return;
      const real* pg = g->data();
      if (pa_t->requires_grad) {
        auto& ga = tape.grad_buf(pa_t.get());
        const real* vb = pb_t->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const real gv = pg[i * n + j];
            if (gv == 0.0) continue;
            for (std::size_t t = 0; t < k; ++t) ga[i * k + t] += gv * vb[t * n + j];
          }
      }
      if (pb_t->requires_grad) {
        auto& gb = tape.grad_buf(pb_t.get());
        const real* va = pa_t->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            const real av = va[i * k + t];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[t * n + j] += av * pg[i * n + j];
          }
      }
    });
  }
  return out;
}

namespace detail {

inline void check_axis(const Tensor& a, std::size_t axis, const char* op) {
  if (axis >= a.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(a.shape()));
}

// outer * n * inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit axis_split(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "reduce_sum");
  const auto s = detail::axis_split(a.shape(), axis);
  Tensor out = detail::make_output(detail::drop_axis(a.shape(), axis), {&a});
  const real* pa = a.data().data();
  real* po = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t t = 0; t < s.n; ++t)
      for (std::size_t i = 0; i < s.inner; ++i)
        po[o * s.inner + i] += pa[(o * s.n + t) * s.inner + i];
  detail::guard_finite(out, "reduce_sum");
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa_t = a.ptr(), po_t = out.ptr(), s](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po_t.get());
      if (!g || !pa_t->requires_grad) return;
      auto& ga = tape.grad_buf(pa_t.get());
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t t = 0; t < s.n; ++t)
          for (std::size_t i = 0; i < s.inner; ++i)
            ga[(o * s.n + t) * s.inner + i] += (*g)[o * s.inner + i];
    });
  }
  return out;
}

inline Tensor reduce_mean(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "reduce_mean");
  const real n = static_cast<real>(a.shape()[axis]);
  return scale(reduce_sum(a, axis), 1.0 / n);
}

// Index of the per-slice maximum; ties go to the lowest index.
// Non-differentiable: the result never joins the tape.
inline Tensor argmax(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "argmax");
  const auto s = detail::axis_split(a.shape(), axis);
  Tensor out(detail::drop_axis(a.shape(), axis));
  const real* pa = a.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      real best_v = pa[(o * s.n) * s.inner + i];
      for (std::size_t t = 1; t < s.n; ++t) {
        const real v = pa[(o * s.n + t) * s.inner + i];
        if (v > best_v) {
          best_v = v;
          best = t;
        }
      }
      out.data()[o * s.inner + i] = static_cast<real>(best);
    }
  return out;
}

inline std::size_t argmax_index(const std::vector<real>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline Tensor sum_all(const Tensor& a) {
  Tensor out = detail::make_output({1}, {&a});
  real acc = 0.0;
  for (real v : a.data()) acc += v;
  out.data()[0] = acc;
  detail::guard_finite(out, "sum_all");
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr()](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (auto& v : ga) v += (*g)[0];
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<real>(a.size())); }

namespace detail {

template <class Fwd, class Bwd>
inline Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd_factor) {
  Tensor out = make_output(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = fwd(a.data()[i]);
  guard_finite(out, name);
  if (should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr(), bwd_factor](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (std::size_t i = 0; i < g->size(); ++i)
        ga[i] += (*g)[i] * bwd_factor(pa->data[i], po->data[i]);
    });
  }
  return out;
}

inline real sigmoid_scalar(real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const real e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor tanh(const Tensor& a) {
  return detail::unary_op(
      a, "tanh", [](real x) { return std::tanh(x); }, [](real, real y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, "sigmoid", [](real x) { return detail::sigmoid_scalar(x); },
      [](real, real y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      a, "exp", [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

// IEEE semantics: log of non-positive input yields -inf/NaN; the debug
// numerics guard surfaces those when enabled.
inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      a, "log", [](real x) { return std::log(x); }, [](real x, real) { return 1.0 / x; });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      a, "softplus",
      [](real x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](real x, real) { return detail::sigmoid_scalar(x); });
}

// Max-subtracted softmax along one axis; rows sum to 1 within 1e-6.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "softmax");
  const auto s = detail::axis_split(a.shape(), axis);
  Tensor out = detail::make_output(a.shape(), {&a});
  const real* pa = a.data().data();
  real* po = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      real mx = pa[(o * s.n) * s.inner + i];
      for (std::size_t t = 1; t < s.n; ++t) mx = std::max(mx, pa[(o * s.n + t) * s.inner + i]);
      real denom = 0.0;
      for (std::size_t t = 0; t < s.n; ++t) {
        const real e = std::exp(pa[(o * s.n + t) * s.inner + i] - mx);
        po[(o * s.n + t) * s.inner + i] = e;
        denom += e;
      }
      for (std::size_t t = 0; t < s.n; ++t) po[(o * s.n + t) * s.inner + i] /= denom;
    }
  detail::guard_finite(out, "softmax");
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa_t = a.ptr(), po_t = out.ptr(), s](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po_t.get());
      if (!g || !pa_t->requires_grad) return;
      auto& ga = tape.grad_buf(pa_t.get());
      const real* y = po_t->data.data();
      const real* pg = g->data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
          real dot = 0.0;
          for (std::size_t t = 0; t < s.n; ++t) {
            const std::size_t idx = (o * s.n + t) * s.inner + i;
            dot += pg[idx] * y[idx];
          }
          for (std::size_t t = 0; t < s.n; ++t) {
            const std::size_t idx = (o * s.n + t) * s.inner + i;
            ga[idx] += y[idx] * (pg[idx] - dot);
          }
        }
    });
  }
  return out;
}

inline Tensor log_softmax(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "log_softmax");
  const auto s = detail::axis_split(a.shape(), axis);
  Tensor out = detail::make_output(a.shape(), {&a});
  const real* pa = a.data().data();
  real* po = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      real mx = pa[(o * s.n) * s.inner + i];
      for (std::size_t t = 1; t < s.n; ++t) mx = std::max(mx, pa[(o * s.n + t) * s.inner + i]);
      real denom = 0.0;
      for (std::size_t t = 0; t < s.n; ++t) denom += std::exp(pa[(o * s.n + t) * s.inner + i] - mx);
      const real lse = mx + std::log(denom);
      for (std::size_t t = 0; t < s.n; ++t) {
        const std::size_t idx = (o * s.n + t) * s.inner + i;
        po[idx] = pa[idx] - lse;
      }
    }
  detail::guard_finite(out, "log_softmax");
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa_t = a.ptr(), po_t = out.ptr(), s](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po_t.get());
      if (!g || !pa_t->requires_grad) return;
      auto& ga = tape.grad_buf(pa_t.get());
      const real* y = po_t->data.data();
      const real* pg = g->data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
          real gsum = 0.0;
          for (std::size_t t = 0; t < s.n; ++t) gsum += pg[(o * s.n + t) * s.inner + i];
          for (std::size_t t = 0; t < s.n; ++t) {
            const std::size_t idx = (o * s.n + t) * s.inner + i;
            ga[idx] += pg[idx] - std::exp(y[idx]) * gsum;
          }
        }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor out = detail::make_output(std::move(shape), {&a});
  out.data() = a.data();
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr()](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  detail::check_axis(parts[0], axis, "concat");
  Shape out_shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != rank)
      throw ShapeError("concat: rank mismatch between inputs");
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis && parts[p].shape()[d] != out_shape[d])
        throw ShapeError("concat: non-concat dimension mismatch: " + shape_str(parts[p].shape()) +
                         " vs " + shape_str(out_shape));
    out_shape[axis] += parts[p].shape()[axis];
  }
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  Tensor out(out_shape, 0.0, rg && active_tape() != nullptr);

  const auto so = detail::axis_split(out_shape, axis);
  std::vector<std::size_t> offsets(parts.size() + 1, 0);
  for (std::size_t p = 0; p < parts.size(); ++p)
    offsets[p + 1] = offsets[p] + parts[p].shape()[axis];
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto sp = detail::axis_split(parts[p].shape(), axis);
    const real* src = parts[p].data().data();
    real* dst = out.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t t = 0; t < sp.n; ++t)
        std::copy(src + (o * sp.n + t) * sp.inner, src + (o * sp.n + t) * sp.inner + sp.inner,
                  dst + (o * so.n + offsets[p] + t) * so.inner);
  }
  detail::guard_finite(out, "concat");
  if (active_tape() && rg) {
    std::vector<std::shared_ptr<TensorImpl>> srcs;
    for (const auto& p : parts) srcs.push_back(p.ptr());
    active_tape()->record(out.ptr(), [srcs, po = out.ptr(), so, offsets, axis](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g) return;
      for (std::size_t p = 0; p < srcs.size(); ++p) {
        if (!srcs[p]->requires_grad) continue;
        auto& gp = tape.grad_buf(srcs[p].get());
        const auto sp = detail::axis_split(srcs[p]->shape, axis);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t t = 0; t < sp.n; ++t)
            for (std::size_t i = 0; i < sp.inner; ++i)
              gp[(o * sp.n + t) * sp.inner + i] +=
                  (*g)[(o * so.n + offsets[p] + t) * so.inner + i];
      }
    });
  }
  return out;
}

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  return concat(std::vector<Tensor>{a, b}, axis);
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  detail::check_axis(a, axis, "slice");
  if (len == 0 || start + len > a.shape()[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for " + shape_str(a.shape()) + " axis " + std::to_string(axis));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Tensor out = detail::make_output(out_shape, {&a});
  const auto sa = detail::axis_split(a.shape(), axis);
  const real* src = a.data().data();
  real* dst = out.data().data();
  for (std::size_t o = 0; o < sa.outer; ++o)
    for (std::size_t t = 0; t < len; ++t)
      std::copy(src + (o * sa.n + start + t) * sa.inner,
                src + (o * sa.n + start + t) * sa.inner + sa.inner,
                dst + (o * len + t) * sa.inner);
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr(), sa, start, len](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (std::size_t o = 0; o < sa.outer; ++o)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t i = 0; i < sa.inner; ++i)
            ga[(o * sa.n + start + t) * sa.inner + i] += (*g)[(o * len + t) * sa.inner + i];
    });
  }
  return out;
}

// Single element of a rank-1 tensor as a scalar tensor.
inline Tensor pick(const Tensor& a, std::size_t index) {
  if (a.rank() != 1) throw ShapeError("pick: expected rank-1 tensor, got " + shape_str(a.shape()));
  return slice(a, 0, index, 1);
}

// Rows of `a` each repeated `times` consecutive times: out[i*times + r] = a[i].
inline Tensor repeat_rows(const Tensor& a, std::size_t times) {
  if (a.rank() != 2) throw ShapeError("repeat_rows: expected rank-2 tensor");
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  Tensor out = detail::make_output({n * times, d}, {&a});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < times; ++r)
      std::copy(a.data().begin() + i * d, a.data().begin() + (i + 1) * d,
                out.data().begin() + (i * times + r) * d);
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr(), n, d, times](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < times; ++r)
          for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += (*g)[(i * times + r) * d + j];
    });
  }
  return out;
}

// The whole matrix stacked `times` times: out[q*n + i] = a[i].
inline Tensor tile_rows(const Tensor& a, std::size_t times) {
  if (a.rank() != 2) throw ShapeError("tile_rows: expected rank-2 tensor");
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  Tensor out = detail::make_output({n * times, d}, {&a});
  for (std::size_t q = 0; q < times; ++q)
    std::copy(a.data().begin(), a.data().end(), out.data().begin() + q * n * d);
  if (detail::should_record({&a})) {
    active_tape()->record(out.ptr(), [pa = a.ptr(), po = out.ptr(), n, d, times](Tape& tape) {
      const std::vector<real>* g = tape.grad_of(po.get());
      if (!g || !pa->requires_grad) return;
      auto& ga = tape.grad_buf(pa.get());
      for (std::size_t q = 0; q < times; ++q)
        for (std::size_t i = 0; i < n * d; ++i) ga[i] += (*g)[q * n * d + i];
    });
  }
  return out;
}

// [d] vectors stacked into a [K x d] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  std::vector<Tensor> mats;
  mats.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.rank() != 1) throw ShapeError("stack_rows: expected rank-1 rows");
    mats.push_back(reshape(r, {1, r.size()}));
  }
  return concat(mats, 0);
}

// row-vector x matrix: [k] . [k x n] -> [n]
inline Tensor vecmat(const Tensor& x, const Tensor& w) {
  if (x.rank() != 1) throw ShapeError("vecmat: expected rank-1 vector");
  return reshape(matmul(reshape(x, {1, x.size()}), w), {w.shape()[1]});
}

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum_all(mul(a, b)); }

// Value copy severed from the tape; never accumulates gradient.
inline Tensor detach(const Tensor& a) {
  Tensor out(a.shape());
  out.data() = a.data();
  return out;
}

// Backward through the active tape (spec surface; the tape method is the
// primary interface).
inline void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) throw ValueError("backward: no active tape");
  tape->backward(loss);
}

}  // namespace rmn
