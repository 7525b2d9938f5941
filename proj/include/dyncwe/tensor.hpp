#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dyncwe/rng.hpp"

namespace dyncwe {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace detail

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until allocated
  bool requires_grad = false;
  std::uint64_t id = detail::next_tensor_id();
};

// Dense row-major tensor of doubles with value semantics over a shared node.
// Copies are cheap and alias the same storage; clone() makes a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return make(std::move(shape), 0.0, requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    return make(std::move(shape), v, requires_grad);
  }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
    validate_shape(shape);
    if (detail::shape_numel(shape) != values.size())
      throw std::invalid_argument("Tensor: " + detail::shape_str(shape) + " does not hold " +
                                  std::to_string(values.size()) + " values");
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  bool valid() const { return d_ != nullptr; }

  const Shape& shape() const { return data().shape; }
  std::size_t ndim() const { return data().shape.size(); }
  std::size_t size() const { return data().values.size(); }
  std::size_t rows() const { return data().shape.at(0); }
  std::size_t cols() const {
    return ndim() == 2 ? data().shape[1] : throw std::invalid_argument("Tensor: cols() on non-matrix");
  }

  const std::vector<double>& values() const { return data().values; }
  std::vector<double>& values() { return data().values; }

  double value() const {
    if (size() != 1) throw std::invalid_argument("Tensor: value() on non-scalar " + detail::shape_str(shape()));
    return data().values[0];
  }

  double at(std::size_t i) const { return data().values.at(i); }
  double at(std::size_t r, std::size_t c) const {
    if (ndim() != 2) throw std::invalid_argument("Tensor: at(r,c) on non-matrix");
    return data().values.at(r * data().shape[1] + c);
  }

  bool requires_grad() const { return data().requires_grad; }
  void set_requires_grad(bool b) { data().requires_grad = b; }

  // Gradient state lives behind the shared node; a const Tensor is a const
  // handle, so the autodiff engine may accumulate through it.
  bool has_grad() const { return !data().grad.empty(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw std::runtime_error("Tensor: gradient not computed");
    return data().grad;
  }
  std::vector<double>& grad_ref() const {
    ensure_grad();
    return data().grad;
  }
  void ensure_grad() const {
    if (data().grad.empty()) data().grad.assign(size(), 0.0);
  }
  void zero_grad() const {
    if (!data().grad.empty()) std::fill(data().grad.begin(), data().grad.end(), 0.0);
  }

  std::uint64_t id() const { return data().id; }

  Tensor clone(bool requires_grad) const {
    return from_values(shape(), values(), requires_grad);
  }
  Tensor clone() const { return clone(requires_grad()); }

  bool all_finite() const {
    for (double v : values())
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_values(const Tensor& other) const {
    return shape() == other.shape() && values() == other.values();
  }

 private:
  static void validate_shape(const Shape& s) {
    if (s.empty()) throw std::invalid_argument("Tensor: empty shape");
    for (std::size_t d : s)
      if (d == 0) throw std::invalid_argument("Tensor: zero dimension in " + detail::shape_str(s));
  }

  static Tensor make(Shape shape, double fill, bool requires_grad) {
    validate_shape(shape);
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->values.assign(detail::shape_numel(shape), fill);
    t.d_->shape = std::move(shape);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  TensorData& data() const {
    if (!d_) throw std::runtime_error("Tensor: use of empty tensor");
    return *d_;
  }

  std::shared_ptr<TensorData> d_;
};

// One recorded primitive application. `backward` reads the output gradient
// and accumulates into the inputs; `replay` recomputes the forward values
// from the recorded inputs without touching any tape.
struct TapeEntry {
  std::string op;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
  std::function<Tensor()> replay;
};

// Execution trace for reverse-mode differentiation. Entries are appended in
// forward order, so every input of a node precedes the node. Single-writer.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(TapeEntry e) { entries_.push_back(std::move(e)); }

  std::size_t size() const { return entries_.size(); }
  const TapeEntry& entry(std::size_t i) const { return entries_.at(i); }

  // Every entry input is either a leaf or the output of an earlier entry.
  bool is_topologically_ordered() const {
    std::unordered_set<std::uint64_t> all_outputs;
    for (const auto& e : entries_) all_outputs.insert(e.output.id());
    std::unordered_set<std::uint64_t> produced;
    for (const auto& e : entries_) {
      for (const auto& in : e.inputs) {
        if (all_outputs.count(in.id()) && !produced.count(in.id())) return false;
      }
      produced.insert(e.output.id());
    }
    return true;
  }

  // Recompute every entry from its recorded inputs and compare bit-for-bit.
  bool replay_matches() const {
    for (const auto& e : entries_) {
      if (!e.replay) return false;
      Tensor again = e.replay();
      if (!again.same_values(e.output)) return false;
    }
    return true;
  }

  static Tape* active() { return active_; }

 private:
  friend class TapeScope;
  friend class TapeSuspend;
  std::vector<TapeEntry> entries_;
  inline static thread_local Tape* active_ = nullptr;
};

// Makes a tape the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(Tape::active_) { Tape::active_ = &t; }
  ~TapeScope() { Tape::active_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Temporarily disables recording (used by replay and finite differences).
class TapeSuspend {
 public:
  TapeSuspend() : prev_(Tape::active_) { Tape::active_ = nullptr; }
  ~TapeSuspend() { Tape::active_ = prev_; }
  TapeSuspend(const TapeSuspend&) = delete;
  TapeSuspend& operator=(const TapeSuspend&) = delete;

 private:
  Tape* prev_;
};

// Raised when a primitive receives NaN/Inf; training treats it as divergence.
struct NonFiniteError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void guard_inputs(const char* op, std::initializer_list<const Tensor*> ins) {
  for (const Tensor* t : ins) {
    if (!t->valid()) throw std::invalid_argument(std::string(op) + ": empty tensor input");
    if (!t->all_finite()) throw NonFiniteError(std::string(op) + ": non-finite input");
  }
}

inline bool want_tape(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline void record(std::string op, std::vector<Tensor> inputs, Tensor& out,
                   std::function<void()> backward, std::function<Tensor()> replay) {
  out.set_requires_grad(true);
  Tape::active()->record(
      {std::move(op), std::move(inputs), out, std::move(backward), std::move(replay)});
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline std::vector<std::size_t> ids_from_tensor(const char* op, const Tensor& t,
                                                std::size_t bound) {
  if (t.requires_grad())
    throw std::invalid_argument(std::string(op) + ": index tensor cannot require grad");
  std::vector<std::size_t> ids;
  ids.reserve(t.size());
  for (double v : t.values()) {
    if (v < 0 || v != std::floor(v))
      throw std::invalid_argument(std::string(op) + ": non-integral index " + std::to_string(v));
    auto u = static_cast<std::size_t>(v);
    if (u >= bound)
      throw std::invalid_argument(std::string(op) + ": index " + std::to_string(u) +
                                  " out of range " + std::to_string(bound));
    ids.push_back(u);
  }
  return ids;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each computes the forward value, and when a tape is active and
// any input requires grad, records the application with its gradient rule.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::guard_inputs("add", {&a, &b});
  detail::check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
  if (detail::want_tape({&a, &b})) {
    detail::record(
        "add", {a, b}, out,
        [a, b, out]() mutable {
          const auto& go = out.grad();
          if (a.requires_grad()) {
            auto& ga = a.grad_ref();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad_ref();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
          }
        },
        [a, b]() {
          TapeSuspend s;
          return add(a, b);
        });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::guard_inputs("sub", {&a, &b});
  detail::check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
  if (detail::want_tape({&a, &b})) {
    detail::record(
        "sub", {a, b}, out,
        [a, b, out]() mutable {
          const auto& go = out.grad();
          if (a.requires_grad()) {
            auto& ga = a.grad_ref();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad_ref();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
          }
        },
        [a, b]() {
          TapeSuspend s;
          return sub(a, b);
        });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::guard_inputs("mul", {&a, &b});
  detail::check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (detail::want_tape({&a, &b})) {
    detail::record(
        "mul", {a, b}, out,
        [a, b, out]() mutable {
          const auto& go = out.grad();
          if (a.requires_grad()) {
            auto& ga = a.grad_ref();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.values()[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad_ref();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.values()[i];
          }
        },
        [a, b]() {
          TapeSuspend s;
          return mul(a, b);
        });
  }
  return out;
}

inline Tensor neg(const Tensor& a) {
  detail::guard_inputs("neg", {&a});
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = -a.values()[i];
  if (detail::want_tape({&a})) {
    detail::record(
        "neg", {a}, out,
        [a, out]() mutable {
          const auto& go = out.grad();
          auto& ga = a.grad_ref();
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] -= go[i];
        },
        [a]() {
          TapeSuspend s;
          return neg(a);
        });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  detail::guard_inputs("scale", {&a});
  if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = c * a.values()[i];
  if (detail::want_tape({&a})) {
    detail::record(
        "scale", {a}, out,
        [a, out, c]() mutable {
          const auto& go = out.grad();
          auto& ga = a.grad_ref();
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
        },
        [a, c]() {
          TapeSuspend s;
          return scale(a, c);
        });
  }
  return out;
}

// X [r,c] + b [c], added to every row.
inline Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  detail::guard_inputs("add_rowwise", {&x, &b});
  if (x.ndim() != 2 || b.ndim() != 1 || x.shape()[1] != b.shape()[0])
    throw std::invalid_argument("add_rowwise: shapes " + detail::shape_str(x.shape()) + " and " +
                                detail::shape_str(b.shape()));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.values()[i * c + j] = x.values()[i * c + j] + b.values()[j];
  if (detail::want_tape({&x, &b})) {
    detail::record(
        "add_rowwise", {x, b}, out,
        [x, b, out, r, c]() mutable {
          const auto& go = out.grad();
          if (x.requires_grad()) {
            auto& gx = x.grad_ref();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad_ref();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
          }
        },
        [x, b]() {
          TapeSuspend s;
          return add_rowwise(x, b);
        });
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::guard_inputs("matmul", {&a, &b});
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: shapes " + detail::shape_str(a.shape()) + " and " +
                                detail::shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const double* row_b = pb + kk * n;
      double* row_o = po + i * n;
      for (std::size_t j = 0; j < n; ++j) row_o[j] += av * row_b[j];
    }
  if (detail::want_tape({&a, &b})) {
    detail::record(
        "matmul", {a, b}, out,
        [a, b, out, m, k, n]() mutable {
          const auto& go = out.grad();
          if (a.requires_grad()) {  // dA = G B^T
            auto& ga = a.grad_ref();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * b.values()[kk * n + j];
                ga[i * k + kk] += acc;
              }
          }
          if (b.requires_grad()) {  // dB = A^T G
            auto& gb = b.grad_ref();
            for (std::size_t kk = 0; kk < k; ++kk)
              for (std::size_t i = 0; i < m; ++i) {
                const double av = a.values()[i * k + kk];
                for (std::size_t j = 0; j < n; ++j) gb[kk * n + j] += av * go[i * n + j];
              }
          }
        },
        [a, b]() {
          TapeSuspend s;
          return matmul(a, b);
        });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::guard_inputs("transpose", {&a});
  if (a.ndim() != 2) throw std::invalid_argument("transpose: needs a matrix");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values()[j * r + i] = a.values()[i * c + j];
  if (detail::want_tape({&a})) {
    detail::record(
        "transpose", {a}, out,
        [a, out, r, c]() mutable {
          const auto& go = out.grad();
          auto& ga = a.grad_ref();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[j * r + i];
        },
        [a]() {
          TapeSuspend s;
          return transpose(a);
        });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  detail::guard_inputs("reshape", {&a});
  if (detail::shape_numel(new_shape) != a.size())
    throw std::invalid_argument("reshape: " + detail::shape_str(a.shape()) + " to " +
                                detail::shape_str(new_shape));
  Tensor out = Tensor::from_values(new_shape, a.values());
  if (detail::want_tape({&a})) {
    detail::record(
        "reshape", {a}, out,
        [a, out]() mutable {
          const auto& go = out.grad();
          auto& ga = a.grad_ref();
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        },
        [a, new_shape]() {
          TapeSuspend s;
          return reshape(a, new_shape);
        });
  }
  return out;
}

// Concatenation of 1-D tensors.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::guard_inputs("concat", {&p});
    if (p.ndim() != 1) throw std::invalid_argument("concat: needs vectors");
    total += p.size();
  }
  Tensor out = Tensor::zeros({total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + off);
    off += p.size();
  }
  bool tape = false;
  if (Tape::active())
    for (const auto& p : parts) tape |= p.requires_grad();
  if (tape) {
    detail::record(
        "concat", parts, out,
        [parts, out]() mutable {
          const auto& go = out.grad();
          std::size_t off2 = 0;
          for (auto& p : parts) {
            if (p.requires_grad()) {
              auto& gp = p.grad_ref();
              for (std::size_t i = 0; i < p.size(); ++i) gp[i] += go[off2 + i];
            }
            off2 += p.size();
          }
        },
        [parts]() {
          TapeSuspend s;
          return concat(parts);
        });
  }
  return out;
}

// Column-wise concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t r = parts.front().ndim() == 2 ? parts.front().shape()[0] : 0;
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    detail::guard_inputs("concat_cols", {&p});
    if (p.ndim() != 2 || p.shape()[0] != r)
      throw std::invalid_argument("concat_cols: row mismatch at " + detail::shape_str(p.shape()));
    total_c += p.shape()[1];
  }
  Tensor out = Tensor::zeros({r, total_c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.shape()[1];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out.values()[i * total_c + off + j] = p.values()[i * c + j];
    off += c;
  }
  bool tape = false;
  if (Tape::active())
    for (const auto& p : parts) tape |= p.requires_grad();
  if (tape) {
    detail::record(
        "concat_cols", parts, out,
        [parts, out, r, total_c]() mutable {
          const auto& go = out.grad();
          std::size_t off2 = 0;
          for (auto& p : parts) {
            const std::size_t c = p.shape()[1];
            if (p.requires_grad()) {
              auto& gp = p.grad_ref();
              for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += go[i * total_c + off2 + j];
            }
            off2 += c;
          }
        },
        [parts]() {
          TapeSuspend s;
          return concat_cols(parts);
        });
  }
  return out;
}

// Stacks k equal-width vectors into a [k, d] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t d = rows.front().size();
  for (const auto& v : rows) {
    detail::guard_inputs("stack_rows", {&v});
    if (v.ndim() != 1 || v.size() != d)
      throw std::invalid_argument("stack_rows: width mismatch at " + detail::shape_str(v.shape()));
  }
  Tensor out = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].values().begin(), rows[i].values().end(), out.values().begin() + i * d);
  bool tape = false;
  if (Tape::active())
    for (const auto& v : rows) tape |= v.requires_grad();
  if (tape) {
    detail::record(
        "stack_rows", rows, out,
        [rows, out, d]() mutable {
          const auto& go = out.grad();
          for (std::size_t i = 0; i < rows.size(); ++i) {
            Tensor v = rows[i];
            if (!v.requires_grad()) continue;
            auto& gv = v.grad_ref();
            for (std::size_t j = 0; j < d; ++j) gv[j] += go[i * d + j];
          }
        },
        [rows]() {
          TapeSuspend s;
          return stack_rows(rows);
        });
  }
  return out;
}

// v [d] -> [n, d], every row a copy of v.
inline Tensor broadcast_row(const Tensor& v, std::size_t n) {
  detail::guard_inputs("broadcast_row", {&v});
  if (v.ndim() != 1) throw std::invalid_argument("broadcast_row: needs a vector");
  if (n == 0) throw std::invalid_argument("broadcast_row: zero rows");
  const std::size_t d = v.size();
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + i * d);
  if (detail::want_tape({&v})) {
    detail::record(
        "broadcast_row", {v}, out,
        [v, out, n, d]() mutable {
          const auto& go = out.grad();
          auto& gv = v.grad_ref();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gv[j] += go[i * d + j];
        },
        [v, n]() {
          TapeSuspend s;
          return broadcast_row(v, n);
        });
  }
  return out;
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  detail::guard_inputs("slice_rows", {&x});
  if (x.ndim() != 2) throw std::invalid_argument("slice_rows: needs a matrix");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (len == 0 || start + len > r)
    throw std::invalid_argument("slice_rows: [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") of " + std::to_string(r));
  Tensor out = Tensor::zeros({len, c});
  std::copy(x.values().begin() + start * c, x.values().begin() + (start + len) * c,
            out.values().begin());
  if (detail::want_tape({&x})) {
    detail::record(
        "slice_rows", {x}, out,
        [x, out, start, c, len]() mutable {
          const auto& go = out.grad();
          auto& gx = x.grad_ref();
          for (std::size_t i = 0; i < len * c; ++i) gx[start * c + i] += go[i];
        },
        [x, start, len]() {
          TapeSuspend s;
          return slice_rows(x, start, len);
        });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  detail::guard_inputs("slice_cols", {&x});
  if (x.ndim() != 2) throw std::invalid_argument("slice_cols: needs a matrix");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (len == 0 || start + len > c)
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") of " + std::to_string(c));
  Tensor out = Tensor::zeros({r, len});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < len; ++j) out.values()[i * len + j] = x.values()[i * c + start + j];
  if (detail::want_tape({&x})) {
    detail::record(
        "slice_cols", {x}, out,
        [x, out, start, r, c, len]() mutable {
          const auto& go = out.grad();
          auto& gx = x.grad_ref();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < len; ++j) gx[i * c + start + j] += go[i * len + j];
        },
        [x, start, len]() {
          TapeSuspend s;
          return slice_cols(x, start, len);
        });
  }
  return out;
}

// Places row i of `rows` at target row `indices[i]`; all other rows zero.
inline Tensor scatter_rows(const Tensor& rows, const std::vector<std::size_t>& indices,
                           std::size_t total_rows) {
  detail::guard_inputs("scatter_rows", {&rows});
  if (rows.ndim() != 2 || indices.size() != rows.shape()[0])
    throw std::invalid_argument("scatter_rows: needs one index per row");
  const std::size_t d = rows.shape()[1];
  std::unordered_set<std::size_t> seen;
  for (std::size_t idx : indices) {
    if (idx >= total_rows) throw std::invalid_argument("scatter_rows: index out of range");
    if (!seen.insert(idx).second) throw std::invalid_argument("scatter_rows: duplicate index");
  }
  Tensor out = Tensor::zeros({total_rows, d});
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy(rows.values().begin() + i * d, rows.values().begin() + (i + 1) * d,
              out.values().begin() + indices[i] * d);
  if (detail::want_tape({&rows})) {
    detail::record(
        "scatter_rows", {rows}, out,
        [rows, out, indices, d]() mutable {
          const auto& go = out.grad();
          auto& gr = rows.grad_ref();
          for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gr[i * d + j] += go[indices[i] * d + j];
        },
        [rows, indices, total_rows]() {
          TapeSuspend s;
          return scatter_rows(rows, indices, total_rows);
        });
  }
  return out;
}

namespace detail {

template <typename F, typename DF>
inline Tensor unary_elementwise(const char* name, const Tensor& a, F f, DF df) {
  guard_inputs(name, {&a});
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = f(a.values()[i]);
  if (want_tape({&a})) {
    std::string op = name;
    record(
        op, {a}, out,
        [a, out, df]() mutable {
          const auto& go = out.grad();
          auto& ga = a.grad_ref();
          for (std::size_t i = 0; i < go.size(); ++i)
            ga[i] += go[i] * df(a.values()[i], out.values()[i]);
        },
        [a, f]() {
          TapeSuspend s;
          Tensor again = Tensor::zeros(a.shape());
          for (std::size_t i = 0; i < a.size(); ++i) again.values()[i] = f(a.values()[i]);
          return again;
        });
  }
  return out;
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double stable_softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

}  // namespace detail

inline Tensor tanh_t(const Tensor& a) {
  return detail::unary_elementwise(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_elementwise(
      "sigmoid", a, [](double x) { return detail::stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp_t(const Tensor& a) {
  return detail::unary_elementwise(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log_t(const Tensor& a) {
  detail::guard_inputs("log", {&a});
  for (double v : a.values())
    if (v <= 0.0) throw std::invalid_argument("log: non-positive input");
  return detail::unary_elementwise(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_elementwise(
      "softplus", a, [](double x) { return detail::stable_softplus(x); },
      [](double x, double) { return detail::stable_sigmoid(x); });
}

inline Tensor leaky_relu(const Tensor& a, double slope) {
  if (!std::isfinite(slope)) throw std::invalid_argument("leaky_relu: bad slope");
  return detail::unary_elementwise(
      "leaky_relu", a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

namespace detail {

// Shared kernel for (masked) row softmax. mask empty means all columns live.
inline void softmax_row_values(const double* x, double* out, std::size_t c,
                               const std::vector<std::uint8_t>& mask, bool log_space) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c; ++j)
    if ((mask.empty() || mask[j]) && x[j] > m) m = x[j];
  if (m == -std::numeric_limits<double>::infinity())
    throw std::invalid_argument("softmax: all positions masked");
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j)
    if (mask.empty() || mask[j]) s += std::exp(x[j] - m);
  if (log_space) {
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[j] = x[j] - lse;
  } else {
    for (std::size_t j = 0; j < c; ++j)
      out[j] = (mask.empty() || mask[j]) ? std::exp(x[j] - m) / s : 0.0;
  }
}

inline std::pair<std::size_t, std::size_t> rows_cols(const Tensor& t, const char* op) {
  if (t.ndim() == 1) return {1, t.shape()[0]};
  if (t.ndim() == 2) return {t.shape()[0], t.shape()[1]};
  throw std::invalid_argument(std::string(op) + ": needs a vector or matrix");
}

}  // namespace detail

// Row-wise softmax over the columns where mask is nonzero; masked entries get
// probability zero. Empty mask means no masking. 1-D input = one row.
inline Tensor masked_softmax_rows(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  detail::guard_inputs("masked_softmax_rows", {&x});
  auto [r, c] = detail::rows_cols(x, "masked_softmax_rows");
  if (!mask.empty() && mask.size() != c)
    throw std::invalid_argument("masked_softmax_rows: mask width " + std::to_string(mask.size()) +
                                " vs " + std::to_string(c) + " columns");
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    detail::softmax_row_values(x.values().data() + i * c, out.values().data() + i * c, c, mask,
                               false);
  if (detail::want_tape({&x})) {
    detail::record(
        "masked_softmax_rows", {x}, out,
        [x, out, r, c]() mutable {
          const auto& go = out.grad();
          auto& gx = x.grad_ref();
          for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * out.values()[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
              const double p = out.values()[i * c + j];
              gx[i * c + j] += p * (go[i * c + j] - dot);
            }
          }
        },
        [x, mask]() {
          TapeSuspend s;
          return masked_softmax_rows(x, mask);
        });
  }
  return out;
}

inline Tensor softmax_rows(const Tensor& x) { return masked_softmax_rows(x, {}); }

inline Tensor log_softmax_rows(const Tensor& x) {
  detail::guard_inputs("log_softmax_rows", {&x});
  auto [r, c] = detail::rows_cols(x, "log_softmax_rows");
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    detail::softmax_row_values(x.values().data() + i * c, out.values().data() + i * c, c, {}, true);
  if (detail::want_tape({&x})) {
    detail::record(
        "log_softmax_rows", {x}, out,
        [x, out, r, c]() mutable {
          const auto& go = out.grad();
          auto& gx = x.grad_ref();
          for (std::size_t i = 0; i < r; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += go[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
              gx[i * c + j] += go[i * c + j] - std::exp(out.values()[i * c + j]) * gsum;
          }
        },
        [x]() {
          TapeSuspend s;
          return log_softmax_rows(x);
        });
  }
  return out;
}

inline Tensor sum(const Tensor& a) {
  detail::guard_inputs("sum", {&a});
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::want_tape({&a})) {
    detail::record(
        "sum", {a}, out,
        [a, out]() mutable {
          const double go = out.grad()[0];
          auto& ga = a.grad_ref();
          for (double& g : ga) g += go;
        },
        [a]() {
          TapeSuspend s2;
          return sum(a);
        });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  detail::guard_inputs("mean", {&a});
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(s * inv);
  if (detail::want_tape({&a})) {
    detail::record(
        "mean", {a}, out,
        [a, out, inv]() mutable {
          const double go = out.grad()[0] * inv;
          auto& ga = a.grad_ref();
          for (double& g : ga) g += go;
        },
        [a]() {
          TapeSuspend s2;
          return mean(a);
        });
  }
  return out;
}

inline Tensor sum_sq(const Tensor& a) {
  detail::guard_inputs("sum_sq", {&a});
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  Tensor out = Tensor::scalar(s);
  if (detail::want_tape({&a})) {
    detail::record(
        "sum_sq", {a}, out,
        [a, out]() mutable {
          const double go = out.grad()[0];
          auto& ga = a.grad_ref();
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * a.values()[i] * go;
        },
        [a]() {
          TapeSuspend s2;
          return sum_sq(a);
        });
  }
  return out;
}

// [r,c] -> [c], mean over rows (subword averaging).
inline Tensor mean_rows(const Tensor& x) {
  detail::guard_inputs("mean_rows", {&x});
  if (x.ndim() != 2) throw std::invalid_argument("mean_rows: needs a matrix");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  const double inv = 1.0 / static_cast<double>(r);
  Tensor out = Tensor::zeros({c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values()[j] += x.values()[i * c + j] * inv;
  if (detail::want_tape({&x})) {
    detail::record(
        "mean_rows", {x}, out,
        [x, out, r, c, inv]() mutable {
          const auto& go = out.grad();
          auto& gx = x.grad_ref();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[j] * inv;
        },
        [x]() {
          TapeSuspend s;
          return mean_rows(x);
        });
  }
  return out;
}

// Row-wise layer normalization with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  detail::guard_inputs("layer_norm", {&x, &gain, &bias});
  auto [r, c] = detail::rows_cols(x, "layer_norm");
  if (gain.ndim() != 1 || gain.size() != c || bias.ndim() != 1 || bias.size() != c)
    throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> mu(r), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < c; ++j) m += x.values()[i * c + j];
    m /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.values()[i * c + j] - m;
      var += d * d;
    }
    var /= static_cast<double>(c);
    mu[i] = m;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (x.values()[i * c + j] - m) * inv_std[i];
      out.values()[i * c + j] = gain.values()[j] * xh + bias.values()[j];
    }
  }
  if (detail::want_tape({&x, &gain, &bias})) {
    detail::record(
        "layer_norm", {x, gain, bias}, out,
        [x, gain, bias, out, r, c, mu, inv_std]() mutable {
          const auto& go = out.grad();
          const double invc = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            // xh_j and dL/dxh_j for this row
            std::vector<double> xh(c), dxh(c);
            for (std::size_t j = 0; j < c; ++j) {
              xh[j] = (x.values()[i * c + j] - mu[i]) * inv_std[i];
              dxh[j] = go[i * c + j] * gain.values()[j];
            }
            if (x.requires_grad()) {
              double sum_dxh = 0.0, sum_dxh_xh = 0.0;
              for (std::size_t j = 0; j < c; ++j) {
                sum_dxh += dxh[j];
                sum_dxh_xh += dxh[j] * xh[j];
              }
              auto& gx = x.grad_ref();
              for (std::size_t j = 0; j < c; ++j)
                gx[i * c + j] +=
                    inv_std[i] * (dxh[j] - invc * sum_dxh - invc * xh[j] * sum_dxh_xh);
            }
            if (gain.requires_grad()) {
              auto& gg = gain.grad_ref();
              for (std::size_t j = 0; j < c; ++j) gg[j] += go[i * c + j] * xh[j];
            }
            if (bias.requires_grad()) {
              auto& gb = bias.grad_ref();
              for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
            }
          }
        },
        [x, gain, bias, eps]() {
          TapeSuspend s;
          return layer_norm(x, gain, bias, eps);
        });
  }
  return out;
}

// Embedding lookup: copies table rows; the gradient scatter-adds back.
inline Tensor lookup_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  detail::guard_inputs("lookup_rows", {&table});
  if (table.ndim() != 2) throw std::invalid_argument("lookup_rows: table must be a matrix");
  if (ids.empty()) throw std::invalid_argument("lookup_rows: no ids");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (std::size_t id : ids)
    if (id >= v)
      throw std::invalid_argument("lookup_rows: id " + std::to_string(id) + " out of range " +
                                  std::to_string(v));
  Tensor out = Tensor::zeros({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(table.values().begin() + ids[i] * d, table.values().begin() + (ids[i] + 1) * d,
              out.values().begin() + i * d);
  if (detail::want_tape({&table})) {
    detail::record(
        "lookup_rows", {table}, out,
        [table, out, ids, d]() mutable {
          const auto& go = out.grad();
          auto& gt = table.grad_ref();
          for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += go[i * d + j];
        },
        [table, ids]() {
          TapeSuspend s;
          return lookup_rows(table, ids);
        });
  }
  return out;
}

// out[i] = x[i, ids[i]] — picks one column per row (NLL gather).
inline Tensor gather_cols_per_row(const Tensor& x, const std::vector<std::size_t>& ids) {
  detail::guard_inputs("gather_cols_per_row", {&x});
  if (x.ndim() != 2 || ids.size() != x.shape()[0])
    throw std::invalid_argument("gather_cols_per_row: needs one id per row");
  const std::size_t c = x.shape()[1];
  for (std::size_t id : ids)
    if (id >= c) throw std::invalid_argument("gather_cols_per_row: id out of range");
  Tensor out = Tensor::zeros({ids.size()});
  for (std::size_t i = 0; i < ids.size(); ++i) out.values()[i] = x.values()[i * c + ids[i]];
  if (detail::want_tape({&x})) {
    detail::record(
        "gather_cols_per_row", {x}, out,
        [x, out, ids, c]() mutable {
          const auto& go = out.grad();
          auto& gx = x.grad_ref();
          for (std::size_t i = 0; i < ids.size(); ++i) gx[i * c + ids[i]] += go[i];
        },
        [x, ids]() {
          TapeSuspend s;
          return gather_cols_per_row(x, ids);
        });
  }
  return out;
}

// Inverted dropout with an explicit stream; rate 0 is the identity.
inline Tensor dropout(const Tensor& x, double rate, RandomStream& rng) {
  detail::guard_inputs("dropout", {&x});
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.size());
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = rng.bernoulli(keep) ? 1 : 0;
    out.values()[i] = (*mask)[i] ? x.values()[i] / keep : 0.0;
  }
  if (detail::want_tape({&x})) {
    detail::record(
        "dropout", {x}, out,
        [x, out, mask, keep]() mutable {
          const auto& go = out.grad();
          auto& gx = x.grad_ref();
          for (std::size_t i = 0; i < go.size(); ++i)
            if ((*mask)[i]) gx[i] += go[i] / keep;
        },
        [x, mask, keep]() {
          TapeSuspend s;
          Tensor again = Tensor::zeros(x.shape());
          for (std::size_t i = 0; i < x.size(); ++i)
            again.values()[i] = (*mask)[i] ? x.values()[i] / keep : 0.0;
          return again;
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Propagates d(loss)/d(t) into the grad buffer of every requires_grad tensor
// that appears on the tape. Tensors that do not contribute to the loss end
// up with zero gradient. Gradients are reset at the start of each call.
inline void backpropagate(const Tape& tape, const Tensor& loss) {
  if (!loss.valid() || loss.size() != 1)
    throw std::invalid_argument("backpropagate: loss must be a scalar");
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const TapeEntry& e = tape.entry(i);
    for (const Tensor& t : e.inputs) {
      if (t.requires_grad()) {
        t.ensure_grad();
        t.zero_grad();
      }
    }
    if (e.output.requires_grad()) {
      e.output.ensure_grad();
      e.output.zero_grad();
    }
  }
  if (!loss.requires_grad()) return;  // loss not produced under the tape: all zeros
  loss.grad_ref()[0] = 1.0;
  for (std::size_t i = tape.size(); i-- > 0;) {
    const TapeEntry& e = tape.entry(i);
    if (e.output.requires_grad() && e.output.has_grad()) e.backward();
  }
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

struct FiniteDifferenceReport {
  double max_rel_error = 0.0;
  std::vector<std::size_t> non_finite_coords;
};

// Compares the reverse-mode gradient of f at x against central differences.
// Relative error per coordinate: |a - n| / (|a| + |n| + eps). The eps floor
// absorbs cancellation noise (~1e-9 at step 1e-5) on coordinates whose true
// gradient is zero, e.g. from softmax shift invariance.
inline FiniteDifferenceReport finite_difference_check(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step,
    double eps = 1e-4) {
  if (!(step > 0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  Tensor probe = x.clone(true);

  std::vector<double> analytic(probe.size(), 0.0);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(probe);
    backpropagate(tape, loss);
    if (probe.has_grad()) analytic = probe.grad();
  }

  FiniteDifferenceReport report;
  TapeSuspend suspend;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe.values()[i];
    probe.values()[i] = saved + step;
    const double up = f(probe).value();
    probe.values()[i] = saved - step;
    const double down = f(probe).value();
    probe.values()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.non_finite_coords.push_back(i);
      continue;
    }
    const double numeric = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + eps);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  return report;
}

// Variant for a parameter already wired into a model: the loss closure reads
// the shared tensor, so the analytic gradient lands on it directly and the
// numeric side perturbs its storage in place.
inline FiniteDifferenceReport finite_difference_check_param(
    const std::function<Tensor()>& loss_fn, const Tensor& param, double step,
    double eps = 1e-4) {
  if (!(step > 0)) throw std::invalid_argument("finite_difference_check_param: step must be positive");
  if (!param.requires_grad())
    throw std::invalid_argument("finite_difference_check_param: parameter does not require grad");

  std::vector<double> analytic(param.size(), 0.0);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    backpropagate(tape, loss);
    if (param.has_grad()) analytic = param.grad();
  }

  FiniteDifferenceReport report;
  TapeSuspend suspend;
  auto& storage = const_cast<Tensor&>(param).values();
  for (std::size_t i = 0; i < storage.size(); ++i) {
    const double saved = storage[i];
    storage[i] = saved + step;
    const double up = loss_fn().value();
    storage[i] = saved - step;
    const double down = loss_fn().value();
    storage[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.non_finite_coords.push_back(i);
      continue;
    }
    const double numeric = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + eps);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Primitive registry
// ---------------------------------------------------------------------------

using PrimAttrs = std::map<std::string, double>;

namespace detail {

inline double attr_or(const PrimAttrs& attrs, const std::string& key, double fallback) {
  auto it = attrs.find(key);
  return it == attrs.end() ? fallback : it->second;
}

inline double attr_req(const PrimAttrs& attrs, const std::string& key, const char* op) {
  auto it = attrs.find(key);
  if (it == attrs.end())
    throw std::invalid_argument(std::string(op) + ": missing attribute '" + key + "'");
  return it->second;
}

inline void expect_arity(const char* op, const std::vector<Tensor>& in, std::size_t n) {
  if (in.size() != n)
    throw std::invalid_argument(std::string(op) + ": expects " + std::to_string(n) +
                                " inputs, got " + std::to_string(in.size()));
}

using PrimFn = std::function<Tensor(const std::vector<Tensor>&, const PrimAttrs&)>;

inline const std::map<std::string, PrimFn>& primitive_registry() {
  static const std::map<std::string, PrimFn> reg = [] {
    std::map<std::string, PrimFn> r;
    r["add"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("add", in, 2);
      return add(in[0], in[1]);
    };
    r["sub"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("sub", in, 2);
      return sub(in[0], in[1]);
    };
    r["mul"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("mul", in, 2);
      return mul(in[0], in[1]);
    };
    r["neg"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("neg", in, 1);
      return neg(in[0]);
    };
    r["scale"] = [](const std::vector<Tensor>& in, const PrimAttrs& a) {
      expect_arity("scale", in, 1);
      return scale(in[0], attr_req(a, "factor", "scale"));
    };
    r["add_rowwise"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("add_rowwise", in, 2);
      return add_rowwise(in[0], in[1]);
    };
    r["matmul"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("matmul", in, 2);
      return matmul(in[0], in[1]);
    };
    r["transpose"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("transpose", in, 1);
      return transpose(in[0]);
    };
    r["concat"] = [](const std::vector<Tensor>& in, const PrimAttrs&) { return concat(in); };
    r["concat_cols"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      return concat_cols(in);
    };
    r["stack_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      return stack_rows(in);
    };
    r["broadcast_row"] = [](const std::vector<Tensor>& in, const PrimAttrs& a) {
      expect_arity("broadcast_row", in, 1);
      return broadcast_row(in[0], static_cast<std::size_t>(attr_req(a, "rows", "broadcast_row")));
    };
    r["slice_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs& a) {
      expect_arity("slice_rows", in, 1);
      return slice_rows(in[0], static_cast<std::size_t>(attr_req(a, "start", "slice_rows")),
                        static_cast<std::size_t>(attr_req(a, "len", "slice_rows")));
    };
    r["slice_cols"] = [](const std::vector<Tensor>& in, const PrimAttrs& a) {
      expect_arity("slice_cols", in, 1);
      return slice_cols(in[0], static_cast<std::size_t>(attr_req(a, "start", "slice_cols")),
                        static_cast<std::size_t>(attr_req(a, "len", "slice_cols")));
    };
    r["scatter_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs& a) {
      expect_arity("scatter_rows", in, 2);
      const auto total = static_cast<std::size_t>(attr_req(a, "total_rows", "scatter_rows"));
      return scatter_rows(in[0], ids_from_tensor("scatter_rows", in[1], total), total);
    };
    r["tanh"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("tanh", in, 1);
      return tanh_t(in[0]);
    };
    r["sigmoid"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("sigmoid", in, 1);
      return sigmoid(in[0]);
    };
    r["exp"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("exp", in, 1);
      return exp_t(in[0]);
    };
    r["log"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("log", in, 1);
      return log_t(in[0]);
    };
    r["softplus"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("softplus", in, 1);
      return softplus(in[0]);
    };
    r["leaky_relu"] = [](const std::vector<Tensor>& in, const PrimAttrs& a) {
      expect_arity("leaky_relu", in, 1);
      return leaky_relu(in[0], attr_or(a, "slope", 0.2));
    };
    r["softmax_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("softmax_rows", in, 1);
      return softmax_rows(in[0]);
    };
    r["log_softmax_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("log_softmax_rows", in, 1);
      return log_softmax_rows(in[0]);
    };
    r["masked_softmax_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("masked_softmax_rows", in, 2);
      if (in[1].requires_grad())
        throw std::invalid_argument("masked_softmax_rows: mask cannot require grad");
      std::vector<std::uint8_t> mask;
      mask.reserve(in[1].size());
      for (double v : in[1].values()) mask.push_back(v != 0.0 ? 1 : 0);
      return masked_softmax_rows(in[0], mask);
    };
    r["sum"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("sum", in, 1);
      return sum(in[0]);
    };
    r["mean"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("mean", in, 1);
      return mean(in[0]);
    };
    r["sum_sq"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("sum_sq", in, 1);
      return sum_sq(in[0]);
    };
    r["mean_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("mean_rows", in, 1);
      return mean_rows(in[0]);
    };
    r["layer_norm"] = [](const std::vector<Tensor>& in, const PrimAttrs& a) {
      expect_arity("layer_norm", in, 3);
      return layer_norm(in[0], in[1], in[2], attr_or(a, "eps", 1e-5));
    };
    r["lookup_rows"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("lookup_rows", in, 2);
      return lookup_rows(in[0], ids_from_tensor("lookup_rows", in[1], in[0].shape().at(0)));
    };
    r["gather_cols_per_row"] = [](const std::vector<Tensor>& in, const PrimAttrs&) {
      expect_arity("gather_cols_per_row", in, 2);
      return gather_cols_per_row(
          in[0], ids_from_tensor("gather_cols_per_row", in[1],
                                 in[0].ndim() == 2 ? in[0].shape()[1] : 0));
    };
    return r;
  }();
  return reg;
}

}  // namespace detail

// Applies a primitive by name; the uniform entry point used by tests and the
// gradient suite. Scalar parameters travel in `attrs`.
inline Tensor apply_primitive(const std::string& name, const std::vector<Tensor>& inputs,
                              const PrimAttrs& attrs = {}) {
  const auto& reg = detail::primitive_registry();
  auto it = reg.find(name);
  if (it == reg.end()) throw std::invalid_argument("apply_primitive: unknown primitive '" + name + "'");
  return it->second(inputs, attrs);
}

inline std::vector<std::string> primitive_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : detail::primitive_registry()) names.push_back(k);
  return names;
}

}  // namespace dyncwe
