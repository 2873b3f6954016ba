#include "spf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace spf {

namespace {
std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};

void track_alloc(std::int64_t bytes) {
  const std::int64_t live = g_live_bytes.fetch_add(bytes) + bytes;
  std::int64_t peak = g_peak_bytes.load();
  while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
  }
}
}  // namespace

std::int64_t AllocStats::live_bytes() { return g_live_bytes.load(); }
std::int64_t AllocStats::peak_bytes() { return g_peak_bytes.load(); }
void AllocStats::reset_peak() { g_peak_bytes.store(g_live_bytes.load()); }

struct Tensor::Buffer {
  std::vector<double> v;
  explicit Buffer(std::vector<double> vals) : v(std::move(vals)) {
    track_alloc(static_cast<std::int64_t>(v.size() * sizeof(double)));
  }
  ~Buffer() { g_live_bytes.fetch_sub(static_cast<std::int64_t>(v.size() * sizeof(double))); }
};

void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  check(shape_numel(shape_) == static_cast<std::int64_t>(values.size()),
        "tensor data length " + std::to_string(values.size()) + " does not match shape " +
            shape_str(shape_));
  buffer_ = std::make_shared<Buffer>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::alias(const Tensor& t, Shape shape) {
  check(t.defined() && shape_numel(shape) == t.size(),
        "alias shape " + shape_str(shape) + " incompatible with " + shape_str(t.shape_));
  Tensor out;
  out.buffer_ = t.buffer_;
  out.shape_ = std::move(shape);
  return out;
}

Tensor Tensor::full(Shape shape, double v) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

std::int64_t Tensor::size() const { return shape_numel(shape_); }

std::span<const double> Tensor::data() const {
  check(defined(), "use of undefined tensor");
  return {buffer_->v.data(), buffer_->v.size()};
}

std::span<double> Tensor::raw() {
  check(defined(), "use of undefined tensor");
  return {buffer_->v.data(), buffer_->v.size()};
}

double Tensor::value() const {
  check(defined() && size() == 1, "value() requires a single-element tensor, got " + shape_str(shape_));
  return buffer_->v[0];
}

double Tensor::at(std::int64_t i) const { return buffer_->v[static_cast<size_t>(i)]; }

// ---- tape ------------------------------------------------------------------

Tensor Tape::watch(const Tensor& t) {
  check(t.defined(), "watch() on undefined tensor");
  check(t.tape_ == nullptr || t.tape_ == this, "tensor already belongs to another tape");
  const int id = record({}, t.size(), nullptr);
  return adopt(t, id);
}

Tensor Tape::adopt(const Tensor& t, int node) const {
  Tensor out = t;
  out.tape_ = const_cast<Tape*>(this);
  out.node_ = node;
  return out;
}

int Tape::record(std::vector<int> inputs, std::int64_t out_size, BackwardFn fn) {
  nodes_.push_back(Node{std::move(inputs), out_size, std::move(fn)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::span<double> Tape::grad_buffer(int node, std::int64_t size) {
  auto& buf = grads_[static_cast<size_t>(node)];
  if (buf.empty()) buf.assign(static_cast<size_t>(size), 0.0);
  return {buf.data(), buf.size()};
}

void Tape::backward(const Tensor& root) {
  check(root.tape_ == this && root.node_ >= 0, "backward root is not on this tape");
  check(root.size() == 1, "backward root must be scalar, got " + shape_str(root.shape()));
  grads_.assign(nodes_.size(), {});
  grad_buffer(root.node_, 1)[0] = 1.0;
  for (int id = root.node_; id >= 0; --id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.empty()) continue;
    auto& node = nodes_[static_cast<size_t>(id)];
    if (node.backward) node.backward(*this, {g.data(), g.size()});
  }
}

Tensor Tape::grad(const Tensor& t) const {
  check(t.tape_ == const_cast<Tape*>(this) && t.node_ >= 0, "grad() of tensor not on this tape");
  check(!grads_.empty(), "grad() before backward()");
  const auto& g = grads_[static_cast<size_t>(t.node_)];
  if (g.empty()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), g);
}

// ---- op plumbing -----------------------------------------------------------

namespace {

void check_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) fail(std::string(op) + " produced a non-finite value");
  }
}

Tape* merged_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (t->tape() == nullptr) continue;
    check(tape == nullptr || tape == t->tape(), "op inputs belong to different tapes");
    tape = t->tape();
  }
  return tape;
}

std::vector<int> input_nodes(std::initializer_list<const Tensor*> inputs) {
  std::vector<int> ids;
  for (const Tensor* t : inputs) {
    if (t->node() >= 0) ids.push_back(t->node());
  }
  return ids;
}

// Finalizes an op result: finite check, then tape registration when needed.
Tensor finish(const char* op, Tensor out, std::initializer_list<const Tensor*> inputs,
              const std::function<Tape::BackwardFn()>& make_backward) {
  check_finite(out.data(), op);
  Tape* tape = merged_tape(inputs);
  if (tape == nullptr) return out;
  const int id = tape->record(input_nodes(inputs), out.size(), make_backward());
  return tape->adopt(out, id);
}

// ---- raw kernels (fixed accumulation order) ---------------------------------

// c[m,n] += a[m,k] · b[k,n]; k accumulated in increasing order per element.
// Output rows are staged in a stack buffer so each is stored once.
void mm_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n) {
  constexpr std::int64_t kRowBuf = 512;
  double acc[kRowBuf];
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t j0 = 0; j0 < n; j0 += kRowBuf) {
      const std::int64_t jn = std::min(kRowBuf, n - j0);
      for (std::int64_t j = 0; j < jn; ++j) acc[j] = crow[j0 + j];
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = b + kk * n + j0;
        for (std::int64_t j = 0; j < jn; ++j) acc[j] += av * brow[j];
      }
      for (std::int64_t j = 0; j < jn; ++j) crow[j0 + j] = acc[j];
    }
  }
}

// c[k,n] += aᵀ · g  for a[m,k], g[m,n]; per element the m accumulation runs in
// increasing order. No transposed copies are materialized.
void mm_tn_acc(const double* a, const double* g, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* crow = c + kk * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

std::vector<double> transpose2(const double* a, std::int64_t m, std::int64_t n) {
  std::vector<double> t(static_cast<size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) t[static_cast<size_t>(j * m + i)] = a[i * n + j];
  return t;
}

}  // namespace

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D tensors");
  check(a.dim(1) == b.dim(0),
        "matmul shape mismatch: " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  mm_acc(a.data().data(), b.data().data(), out.raw().data(), m, k, n);
  return finish("matmul", std::move(out), {&a, &b}, [&] {
    return [a, b, m, k, n](Tape& tp, std::span<const double> g) {
      if (a.node() >= 0) {
        auto ga = tp.grad_buffer(a.node(), m * k);
        auto bt = transpose2(b.data().data(), k, n);
        mm_acc(g.data(), bt.data(), ga.data(), m, n, k);
      }
      if (b.node() >= 0) {
        auto gb = tp.grad_buffer(b.node(), k * n);
        mm_tn_acc(a.data().data(), g.data(), gb.data(), m, k, n);
      }
    };
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul_nt expects 2-D tensors");
  check(a.dim(1) == b.dim(1),
        "matmul_nt shape mismatch: " + shape_str(a.shape()) + " by " + shape_str(b.shape()) + "ᵀ");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n});
  auto bt = transpose2(b.data().data(), n, k);  // [k,n]
  mm_acc(a.data().data(), bt.data(), out.raw().data(), m, k, n);
  return finish("matmul_nt", std::move(out), {&a, &b}, [&] {
    return [a, b, m, k, n](Tape& tp, std::span<const double> g) {
      if (a.node() >= 0) {
        auto ga = tp.grad_buffer(a.node(), m * k);
        mm_acc(g.data(), b.data().data(), ga.data(), m, n, k);
      }
      if (b.node() >= 0) {
        auto gb = tp.grad_buffer(b.node(), n * k);
        mm_tn_acc(g.data(), a.data().data(), gb.data(), m, n, k);
      }
    };
  });
}

// ---- broadcast elementwise ---------------------------------------------------

namespace {

// b broadcasts over a when b.shape is a trailing suffix of a.shape.
std::int64_t broadcast_reps(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  check(bs.size() <= as.size(), std::string(op) + ": second operand rank exceeds first");
  for (size_t i = 0; i < bs.size(); ++i) {
    check(bs[bs.size() - 1 - i] == as[as.size() - 1 - i],
          std::string(op) + ": trailing shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
  }
  return a.size() / std::max<std::int64_t>(b.size(), 1);
}

template <class Fwd>
Tensor binary_broadcast(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, double da_sign,
                        double db_sign, bool product) {
  const std::int64_t reps = broadcast_reps(a, b, op);
  const std::int64_t bn = b.size();
  std::vector<double> vals(static_cast<size_t>(a.size()));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::int64_t j = 0; j < bn; ++j) {
      const std::int64_t i = r * bn + j;
      vals[static_cast<size_t>(i)] = fwd(pa[i], pb[j]);
    }
  Tensor out(a.shape(), std::move(vals));
  return finish(op, std::move(out), {&a, &b}, [&] {
    return [a, b, reps, bn, da_sign, db_sign, product](Tape& tp, std::span<const double> g) {
      if (a.node() >= 0) {
        auto ga = tp.grad_buffer(a.node(), a.size());
        const double* pb2 = b.data().data();
        for (std::int64_t r = 0; r < reps; ++r)
          for (std::int64_t j = 0; j < bn; ++j) {
            const std::int64_t i = r * bn + j;
            ga[i] += da_sign * g[i] * (product ? pb2[j] : 1.0);
          }
      }
      if (b.node() >= 0) {
        auto gb = tp.grad_buffer(b.node(), b.size());
        const double* pa2 = a.data().data();
        for (std::int64_t r = 0; r < reps; ++r)
          for (std::int64_t j = 0; j < bn; ++j) {
            const std::int64_t i = r * bn + j;
            gb[j] += db_sign * g[i] * (product ? pa2[i] : 1.0);
          }
      }
    };
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast("add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast("sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast("mul", a, b, [](double x, double y) { return x * y; }, 1.0, 1.0, true);
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> vals(a.data().begin(), a.data().end());
  for (double& v : vals) v *= c;
  Tensor out(a.shape(), std::move(vals));
  return finish("scale", std::move(out), {&a}, [&] {
    return [a, c](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    };
  });
}

// ---- unary -------------------------------------------------------------------

Tensor relu(const Tensor& a) {
  std::vector<double> vals(a.data().begin(), a.data().end());
  for (double& v : vals) v = v > 0.0 ? v : 0.0;  // relu'(0) = 0
  Tensor out(a.shape(), std::move(vals));
  return finish("relu", std::move(out), {&a}, [&] {
    return [a](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      const double* pa = a.data().data();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += pa[i] > 0.0 ? g[i] : 0.0;
    };
  });
}

Tensor softplus(const Tensor& a) {
  std::vector<double> vals(a.data().begin(), a.data().end());
  for (double& v : vals) v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  Tensor out(a.shape(), std::move(vals));
  return finish("softplus", std::move(out), {&a}, [&] {
    return [a](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      const double* pa = a.data().data();
      for (size_t i = 0; i < g.size(); ++i) {
        const double x = pa[i];
        const double s = x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        ga[i] += s * g[i];
      }
    };
  });
}

// ---- shape ops ---------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check(!parts.empty(), "concat of zero tensors");
  const int rank = parts[0].rank();
  check(axis >= 0 && axis < rank, "concat axis out of range");
  Shape out_shape = parts[0].shape();
  std::int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    check(p.rank() == rank, "concat rank mismatch");
    for (int d = 0; d < rank; ++d)
      check(d == axis || p.dim(d) == out_shape[static_cast<size_t>(d)],
            "concat shape mismatch at non-axis dim");
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<size_t>(d)];

  std::vector<double> vals(static_cast<size_t>(shape_numel(out_shape)));
  const std::int64_t out_row = axis_total * inner;
  std::int64_t offset = 0;
  for (const Tensor& p : parts) {
    const std::int64_t prow = p.dim(axis) * inner;
    const double* src = p.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(vals.data() + o * out_row + offset, src + o * prow,
                  static_cast<size_t>(prow) * sizeof(double));
    offset += prow;
  }
  Tensor out(out_shape, std::move(vals));

  check_finite(out.data(), "concat");
  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (p.tape()) {
      check(tape == nullptr || tape == p.tape(), "op inputs belong to different tapes");
      tape = p.tape();
    }
  }
  if (!tape) return out;
  std::vector<int> ids;
  for (const Tensor& p : parts)
    if (p.node() >= 0) ids.push_back(p.node());
  auto parts_copy = parts;
  const int id = tape->record(
      ids, out.size(), [parts_copy, outer, out_row](Tape& tp, std::span<const double> g) {
        std::int64_t offset2 = 0;
        for (const Tensor& p : parts_copy) {
          const std::int64_t row = p.size() / outer;
          if (p.node() >= 0) {
            auto gp = tp.grad_buffer(p.node(), p.size());
            for (std::int64_t o = 0; o < outer; ++o)
              for (std::int64_t j = 0; j < row; ++j) gp[o * row + j] += g[o * out_row + offset2 + j];
          }
          offset2 += row;
        }
      });
  return tape->adopt(out, id);
}

Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  check(a.rank() == 2, "slice_cols expects a 2-D tensor");
  check(0 <= c0 && c0 < c1 && c1 <= a.dim(1), "slice_cols range out of bounds");
  const std::int64_t rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  std::vector<double> vals(static_cast<size_t>(rows * w));
  const double* pa = a.data().data();
  for (std::int64_t r = 0; r < rows; ++r)
    std::memcpy(vals.data() + r * w, pa + r * cols + c0, static_cast<size_t>(w) * sizeof(double));
  Tensor out({rows, w}, std::move(vals));
  return finish("slice_cols", std::move(out), {&a}, [&] {
    return [a, rows, cols, c0, w](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < w; ++j) ga[r * cols + c0 + j] += g[r * w + j];
    };
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check(shape_numel(shape) == a.size(),
        "reshape " + shape_str(a.shape()) + " to incompatible " + shape_str(shape));
  Tensor out = Tensor::alias(a, std::move(shape));  // values already validated upstream
  return finish("reshape", std::move(out), {&a}, [&] {
    return [a](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  });
}

// ---- gather / mask -----------------------------------------------------------

Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& idx) {
  check(a.rank() == 2, "gather_rows expects a 2-D tensor");
  const std::int64_t rows = a.dim(0), cols = a.dim(1);
  for (auto i : idx)
    check(0 <= i && i < rows,
          "gather_rows index " + std::to_string(i) + " out of range [0," + std::to_string(rows) + ")");
  const std::int64_t n = static_cast<std::int64_t>(idx.size());
  std::vector<double> vals(static_cast<size_t>(n * cols));
  const double* pa = a.data().data();
  for (std::int64_t r = 0; r < n; ++r)
    std::memcpy(vals.data() + r * cols, pa + idx[static_cast<size_t>(r)] * cols,
                static_cast<size_t>(cols) * sizeof(double));
  Tensor out({n, cols}, std::move(vals));
  return finish("gather_rows", std::move(out), {&a}, [&] {
    return [a, idx, cols](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      // duplicate indices accumulate, in row order
      for (size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t j = 0; j < cols; ++j)
          ga[idx[r] * cols + j] += g[static_cast<std::int64_t>(r) * cols + j];
    };
  });
}

Tensor mask_rows(const Tensor& a, const Tensor& mask) {
  check(a.rank() == 2, "mask_rows expects a 2-D tensor");
  check(mask.rank() == 1 && mask.dim(0) == a.dim(0), "mask_rows mask must be [rows]");
  const std::int64_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> vals(a.data().begin(), a.data().end());
  const double* pm = mask.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    if (pm[r] == 0.0)
      std::memset(vals.data() + r * cols, 0, static_cast<size_t>(cols) * sizeof(double));
  }
  Tensor out(a.shape(), std::move(vals));
  return finish("mask_rows", std::move(out), {&a}, [&] {
    return [a, mask, rows, cols](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      const double* pm2 = mask.data().data();
      for (std::int64_t r = 0; r < rows; ++r) {
        if (pm2[r] == 0.0) continue;
        for (std::int64_t j = 0; j < cols; ++j) ga[r * cols + j] += g[r * cols + j];
      }
    };
  });
}

// ---- softmax -----------------------------------------------------------------

Tensor softmax_masked(const Tensor& x, const Tensor& mask) {
  check(x.rank() == 2, "softmax_masked expects a 2-D tensor");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  const bool per_row = mask.rank() == 2;
  if (per_row)
    check(mask.dim(0) == rows && mask.dim(1) == cols, "softmax mask shape mismatch");
  else
    check(mask.rank() == 1 && mask.dim(0) == cols, "softmax mask must be [cols] or [rows,cols]");

  std::vector<double> vals(static_cast<size_t>(rows * cols), 0.0);
  const double* px = x.data().data();
  const double* pm = mask.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* mrow = per_row ? pm + r * cols : pm;
    double mx = -1.0;
    bool any = false;
    for (std::int64_t j = 0; j < cols; ++j) {
      if (mrow[j] == 0.0) continue;
      const double v = px[r * cols + j];
      mx = any ? std::max(mx, v) : v;
      any = true;
    }
    check(any, "softmax_masked: fully masked row " + std::to_string(r));
    double sum = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      if (mrow[j] == 0.0) continue;
      const double e = std::exp(px[r * cols + j] - mx);
      vals[static_cast<size_t>(r * cols + j)] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < cols; ++j) {
      if (mrow[j] == 0.0) continue;
      vals[static_cast<size_t>(r * cols + j)] *= inv;
    }
  }
  Tensor out(x.shape(), std::move(vals));
  return finish("softmax_masked", out, {&x}, [&] {
    Tensor y = out;  // forward result, needed by the backward rule
    return [x, y, mask, rows, cols, per_row](Tape& tp, std::span<const double> g) {
      if (x.node() < 0) return;
      auto gx = tp.grad_buffer(x.node(), x.size());
      const double* py = y.data().data();
      const double* pm2 = mask.data().data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* mrow = per_row ? pm2 + r * cols : pm2;
        double dot = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
          if (mrow[j] == 0.0) continue;
          dot += g[r * cols + j] * py[r * cols + j];
        }
        for (std::int64_t j = 0; j < cols; ++j) {
          if (mrow[j] == 0.0) continue;
          gx[r * cols + j] += py[r * cols + j] * (g[r * cols + j] - dot);
        }
      }
    };
  });
}

Tensor softmax(const Tensor& x) {
  check(x.rank() == 2, "softmax expects a 2-D tensor");
  return softmax_masked(x, Tensor::full({x.dim(1)}, 1.0));
}

// ---- layer norm ---------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  check(x.rank() >= 1, "layer_norm expects rank >= 1");
  const std::int64_t d = x.dim(x.rank() - 1);
  check(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
        "layer_norm scale/offset must be [" + std::to_string(d) + "]");
  const std::int64_t rows = x.size() / d;
  constexpr double kEps = 1e-5;

  std::vector<double> vals(static_cast<size_t>(x.size()));
  std::vector<double> mu(static_cast<size_t>(rows)), inv_sd(static_cast<size_t>(rows));
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (std::int64_t j = 0; j < d; ++j) m += px[r * d + j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double c = px[r * d + j] - m;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kEps);
    mu[static_cast<size_t>(r)] = m;
    inv_sd[static_cast<size_t>(r)] = inv;
    for (std::int64_t j = 0; j < d; ++j)
      vals[static_cast<size_t>(r * d + j)] = (px[r * d + j] - m) * inv * pg[j] + pb[j];
  }
  Tensor out(x.shape(), std::move(vals));
  return finish("layer_norm", std::move(out), {&x, &gamma, &beta}, [&] {
    return [x, gamma, beta, mu, inv_sd, rows, d](Tape& tp, std::span<const double> g) {
      const double* px2 = x.data().data();
      const double* pg2 = gamma.data().data();
      if (x.node() >= 0) {
        auto gx = tp.grad_buffer(x.node(), x.size());
        for (std::int64_t r = 0; r < rows; ++r) {
          const double m = mu[static_cast<size_t>(r)];
          const double inv = inv_sd[static_cast<size_t>(r)];
          double s1 = 0.0, s2 = 0.0;  // sums of dxh and dxh*xh
          for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (px2[r * d + j] - m) * inv;
            const double dxh = g[r * d + j] * pg2[j];
            s1 += dxh;
            s2 += dxh * xh;
          }
          const double nd = static_cast<double>(d);
          for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (px2[r * d + j] - m) * inv;
            const double dxh = g[r * d + j] * pg2[j];
            gx[r * d + j] += inv * (dxh - s1 / nd - xh * s2 / nd);
          }
        }
      }
      if (gamma.node() >= 0) {
        auto gg = tp.grad_buffer(gamma.node(), d);
        for (std::int64_t r = 0; r < rows; ++r) {
          const double m = mu[static_cast<size_t>(r)];
          const double inv = inv_sd[static_cast<size_t>(r)];
          for (std::int64_t j = 0; j < d; ++j)
            gg[j] += g[r * d + j] * (px2[r * d + j] - m) * inv;
        }
      }
      if (beta.node() >= 0) {
        auto gb = tp.grad_buffer(beta.node(), d);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    };
  });
}

// ---- conv2d -------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride) {
  check(kernel == 1 || kernel == 3, "conv2d kernel must be 1 or 3, got " + std::to_string(kernel));
  check(stride == 1 || stride == 2, "conv2d stride must be 1 or 2, got " + std::to_string(stride));
  check(x.rank() == 3, "conv2d input must be [H,W,Cin]");
  check(w.rank() == 4 && w.dim(0) == kernel && w.dim(1) == kernel,
        "conv2d weights must be [k,k,Cin,Cout]");
  check(w.dim(2) == x.dim(2), "conv2d Cin mismatch: input " + shape_str(x.shape()) + " weights " +
                                  shape_str(w.shape()));
  check(b.rank() == 1 && b.dim(0) == w.dim(3), "conv2d bias must be [Cout]");

  const std::int64_t H = x.dim(0), W = x.dim(1), Ci = x.dim(2), Co = w.dim(3);
  const int pad = kernel == 3 ? 1 : 0;
  const std::int64_t Ho = (H + 2 * pad - kernel) / stride + 1;
  const std::int64_t Wo = (W + 2 * pad - kernel) / stride + 1;

  std::vector<double> vals(static_cast<size_t>(Ho * Wo * Co));
  const double* px = x.data().data();
  const double* pw = w.data().data();
  const double* pb = b.data().data();
  for (std::int64_t oh = 0; oh < Ho; ++oh) {
    for (std::int64_t ow = 0; ow < Wo; ++ow) {
      double* o = vals.data() + (oh * Wo + ow) * Co;
      for (std::int64_t co = 0; co < Co; ++co) o[co] = pb[co];
      for (int kh = 0; kh < kernel; ++kh) {
        const std::int64_t ih = oh * stride + kh - pad;
        if (ih < 0 || ih >= H) continue;
        for (int kw = 0; kw < kernel; ++kw) {
          const std::int64_t iw = ow * stride + kw - pad;
          if (iw < 0 || iw >= W) continue;
          const double* xp = px + (ih * W + iw) * Ci;
          const double* wp = pw + (static_cast<std::int64_t>(kh) * kernel + kw) * Ci * Co;
          for (std::int64_t ci = 0; ci < Ci; ++ci) {
            const double xv = xp[ci];
            const double* wrow = wp + ci * Co;
            for (std::int64_t co = 0; co < Co; ++co) o[co] += xv * wrow[co];
          }
        }
      }
    }
  }
  Tensor out({Ho, Wo, Co}, std::move(vals));
  return finish("conv2d", std::move(out), {&x, &w, &b}, [&] {
    return [x, w, b, kernel, stride, pad, H, W, Ci, Co, Ho, Wo](Tape& tp,
                                                                std::span<const double> g) {
      const double* px2 = x.data().data();
      const double* pw2 = w.data().data();
      const bool need_x = x.node() >= 0;
      const bool need_w = w.node() >= 0;
      if (need_x || need_w) {
        std::span<double> gx = need_x ? tp.grad_buffer(x.node(), x.size()) : std::span<double>{};
        std::span<double> gw = need_w ? tp.grad_buffer(w.node(), w.size()) : std::span<double>{};
        // weights transposed per tap to [co,ci] so the dX inner loop is contiguous
        std::vector<double> wt;
        if (need_x) {
          wt.resize(static_cast<size_t>(kernel * kernel * Ci * Co));
          for (int kh = 0; kh < kernel; ++kh)
            for (int kw = 0; kw < kernel; ++kw)
              for (std::int64_t ci = 0; ci < Ci; ++ci)
                for (std::int64_t co = 0; co < Co; ++co)
                  wt[((static_cast<std::int64_t>(kh) * kernel + kw) * Co + co) * Ci + ci] =
                      pw2[((static_cast<std::int64_t>(kh) * kernel + kw) * Ci + ci) * Co + co];
        }
        for (std::int64_t oh = 0; oh < Ho; ++oh)
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const double* go = g.data() + (oh * Wo + ow) * Co;
            for (int kh = 0; kh < kernel; ++kh) {
              const std::int64_t ih = oh * stride + kh - pad;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < kernel; ++kw) {
                const std::int64_t iw = ow * stride + kw - pad;
                if (iw < 0 || iw >= W) continue;
                const std::int64_t tap = static_cast<std::int64_t>(kh) * kernel + kw;
                if (need_x) {
                  double* xg = gx.data() + (ih * W + iw) * Ci;
                  const double* wp = wt.data() + tap * Ci * Co;
                  for (std::int64_t co = 0; co < Co; ++co) {
                    const double gv = go[co];
                    const double* wrow = wp + co * Ci;
                    for (std::int64_t ci = 0; ci < Ci; ++ci) xg[ci] += gv * wrow[ci];
                  }
                }
                if (need_w) {
                  const double* xp = px2 + (ih * W + iw) * Ci;
                  double* wg = gw.data() + tap * Ci * Co;
                  for (std::int64_t ci = 0; ci < Ci; ++ci) {
                    const double xv = xp[ci];
                    double* wrow = wg + ci * Co;
                    for (std::int64_t co = 0; co < Co; ++co) wrow[co] += xv * go[co];
                  }
                }
              }
            }
          }
      }
      if (b.node() >= 0) {
        auto gb = tp.grad_buffer(b.node(), Co);
        for (std::int64_t p = 0; p < Ho * Wo; ++p)
          for (std::int64_t co = 0; co < Co; ++co) gb[co] += g[p * Co + co];
      }
    };
  });
}

Tensor upsample_nearest2(const Tensor& x) {
  check(x.rank() == 3, "upsample_nearest2 input must be [H,W,C]");
  const std::int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  std::vector<double> vals(static_cast<size_t>(4 * H * W * C));
  const double* px = x.data().data();
  for (std::int64_t h = 0; h < 2 * H; ++h)
    for (std::int64_t w = 0; w < 2 * W; ++w)
      std::memcpy(vals.data() + (h * 2 * W + w) * C, px + ((h / 2) * W + (w / 2)) * C,
                  static_cast<size_t>(C) * sizeof(double));
  Tensor out({2 * H, 2 * W, C}, std::move(vals));
  return finish("upsample_nearest2", std::move(out), {&x}, [&] {
    return [x, H, W, C](Tape& tp, std::span<const double> g) {
      if (x.node() < 0) return;
      auto gx = tp.grad_buffer(x.node(), x.size());
      for (std::int64_t h = 0; h < 2 * H; ++h)
        for (std::int64_t w = 0; w < 2 * W; ++w) {
          const double* go = g.data() + (h * 2 * W + w) * C;
          double* xg = gx.data() + ((h / 2) * W + (w / 2)) * C;
          for (std::int64_t c = 0; c < C; ++c) xg[c] += go[c];
        }
    };
  });
}

// ---- reductions / losses -------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  return finish("sum", std::move(out), {&a}, [&] {
    return [a](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      for (auto& v : ga) v += g[0];
    };
  });
}

Tensor mean_all(const Tensor& a) {
  check(a.size() > 0, "mean of empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(s * inv);
  return finish("mean", std::move(out), {&a}, [&] {
    return [a, inv](Tape& tp, std::span<const double> g) {
      if (a.node() < 0) return;
      auto ga = tp.grad_buffer(a.node(), a.size());
      for (auto& v : ga) v += inv * g[0];
    };
  });
}

namespace {

Tensor masked_loss(const char* op, const Tensor& pred, const Tensor& gt, const Tensor& valid,
                   bool squared) {
  check(pred.size() == gt.size() && pred.size() == valid.size(),
        std::string(op) + ": pred/gt/mask sizes differ");
  const double* pp = pred.data().data();
  const double* pg = gt.data().data();
  const double* pv = valid.data().data();
  std::int64_t count = 0;
  double s = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (pv[i] == 0.0) continue;
    const double d = pp[i] - pg[i];
    s += squared ? d * d : std::abs(d);
    ++count;
  }
  check(count > 0, std::string(op) + ": no valid pixels");
  const double inv = 1.0 / static_cast<double>(count);
  Tensor out = Tensor::scalar(s * inv);
  return finish(op, std::move(out), {&pred, &gt}, [&] {
    return [pred, gt, valid, squared, inv](Tape& tp, std::span<const double> g) {
      const double* pp2 = pred.data().data();
      const double* pg2 = gt.data().data();
      const double* pv2 = valid.data().data();
      const double g0 = g[0];
      for (int which = 0; which < 2; ++which) {
        const Tensor& t = which == 0 ? pred : gt;
        if (t.node() < 0) continue;
        auto gt_buf = tp.grad_buffer(t.node(), t.size());
        const double sign = which == 0 ? 1.0 : -1.0;
        for (std::int64_t i = 0; i < t.size(); ++i) {
          if (pv2[i] == 0.0) continue;
          const double d = pp2[i] - pg2[i];
          const double dd = squared ? 2.0 * d : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
          gt_buf[i] += sign * dd * inv * g0;
        }
      }
    };
  });
}

}  // namespace

Tensor l1_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  return masked_loss("l1_loss", pred, gt, valid, false);
}

Tensor l2_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  return masked_loss("l2_loss", pred, gt, valid, true);
}

}  // namespace spf
