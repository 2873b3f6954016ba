#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spf {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

[[noreturn]] void fail(const std::string& msg);
inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// Live/peak byte counters over tensor buffers, read by the bench subcommand.
struct AllocStats {
  static std::int64_t live_bytes();
  static std::int64_t peak_bytes();
  static void reset_peak();
};

class Tape;

// Dense row-major tensor of doubles. Immutable once handed to an op; buffers
// are shared, never copied on assignment. A tensor optionally carries a handle
// into the Tape that produced it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  // Shares t's buffer under a new shape of equal element count.
  static Tensor alias(const Tensor& t, Shape shape);

  bool defined() const { return buffer_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const;

  std::span<const double> data() const;
  // Mutable view; only valid while this tensor is still being filled in by its
  // creator. Ops never mutate their inputs.
  std::span<double> raw();

  double value() const;  // single-element tensors
  double at(std::int64_t i) const;

  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class Tape;
  struct Buffer;
  std::shared_ptr<Buffer> buffer_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode record. One tape per forward pass; single writer. Node inputs
// always precede the node, so a single reverse sweep in id order is a valid
// reverse-topological traversal.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers t as a differentiable leaf and returns a tape-bound alias.
  Tensor watch(const Tensor& t);

  // Root must be a single-element tensor recorded on this tape.
  void backward(const Tensor& root);

  // Gradient of the last backward() w.r.t. t; zeros if no path reached t.
  Tensor grad(const Tensor& t) const;

  int record(std::vector<int> inputs, std::int64_t out_size, BackwardFn fn);
  // Accumulator for a node's gradient, zero-initialized on first access.
  std::span<double> grad_buffer(int node, std::int64_t size);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Binds an already-computed tensor to this tape (used by ops).
  Tensor adopt(const Tensor& t, int node) const;

 private:
  struct Node {
    std::vector<int> inputs;
    std::int64_t out_size = 0;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// ---- operations -----------------------------------------------------------
//
// Every op validates shapes, checks the output for non-finite values, and
// registers a backward rule when any input lives on a tape. Accumulation
// orders are fixed (row-major), so repeated runs are bitwise identical.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]·[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]·[n,k]ᵀ -> [m,n]

// b broadcasts over a's leading dims when b.shape equals a trailing suffix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1);  // 2-D
Tensor reshape(const Tensor& a, Shape shape);

Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& idx);
// Zeroes rows whose mask entry is 0. mask: [rows] of {0,1}.
Tensor mask_rows(const Tensor& a, const Tensor& mask);

// Row-wise softmax over the last axis with excluded entries forced to exact
// zero. mask: {0,1} tensor of shape [cols] or [rows, cols]; each row needs at
// least one unmasked entry. Stabilized by row-max subtraction over the
// unmasked set; masked logits are skipped outright rather than set to -inf.
Tensor softmax_masked(const Tensor& x, const Tensor& mask);
Tensor softmax(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// x: [H,W,Cin], w: [k,k,Cin,Cout], b: [Cout]. kernel in {1,3}, stride in
// {1,2}; 3x3 uses same-padding of 1, 1x1 uses none. Cross-correlation.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride);

Tensor upsample_nearest2(const Tensor& x);  // [H,W,C] -> [2H,2W,C]

Tensor sum_all(const Tensor& a);   // -> [1]
Tensor mean_all(const Tensor& a);  // -> [1]

// Means over pixels where valid != 0; errors when no pixel is valid.
Tensor l1_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid);
Tensor l2_loss(const Tensor& pred, const Tensor& gt, const Tensor& valid);

}  // namespace spf
