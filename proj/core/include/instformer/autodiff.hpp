#pragma once

// Define-by-run reverse-mode automatic differentiation over dense row-major arrays.
//
// Operations record themselves on the thread's active Tape (see TapeScope) whenever one of
// their inputs requires a gradient. Without an active tape every op is a pure function and
// nothing is retained, which is the inference path.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace instformer::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches the node
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  /// Leaf whose gradient accumulates across backward passes until zero_grad().
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return value().size(); }

  const std::vector<double>& value() const;
  /// Direct write access for optimizers and finite-difference probes.
  std::vector<double>& mutable_value();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  /// Accumulated gradient; zeros when nothing has been accumulated.
  std::vector<double> grad() const;
  bool has_grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of executed operations; backward() walks it in reverse exactly once.
class Tape {
 public:
  void record(std::shared_ptr<Node> node);
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  /// Seeds d(loss)/d(loss) = 1, propagates to every requires-grad leaf and clears the tape.
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
};

/// Installs a tape as the active recorder of the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Hashes the discrete choices (ReLU signs, argmax indices, nearest neighbours, matchings) made by
/// ops on the current thread while installed. Two evaluations with equal digests took the same
/// piecewise-smooth branch.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  void mix(std::uint64_t choice);
  std::uint64_t digest() const { return digest_; }

 private:
  BranchRecorder* previous_;
  std::uint64_t digest_ = 0x243f6a8885a308d3ULL;
};

/// Active recorder of the current thread, or null.
BranchRecorder* branch_recorder();

/// Builds an op result. Records it (with `backward`) on the active tape when any input requires grad.
/// Aborts with NumericError when `values` holds a NaN or infinity.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// Adds `g` into the gradient of `t` if it participates in differentiation.
void accumulate(Node& t, std::span<const double> g);

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& a);                   // 2-D only

/// Elementwise add. `b` may also match a trailing suffix of `a`'s shape (leading-batch expansion).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

/// Softmax along `axis`. `additive_mask`, if non-empty, has the logits' shape and is added first;
/// -infinity entries receive exactly zero probability and zero gradient.
Tensor softmax(const Tensor& a, std::size_t axis, std::span<const double> additive_mask = {});
/// Normalizes over the last axis, then applies per-feature gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor reduce_max(const Tensor& a, std::size_t axis);
Tensor reduce_mean(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);  // scalar

/// x / (||x|| + 1e-12) along `axis`.
Tensor l2_normalize(const Tensor& a, std::size_t axis);

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& a, Shape shape);

/// Names accepted by op_apply.
std::vector<std::string> op_names();

/// Attributes for op_apply; each op reads only the fields it needs.
struct OpAttrs {
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  double scalar = 1.0;
  std::vector<std::size_t> indices;
  std::vector<double> mask;
  Shape shape;
};

/// Name-based dispatch over the op set, used by the finite-difference suite and the CLI.
Tensor op_apply(std::string_view name, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace instformer::ad
