#include "instformer/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "instformer/error.hpp"

namespace instformer::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local BranchRecorder* g_branch_recorder = nullptr;

const Node& checked(const std::shared_ptr<Node>& node) {
  if (!node) throw InvalidArgument("Tensor: use of undefined tensor");
  return *node;
}
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size())
    throw ShapeError("Tensor::constant: shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("Tensor::dim: axis " + std::to_string(axis) + " of " + to_string(s));
  return s[axis];
}

const std::vector<double>& Tensor::value() const { return checked(node_).value; }

std::vector<double>& Tensor::mutable_value() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  if (value().size() != 1) throw ShapeError("Tensor::item: tensor of shape " + to_string(shape()) + " is not scalar");
  return value()[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("Tensor::at: expected rank 2, got " + to_string(shape()));
  return value().at(row * shape()[1] + col);
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  checked(node_);
  node_->requires_grad = flag;
}

std::vector<double> Tensor::grad() const {
  const auto& n = checked(node_);
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

void Tape::record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw InvalidArgument("Tape::backward: undefined loss");
  if (loss.size() != 1) throw ShapeError("Tape::backward: loss must be scalar, got shape " + to_string(loss.shape()));
  if (nodes_.empty()) throw InvalidArgument("Tape::backward: tape is empty");
  if (!loss.requires_grad()) throw InvalidArgument("Tape::backward: loss does not depend on any parameter");
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node);
  }
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

BranchRecorder::BranchRecorder() : previous_(g_branch_recorder) { g_branch_recorder = this; }
BranchRecorder::~BranchRecorder() { g_branch_recorder = previous_; }

void BranchRecorder::mix(std::uint64_t choice) {
  std::uint64_t z = digest_ ^ (choice + 0x9e3779b97f4a7c15ULL + (digest_ << 6) + (digest_ >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  digest_ = z ^ (z >> 31);
}

BranchRecorder* branch_recorder() { return g_branch_recorder; }

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  if (numel(shape) != values.size())
    throw ShapeError(std::string(op) + ": internal shape/value mismatch " + to_string(shape));
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  Tape* tape = g_active_tape;
  if (tape) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

void accumulate(Node& t, std::span<const double> g) {
  if (!t.requires_grad) return;
  auto& buf = t.grad_buffer();
  bool finite = true;
  for (std::size_t i = 0; i < g.size(); ++i) {
    buf[i] += g[i];
    finite = finite && std::isfinite(buf[i]);
  }
  if (!finite) throw NumericError(std::string(t.op) + ": non-finite gradient");
}

}  // namespace instformer::ad
