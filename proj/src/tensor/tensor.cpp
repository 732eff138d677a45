#include "nodulebench/tensor/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace nb {

namespace {
thread_local bool g_grad_enabled = true;

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw std::logic_error("use of an undefined Tensor");
  return *node;
}
}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(numel_of(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw std::invalid_argument("tensor extents must be positive: " + shape_str(shape));
  }
  if (numel_of(shape) != values.size()) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error("non-finite value in tensor literal");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw std::out_of_range("axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::mutable_values() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(node_);
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return !checked(node_).backward; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient; run backward first");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

const char* Tensor::op_name() const { return checked(node_).op; }

Tensor Tensor::detach() const { return from(shape(), checked(node_).value, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_fn) {
  if (numel_of(shape) != value.size()) {
    throw std::logic_error(std::string(op) + ": result size does not match shape " + shape_str(shape));
  }
  for (double v : value) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + " produced a non-finite value");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

AutodiffGraph trace_graph(const Tensor& root) {
  // Iterative DFS; state 1 = on the stack, 2 = emitted.
  AutodiffGraph graph;
  std::unordered_map<const detail::Node*, int> state;
  struct Frame {
    std::shared_ptr<detail::Node> node;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node(), 0});
  state[root.node().get()] = 1;
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.next_input < top.node->inputs.size()) {
      auto child = top.node->inputs[top.next_input++];
      if (!child->requires_grad) continue;
      int& s = state[child.get()];
      if (s == 1) throw std::logic_error("cycle detected in autodiff graph");
      if (s == 0) {
        s = 1;
        stack.push_back({std::move(child), 0});
      }
    } else {
      state[top.node.get()] = 2;
      graph.nodes.push_back(std::move(top.node));
      stack.pop_back();
    }
  }
  return graph;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
  if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  auto graph = trace_graph(loss);
  // Interior grads restart from zero on every sweep; leaves keep accumulating.
  for (auto& node : graph.nodes) {
    if (node->backward) node->grad.clear();
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    auto& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
}

}  // namespace nb
