#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace xdd {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

std::string shape_str(const Shape& s);

class Tensor;

// One node of the dynamic computation graph. Values are plain float32
// buffers; `backward` emits gradient contributions for each parent and is
// itself implemented with tensor ops, so gradients can carry their own graph
// (needed for the gradient-penalty double backward).
struct Node {
  std::vector<float> v;
  Shape shape;
  bool requires_grad = false;
  std::string name;  // set for named parameters

  std::vector<Tensor> parents;
  // Called with the upstream gradient and a per-parent "needed" mask;
  // returns one gradient tensor per parent (default-constructed if skipped).
  std::function<std::vector<Tensor>(const Tensor&, const std::vector<char>&)>
      backward;

  // Gradient accumulator for leaves (parameters). Kept outside the graph so
  // parameter nodes never form reference cycles with their own gradients.
  std::vector<float> grad_acc;
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantic handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value);
  static Tensor from_data(const Shape& shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->v.size(); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  const float* data() const { return node_->v.data(); }
  float* mutable_data() { return node_->v.data(); }
  const std::vector<float>& values() const { return node_->v; }

  float item() const {
    XDD_CHECK_ARG(numel() == 1, "item() requires a single-element tensor");
    return node_->v[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  bool is_leaf() const { return node_ && !node_->backward; }

  // Plain copy of the values with no graph attached.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

  // Accumulated gradient of a leaf after backward(); empty until then.
  const std::vector<float>& grad() const { return node_->grad_acc; }
  void zero_grad() {
    node_->grad_acc.assign(node_->v.size(), 0.0f);
  }

 private:
  NodePtr node_;
};

// Scoped switch for graph recording. Ops record parents/backward only while
// enabled (and some input requires grad). Backward passes run with recording
// off unless a graph-carrying gradient is requested.
class GradMode {
 public:
  static bool enabled();
  static void set(bool b);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }

 private:
  bool prev_;
};

class GradGuard {
 public:
  explicit GradGuard(bool enable) : prev_(GradMode::enabled()) {
    GradMode::set(enable);
  }
  ~GradGuard() { GradMode::set(prev_); }

 private:
  bool prev_;
};

namespace autograd {

// Accumulates gradients of `root` (a scalar) into the grad buffers of every
// reachable leaf with requires_grad set.
void backward(const Tensor& root);

// Functional form: returns d root / d inputs[i]. With create_graph the
// returned tensors carry their own graph so they can be differentiated again.
std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs,
                         bool create_graph);

// Leaf parameter tensors reachable from `root` (requires_grad only).
std::vector<Node*> collect_leaf_params(const Tensor& root);

}  // namespace autograd

}  // namespace xdd
