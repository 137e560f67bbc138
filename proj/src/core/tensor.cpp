#include "core/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "core/ops.hpp"

namespace xdd {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->v.assign(shape_numel(shape), 0.0f);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(const Shape& shape, float value) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->v.assign(shape_numel(shape), value);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data,
                         bool requires_grad) {
  XDD_CHECK_ARG(data.size() == shape_numel(shape),
                "from_data: size mismatch for shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->v = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(float value) { return full({1}, value); }

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->v = node_->v;
  return Tensor(std::move(n));
}

namespace {
thread_local bool g_grad_mode = true;
}

bool GradMode::enabled() { return g_grad_mode; }
void GradMode::set(bool b) { g_grad_mode = b; }

namespace autograd {

namespace {

// Reverse topological order of the recorded graph under `root`.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative postorder DFS; parents visited before the node is emitted.
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].node();
      ++idx;
      if (p && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());  // root first
  return order;
}

void run_engine(const Tensor& root,
                const std::unordered_set<Node*>& targets,
                bool create_graph,
                std::unordered_map<Node*, Tensor>& grads_out,
                bool accumulate_leaves) {
  XDD_CHECK_ARG(root.defined() && root.numel() == 1,
                "backward: root must be a defined scalar");

  std::vector<Node*> order = topo_order(root.node());

  // A node needs a gradient if it is a target or can reach one.
  std::unordered_map<Node*, char> needed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    char need = targets.count(n) ? 1 : 0;
    if (!need) {
      for (const Tensor& p : n->parents) {
        auto f = needed.find(p.node());
        if (f != needed.end() && f->second) {
          need = 1;
          break;
        }
      }
    }
    needed[n] = need;
  }
  if (!needed[root.node()]) return;

  std::unordered_map<Node*, Tensor> acc;
  acc[root.node()] = Tensor::full(root.shape(), 1.0f);

  GradGuard guard(create_graph);
  for (Node* n : order) {
    auto git = acc.find(n);
    if (git == acc.end()) continue;
    Tensor gout = git->second;

    if (targets.count(n)) {
      if (accumulate_leaves) {
        if (n->grad_acc.size() != n->v.size())
          n->grad_acc.assign(n->v.size(), 0.0f);
        const float* g = gout.data();
        for (size_t i = 0; i < n->grad_acc.size(); ++i) n->grad_acc[i] += g[i];
      } else {
        auto out = grads_out.find(n);
        if (out == grads_out.end()) {
          grads_out[n] = create_graph ? gout : gout.detach();
        } else {
          grads_out[n] = ops::add(out->second, gout);
        }
      }
    }

    if (!n->backward) continue;
    std::vector<char> mask(n->parents.size(), 0);
    bool any = false;
    for (size_t i = 0; i < n->parents.size(); ++i) {
      auto f = needed.find(n->parents[i].node());
      mask[i] = (f != needed.end() && f->second) ? 1 : 0;
      any = any || mask[i];
    }
    if (!any) continue;

    std::vector<Tensor> contribs = n->backward(gout, mask);
    XDD_CHECK_ARG(contribs.size() == n->parents.size(),
                  "backward fn returned wrong contribution count");
    for (size_t i = 0; i < contribs.size(); ++i) {
      if (!mask[i] || !contribs[i].defined()) continue;
      Node* p = n->parents[i].node();
      auto f = acc.find(p);
      if (f == acc.end())
        acc[p] = contribs[i];
      else
        f->second = ops::add(f->second, contribs[i]);
    }
    acc.erase(n);  // release intermediate gradient buffers eagerly
  }
}

}  // namespace

void backward(const Tensor& root) {
  std::unordered_set<Node*> targets;
  for (Node* n : collect_leaf_params(root)) targets.insert(n);
  std::unordered_map<Node*, Tensor> unused;
  run_engine(root, targets, /*create_graph=*/false, unused,
             /*accumulate_leaves=*/true);
}

std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs,
                         bool create_graph) {
  std::unordered_set<Node*> targets;
  for (const Tensor& t : inputs) targets.insert(t.node());
  std::unordered_map<Node*, Tensor> grads;
  run_engine(root, targets, create_graph, grads, /*accumulate_leaves=*/false);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    auto it = grads.find(t.node());
    if (it != grads.end()) {
      out.push_back(it->second);
    } else {
      Tensor z = Tensor::zeros(t.shape());
      out.push_back(z);
    }
  }
  return out;
}

std::vector<Node*> collect_leaf_params(const Tensor& root) {
  std::vector<Node*> out;
  std::unordered_set<Node*> visited;
  std::vector<Node*> stack{root.node()};
  visited.insert(root.node());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->backward && n->requires_grad) out.push_back(n);
    for (const Tensor& p : n->parents) {
      if (p.node() && !visited.count(p.node())) {
        visited.insert(p.node());
        stack.push_back(p.node());
      }
    }
  }
  return out;
}

}  // namespace autograd

}  // namespace xdd
