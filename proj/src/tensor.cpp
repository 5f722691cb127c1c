#include "fssd/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "fssd/check.hpp"
#include "fssd/rng.hpp"

namespace fssd {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

static std::shared_ptr<TensorNode> new_node(Shape s, bool requires_grad) {
  FSSD_CHECK(s.n >= 1 && s.c >= 1 && s.h >= 1 && s.w >= 1,
             "tensor shape must be positive, got " << s.str());
  auto node = std::make_shared<TensorNode>();
  node->shape = s;
  node->requires_grad = requires_grad;
  return node;
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  auto node = new_node(s, requires_grad);
  node->data.assign(s.numel(), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape s, double value, bool requires_grad) {
  auto node = new_node(s, requires_grad);
  node->data.assign(s.numel(), value);
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape s, std::vector<double> values, bool requires_grad) {
  FSSD_CHECK(values.size() == s.numel(),
             "value count " << values.size() << " does not match shape " << s.str());
  auto node = new_node(s, requires_grad);
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad) {
  auto node = new_node(s, requires_grad);
  node->data.resize(s.numel());
  for (auto& v : node->data) v = rng.uniform(lo, hi);
  return Tensor(std::move(node));
}

Tensor Tensor::xavier_uniform(Shape s, int fan_in, int fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform(s, rng, -limit, limit, /*requires_grad=*/true);
}

Tensor Tensor::make_op(Shape out, std::vector<Tensor> parents,
                       std::function<void(TensorNode&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  auto node = new_node(out, rg);
  node->data.assign(out.numel(), 0.0);
  if (rg) {
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

double Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = node_->shape;
  return node_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

double& Tensor::at_mut(int n, int c, int h, int w) {
  const Shape& s = node_->shape;
  return node_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

void backward(const Tensor& root) {
  FSSD_CHECK(root.defined() && root.numel() == 1,
             "backward expects a scalar root, got "
                 << (root.defined() ? root.shape().str() : "undefined"));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; topo[i] is finished after all its parents.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* parent = node->parents[idx++].node();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

void validate_finite(const Tensor& t, const std::string& label) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) fail("non-finite value in " + label);
  }
}

}  // namespace fssd
