#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fssd {

class Rng;

// All tensors are rank-4 (batch, channels, rows, cols), row-major. Ops that deal in
// "rows of K values" (loss heads and friends) simply reinterpret the four axes.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor;

// Graph node. Tensors are lightweight handles onto these; an op's output node keeps
// its parents alive, which is what keeps the backward graph rooted at the loss.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily on first backward touch
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double value, bool requires_grad = false);
  static Tensor from_values(Shape s, std::vector<double> values, bool requires_grad = false);
  // Xavier-uniform over fan_in/fan_out; used for conv weight init.
  static Tensor xavier_uniform(Shape s, int fan_in, int fan_out, Rng& rng);
  static Tensor uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad = false);

  // Result node of an op: `backward` reads node.grad and accumulates into parents.
  static Tensor make_op(Shape out, std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->shape.numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->data; }
  // In-place mutation is reserved for leaves (parameters, buffers); ops never call it.
  std::span<double> data_mut() { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  }

  double at(int n, int c, int h, int w) const;
  double& at_mut(int n, int c, int h, int w);

  TensorNode* node() const { return node_.get(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar root (shape 1x1x1x1). Gradients accumulate into
// every reachable node with requires_grad; parameter grads persist until zeroed.
void backward(const Tensor& root);

// Surfaces the "all values finite" contract; throws with `label` on NaN/Inf.
void validate_finite(const Tensor& t, const std::string& label);

}  // namespace fssd
