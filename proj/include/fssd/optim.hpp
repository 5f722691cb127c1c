#pragma once

#include <string>
#include <vector>

#include "fssd/tensor.hpp"

namespace fssd {

// Named parameter plus its learning-rate multiplier (fusion-module params run at 2x).
struct ParamRef {
  std::string name;
  Tensor tensor;
  double lr_multiplier = 1.0;
};

// SGD with momentum and weight decay:
//   v <- momentum * v + (grad + weight_decay * param)
//   param <- param - lr * multiplier * v
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(std::vector<ParamRef>& params);
  static void zero_grad(std::vector<ParamRef>& params);

  // Velocity state is part of a training checkpoint.
  void ensure_initialized(const std::vector<ParamRef>& params);
  std::vector<std::vector<double>>& velocities() { return velocity_; }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace fssd
