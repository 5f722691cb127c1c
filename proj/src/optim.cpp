#include "fssd/optim.hpp"

#include "fssd/check.hpp"

namespace fssd {

void SgdMomentum::ensure_initialized(const std::vector<ParamRef>& params) {
  if (velocity_.size() == params.size()) return;
  velocity_.clear();
  for (const auto& p : params) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

void SgdMomentum::step(std::vector<ParamRef>& params) {
  ensure_initialized(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    FSSD_CHECK(p.tensor.has_grad(), "sgd step: parameter '" << p.name << "' has no gradient");
    auto data = p.tensor.data_mut();
    auto grad = p.tensor.grad();
    auto& v = velocity_[i];
    const double step_size = lr_ * p.lr_multiplier;
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum_ * v[j] + (grad[j] + weight_decay_ * data[j]);
      data[j] -= step_size * v[j];
    }
  }
}

void SgdMomentum::zero_grad(std::vector<ParamRef>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace fssd
