#include "nodebench/optim.hpp"

namespace nodebench {

Sgd::Sgd(std::vector<Tensor> parameters, SgdOptions options)
    : parameters_(std::move(parameters)), options_(options) {
  if (options_.learning_rate <= 0.0) throw ConfigError("sgd: learning rate must be positive");
  if (options_.momentum < 0.0 || options_.momentum >= 1.0) {
    throw ConfigError("sgd: momentum must lie in [0, 1)");
  }
  if (options_.weight_decay < 0.0) throw ConfigError("sgd: weight decay must be nonnegative");
  velocity_.reserve(parameters_.size());
  for (const auto& p : parameters_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step() {
  const double lr = options_.learning_rate;
  const double keep = 1.0 - lr * options_.weight_decay;
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    auto& p = parameters_[i];
    auto& v = velocity_[i];
    const auto g = p.grad();
    ensure_finite(g, "sgd gradient");
    auto w = p.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = options_.momentum * v[j] + g[j];
      w[j] = w[j] * keep - lr * v[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : parameters_) p.zero_grad();
}

}  // namespace nodebench
