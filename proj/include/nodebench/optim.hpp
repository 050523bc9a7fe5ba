#pragma once

#include <vector>

#include "nodebench/tensor.hpp"

namespace nodebench {

struct SgdOptions {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// SGD with heavy-ball momentum and decoupled weight decay:
///   v <- momentum * v + g
///   w <- w * (1 - lr * weight_decay) - lr * v
/// With a zero gradient and zero velocity the update is an exact rescaling.
class Sgd {
 public:
  Sgd(std::vector<Tensor> parameters, SgdOptions options);

  void step();
  void zero_grad();

  double learning_rate() const { return options_.learning_rate; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const SgdOptions& options() const { return options_; }

 private:
  std::vector<Tensor> parameters_;
  std::vector<std::vector<double>> velocity_;
  SgdOptions options_;
};

}  // namespace nodebench
