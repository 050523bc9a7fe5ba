#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "nodebench/tensor.hpp"

namespace nodebench {

/// Eager reverse-mode tape. Every differentiable op that sees an input with
/// requires_grad appends one node holding its output and an adjoint closure.
/// Tapes are thread-confined: each thread records onto its own active tape.
class Tape {
 public:
  using Adjoint = std::function<void(std::span<const double> output_grad)>;

  static Tape& active();

  void record(Tensor output, Adjoint adjoint);
  std::size_t size() const { return nodes_.size(); }

  /// Runs adjoints newest-first. Nodes whose output never received a
  /// gradient are visited but skipped. Returns the number of nodes visited.
  std::size_t replay();

  /// Drops every node and with it the intermediates they keep alive.
  void clear();

 private:
  struct Node {
    Tensor output;
    Adjoint adjoint;
  };
  std::vector<Node> nodes_;
};

bool grad_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Seeds d(loss)/d(loss) = 1, replays the active tape and clears it.
/// Gradients accumulate into every reachable tensor with requires_grad.
void backward(const Tensor& loss);

}  // namespace nodebench
