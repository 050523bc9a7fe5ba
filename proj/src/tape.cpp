#include "nodebench/tape.hpp"

#include <algorithm>

namespace nodebench {

namespace {
thread_local bool g_grad_enabled = true;
}

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(Tensor output, Adjoint adjoint) {
  nodes_.push_back(Node{std::move(output), std::move(adjoint)});
}

std::size_t Tape::replay() {
  std::size_t visited = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++visited;
    if (!it->output.has_grad()) continue;
    const auto grad = it->output.grad_buffer();
    ensure_finite(grad, "backward pass");
    it->adjoint(grad);
  }
  return visited;
}

void Tape::clear() {
  nodes_.clear();
  nodes_.shrink_to_fit();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward(): loss does not depend on any tensor that requires grad");
  }
  auto& tape = Tape::active();
  Tensor seed = loss;
  seed.grad_buffer()[0] = 1.0;
  tape.replay();
  tape.clear();
}

}  // namespace nodebench
