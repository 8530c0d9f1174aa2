#pragma once

#include <memory>
#include <string>
#include <vector>

#include "seattn/tensor.hpp"

namespace seattn {

class Node;

namespace detail {
// Shared hook used by ops to attach nodes to their outputs.
void attach_node(Tensor& out, std::shared_ptr<Node> node, std::vector<Tensor> inputs);
}  // namespace detail

// One recorded operation. Nodes keep their input tensors alive, which is what
// makes the tape replayable; backward rules are written in terms of public
// tensor ops so that running them under an enabled tape yields a
// differentiable gradient graph (create_graph).
class Node {
 public:
  explicit Node(const char* op) : op_(op) {}
  virtual ~Node() = default;

  const char* op() const { return op_; }
  const std::vector<Tensor>& inputs() const { return inputs_; }

  // Gradients w.r.t. each input, given the gradient w.r.t. the output.
  virtual std::vector<Tensor> backward(const Tensor& grad_out) = 0;

  // Whether this op's backward may itself be taped (second-order support).
  virtual bool supports_create_graph() const { return true; }

 protected:
  friend void detail::attach_node(Tensor&, std::shared_ptr<Node>, std::vector<Tensor>);
  const char* op_;
  std::vector<Tensor> inputs_;
};

// Thread-local recording switch. Ops record a Node only while recording is on
// and at least one input requires grad.
bool grad_recording();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

// Accumulates gradients (+=) into the .grad of every requires_grad leaf
// reachable from `loss`. With create_graph the backward computation is itself
// taped, so accumulated grads carry grad_fn and can be differentiated again.
void backward(const Tensor& loss, bool create_graph = false);

// Functional variant: returns gradients of `loss` w.r.t. the given leaf
// tensors without touching any .grad field. Disconnected inputs yield zeros.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

}  // namespace seattn
