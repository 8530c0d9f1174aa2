#include "seattn/autodiff.hpp"

#include <unordered_map>
#include <unordered_set>

#include "seattn/ops.hpp"

namespace seattn {

namespace {
thread_local bool t_recording = true;
}

bool grad_recording() { return t_recording; }

NoGradGuard::NoGradGuard() : prev_(t_recording) { t_recording = false; }
NoGradGuard::~NoGradGuard() { t_recording = prev_; }

GradModeGuard::GradModeGuard(bool enabled) : prev_(t_recording) { t_recording = enabled; }
GradModeGuard::~GradModeGuard() { t_recording = prev_; }

namespace detail {

void attach_node(Tensor& out, std::shared_ptr<Node> node, std::vector<Tensor> inputs) {
  node->inputs_ = std::move(inputs);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
}

}  // namespace detail

namespace {

// Reverse topological order (consumers first) of the node graph above root.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS.
  struct Frame {
    Node* node;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs().size()) {
      const Tensor& in = f.node->inputs()[f.next_input++];
      Node* child = in.grad_fn().get();
      if (child && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  // order is post-order (producers before consumers); reverse it.
  std::reverse(order.begin(), order.end());
  return order;
}

Tensor accumulate(const Tensor& into, const Tensor& g) {
  if (!into.defined()) return g;
  return ops::add(into, g);
}

void run_engine(const Tensor& loss, bool create_graph, bool accumulate_leaves,
                const std::vector<Tensor>* capture_inputs, std::vector<Tensor>* captured) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

  std::unordered_map<detail::TensorImpl*, size_t> capture_index;
  if (capture_inputs) {
    captured->assign(capture_inputs->size(), Tensor());
    for (size_t i = 0; i < capture_inputs->size(); ++i) {
      const Tensor& t = (*capture_inputs)[i];
      if (t.has_grad_fn())
        throw ContractError("grad: inputs must be leaf tensors (detach first)");
      capture_index[t.impl()] = i;
    }
  }

  auto deposit_leaf = [&](const Tensor& leaf, const Tensor& g) {
    if (capture_inputs) {
      auto it = capture_index.find(leaf.impl());
      if (it != capture_index.end())
        (*captured)[it->second] = accumulate((*captured)[it->second], g);
    }
    if (accumulate_leaves) {
      Tensor cur = leaf.grad();
      Tensor next = cur.defined() ? ops::add(cur, g) : g;
      leaf.impl()->grad = next.impl_ptr();
    }
  };

  if (!loss.has_grad_fn()) {
    // Degenerate graph: the loss is itself a leaf.
    if (loss.requires_grad()) deposit_leaf(loss, Tensor::ones(loss.shape(), loss.dtype()));
    if (capture_inputs)
      for (size_t i = 0; i < capture_inputs->size(); ++i)
        if (!(*captured)[i].defined())
          (*captured)[i] = Tensor::zeros((*capture_inputs)[i].shape(), (*capture_inputs)[i].dtype());
    return;
  }

  std::vector<Node*> order = topo_order(loss.grad_fn().get());
  std::unordered_map<Node*, Tensor> node_grad;
  node_grad[loss.grad_fn().get()] = Tensor::ones(loss.shape(), loss.dtype());

  GradModeGuard guard(create_graph);
  for (Node* node : order) {
    auto it = node_grad.find(node);
    if (it == node_grad.end()) continue;  // unreachable from seed (shouldn't happen)
    Tensor gy = it->second;
    node_grad.erase(it);
    if (create_graph && !node->supports_create_graph())
      throw ContractError(std::string("create_graph is not supported through op '") + node->op() + "'");
    std::vector<Tensor> gin = node->backward(gy);
    if (gin.size() != node->inputs().size())
      throw Error(std::string("internal: backward arity mismatch in op '") + node->op() + "'");
    for (size_t i = 0; i < gin.size(); ++i) {
      if (!gin[i].defined()) continue;  // input does not need grad
      const Tensor& in = node->inputs()[i];
      if (in.has_grad_fn()) {
        Node* producer = in.grad_fn().get();
        auto jt = node_grad.find(producer);
        if (jt == node_grad.end())
          node_grad.emplace(producer, gin[i]);
        else
          jt->second = ops::add(jt->second, gin[i]);
      } else if (in.requires_grad()) {
        deposit_leaf(in, gin[i]);
      }
    }
  }

  if (capture_inputs)
    for (size_t i = 0; i < capture_inputs->size(); ++i)
      if (!(*captured)[i].defined())
        (*captured)[i] = Tensor::zeros((*capture_inputs)[i].shape(), (*capture_inputs)[i].dtype());
}

}  // namespace

void backward(const Tensor& loss, bool create_graph) {
  run_engine(loss, create_graph, /*accumulate_leaves=*/true, nullptr, nullptr);
}

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& inputs, bool create_graph) {
  std::vector<Tensor> captured;
  run_engine(loss, create_graph, /*accumulate_leaves=*/false, &inputs, &captured);
  return captured;
}

}  // namespace seattn
