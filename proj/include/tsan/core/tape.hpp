#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "tsan/core/tensor.hpp"

namespace tsan {

// Handle to a node on a tape.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append one record per produced node; replaying the
// records in reverse visits each node exactly once (every node is the output
// of at most one record). A tape must not be shared across threads; ops may
// parallelize internally.
template <typename T>
class Tape {
 public:
  // Plain leaf. With requires_grad the gradient stays readable on the tape
  // after backward and accumulates across successive backward calls.
  Value leaf(Tensor<T> v, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, requires_grad});
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  // Leaf bound to an external accumulator (a parameter's grad buffer).
  // backward() adds the leaf gradient into *accum and resets the node-local
  // buffer, so each backward call contributes once.
  Value leaf_external(const Tensor<T>& v, std::vector<T>* accum) {
    contract(accum != nullptr, "Tape: external accumulator is null");
    contract(static_cast<std::int64_t>(accum->size()) == v.numel(),
             "Tape: accumulator size must match tensor");
    nodes_.push_back(Node{v, {}, accum, true});
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& val(Value v) const { return node(v).value; }

  Shape shape(Value v) const { return node(v).value.shape; }

  bool needs_grad(Value v) const { return node(v).needs_grad; }

  // Gradient of a leaf after backward(). Empty if nothing reached it.
  const std::vector<T>& grad(Value v) const { return node(v).grad; }

  // --- op-author interface ---

  Value make_node(const Shape& s, bool needs_grad) {
    nodes_.push_back(Node{Tensor<T>(s), {}, nullptr, needs_grad});
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  Tensor<T>& mut(Value v) { return node(v).value; }

  // Gradient buffer of a node, zero-initialized on first touch.
  std::vector<T>& grad_buf(Value v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), T(0));
    return n.grad;
  }

  bool has_grad(Value v) const { return !node(v).grad.empty(); }

  void record(Value out, std::function<void(Tape<T>&)> back) {
    records_.push_back(Record{out.id, std::move(back)});
  }

  // --- differentiation ---

  void backward(Value loss) {
    contract(node(loss).value.shape.rank() == 0, "backward: loss must be a scalar tensor");
    grad_buf(loss)[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      Node& out = nodes_[static_cast<std::size_t>(it->out)];
      if (!out.grad.empty()) it->back(*this);
      // The output gradient is fully consumed once its producing record ran.
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
    for (Node& n : nodes_) {
      if (n.external && !n.grad.empty()) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*n.external)[i] += n.grad[i];
        n.grad.clear();
      }
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<T>* external = nullptr;
    bool needs_grad = false;
  };
  struct Record {
    int out;
    std::function<void(Tape<T>&)> back;
  };

  Node& node(Value v) {
    contract(v.id >= 0 && v.id < size(), "Tape: invalid value handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Value v) const {
    contract(v.id >= 0 && v.id < size(), "Tape: invalid value handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  std::vector<Node> nodes_;
  std::vector<Record> records_;
};

}  // namespace tsan
