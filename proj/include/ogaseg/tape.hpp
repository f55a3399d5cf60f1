#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ogaseg/errors.hpp"
#include "ogaseg/tensor.hpp"

namespace ogaseg {

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Reverse-mode tape. Nodes are appended in creation order, so every node's
/// parents precede it and a single reverse sweep is a valid topological
/// traversal.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    check_finite("leaf", value);
    nodes_.push_back(Node{"leaf", std::move(value), {}, {}, false, requires_grad, {}});
    return Var<T>{this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op node. The node requires grad iff any parent does; the
  /// backward closure is dropped otherwise.
  Var<T> record(std::string_view op, Tensor<T> value,
                std::initializer_list<Var<T>> parents, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var<T>>(parents), std::move(fn));
  }

  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& parents,
                BackwardFn fn) {
    check_finite(op, value);
    Node node{std::string(op), std::move(value), {}, {}, false, false, {}};
    node.parents.reserve(parents.size());
    for (const auto& p : parents) {
      if (p.tape != this) {
        throw std::invalid_argument(std::string(op) + ": operand belongs to a different tape");
      }
      node.parents.push_back(p.id);
      node.requires_grad = node.requires_grad || nodes_[p.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Upstream gradient of a node during the backward sweep.
  const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of a parent, allocated on first use. Returns nullptr for
  /// nodes that do not require grad so callers can skip the work.
  Tensor<T>* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape(), T{0});
      n.has_grad = true;
    }
    return &n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss is not on this tape");
    if (consumed_) throw std::logic_error("backward: tape already consumed by a previous backward pass");
    const Tensor<T>& lv = value(loss.id);
    if (lv.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    }
    consumed_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    Tensor<T>* seed = grad_buffer(loss.id);
    (*seed)[0] = T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  /// Gradient accumulated into a node by backward(); zeros when none reached it.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Tensor<T>(n.value.shape(), T{0});
  }

  bool consumed() const { return consumed_; }

  // Branch signature: non-smooth ops append one symbol per decision (relu
  // sign, argmax index, abs sign) when enabled. Two forward passes that take
  // the same branches everywhere are on the same smooth piece.
  bool record_branches = false;
  std::vector<std::uint32_t> branches;

  void note_branch(std::uint32_t symbol) {
    if (record_branches) branches.push_back(symbol);
  }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    std::vector<std::size_t> parents;
    Tensor<T> grad;
    bool has_grad;
    bool requires_grad;
    BackwardFn backward;
  };

  static void check_finite(std::string_view op, const Tensor<T>& v) {
    if (!v.all_finite()) {
      throw NumericError(std::string(op) + ": non-finite value in output of shape " +
                         shape_str(v.shape()));
    }
  }

  std::deque<Node> nodes_;  // deque: value() references survive later records
  bool consumed_ = false;
};

}  // namespace ogaseg
