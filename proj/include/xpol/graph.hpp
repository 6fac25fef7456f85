#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xpol/params.hpp"
#include "xpol/tensor.hpp"

namespace xpol {

struct NodeRef {
  std::size_t idx = static_cast<std::size_t>(-1);
  bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape over whole tensors. Nodes are appended in evaluation
// order, so reverse creation order is a reverse topological order and
// backward() visits each node exactly once. A graph instance is
// single-threaded; independent instances may run on independent threads.
class Graph {
 public:
  Graph() = default;
  explicit Graph(const ParamStore* store) : store_(store) {}

  // Leaves. input() does not track gradients; leaf() does; param() copies
  // the named tensor out of the bound store and tracks gradients under
  // that name.
  NodeRef input(Tensor t);
  NodeRef leaf(Tensor t);
  NodeRef param(const std::string& name);

  NodeRef matmul(NodeRef a, NodeRef b);
  NodeRef transpose(NodeRef a);
  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef scale(NodeRef a, double c);
  NodeRef add_rowvec(NodeRef a, NodeRef bias);
  NodeRef relu(NodeRef a);
  NodeRef gelu(NodeRef a);
  NodeRef softmax(NodeRef a);
  NodeRef layer_norm(NodeRef a, double eps = 1e-5);
  NodeRef concat_cols(const std::vector<NodeRef>& parts);
  NodeRef stack_rows(const std::vector<NodeRef>& rows);
  // Same data, new [rows, cols] shape; total size must match.
  NodeRef reshape(NodeRef a, std::size_t rows, std::size_t cols);
  NodeRef reduce_mean(NodeRef a);
  NodeRef reduce_sum(NodeRef a);
  NodeRef mean_rows(NodeRef a);

  const Tensor& value(NodeRef n) const { return nodes_[n.idx].value; }
  // Gradient of a tracked node after backward(); zeros if nothing reached it.
  const Tensor& grad(NodeRef n);

  // Root must be a scalar. Clears previous gradients.
  void backward(NodeRef root);

  // Adds the gradients of all param() leaves into `acc` (created as zeros
  // when absent), enabling accumulation across several graphs per step.
  void export_param_grads(GradMap& acc) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_ready = false;
    std::vector<std::size_t> ins;
    std::function<void(Graph&, std::size_t)> back;
    std::string param_name;
  };

  NodeRef push(Tensor value, std::vector<std::size_t> ins,
               std::function<void(Graph&, std::size_t)> back);
  bool any_needs_grad(const std::vector<std::size_t>& ins) const;
  Tensor& grad_buf(std::size_t idx);
  void accumulate(std::size_t idx, const Tensor& g);

  const ParamStore* store_ = nullptr;
  std::vector<Node> nodes_;
};

}  // namespace xpol
