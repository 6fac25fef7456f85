#pragma once

#include <string>
#include <vector>

#include "xpol/common.hpp"
#include "xpol/graph.hpp"
#include "xpol/params.hpp"
#include "xpol/tensor.hpp"

namespace xpol {

enum class Act { Relu, Gelu, None };

// Fully connected stack: sizes = {in, h1, ..., out}. The activation is
// applied after every layer except the last, which stays linear.
struct MlpSpec {
  std::vector<std::size_t> sizes;
  Act act = Act::Relu;

  std::size_t in_dim() const { return sizes.front(); }
  std::size_t out_dim() const { return sizes.back(); }
  std::size_t n_layers() const { return sizes.size() - 1; }
};

// Creates prefix.w0/.b0 ... in the store. Weights are uniform with a
// He bound for Relu and a Xavier bound otherwise; biases start at zero.
// Draw order is layer-major, then row-major within each weight.
void mlp_init(ParamStore& store, const std::string& prefix,
              const MlpSpec& spec, Rng& rng);

NodeRef mlp_forward(Graph& g, const std::string& prefix, const MlpSpec& spec,
                    NodeRef x);

// Forward pass on raw kernels; bitwise-identical to mlp_forward values.
Tensor mlp_apply(const ParamStore& store, const std::string& prefix,
                 const MlpSpec& spec, const Tensor& x);

// Single-head scaled dot-product attention: softmax(q k^T / sqrt(d)) v,
// with q [nq, d], k [nk, d], v [nk, dv].
NodeRef attention(Graph& g, NodeRef q, NodeRef k, NodeRef v);
Tensor attention_apply(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace xpol
