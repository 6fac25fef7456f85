#include "xpol/nn.hpp"

#include <cmath>

namespace xpol {

void grad_accumulate(GradMap& acc, const std::string& name, const Tensor& g) {
  auto it = acc.find(name);
  if (it == acc.end()) {
    acc.emplace(name, g);
    return;
  }
  if (!it->second.same_shape(g)) {
    throw ShapeMismatch("grad_accumulate: shape changed for " + name);
  }
  for (std::size_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i];
}

Tensor& ParamStore::create(const std::string& name, std::size_t rows,
                           std::size_t cols) {
  if (has(name)) throw ConfigError("ParamStore::create: duplicate " + name);
  auto [it, ok] = params_.emplace(name, Tensor::zeros(rows, cols));
  (void)ok;
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("ParamStore: unknown " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("ParamStore: unknown " + name);
  return it->second;
}

void ParamStore::adam_step(const GradMap& grads, double lr, double beta1,
                           double beta2, double eps) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = get(name);
    if (!p.same_shape(g)) {
      throw ShapeMismatch("adam_step: gradient shape mismatch for " + name);
    }
    Moments& mom = moments_[name];
    if (mom.m.size() != p.size()) {
      mom.m = Tensor::zeros(p.rows(), p.cols());
      mom.v = Tensor::zeros(p.rows(), p.cols());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[i];
      mom.m.data[i] = beta1 * mom.m.data[i] + (1.0 - beta1) * gi;
      mom.v.data[i] = beta2 * mom.v.data[i] + (1.0 - beta2) * gi * gi;
      const double mhat = mom.m.data[i] / bc1;
      const double vhat = mom.v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

std::string layer_name(const std::string& prefix, const char* kind,
                       std::size_t layer) {
  return prefix + "." + kind + std::to_string(layer);
}

}  // namespace

void mlp_init(ParamStore& store, const std::string& prefix,
              const MlpSpec& spec, Rng& rng) {
  if (spec.sizes.size() < 2) throw ConfigError("mlp_init: need >= 2 sizes");
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const std::size_t fan_in = spec.sizes[l];
    const std::size_t fan_out = spec.sizes[l + 1];
    const double limit =
        spec.act == Act::Relu
            ? std::sqrt(6.0 / static_cast<double>(fan_in))
            : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor& w = store.create(layer_name(prefix, "w", l), fan_in, fan_out);
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    Tensor& b = store.create(layer_name(prefix, "b", l), 1, fan_out);
    // Hidden relu biases start slightly positive; an all-dead previous
    // layer would otherwise pin the next pre-activation exactly on the
    // kink, where the gradient is ill-defined.
    if (spec.act == Act::Relu && l + 1 < spec.n_layers()) {
      for (double& v : b.data) v = 0.05;
    }
  }
}

NodeRef mlp_forward(Graph& g, const std::string& prefix, const MlpSpec& spec,
                    NodeRef x) {
  NodeRef h = x;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    NodeRef w = g.param(layer_name(prefix, "w", l));
    NodeRef b = g.param(layer_name(prefix, "b", l));
    h = g.add_rowvec(g.matmul(h, w), b);
    if (l + 1 < spec.n_layers()) {
      switch (spec.act) {
        case Act::Relu: h = g.relu(h); break;
        case Act::Gelu: h = g.gelu(h); break;
        case Act::None: break;
      }
    }
  }
  return h;
}

Tensor mlp_apply(const ParamStore& store, const std::string& prefix,
                 const MlpSpec& spec, const Tensor& x) {
  Tensor h = x;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const Tensor& w = store.get(layer_name(prefix, "w", l));
    const Tensor& b = store.get(layer_name(prefix, "b", l));
    h = k_add_rowvec(k_matmul(h, w), b);
    if (l + 1 < spec.n_layers()) {
      switch (spec.act) {
        case Act::Relu: h = k_relu(h); break;
        case Act::Gelu: h = k_gelu(h); break;
        case Act::None: break;
      }
    }
  }
  return h;
}

NodeRef attention(Graph& g, NodeRef q, NodeRef k, NodeRef v) {
  const double inv_sqrt_d =
      1.0 / std::sqrt(static_cast<double>(g.value(q).cols()));
  NodeRef scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d);
  return g.matmul(g.softmax(scores), v);
}

Tensor attention_apply(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = k_scale(k_matmul(q, k_transpose(k)), inv_sqrt_d);
  return k_matmul(k_softmax(scores), v);
}

}  // namespace xpol
