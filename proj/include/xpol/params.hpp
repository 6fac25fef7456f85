#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "xpol/tensor.hpp"

namespace xpol {

// Gradient accumulator keyed by parameter name. std::map keeps iteration
// order deterministic, which matters for bitwise-reproducible training.
using GradMap = std::map<std::string, Tensor>;

void grad_accumulate(GradMap& acc, const std::string& name, const Tensor& g);

// Named parameter tensors plus Adam moment buffers and a shared step count.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::size_t rows, std::size_t cols);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Tensor>& tensors() const { return params_; }
  std::map<std::string, Tensor>& tensors() { return params_; }
  std::uint64_t step_count() const { return step_; }

  // Standard Adam with bias correction. Only parameters named in `grads`
  // are touched; each gradient must shape-match its parameter. The step
  // count advances once per call.
  void adam_step(const GradMap& grads, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8);

 private:
  struct Moments {
    Tensor m, v;
  };
  std::map<std::string, Tensor> params_;
  std::map<std::string, Moments> moments_;
  std::uint64_t step_ = 0;
};

}  // namespace xpol
