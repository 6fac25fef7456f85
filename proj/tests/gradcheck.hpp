#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "xpol/graph.hpp"
#include "xpol/params.hpp"
#include "xpol/tensor.hpp"

namespace gradcheck {

// Relative error denominator floor. Central differences of an O(1) loss
// carry ~1e-10 absolute roundoff at eps = 1e-6, so comparisons below this
// scale would measure the probe, not the gradient.
inline constexpr double kDenomFloor = 1e-4;

// Central finite differences against the analytic gradients of a scalar
// loss. `build` must construct the loss from the given graph (bound to
// `store`) and return the root node; every parameter that receives a
// gradient is perturbed entry by entry. Store rows the graph treats as
// constants (e.g. normalization stats) are out of scope by design.
struct Report {
  double max_rel_err = 0.0;
  std::string worst;  // "name[i]" of the worst entry
  std::size_t checked = 0;
};

inline Report check_params(
    xpol::ParamStore& store,
    const std::function<xpol::NodeRef(xpol::Graph&)>& build,
    double eps = 1e-6) {
  xpol::Graph g(&store);
  xpol::NodeRef root = build(g);
  g.backward(root);
  xpol::GradMap grads;
  g.export_param_grads(grads);

  Report rep;
  for (const auto& [name, analytic] : grads) {
    xpol::Tensor& param = store.get(name);
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param.data[i];
      param.data[i] = saved + eps;
      xpol::Graph gp(&store);
      const double fp = gp.value(build(gp)).item();
      param.data[i] = saved - eps;
      xpol::Graph gm(&store);
      const double fm = gm.value(build(gm)).item();
      param.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom =
          std::max({std::fabs(numeric), std::fabs(analytic.data[i]), kDenomFloor});
      const double rel = std::fabs(numeric - analytic.data[i]) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
      ++rep.checked;
    }
  }
  return rep;
}

// Same check, differentiating with respect to a single leaf tensor. Pass a
// store when the built expression references named parameters.
inline Report check_leaf(
    const xpol::Tensor& x,
    const std::function<xpol::NodeRef(xpol::Graph&, xpol::NodeRef)>& build,
    double eps = 1e-6, const xpol::ParamStore* store = nullptr) {
  xpol::Graph g(store);
  xpol::NodeRef xs = g.leaf(x);
  xpol::NodeRef root = build(g, xs);
  g.backward(root);
  const xpol::Tensor analytic = g.grad(xs);

  Report rep;
  xpol::Tensor probe = x;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe.data[i];
    probe.data[i] = saved + eps;
    xpol::Graph gp(store);
    const double fp = gp.value(build(gp, gp.input(probe))).item();
    probe.data[i] = saved - eps;
    xpol::Graph gm(store);
    const double fm = gm.value(build(gm, gm.input(probe))).item();
    probe.data[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom =
        std::max({std::fabs(numeric), std::fabs(analytic.data[i]), kDenomFloor});
    const double rel = std::fabs(numeric - analytic.data[i]) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = "x[" + std::to_string(i) + "]";
    }
    ++rep.checked;
  }
  return rep;
}

}  // namespace gradcheck
