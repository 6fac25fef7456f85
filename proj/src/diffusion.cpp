#include "xpol/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace xpol {

NoiseSchedule make_linear_schedule(int steps, double beta_start,
                                   double beta_end) {
  if (steps < 1) throw InvalidRange("schedule: steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw InvalidRange("schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule ns;
  ns.steps = steps;
  ns.beta.resize(steps);
  ns.alpha.resize(steps);
  ns.alpha_bar.resize(steps);
  double running = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double frac =
        steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
    ns.beta[t] = beta_start + (beta_end - beta_start) * frac;
    ns.alpha[t] = 1.0 - ns.beta[t];
    running *= ns.alpha[t];
    ns.alpha_bar[t] = running;
  }
  return ns;
}

Tensor q_sample(const NoiseSchedule& ns, const Tensor& x0,
                const std::vector<int>& t, const Tensor& eps) {
  if (!x0.same_shape(eps)) throw ShapeMismatch("q_sample: x0 vs eps");
  if (t.size() != x0.rows()) {
    throw ShapeMismatch("q_sample: one timestep per row required");
  }
  Tensor out = x0;
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    const int ti = t[i];
    if (ti < 0 || ti >= ns.steps) {
      throw IndexOutOfRange("q_sample: timestep " + std::to_string(ti));
    }
    const double a = std::sqrt(ns.alpha_bar[ti]);
    const double b = std::sqrt(1.0 - ns.alpha_bar[ti]);
    for (std::size_t j = 0; j < x0.cols(); ++j) {
      out.at(i, j) = a * x0.at(i, j) + b * eps.at(i, j);
    }
  }
  return out;
}

Tensor timestep_embedding(int t, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw InvalidRange("timestep_embedding: dim must be even and >= 2");
  }
  const std::size_t half = dim / 2;
  Tensor out = Tensor::zeros(1, dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) /
                 static_cast<double>(half - 1 == 0 ? 1 : half - 1));
    const double arg = static_cast<double>(t) * freq;
    out.data[i] = std::sin(arg);
    out.data[half + i] = std::cos(arg);
  }
  return out;
}

NodeRef eps_mse(Graph& g, NodeRef eps_hat, NodeRef eps) {
  NodeRef diff = g.sub(eps_hat, eps);
  const double inv_rows = 1.0 / static_cast<double>(g.value(diff).rows());
  return g.scale(g.reduce_sum(g.mul(diff, diff)), inv_rows);
}

double eps_mse_value(const Tensor& eps_hat, const Tensor& eps) {
  if (!eps_hat.same_shape(eps)) throw ShapeMismatch("eps_mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps_hat.data[i] - eps.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.rows());
}

std::vector<int> draw_timesteps(Rng& rng, std::size_t n, int steps) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(steps)));
  }
  return out;
}

Tensor draw_noise(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor out = Tensor::zeros(rows, cols);
  for (double& v : out.data) v = rng.normal();
  return out;
}

DiffusionHead make_head(std::string prefix, std::size_t target_dim,
                        std::size_t cond_dim, std::size_t hidden,
                        NoiseSchedule schedule) {
  DiffusionHead head;
  head.prefix = std::move(prefix);
  head.target_dim = target_dim;
  head.cond_dim = cond_dim;
  head.mlp = MlpSpec{{target_dim + kTimestepEmbedDim + cond_dim, hidden,
                      hidden, target_dim},
                     Act::Relu};
  head.schedule = std::move(schedule);
  return head;
}

void head_init(ParamStore& store, const DiffusionHead& head, Rng& rng) {
  mlp_init(store, head.prefix, head.mlp, rng);
}

NodeRef head_loss(Graph& g, const DiffusionHead& head, const Tensor& x0,
                  NodeRef cond, Rng& rng) {
  if (x0.cols() != head.target_dim) {
    throw ShapeMismatch("head_loss: target dim");
  }
  if (g.value(cond).cols() != head.cond_dim ||
      g.value(cond).rows() != x0.rows()) {
    throw ShapeMismatch("head_loss: condition shape");
  }
  const std::size_t rows = x0.rows();
  const std::vector<int> t = draw_timesteps(rng, rows, head.schedule.steps);
  const Tensor eps = draw_noise(rng, rows, head.target_dim);
  const Tensor xt = q_sample(head.schedule, x0, t, eps);

  Tensor xt_temb = Tensor::zeros(rows, head.target_dim + kTimestepEmbedDim);
  for (std::size_t i = 0; i < rows; ++i) {
    const Tensor emb = timestep_embedding(t[i]);
    double* row = xt_temb.data.data() + i * xt_temb.cols();
    std::copy(xt.data.begin() + i * head.target_dim,
              xt.data.begin() + (i + 1) * head.target_dim, row);
    std::copy(emb.data.begin(), emb.data.end(), row + head.target_dim);
  }
  NodeRef inp = g.concat_cols({g.input(std::move(xt_temb)), cond});
  NodeRef eps_hat = mlp_forward(g, head.prefix, head.mlp, inp);
  return eps_mse(g, eps_hat, g.input(eps));
}

Tensor head_sample(const ParamStore& store, const DiffusionHead& head,
                   const Tensor& cond_row, Rng& rng) {
  if (cond_row.rows() != 1 || cond_row.cols() != head.cond_dim) {
    throw ShapeMismatch("head_sample: condition shape");
  }
  DenoiserFn fn = [&](const Tensor& x, int t) {
    const Tensor emb = timestep_embedding(t);
    const Tensor* parts[] = {&x, &emb, &cond_row};
    return mlp_apply(store, head.prefix, head.mlp, k_concat_cols(parts));
  };
  return ddpm_sample(head.schedule, fn, head.target_dim, rng);
}

Tensor ddpm_sample(const NoiseSchedule& ns, const DenoiserFn& denoise,
                   std::size_t dim, Rng& rng) {
  Tensor x = draw_noise(rng, 1, dim);
  for (int t = ns.steps - 1; t >= 0; --t) {
    const Tensor eps_hat = denoise(x, t);
    if (!eps_hat.same_shape(x)) {
      throw ShapeMismatch("ddpm_sample: denoiser output shape");
    }
    const double coef = ns.beta[t] / std::sqrt(1.0 - ns.alpha_bar[t]);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(ns.alpha[t]);
    for (std::size_t j = 0; j < dim; ++j) {
      x.data[j] = inv_sqrt_alpha * (x.data[j] - coef * eps_hat.data[j]);
    }
    if (t > 0) {
      const double var =
          ns.beta[t] * (1.0 - ns.alpha_bar[t - 1]) / (1.0 - ns.alpha_bar[t]);
      const double sigma = std::sqrt(var);
      for (std::size_t j = 0; j < dim; ++j) x.data[j] += sigma * rng.normal();
    }
  }
  return x;
}

}  // namespace xpol
