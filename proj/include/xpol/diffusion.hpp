#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xpol/common.hpp"
#include "xpol/graph.hpp"
#include "xpol/nn.hpp"
#include "xpol/tensor.hpp"

namespace xpol {

inline constexpr int kDefaultDiffusionSteps = 20;
inline constexpr double kDefaultBetaStart = 0.02;
inline constexpr double kDefaultBetaEnd = 0.4;
inline constexpr std::size_t kTimestepEmbedDim = 32;

struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha
};

// Linear beta ramp. Throws InvalidRange unless steps >= 1 and
// 0 < beta_start <= beta_end < 1.
NoiseSchedule make_linear_schedule(int steps, double beta_start,
                                   double beta_end);

inline NoiseSchedule make_default_schedule() {
  return make_linear_schedule(kDefaultDiffusionSteps, kDefaultBetaStart,
                              kDefaultBetaEnd);
}

// Forward corruption: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with one
// timestep per row. Throws IndexOutOfRange for t outside [0, steps).
Tensor q_sample(const NoiseSchedule& ns, const Tensor& x0,
                const std::vector<int>& t, const Tensor& eps);

// Sinusoidal embedding of a timestep: dim/2 sines then dim/2 cosines over
// a log-spaced frequency ladder.
Tensor timestep_embedding(int t, std::size_t dim = kTimestepEmbedDim);

// Noise-prediction objective: squared error summed over dims, averaged
// over rows, so an all-zero prediction scores ~dim on unit noise.
NodeRef eps_mse(Graph& g, NodeRef eps_hat, NodeRef eps);
double eps_mse_value(const Tensor& eps_hat, const Tensor& eps);

std::vector<int> draw_timesteps(Rng& rng, std::size_t n, int steps);
Tensor draw_noise(Rng& rng, std::size_t rows, std::size_t cols);

// Forward-only noise predictor used by the reverse sampler.
using DenoiserFn = std::function<Tensor(const Tensor& x_t, int t)>;

// Ancestral sampling from pure noise down to t = 0; the injected noise at
// each step uses variance beta_t (1 - abar_{t-1}) / (1 - abar_t).
Tensor ddpm_sample(const NoiseSchedule& ns, const DenoiserFn& denoise,
                   std::size_t dim, Rng& rng);

// Conditional denoising head: an MLP mapping
// (noisy target ⊕ timestep embedding ⊕ condition vector) -> predicted noise.
struct DiffusionHead {
  std::string prefix;
  std::size_t target_dim = 0;
  std::size_t cond_dim = 0;
  MlpSpec mlp;
  NoiseSchedule schedule;
};

DiffusionHead make_head(std::string prefix, std::size_t target_dim,
                        std::size_t cond_dim, std::size_t hidden,
                        NoiseSchedule schedule);

void head_init(ParamStore& store, const DiffusionHead& head, Rng& rng);

// Batched training loss: per-row uniform timestep and unit noise drawn from
// rng (timesteps first, then noise), corrupted via q_sample, scored with
// eps_mse. Gradients reach both the denoiser weights and `cond`.
NodeRef head_loss(Graph& g, const DiffusionHead& head, const Tensor& x0,
                  NodeRef cond, Rng& rng);

// Reverse sampling for a single row condition; forward-only kernels.
Tensor head_sample(const ParamStore& store, const DiffusionHead& head,
                   const Tensor& cond_row, Rng& rng);

}  // namespace xpol
