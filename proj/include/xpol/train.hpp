#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "xpol/dataset.hpp"
#include "xpol/geom.hpp"
#include "xpol/policy.hpp"

namespace xpol {

struct TrainConfig {
  double lambda = 1.0;  // pose-loss weight in the joint objective
  std::size_t batch_size = 128;
  double lr = 1e-4;
  int iterations = 2000;
  // Noise injected into ground-truth conditions during training so the
  // policy learns to tolerate its own prediction error at inference.
  PerturbSigmas cond_aug{0.05, 0.005, 0.0};
  std::uint64_t seed = 0;
  PolicyConfig policy;

  void validate() const;  // ConfigError naming the offending field
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json);  // ConfigError

// One training window cut from an episode: the observation at the window
// start, H-step targets, and (when the window starts at t >= N) the
// ground-truth N-step condition ending just before it.
struct TrainPair {
  int episode = 0;
  int t = 0;
  bool padded = false;  // targets extended by repeating the terminal step
  std::vector<double> obs;
  std::vector<double> action_target;  // H * action_dim
  std::vector<double> pose_target;    // H * pose_dim
  bool has_cond = false;
  std::vector<double> cond_action;  // N * action_dim
  std::vector<double> cond_pose;    // N * pose_dim
};

// Stride-1 windows with starts in [0, len - H] (a single padded window when
// an episode is shorter than H). Throws EmptyDataset when there are no
// episodes.
std::vector<TrainPair> make_training_pairs(const Dataset& data, int horizon,
                                           int n_cond);

// Perturbs only the condition of a pair (targets bitwise untouched);
// unconditioned pairs pass through unchanged.
TrainPair augment_condition(const TrainPair& pair, const PerturbSigmas& s,
                            Rng& rng);

struct LossBreakdown {
  double l_action = 0.0;
  double l_pose = 0.0;
  double l_total = 0.0;  // l_action + lambda * l_pose, same arithmetic
};

// One optimizer step: samples batch_size windows (with replacement) from
// named per-iteration streams, groups them by condition presence, augments
// conditions, builds both branch losses, runs backward, and applies Adam.
// Batch selection streams do not depend on the variant, so runs that share
// (pairs, seed) see identical data whatever the architecture.
// Throws NonFiniteLoss when the total loss leaves the reals.
LossBreakdown train_step(XPolicy& policy, const std::vector<TrainPair>& pairs,
                         const TrainConfig& cfg, int iteration);

// Per-dimension mean/std of the action and pose targets across all pairs
// and steps. Sigma is floored at 1e-2: constant dims stay near-pinned, yet
// small physical perturbations of a condition (augmentation, oracle noise)
// remain O(1) after normalization instead of exploding. Throws EmptyDataset
// on an empty pair list.
NormStats fit_normalizer(const std::vector<TrainPair>& pairs,
                         const PolicyConfig& cfg);

struct TrainResult {
  std::vector<LossBreakdown> history;  // one entry per iteration
};

using ProgressFn = std::function<void(int iteration, const LossBreakdown&)>;

// Full loop: fits the normalizer from `pairs` when the policy still holds
// the identity stats (a loaded checkpoint keeps its own), then runs
// cfg.iterations steps. `progress`, when set, fires after every step.
TrainResult train_policy(XPolicy& policy, const std::vector<TrainPair>& pairs,
                         const TrainConfig& cfg,
                         const ProgressFn& progress = {});

// Weights plus the exact resolved config as the archive manifest.
void save_checkpoint(const XPolicy& policy, const TrainConfig& cfg,
                     const std::filesystem::path& path);

struct Checkpoint {
  TrainConfig config;
  XPolicy policy;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Structural compatibility between a checkpoint's policy config and an
// expected one; throws VersionMismatch naming the first differing field.
void require_compatible(const PolicyConfig& have, const PolicyConfig& want);

}  // namespace xpol
