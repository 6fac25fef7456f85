#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xpol/diffusion.hpp"
#include "xpol/geom.hpp"
#include "xpol/graph.hpp"
#include "xpol/nn.hpp"
#include "xpol/tensor.hpp"

namespace xpol {

// How a branch's trajectory condition is combined with visual features.
enum class FusionKind { Add, CrossAttnConcat, ReadoutQuery };

// XFull: both branches, each conditioned on the other branch's previous
//   prediction fused with visual features.
// Base: action branch only.
// SepAux: both branches, visual conditioning only (pose as auxiliary task).
// UniAux: one head over the concatenated action+pose target.
// Hybrid: training flips between XFull-style and SepAux-style conditioning;
//   inference keeps the action branch with degraded conditioning.
// UnidirCascade: pose sampled first from visual features, action then
//   conditioned on that fresh pose estimate; no action-to-pose path.
enum class VariantKind { XFull, Base, SepAux, UniAux, Hybrid, UnidirCascade };

std::string to_string(FusionKind k);
std::string to_string(VariantKind k);
FusionKind fusion_from_string(const std::string& s);    // ConfigError
VariantKind variant_from_string(const std::string& s);  // ConfigError

struct PolicyConfig {
  std::size_t obs_dim = 0;
  std::size_t action_dim = 10;  // 9 pose numbers + gripper
  std::size_t n_objects = 1;
  int horizon = 16;  // steps predicted per call
  int n_cond = 8;    // steps executed per call and condition length
  std::size_t feature_dim = 128;
  std::size_t enc_hidden = 128;
  std::size_t phi_hidden = 128;
  std::size_t denoiser_hidden = 256;
  // Hidden-layer count of each denoiser MLP. Rotation composition (offset
  // decode, goal = target ∘ offset⁻¹) is multiplicative in the 6D rotation
  // components; extra depth buys that far more cheaply than extra width.
  int denoiser_layers = 2;
  std::size_t n_vis_tokens = 4;
  int diffusion_steps = kDefaultDiffusionSteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  FusionKind fusion = FusionKind::Add;
  VariantKind variant = VariantKind::XFull;

  void validate() const;  // ConfigError naming the offending field

  std::size_t pose_step_dim() const { return PoseTraj::kPoseDim * n_objects; }
  std::size_t action_target_dim() const { return horizon * action_dim; }
  std::size_t pose_target_dim() const { return horizon * pose_step_dim(); }
  std::size_t uni_target_dim() const {
    return action_target_dim() + pose_target_dim();
  }
  // Width of a fused conditioning vector for this fusion kind.
  std::size_t fused_cond_dim() const {
    return fusion == FusionKind::CrossAttnConcat ? 2 * feature_dim
                                                 : feature_dim;
  }
};

std::string config_to_json(const PolicyConfig& cfg);
PolicyConfig config_from_json(const std::string& json);  // ConfigError

// Previous-step condition. Either both trajectories are present (length
// n_cond each) or neither is (episode start).
struct ConditionState {
  std::optional<ActionTraj> prev_action;
  std::optional<PoseTraj> prev_pose;
  bool present() const { return prev_action.has_value(); }
};

ConditionState no_condition();
// Empty inputs (horizon 0) pack to an absent condition; unequal lengths
// throw LengthMismatch.
ConditionState make_condition(const ActionTraj& executed,
                              const PoseTraj& predicted);

struct Prediction {
  ActionTraj actions;
  PoseTraj poses;
  bool pose_valid = false;  // false when the variant has no pose output
};

// One conditioning-homogeneous training group: either every row carries a
// condition or none does.
struct TrainBatch {
  Tensor obs;            // [B, obs_dim]
  Tensor action_target;  // [B, horizon * action_dim]
  Tensor pose_target;    // [B, horizon * pose_step_dim]
  std::optional<Tensor> cond_action;  // [B, n_cond * action_dim]
  std::optional<Tensor> cond_pose;    // [B, n_cond * pose_step_dim]
};

// Conditioning style for one training iteration; only Hybrid alternates.
enum class CondStyle { CrossWired, VisOnly };

struct LossNodes {
  NodeRef action;
  NodeRef pose;  // scalar zero node when !pose_active
  bool pose_active = false;
};

// Which trajectory feeds a branch's projector.
enum class CondSource { PoseCond, ActionCond };

// Flat step-major views used at head boundaries.
Tensor flatten_actions(const ActionTraj& traj);
Tensor flatten_poses(const PoseTraj& traj);
ActionTraj unflatten_actions(const Tensor& row, int horizon, int action_dim);
PoseTraj unflatten_poses(const Tensor& row, int horizon, int n_objects);

// Per-dimension affine statistics for diffusion targets. Raw trajectories
// live in physical units whose spread is far from the unit noise the heads
// denoise against, so both branches train and sample in z-scored space.
// Dims repeat per step: action stats cover one action step, pose stats one
// per-step pose block.
struct NormStats {
  std::vector<double> action_mu, action_sigma;  // action_dim
  std::vector<double> pose_mu, pose_sigma;      // pose_step_dim
};

class XPolicy {
 public:
  XPolicy(const PolicyConfig& cfg, std::uint64_t init_seed);
  XPolicy(const PolicyConfig& cfg, ParamStore store);  // from checkpoint

  const PolicyConfig& config() const { return cfg_; }
  const ParamStore& params() const { return store_; }
  ParamStore& params() { return store_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  // Normalization stats ride in the parameter store (non-trainable rows),
  // so checkpoints stay self-contained. Fresh policies hold the identity.
  void set_norm_stats(const NormStats& s);  // ShapeMismatch on bad lengths
  NormStats norm_stats() const;
  bool norm_is_identity() const;

  // Forward-only encoders (inference path).
  Tensor encode_obs(const Tensor& obs_row) const;   // [1, feature_dim]
  Tensor vis_tokens(const Tensor& obs_row) const;   // [n_vis_tokens, d]

  // Flat trajectory projectors (Add / ReadoutQuery fusions).
  Tensor phi_project_pose_cond(const PoseTraj& traj) const;
  Tensor phi_project_action_cond(const ActionTraj& traj) const;

  // Fused conditioning vector for one branch, forward-only. `flat_cond`
  // is the flattened n_cond-step trajectory from the *other* branch,
  // already z-scored (predict and build_losses normalize at their entry).
  Tensor fuse_forward(CondSource src, const Tensor& flat_cond,
                      const Tensor& obs_row) const;
  // Graph twin of fuse_forward for a single row; value-identical to it.
  NodeRef fuse_g(Graph& g, CondSource src, NodeRef flat_cond_row,
                 NodeRef obs_row) const;
  // Conditioning used when no previous estimate exists.
  Tensor degraded_cond(const Tensor& f_vis) const;

  // Samples both branches. Draws exactly two sub-seeds from rng (action
  // first, then pose) whatever the variant, so outputs are comparable
  // across variants stream-for-stream.
  Prediction predict(const Tensor& obs_row, const ConditionState& cond,
                     Rng& rng) const;

  // Graph-side losses for one homogeneous batch. Timestep/noise draws:
  // action head first, then pose head.
  LossNodes build_losses(Graph& g, const TrainBatch& batch, CondStyle style,
                         Rng& rng) const;

 private:
  void build_structure();          // head/projector specs from cfg_
  void init_params(std::uint64_t seed);
  void ensure_norm_params();       // creates identity stats when absent
  // (x - mu)/sigma with stats repeated across the steps of a flat
  // trajectory tensor; base is "norm.action" or "norm.pose".
  Tensor norm_traj(const Tensor& x, const char* base) const;
  Tensor denorm_traj(const Tensor& x, const char* base) const;
  Tensor encoder_trunk(const Tensor& obs_row) const;

  NodeRef encode_obs_g(Graph& g, NodeRef obs) const;
  NodeRef vis_tokens_row_g(Graph& g, NodeRef obs_row) const;
  // [B, fused_cond_dim] conditioning matrix for one branch.
  NodeRef cond_matrix_g(Graph& g, CondSource src, const Tensor& flat_cond,
                        const Tensor& obs_batch, NodeRef f_vis) const;
  NodeRef degraded_matrix_g(Graph& g, NodeRef f_vis) const;

  const MlpSpec& phi_spec(CondSource src) const;
  std::string phi_name(CondSource src) const;
  std::string tokp_name(CondSource src) const;

  PolicyConfig cfg_;
  ParamStore store_;
  NoiseSchedule schedule_;
  MlpSpec trunk_spec_, vis_spec_, tok_spec_;
  MlpSpec phi_a_spec_, phi_p_spec_;  // pose-input and action-input projectors
  MlpSpec tokp_a_spec_, tokp_p_spec_;  // per-step token projectors
  DiffusionHead head_a_, head_p_, head_uni_;
  bool has_pose_head_ = false, has_uni_head_ = false;
  bool uses_fusion_ = false, uses_tokens_ = false, has_phi_p_ = false;
};

}  // namespace xpol
