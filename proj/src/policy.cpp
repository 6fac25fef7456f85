#include "xpol/policy.hpp"

#include <algorithm>
#include <cstring>
#include <utility>

#include "json.hpp"

namespace xpol {

std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::Add: return "add";
    case FusionKind::CrossAttnConcat: return "cross-attn-concat";
    case FusionKind::ReadoutQuery: return "readout-query";
  }
  return "?";
}

std::string to_string(VariantKind k) {
  switch (k) {
    case VariantKind::XFull: return "xfull";
    case VariantKind::Base: return "base";
    case VariantKind::SepAux: return "sep-aux";
    case VariantKind::UniAux: return "uni-aux";
    case VariantKind::Hybrid: return "hybrid";
    case VariantKind::UnidirCascade: return "unidir-cascade";
  }
  return "?";
}

FusionKind fusion_from_string(const std::string& s) {
  if (s == "add") return FusionKind::Add;
  if (s == "cross-attn-concat") return FusionKind::CrossAttnConcat;
  if (s == "readout-query") return FusionKind::ReadoutQuery;
  throw ConfigError("unknown fusion kind: " + s);
}

VariantKind variant_from_string(const std::string& s) {
  if (s == "xfull") return VariantKind::XFull;
  if (s == "base") return VariantKind::Base;
  if (s == "sep-aux") return VariantKind::SepAux;
  if (s == "uni-aux") return VariantKind::UniAux;
  if (s == "hybrid") return VariantKind::Hybrid;
  if (s == "unidir-cascade") return VariantKind::UnidirCascade;
  throw ConfigError("unknown variant kind: " + s);
}

void PolicyConfig::validate() const {
  if (obs_dim == 0) throw ConfigError("PolicyConfig.obs_dim: must be > 0");
  if (action_dim == 0) {
    throw ConfigError("PolicyConfig.action_dim: must be > 0");
  }
  if (n_objects == 0) throw ConfigError("PolicyConfig.n_objects: must be > 0");
  if (horizon < 1) throw ConfigError("PolicyConfig.horizon: must be >= 1");
  if (n_cond < 1 || n_cond > horizon) {
    throw ConfigError(
        "PolicyConfig.n_cond: must satisfy 1 <= n_cond <= horizon");
  }
  if (feature_dim == 0 || enc_hidden == 0 || phi_hidden == 0 ||
      denoiser_hidden == 0) {
    throw ConfigError("PolicyConfig: network widths must be > 0");
  }
  if (denoiser_layers < 1) {
    throw ConfigError("PolicyConfig.denoiser_layers: must be >= 1");
  }
  if (n_vis_tokens == 0) {
    throw ConfigError("PolicyConfig.n_vis_tokens: must be > 0");
  }
  // Schedule parameters share the schedule constructor's validation.
  (void)make_linear_schedule(diffusion_steps, beta_start, beta_end);
}

std::string config_to_json(const PolicyConfig& cfg) {
  nlohmann::json j;
  j["obs_dim"] = cfg.obs_dim;
  j["action_dim"] = cfg.action_dim;
  j["n_objects"] = cfg.n_objects;
  j["horizon"] = cfg.horizon;
  j["n_cond"] = cfg.n_cond;
  j["feature_dim"] = cfg.feature_dim;
  j["enc_hidden"] = cfg.enc_hidden;
  j["phi_hidden"] = cfg.phi_hidden;
  j["denoiser_hidden"] = cfg.denoiser_hidden;
  j["denoiser_layers"] = cfg.denoiser_layers;
  j["n_vis_tokens"] = cfg.n_vis_tokens;
  j["diffusion_steps"] = cfg.diffusion_steps;
  j["beta_start"] = cfg.beta_start;
  j["beta_end"] = cfg.beta_end;
  j["fusion"] = to_string(cfg.fusion);
  j["variant"] = to_string(cfg.variant);
  return j.dump();
}

PolicyConfig config_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config json: ") + e.what());
  }
  PolicyConfig cfg;
  try {
    cfg.obs_dim = j.at("obs_dim").get<std::size_t>();
    cfg.action_dim = j.at("action_dim").get<std::size_t>();
    cfg.n_objects = j.at("n_objects").get<std::size_t>();
    cfg.horizon = j.at("horizon").get<int>();
    cfg.n_cond = j.at("n_cond").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    cfg.enc_hidden = j.at("enc_hidden").get<std::size_t>();
    cfg.phi_hidden = j.at("phi_hidden").get<std::size_t>();
    cfg.denoiser_hidden = j.at("denoiser_hidden").get<std::size_t>();
    cfg.denoiser_layers = j.value("denoiser_layers", 2);
    cfg.n_vis_tokens = j.at("n_vis_tokens").get<std::size_t>();
    cfg.diffusion_steps = j.at("diffusion_steps").get<int>();
    cfg.beta_start = j.at("beta_start").get<double>();
    cfg.beta_end = j.at("beta_end").get<double>();
    cfg.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ConditionState no_condition() { return ConditionState{}; }

ConditionState make_condition(const ActionTraj& executed,
                              const PoseTraj& predicted) {
  if (executed.horizon != predicted.horizon) {
    throw LengthMismatch("make_condition: trajectory lengths differ");
  }
  if (executed.horizon == 0) return no_condition();
  ConditionState st;
  st.prev_action = executed;
  st.prev_pose = predicted;
  return st;
}

Tensor flatten_actions(const ActionTraj& traj) {
  Tensor out = Tensor::zeros(1, traj.data.size());
  std::copy(traj.data.begin(), traj.data.end(), out.data.begin());
  return out;
}

Tensor flatten_poses(const PoseTraj& traj) {
  Tensor out = Tensor::zeros(1, traj.data.size());
  std::copy(traj.data.begin(), traj.data.end(), out.data.begin());
  return out;
}

ActionTraj unflatten_actions(const Tensor& row, int horizon, int action_dim) {
  if (row.rows() != 1 ||
      row.cols() != static_cast<std::size_t>(horizon) * action_dim) {
    throw ShapeMismatch("unflatten_actions: row size");
  }
  ActionTraj traj(horizon, action_dim);
  std::copy(row.data.begin(), row.data.end(), traj.data.begin());
  return traj;
}

PoseTraj unflatten_poses(const Tensor& row, int horizon, int n_objects) {
  if (row.rows() != 1 ||
      row.cols() != static_cast<std::size_t>(horizon) * PoseTraj::kPoseDim *
                        n_objects) {
    throw ShapeMismatch("unflatten_poses: row size");
  }
  PoseTraj traj(horizon, n_objects);
  std::copy(row.data.begin(), row.data.end(), traj.data.begin());
  return traj;
}

namespace {

Tensor row_of(const Tensor& t, std::size_t i) {
  Tensor out = Tensor::zeros(1, t.cols());
  std::copy(t.data.begin() + i * t.cols(), t.data.begin() + (i + 1) * t.cols(),
            out.data.begin());
  return out;
}

Tensor cols_range(const Tensor& t, std::size_t c0, std::size_t n) {
  Tensor out = Tensor::zeros(t.rows(), n);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::copy(t.data.begin() + i * t.cols() + c0,
              t.data.begin() + i * t.cols() + c0 + n,
              out.data.begin() + i * n);
  }
  return out;
}

// Per-step [action | pose] layout of the unified target.
Tensor interleave_targets(const Tensor& act, const Tensor& pose, int horizon,
                          std::size_t adim, std::size_t pdim) {
  Tensor out = Tensor::zeros(act.rows(), act.cols() + pose.cols());
  for (std::size_t i = 0; i < act.rows(); ++i) {
    double* dst = out.data.data() + i * out.cols();
    const double* arow = act.data.data() + i * act.cols();
    const double* prow = pose.data.data() + i * pose.cols();
    for (int s = 0; s < horizon; ++s) {
      std::copy(arow + s * adim, arow + (s + 1) * adim, dst);
      dst += adim;
      std::copy(prow + s * pdim, prow + (s + 1) * pdim, dst);
      dst += pdim;
    }
  }
  return out;
}

void split_uni_row(const Tensor& uni, int horizon, std::size_t adim,
                   std::size_t pdim, Tensor& act, Tensor& pose) {
  act = Tensor::zeros(1, horizon * adim);
  pose = Tensor::zeros(1, horizon * pdim);
  const double* src = uni.data.data();
  for (int s = 0; s < horizon; ++s) {
    std::copy(src, src + adim, act.data.data() + s * adim);
    src += adim;
    std::copy(src, src + pdim, pose.data.data() + s * pdim);
    src += pdim;
  }
}

}  // namespace

void XPolicy::build_structure() {
  const std::size_t d = cfg_.feature_dim;
  schedule_ =
      make_linear_schedule(cfg_.diffusion_steps, cfg_.beta_start, cfg_.beta_end);
  trunk_spec_ = MlpSpec{{cfg_.obs_dim, cfg_.enc_hidden, cfg_.enc_hidden},
                        Act::Relu};
  vis_spec_ = MlpSpec{{cfg_.enc_hidden, d}, Act::None};
  tok_spec_ = MlpSpec{{cfg_.enc_hidden, cfg_.n_vis_tokens * d}, Act::None};

  const std::size_t pstep = cfg_.pose_step_dim();
  const std::size_t astep = cfg_.action_dim;
  const std::size_t n = static_cast<std::size_t>(cfg_.n_cond);
  phi_a_spec_ =
      MlpSpec{{n * pstep, cfg_.phi_hidden, cfg_.phi_hidden, d}, Act::Relu};
  phi_p_spec_ =
      MlpSpec{{n * astep, cfg_.phi_hidden, cfg_.phi_hidden, d}, Act::Relu};
  tokp_a_spec_ = MlpSpec{{pstep, d}, Act::None};
  tokp_p_spec_ = MlpSpec{{astep, d}, Act::None};

  const VariantKind v = cfg_.variant;
  has_pose_head_ = v == VariantKind::XFull || v == VariantKind::SepAux ||
                   v == VariantKind::Hybrid || v == VariantKind::UnidirCascade;
  has_uni_head_ = v == VariantKind::UniAux;
  uses_fusion_ = v == VariantKind::XFull || v == VariantKind::Hybrid ||
                 v == VariantKind::UnidirCascade;
  has_phi_p_ = v == VariantKind::XFull || v == VariantKind::Hybrid;
  uses_tokens_ = uses_fusion_ && cfg_.fusion != FusionKind::Add;

  const std::size_t cond_a =
      uses_fusion_ ? cfg_.fused_cond_dim() : cfg_.feature_dim;
  const std::size_t cond_p =
      has_phi_p_ ? cfg_.fused_cond_dim() : cfg_.feature_dim;
  head_a_ = make_head("head_a", cfg_.action_target_dim(), cond_a,
                      cfg_.denoiser_hidden, schedule_);
  if (has_pose_head_) {
    head_p_ = make_head("head_p", cfg_.pose_target_dim(), cond_p,
                        cfg_.denoiser_hidden, schedule_);
  }
  if (has_uni_head_) {
    head_uni_ = make_head("head_uni", cfg_.uni_target_dim(), cfg_.feature_dim,
                          cfg_.denoiser_hidden, schedule_);
  }
}

void XPolicy::init_params(std::uint64_t seed) {
  // One derived stream per component: adding or dropping a component in a
  // variant never shifts another component's initial weights.
  auto stream = [seed](const char* name) { return Rng::derive(seed, name); };
  {
    Rng r = stream("init.enc.trunk");
    mlp_init(store_, "enc.trunk", trunk_spec_, r);
  }
  {
    Rng r = stream("init.enc.vis");
    mlp_init(store_, "enc.vis", vis_spec_, r);
  }
  if (uses_tokens_) {
    Rng r = stream("init.enc.tok");
    mlp_init(store_, "enc.tok", tok_spec_, r);
  }
  if (uses_fusion_) {
    if (cfg_.fusion == FusionKind::CrossAttnConcat) {
      Rng r = stream("init.tokp_a");
      mlp_init(store_, "tokp_a", tokp_a_spec_, r);
    } else {
      Rng r = stream("init.phi_a");
      mlp_init(store_, "phi_a", phi_a_spec_, r);
    }
  }
  if (has_phi_p_) {
    if (cfg_.fusion == FusionKind::CrossAttnConcat) {
      Rng r = stream("init.tokp_p");
      mlp_init(store_, "tokp_p", tokp_p_spec_, r);
    } else {
      Rng r = stream("init.phi_p");
      mlp_init(store_, "phi_p", phi_p_spec_, r);
    }
  }
  if (has_uni_head_) {
    Rng r = stream("init.head_uni");
    head_init(store_, head_uni_, r);
  } else {
    Rng r = stream("init.head_a");
    head_init(store_, head_a_, r);
  }
  if (has_pose_head_) {
    Rng r = stream("init.head_p");
    head_init(store_, head_p_, r);
  }
}

XPolicy::XPolicy(const PolicyConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  build_structure();
  init_params(init_seed);
  ensure_norm_params();
}

XPolicy::XPolicy(const PolicyConfig& cfg, ParamStore store)
    : cfg_(cfg), store_(std::move(store)) {
  cfg_.validate();
  build_structure();
  const std::string probe =
      has_uni_head_ ? "head_uni.w0" : std::string("head_a.w0");
  if (!store_.has("enc.trunk.w0") || !store_.has(probe)) {
    throw ConfigError("XPolicy: parameter store does not match config");
  }
  ensure_norm_params();
}

void XPolicy::ensure_norm_params() {
  auto identity = [this](const char* base, std::size_t d) {
    const std::string mu = std::string(base) + ".mu";
    const std::string sig = std::string(base) + ".sig";
    if (!store_.has(mu)) store_.create(mu, 1, d);
    if (!store_.has(sig)) {
      Tensor& s = store_.create(sig, 1, d);
      std::fill(s.data.begin(), s.data.end(), 1.0);
    }
  };
  identity("norm.action", cfg_.action_dim);
  identity("norm.pose", cfg_.pose_step_dim());
}

void XPolicy::set_norm_stats(const NormStats& s) {
  const std::size_t ad = cfg_.action_dim;
  const std::size_t pd = cfg_.pose_step_dim();
  if (s.action_mu.size() != ad || s.action_sigma.size() != ad ||
      s.pose_mu.size() != pd || s.pose_sigma.size() != pd) {
    throw ShapeMismatch("set_norm_stats: stat vector lengths");
  }
  for (double v : s.action_sigma) {
    if (!(v > 0.0)) throw ConfigError("set_norm_stats: sigma must be > 0");
  }
  for (double v : s.pose_sigma) {
    if (!(v > 0.0)) throw ConfigError("set_norm_stats: sigma must be > 0");
  }
  std::copy(s.action_mu.begin(), s.action_mu.end(),
            store_.get("norm.action.mu").data.begin());
  std::copy(s.action_sigma.begin(), s.action_sigma.end(),
            store_.get("norm.action.sig").data.begin());
  std::copy(s.pose_mu.begin(), s.pose_mu.end(),
            store_.get("norm.pose.mu").data.begin());
  std::copy(s.pose_sigma.begin(), s.pose_sigma.end(),
            store_.get("norm.pose.sig").data.begin());
}

NormStats XPolicy::norm_stats() const {
  NormStats s;
  s.action_mu = store_.get("norm.action.mu").data;
  s.action_sigma = store_.get("norm.action.sig").data;
  s.pose_mu = store_.get("norm.pose.mu").data;
  s.pose_sigma = store_.get("norm.pose.sig").data;
  return s;
}

bool XPolicy::norm_is_identity() const {
  const NormStats s = norm_stats();
  auto all = [](const std::vector<double>& v, double want) {
    return std::all_of(v.begin(), v.end(),
                       [want](double x) { return x == want; });
  };
  return all(s.action_mu, 0.0) && all(s.action_sigma, 1.0) &&
         all(s.pose_mu, 0.0) && all(s.pose_sigma, 1.0);
}

Tensor XPolicy::norm_traj(const Tensor& x, const char* base) const {
  const Tensor& mu = store_.get(std::string(base) + ".mu");
  const Tensor& sig = store_.get(std::string(base) + ".sig");
  const std::size_t d = mu.cols();
  if (x.cols() % d != 0) throw ShapeMismatch("norm_traj: width");
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t k = (i % x.cols()) % d;
    out.data[i] = (out.data[i] - mu.data[k]) / sig.data[k];
  }
  return out;
}

Tensor XPolicy::denorm_traj(const Tensor& x, const char* base) const {
  const Tensor& mu = store_.get(std::string(base) + ".mu");
  const Tensor& sig = store_.get(std::string(base) + ".sig");
  const std::size_t d = mu.cols();
  if (x.cols() % d != 0) throw ShapeMismatch("denorm_traj: width");
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t k = (i % x.cols()) % d;
    out.data[i] = out.data[i] * sig.data[k] + mu.data[k];
  }
  return out;
}

Tensor XPolicy::encoder_trunk(const Tensor& obs_row) const {
  if (obs_row.cols() != cfg_.obs_dim) {
    throw ShapeMismatch("encode_obs: observation dim");
  }
  return mlp_apply(store_, "enc.trunk", trunk_spec_, obs_row);
}

Tensor XPolicy::encode_obs(const Tensor& obs_row) const {
  return mlp_apply(store_, "enc.vis", vis_spec_, encoder_trunk(obs_row));
}

Tensor XPolicy::vis_tokens(const Tensor& obs_row) const {
  if (!uses_tokens_) {
    throw ConfigError("vis_tokens: this fusion kind has no token path");
  }
  Tensor flat = mlp_apply(store_, "enc.tok", tok_spec_, encoder_trunk(obs_row));
  flat.shape = {cfg_.n_vis_tokens, cfg_.feature_dim};
  return flat;
}

Tensor XPolicy::phi_project_pose_cond(const PoseTraj& traj) const {
  if (traj.horizon != cfg_.n_cond) {
    throw LengthMismatch("phi_project: pose condition length");
  }
  return mlp_apply(store_, "phi_a", phi_a_spec_,
                   norm_traj(flatten_poses(traj), "norm.pose"));
}

Tensor XPolicy::phi_project_action_cond(const ActionTraj& traj) const {
  if (traj.horizon != cfg_.n_cond) {
    throw LengthMismatch("phi_project: action condition length");
  }
  return mlp_apply(store_, "phi_p", phi_p_spec_,
                   norm_traj(flatten_actions(traj), "norm.action"));
}

const MlpSpec& XPolicy::phi_spec(CondSource src) const {
  return src == CondSource::PoseCond ? phi_a_spec_ : phi_p_spec_;
}

std::string XPolicy::phi_name(CondSource src) const {
  return src == CondSource::PoseCond ? "phi_a" : "phi_p";
}

std::string XPolicy::tokp_name(CondSource src) const {
  return src == CondSource::PoseCond ? "tokp_a" : "tokp_p";
}

Tensor XPolicy::degraded_cond(const Tensor& f_vis) const {
  if (cfg_.fusion == FusionKind::CrossAttnConcat) {
    Tensor zeros = Tensor::zeros(f_vis.rows(), cfg_.feature_dim);
    const Tensor* parts[] = {&zeros, &f_vis};
    return k_concat_cols(parts);
  }
  return f_vis;  // bitwise, no arithmetic on the features
}

Tensor XPolicy::fuse_forward(CondSource src, const Tensor& flat_cond,
                             const Tensor& obs_row) const {
  const std::size_t step = src == CondSource::PoseCond ? cfg_.pose_step_dim()
                                                       : cfg_.action_dim;
  const std::size_t n = static_cast<std::size_t>(cfg_.n_cond);
  if (flat_cond.rows() != 1 || flat_cond.cols() != n * step) {
    throw ShapeMismatch("fuse_forward: condition size");
  }
  switch (cfg_.fusion) {
    case FusionKind::Add: {
      Tensor phi = mlp_apply(store_, phi_name(src), phi_spec(src), flat_cond);
      return k_add(phi, encode_obs(obs_row));
    }
    case FusionKind::ReadoutQuery: {
      Tensor q = mlp_apply(store_, phi_name(src), phi_spec(src), flat_cond);
      Tensor t = vis_tokens(obs_row);
      return attention_apply(q, t, t);
    }
    case FusionKind::CrossAttnConcat: {
      Tensor steps = flat_cond;
      steps.shape = {n, step};
      const MlpSpec& tspec =
          src == CondSource::PoseCond ? tokp_a_spec_ : tokp_p_spec_;
      Tensor tok = mlp_apply(store_, tokp_name(src), tspec, steps);
      Tensor sa = attention_apply(tok, tok, tok);
      Tensor t = vis_tokens(obs_row);
      Tensor ca = attention_apply(sa, t, t);
      Tensor pooled = k_mean_rows(ca);
      Tensor f_vis = encode_obs(obs_row);
      const Tensor* parts[] = {&pooled, &f_vis};
      return k_concat_cols(parts);
    }
  }
  throw ConfigError("fuse_forward: unknown fusion kind");
}

Prediction XPolicy::predict(const Tensor& obs_row, const ConditionState& cond,
                            Rng& rng) const {
  if (obs_row.rows() != 1 || obs_row.cols() != cfg_.obs_dim) {
    throw ShapeMismatch("predict: observation shape");
  }
  if (cond.prev_action.has_value() != cond.prev_pose.has_value()) {
    throw ConditionInvalid(
        "predict: action and pose conditions must be provided together");
  }
  if (cond.present()) {
    if (cond.prev_action->horizon != cfg_.n_cond ||
        cond.prev_action->action_dim !=
            static_cast<int>(cfg_.action_dim)) {
      throw ConditionInvalid("predict: action condition shape");
    }
    if (cond.prev_pose->horizon != cfg_.n_cond ||
        cond.prev_pose->n_objects != static_cast<int>(cfg_.n_objects)) {
      throw ConditionInvalid("predict: pose condition shape");
    }
  }

  const Tensor f_vis = encode_obs(obs_row);
  // Two sub-streams drawn in fixed order keep variants comparable draw
  // for draw even when one of them skips a head.
  Rng ra(rng.next_u64());
  Rng rp(rng.next_u64());

  const int H = cfg_.horizon;
  const int adim = static_cast<int>(cfg_.action_dim);
  const int nobj = static_cast<int>(cfg_.n_objects);

  // Heads live in z-scored target space: conditions are normalized on the
  // way in, samples denormalized on the way out.
  auto sample_actions = [&](const Tensor& c, Rng& r) {
    return unflatten_actions(
        denorm_traj(head_sample(store_, head_a_, c, r), "norm.action"), H,
        adim);
  };
  auto sample_poses = [&](const Tensor& c, Rng& r) {
    return unflatten_poses(
        denorm_traj(head_sample(store_, head_p_, c, r), "norm.pose"), H, nobj);
  };

  Prediction out;
  switch (cfg_.variant) {
    case VariantKind::XFull: {
      const Tensor ca =
          cond.present()
              ? fuse_forward(CondSource::PoseCond,
                             norm_traj(flatten_poses(*cond.prev_pose),
                                       "norm.pose"),
                             obs_row)
              : degraded_cond(f_vis);
      const Tensor cp =
          cond.present()
              ? fuse_forward(CondSource::ActionCond,
                             norm_traj(flatten_actions(*cond.prev_action),
                                       "norm.action"),
                             obs_row)
              : degraded_cond(f_vis);
      out.actions = sample_actions(ca, ra);
      out.poses = sample_poses(cp, rp);
      out.pose_valid = true;
      break;
    }
    case VariantKind::Base: {
      out.actions = sample_actions(f_vis, ra);
      out.poses = PoseTraj(H, nobj);
      out.pose_valid = false;
      break;
    }
    case VariantKind::SepAux: {
      out.actions = sample_actions(f_vis, ra);
      out.poses = sample_poses(f_vis, rp);
      out.pose_valid = true;
      break;
    }
    case VariantKind::UniAux: {
      const Tensor uni = head_sample(store_, head_uni_, f_vis, ra);
      Tensor arow, prow;
      split_uni_row(uni, H, cfg_.action_dim, cfg_.pose_step_dim(), arow, prow);
      out.actions =
          unflatten_actions(denorm_traj(arow, "norm.action"), H, adim);
      out.poses = unflatten_poses(denorm_traj(prow, "norm.pose"), H, nobj);
      out.pose_valid = true;
      break;
    }
    case VariantKind::Hybrid: {
      // Inference keeps the action branch only, with the no-estimate
      // conditioning it saw on half of its training iterations.
      out.actions = sample_actions(degraded_cond(f_vis), ra);
      out.poses = PoseTraj(H, nobj);
      out.pose_valid = false;
      break;
    }
    case VariantKind::UnidirCascade: {
      // The pose sample conditions the action head in normalized space,
      // matching the teacher-forced slice the head trained against.
      const Tensor prow = head_sample(store_, head_p_, f_vis, rp);
      out.poses = unflatten_poses(denorm_traj(prow, "norm.pose"), H, nobj);
      const Tensor head_cols = cols_range(
          prow, 0, static_cast<std::size_t>(cfg_.n_cond) * cfg_.pose_step_dim());
      const Tensor ca = fuse_forward(CondSource::PoseCond, head_cols, obs_row);
      out.actions = sample_actions(ca, ra);
      out.pose_valid = true;
      break;
    }
  }
  return out;
}

NodeRef XPolicy::encode_obs_g(Graph& g, NodeRef obs) const {
  NodeRef trunk = mlp_forward(g, "enc.trunk", trunk_spec_, obs);
  return mlp_forward(g, "enc.vis", vis_spec_, trunk);
}

NodeRef XPolicy::vis_tokens_row_g(Graph& g, NodeRef obs_row) const {
  NodeRef trunk = mlp_forward(g, "enc.trunk", trunk_spec_, obs_row);
  NodeRef flat = mlp_forward(g, "enc.tok", tok_spec_, trunk);
  return g.reshape(flat, cfg_.n_vis_tokens, cfg_.feature_dim);
}

NodeRef XPolicy::degraded_matrix_g(Graph& g, NodeRef f_vis) const {
  if (cfg_.fusion == FusionKind::CrossAttnConcat) {
    NodeRef zeros = g.input(
        Tensor::zeros(g.value(f_vis).rows(), cfg_.feature_dim));
    return g.concat_cols({zeros, f_vis});
  }
  return f_vis;
}

NodeRef XPolicy::fuse_g(Graph& g, CondSource src, NodeRef flat_cond_row,
                        NodeRef obs_row) const {
  const std::size_t step = src == CondSource::PoseCond ? cfg_.pose_step_dim()
                                                       : cfg_.action_dim;
  const std::size_t n = static_cast<std::size_t>(cfg_.n_cond);
  if (g.value(flat_cond_row).rows() != 1 ||
      g.value(flat_cond_row).cols() != n * step) {
    throw ShapeMismatch("fuse: condition size");
  }
  switch (cfg_.fusion) {
    case FusionKind::Add: {
      NodeRef phi = mlp_forward(g, phi_name(src), phi_spec(src), flat_cond_row);
      return g.add(phi, encode_obs_g(g, obs_row));
    }
    case FusionKind::ReadoutQuery: {
      NodeRef q = mlp_forward(g, phi_name(src), phi_spec(src), flat_cond_row);
      NodeRef t = vis_tokens_row_g(g, obs_row);
      return attention(g, q, t, t);
    }
    case FusionKind::CrossAttnConcat: {
      const MlpSpec& tspec =
          src == CondSource::PoseCond ? tokp_a_spec_ : tokp_p_spec_;
      NodeRef steps = g.reshape(flat_cond_row, n, step);
      NodeRef tok = mlp_forward(g, tokp_name(src), tspec, steps);
      NodeRef sa = attention(g, tok, tok, tok);
      NodeRef t = vis_tokens_row_g(g, obs_row);
      NodeRef ca = attention(g, sa, t, t);
      NodeRef pooled = g.mean_rows(ca);
      return g.concat_cols({pooled, encode_obs_g(g, obs_row)});
    }
  }
  throw ConfigError("fuse: unknown fusion kind");
}

NodeRef XPolicy::cond_matrix_g(Graph& g, CondSource src,
                               const Tensor& flat_cond,
                               const Tensor& obs_batch, NodeRef f_vis) const {
  const std::size_t step = src == CondSource::PoseCond ? cfg_.pose_step_dim()
                                                       : cfg_.action_dim;
  const std::size_t n = static_cast<std::size_t>(cfg_.n_cond);
  if (flat_cond.cols() != n * step || flat_cond.rows() != obs_batch.rows()) {
    throw ShapeMismatch("cond_matrix: condition size");
  }
  if (cfg_.fusion == FusionKind::Add) {
    NodeRef phi =
        mlp_forward(g, phi_name(src), phi_spec(src), g.input(flat_cond));
    return g.add(phi, f_vis);
  }
  std::vector<NodeRef> rows;
  rows.reserve(flat_cond.rows());
  for (std::size_t b = 0; b < flat_cond.rows(); ++b) {
    rows.push_back(fuse_g(g, src, g.input(row_of(flat_cond, b)),
                          g.input(row_of(obs_batch, b))));
  }
  return g.stack_rows(rows);
}

LossNodes XPolicy::build_losses(Graph& g, const TrainBatch& batch,
                                CondStyle style, Rng& rng) const {
  const std::size_t B = batch.obs.rows();
  if (B == 0) throw ShapeMismatch("build_losses: empty batch");
  if (batch.obs.cols() != cfg_.obs_dim ||
      batch.action_target.cols() != cfg_.action_target_dim() ||
      batch.action_target.rows() != B ||
      batch.pose_target.cols() != cfg_.pose_target_dim() ||
      batch.pose_target.rows() != B) {
    throw ShapeMismatch("build_losses: batch tensor shapes");
  }
  if (batch.cond_action.has_value() != batch.cond_pose.has_value()) {
    throw ConditionInvalid(
        "build_losses: action and pose conditions must come together");
  }

  NodeRef obs_in = g.input(batch.obs);
  NodeRef f_vis = encode_obs_g(g, obs_in);

  // Targets and trajectory conditions enter head/projector space z-scored;
  // condition augmentation upstream stays in physical units.
  const Tensor act_t = norm_traj(batch.action_target, "norm.action");
  const Tensor pose_t = norm_traj(batch.pose_target, "norm.pose");
  std::optional<Tensor> cond_a, cond_p;
  if (batch.cond_action.has_value()) {
    cond_a = norm_traj(*batch.cond_action, "norm.action");
    cond_p = norm_traj(*batch.cond_pose, "norm.pose");
  }

  auto zero_node = [&g] { return g.input(Tensor::scalar(0.0)); };
  LossNodes out;
  switch (cfg_.variant) {
    case VariantKind::Base: {
      out.action = head_loss(g, head_a_, act_t, f_vis, rng);
      out.pose = zero_node();
      out.pose_active = false;
      break;
    }
    case VariantKind::SepAux: {
      out.action = head_loss(g, head_a_, act_t, f_vis, rng);
      out.pose = head_loss(g, head_p_, pose_t, f_vis, rng);
      out.pose_active = true;
      break;
    }
    case VariantKind::UniAux: {
      const Tensor uni =
          interleave_targets(act_t, pose_t, cfg_.horizon, cfg_.action_dim,
                             cfg_.pose_step_dim());
      out.action = head_loss(g, head_uni_, uni, f_vis, rng);
      out.pose = zero_node();
      out.pose_active = false;
      break;
    }
    case VariantKind::XFull:
    case VariantKind::Hybrid: {
      const bool crossed =
          (cfg_.variant == VariantKind::XFull ||
           style == CondStyle::CrossWired) &&
          batch.cond_action.has_value();
      NodeRef ca, cp;
      if (crossed) {
        ca = cond_matrix_g(g, CondSource::PoseCond, *cond_p, batch.obs, f_vis);
        cp = cond_matrix_g(g, CondSource::ActionCond, *cond_a, batch.obs,
                           f_vis);
      } else {
        ca = degraded_matrix_g(g, f_vis);
        cp = ca;
      }
      out.action = head_loss(g, head_a_, act_t, ca, rng);
      out.pose = head_loss(g, head_p_, pose_t, cp, rng);
      out.pose_active = true;
      break;
    }
    case VariantKind::UnidirCascade: {
      // The action branch learns against the current ground-truth pose
      // window (teacher forcing of the intra-step cascade).
      const Tensor pose_head_cols = cols_range(
          pose_t, 0,
          static_cast<std::size_t>(cfg_.n_cond) * cfg_.pose_step_dim());
      NodeRef ca = cond_matrix_g(g, CondSource::PoseCond, pose_head_cols,
                                 batch.obs, f_vis);
      out.action = head_loss(g, head_a_, act_t, ca, rng);
      out.pose = head_loss(g, head_p_, pose_t, f_vis, rng);
      out.pose_active = true;
      break;
    }
  }
  return out;
}

}  // namespace xpol
