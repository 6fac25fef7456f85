#include "xpol/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <tuple>
#include <utility>

#include "json.hpp"
#include "xpol/checkpoint.hpp"
#include "xpol/graph.hpp"

namespace xpol {

void TrainConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda))
    throw ConfigError("TrainConfig.lambda: must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("TrainConfig.batch_size: must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr))
    throw ConfigError("TrainConfig.lr: must be finite and > 0");
  if (iterations < 0) throw ConfigError("TrainConfig.iterations: must be >= 0");
  if (cond_aug.rot < 0 || cond_aug.trans < 0 || cond_aug.extra < 0)
    throw ConfigError("TrainConfig.cond_aug: sigmas must be >= 0");
  policy.validate();
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["lambda"] = cfg.lambda;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["iterations"] = cfg.iterations;
  j["cond_aug"] = {{"rot", cfg.cond_aug.rot},
                   {"trans", cfg.cond_aug.trans},
                   {"extra", cfg.cond_aug.extra}};
  j["seed"] = cfg.seed;
  j["policy"] = nlohmann::json::parse(config_to_json(cfg.policy));
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& json) {
  TrainConfig cfg;
  try {
    const nlohmann::json j = nlohmann::json::parse(json);
    cfg.lambda = j.at("lambda").get<double>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.iterations = j.at("iterations").get<int>();
    const auto& a = j.at("cond_aug");
    cfg.cond_aug.rot = a.at("rot").get<double>();
    cfg.cond_aug.trans = a.at("trans").get<double>();
    cfg.cond_aug.extra = a.at("extra").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.policy = config_from_json(j.at("policy").dump());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::vector<TrainPair> make_training_pairs(const Dataset& data, int horizon,
                                           int n_cond) {
  if (data.episodes.empty())
    throw EmptyDataset("make_training_pairs: no episodes");
  if (horizon < 1) throw ConfigError("make_training_pairs: horizon must be >= 1");
  if (n_cond < 0 || n_cond > horizon)
    throw ConfigError("make_training_pairs: need 0 <= n_cond <= horizon");

  const auto od = static_cast<std::size_t>(data.obs_dim());
  const auto ad = static_cast<std::size_t>(data.action_dim());
  const auto pd = static_cast<std::size_t>(data.pose_dim());

  std::vector<TrainPair> out;
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const EpisodeData& ep = data.episodes[e];
    const int len = ep.steps;
    const int last_start = std::max(0, len - horizon);
    for (int t = 0; t <= last_start; ++t) {
      TrainPair p;
      p.episode = static_cast<int>(e);
      p.t = t;
      const auto ts = static_cast<std::size_t>(t);
      p.obs.assign(ep.obs.begin() + static_cast<std::ptrdiff_t>(ts * od),
                   ep.obs.begin() + static_cast<std::ptrdiff_t>((ts + 1) * od));
      p.action_target.reserve(static_cast<std::size_t>(horizon) * ad);
      p.pose_target.reserve(static_cast<std::size_t>(horizon) * pd);
      for (int k = 0; k < horizon; ++k) {
        const int src = std::min(t + k, len - 1);
        if (t + k > len - 1) p.padded = true;
        const auto ss = static_cast<std::size_t>(src);
        p.action_target.insert(
            p.action_target.end(),
            ep.actions.begin() + static_cast<std::ptrdiff_t>(ss * ad),
            ep.actions.begin() + static_cast<std::ptrdiff_t>((ss + 1) * ad));
        p.pose_target.insert(
            p.pose_target.end(),
            ep.poses.begin() + static_cast<std::ptrdiff_t>(ss * pd),
            ep.poses.begin() + static_cast<std::ptrdiff_t>((ss + 1) * pd));
      }
      if (t >= n_cond && n_cond > 0) {
        p.has_cond = true;
        const auto c0 = static_cast<std::size_t>(t - n_cond);
        p.cond_action.assign(
            ep.actions.begin() + static_cast<std::ptrdiff_t>(c0 * ad),
            ep.actions.begin() + static_cast<std::ptrdiff_t>(ts * ad));
        p.cond_pose.assign(
            ep.poses.begin() + static_cast<std::ptrdiff_t>(c0 * pd),
            ep.poses.begin() + static_cast<std::ptrdiff_t>(ts * pd));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

TrainPair augment_condition(const TrainPair& pair, const PerturbSigmas& s,
                            Rng& rng) {
  if (!pair.has_cond) return pair;
  TrainPair out = pair;
  const int n_cond = static_cast<int>(pair.cond_action.size() / 10);
  ActionTraj at(n_cond, 10);
  at.data = pair.cond_action;
  out.cond_action = perturb_traj(at, s, rng).data;
  const int n_objects =
      static_cast<int>(pair.cond_pose.size() / 9) / std::max(n_cond, 1);
  PoseTraj pt(n_cond, n_objects);
  pt.data = pair.cond_pose;
  out.cond_pose = perturb_traj(pt, s, rng).data;
  return out;
}

namespace {

Tensor rows_from(const std::vector<const std::vector<double>*>& rows,
                 std::size_t cols) {
  Tensor t = Tensor::zeros(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->size() != cols)
      throw ShapeMismatch("train batch: row width mismatch");
    std::copy(rows[i]->begin(), rows[i]->end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return t;
}

TrainBatch to_batch(const std::vector<TrainPair>& group,
                    const PolicyConfig& pc, bool with_cond) {
  std::vector<const std::vector<double>*> obs, at, pt, ca, cp;
  for (const TrainPair& p : group) {
    obs.push_back(&p.obs);
    at.push_back(&p.action_target);
    pt.push_back(&p.pose_target);
    if (with_cond) {
      ca.push_back(&p.cond_action);
      cp.push_back(&p.cond_pose);
    }
  }
  TrainBatch b;
  b.obs = rows_from(obs, pc.obs_dim);
  b.action_target = rows_from(at, pc.action_target_dim());
  b.pose_target = rows_from(pt, pc.pose_target_dim());
  if (with_cond) {
    b.cond_action = rows_from(
        ca, static_cast<std::size_t>(pc.n_cond) * pc.action_dim);
    b.cond_pose =
        rows_from(cp, static_cast<std::size_t>(pc.n_cond) * pc.pose_step_dim());
  }
  return b;
}

}  // namespace

LossBreakdown train_step(XPolicy& policy, const std::vector<TrainPair>& pairs,
                         const TrainConfig& cfg, int iteration) {
  if (pairs.empty()) throw EmptyDataset("train_step: no training pairs");
  const PolicyConfig& pc = policy.config();
  const auto it = static_cast<std::uint64_t>(iteration);

  // Independent per-iteration streams: batch selection never shifts when the
  // variant changes how many augmentation or loss draws happen.
  Rng idx_rng = Rng::derive(cfg.seed, "train.sample", it);
  Rng aug_rng = Rng::derive(cfg.seed, "train.aug", it);
  Rng coin_rng = Rng::derive(cfg.seed, "train.coin", it);
  Rng loss_rng = Rng::derive(cfg.seed, "train.loss", it);

  std::vector<TrainPair> cond_group, free_group;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const std::size_t i = idx_rng.uniform_index(pairs.size());
    const TrainPair& p = pairs[i];
    if (p.has_cond)
      cond_group.push_back(augment_condition(p, cfg.cond_aug, aug_rng));
    else
      free_group.push_back(p);
  }

  CondStyle style = CondStyle::CrossWired;
  if (pc.variant == VariantKind::Hybrid)
    style = coin_rng.uniform() < 0.5 ? CondStyle::CrossWired
                                     : CondStyle::VisOnly;

  Graph g(&policy.params());
  struct Part {
    double weight;
    LossNodes nodes;
  };
  std::vector<Part> parts;
  const double total = static_cast<double>(cond_group.size() + free_group.size());
  if (!cond_group.empty()) {
    const TrainBatch b = to_batch(cond_group, pc, true);
    parts.push_back({static_cast<double>(cond_group.size()) / total,
                     policy.build_losses(g, b, style, loss_rng)});
  }
  if (!free_group.empty()) {
    const TrainBatch b = to_batch(free_group, pc, false);
    parts.push_back({static_cast<double>(free_group.size()) / total,
                     policy.build_losses(g, b, style, loss_rng)});
  }

  bool pose_active = false;
  NodeRef l_action, l_pose;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const NodeRef wa = g.scale(parts[i].nodes.action, parts[i].weight);
    const NodeRef wp = g.scale(parts[i].nodes.pose, parts[i].weight);
    l_action = i == 0 ? wa : g.add(l_action, wa);
    l_pose = i == 0 ? wp : g.add(l_pose, wp);
    pose_active = pose_active || parts[i].nodes.pose_active;
  }
  const NodeRef l_total = g.add(l_action, g.scale(l_pose, cfg.lambda));

  LossBreakdown out;
  out.l_action = g.value(l_action).item();
  out.l_pose = g.value(l_pose).item();
  out.l_total = g.value(l_total).item();
  if (!std::isfinite(out.l_total))
    throw NonFiniteLoss("train_step: non-finite loss at iteration " +
                        std::to_string(iteration) +
                        " (action=" + std::to_string(out.l_action) +
                        ", pose=" + std::to_string(out.l_pose) + ")");

  g.backward(l_total);
  GradMap grads;
  g.export_param_grads(grads);
  policy.params().adam_step(grads, cfg.lr);
  return out;
}

NormStats fit_normalizer(const std::vector<TrainPair>& pairs,
                         const PolicyConfig& cfg) {
  if (pairs.empty()) throw EmptyDataset("fit_normalizer: no pairs");
  const std::size_t ad = cfg.action_dim;
  const std::size_t pd = cfg.pose_step_dim();
  auto stats = [&pairs](std::size_t d, auto&& field) {
    std::vector<double> mu(d, 0.0), sig(d, 0.0);
    std::size_t steps = 0;
    for (const TrainPair& p : pairs) {
      const std::vector<double>& v = field(p);
      for (std::size_t i = 0; i < v.size(); ++i) mu[i % d] += v[i];
      steps += v.size() / d;
    }
    for (double& m : mu) m /= static_cast<double>(steps);
    for (const TrainPair& p : pairs) {
      const std::vector<double>& v = field(p);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double e = v[i] - mu[i % d];
        sig[i % d] += e * e;
      }
    }
    // The floor keeps constant dims pinned without amplifying them: it must
    // stay above the physical perturbation scales applied downstream
    // (condition augmentation, pose-oracle noise), or a few-millimeter
    // nudge on a zero-variance dim normalizes to thousands and the
    // projectors blow up.
    for (double& s : sig) {
      s = std::max(std::sqrt(s / static_cast<double>(steps)), 1e-2);
    }
    return std::pair(mu, sig);
  };
  NormStats s;
  std::tie(s.action_mu, s.action_sigma) =
      stats(ad, [](const TrainPair& p) -> const std::vector<double>& {
        return p.action_target;
      });
  std::tie(s.pose_mu, s.pose_sigma) =
      stats(pd, [](const TrainPair& p) -> const std::vector<double>& {
        return p.pose_target;
      });
  return s;
}

TrainResult train_policy(XPolicy& policy, const std::vector<TrainPair>& pairs,
                         const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (policy.norm_is_identity()) {
    policy.set_norm_stats(fit_normalizer(pairs, policy.config()));
  }
  TrainResult res;
  res.history.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int i = 0; i < cfg.iterations; ++i) {
    res.history.push_back(train_step(policy, pairs, cfg, i));
    if (progress) progress(i, res.history.back());
  }
  return res;
}

void save_checkpoint(const XPolicy& policy, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  Archive a;
  a.manifest_json = train_config_to_json(cfg);
  a.tensors = policy.params().tensors();
  save_archive(path, a);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Archive a = load_archive(path);
  TrainConfig cfg = train_config_from_json(a.manifest_json);
  ParamStore store;
  store.tensors() = std::move(a.tensors);
  XPolicy policy(cfg.policy, std::move(store));
  return Checkpoint{std::move(cfg), std::move(policy)};
}

void require_compatible(const PolicyConfig& have, const PolicyConfig& want) {
  auto fail = [](const std::string& field) {
    throw VersionMismatch("checkpoint incompatible with requested config: " +
                          field + " differs");
  };
  if (have.obs_dim != want.obs_dim) fail("obs_dim");
  if (have.action_dim != want.action_dim) fail("action_dim");
  if (have.n_objects != want.n_objects) fail("n_objects");
  if (have.horizon != want.horizon) fail("horizon");
  if (have.n_cond != want.n_cond) fail("n_cond");
  if (have.feature_dim != want.feature_dim) fail("feature_dim");
  if (have.enc_hidden != want.enc_hidden) fail("enc_hidden");
  if (have.phi_hidden != want.phi_hidden) fail("phi_hidden");
  if (have.denoiser_hidden != want.denoiser_hidden) fail("denoiser_hidden");
  if (have.denoiser_layers != want.denoiser_layers) fail("denoiser_layers");
  if (have.n_vis_tokens != want.n_vis_tokens) fail("n_vis_tokens");
  if (have.diffusion_steps != want.diffusion_steps) fail("diffusion_steps");
  if (have.beta_start != want.beta_start) fail("beta_start");
  if (have.beta_end != want.beta_end) fail("beta_end");
  if (have.fusion != want.fusion) fail("fusion");
  if (have.variant != want.variant) fail("variant");
}

}  // namespace xpol
