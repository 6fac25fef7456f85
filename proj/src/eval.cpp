#include "xpol/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include "json.hpp"

namespace xpol {

namespace {

using nlohmann::json;

// Round-trip double formatting so rewritten reports are byte-identical.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << body;
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

std::string to_string(OracleMode m) {
  switch (m) {
    case OracleMode::Predicted: return "predicted";
    case OracleMode::GroundTruth: return "ground_truth";
    case OracleMode::GroundTruthPlusNoise: return "ground_truth_plus_noise";
  }
  throw ConfigError("unknown oracle mode");
}

OracleMode oracle_from_string(const std::string& s) {
  if (s == "predicted") return OracleMode::Predicted;
  if (s == "ground_truth") return OracleMode::GroundTruth;
  if (s == "ground_truth_plus_noise") return OracleMode::GroundTruthPlusNoise;
  throw ConfigError("unknown oracle mode: " + s);
}

int EvalConfig::resolve_exec(const PolicyConfig& pc) const {
  return exec_steps == 0 ? pc.n_cond : exec_steps;
}

void EvalConfig::validate(const PolicyConfig& pc) const {
  if (trials < 1) throw ConfigError("trials must be positive");
  const int exec = resolve_exec(pc);
  if (exec < pc.n_cond || exec > pc.horizon)
    throw ConfigError("exec_steps must lie in [n_cond, horizon]");
  if (!(oracle_sigma_rot >= 0.0) || !std::isfinite(oracle_sigma_rot))
    throw ConfigError("oracle_sigma_rot must be finite and non-negative");
  if (!(oracle_sigma_trans >= 0.0) || !std::isfinite(oracle_sigma_trans))
    throw ConfigError("oracle_sigma_trans must be finite and non-negative");
  if (occlusion_radius &&
      (!(*occlusion_radius >= 0.0) || !std::isfinite(*occlusion_radius)))
    throw ConfigError("occlusion_radius must be finite and non-negative");
}

Planner policy_planner(const XPolicy& policy) {
  // Captures the policy by reference; the caller keeps it alive for the
  // planner's lifetime.
  return [&policy](const ToyEnv&, const ObservationRecord& obs,
                   const ConditionState& cond, Rng& rng) {
    Tensor row = Tensor::from_rows(1, obs.v.size(), obs.v);
    return policy.predict(row, cond, rng);
  };
}

TrialResult run_trial(const Planner& plan, const PlanContext& ctx, ToyEnv& env,
                      const EvalConfig& cfg, std::uint64_t env_seed) {
  const int exec = cfg.exec_steps == 0 ? ctx.n_cond : cfg.exec_steps;
  if (exec < ctx.n_cond || exec > ctx.horizon)
    throw ConfigError("exec_steps must lie in [n_cond, horizon]");

  ObservationRecord obs = env.reset(env_seed);
  // Separate streams so oracle-noise draws never shift the planner's.
  Rng plan_rng = Rng::derive(env_seed, "eval.plan");
  Rng oracle_rng = Rng::derive(env_seed, "eval.oracle");

  TrialResult out;
  out.env_seed = env_seed;
  ConditionState cond = no_condition();

  while (!env.done()) {
    Prediction pred = plan(env, obs, cond, plan_rng);
    if (pred.actions.horizon < exec || pred.actions.action_dim != 10)
      throw ShapeMismatch("planner output does not cover the execution window");

    PoseTraj truth(exec, ctx.n_objects);
    for (int k = 0; k < exec && !env.done(); ++k) {
      std::array<double, 10> a{};
      std::copy_n(pred.actions.step(k), 10, a.begin());
      StepResult res = env.step(a);
      obs = std::move(res.obs);
      ++out.steps;
      for (int j = 0; j < ctx.n_objects; ++j)
        truth.set_pose(k, j, env.state().objects[static_cast<std::size_t>(j)]);
      if (pred.pose_valid) {
        auto [rot, trans] =
            pose_error(pred.poses.pose_at(k, 0), env.state().objects[0]);
        out.errors.push_back({rot, trans});
      }
    }
    if (env.done()) break;

    // The next condition covers the last n_cond executed steps; pose rows
    // are time-matched to the same step indices.
    ActionTraj a_tail = pred.actions.slice(exec - ctx.n_cond, ctx.n_cond);
    if (cfg.oracle == OracleMode::Predicted) {
      if (!pred.pose_valid) {
        // No pose stream to chain from; the next cycle runs unconditioned.
        cond = no_condition();
        continue;
      }
      cond = make_condition(a_tail,
                            pred.poses.slice(exec - ctx.n_cond, ctx.n_cond));
    } else {
      PoseTraj tail = truth.slice(exec - ctx.n_cond, ctx.n_cond);
      if (cfg.oracle == OracleMode::GroundTruthPlusNoise)
        tail = perturb_traj(
            tail, {cfg.oracle_sigma_rot, cfg.oracle_sigma_trans, 0.0},
            oracle_rng);
      cond = make_condition(a_tail, tail);
    }
  }

  out.success = env.success();
  return out;
}

SuiteReport run_suite_plan(const Planner& plan, const PlanContext& ctx,
                           const TaskSpec& task, const EvalConfig& cfg,
                           const std::string& variant_label) {
  if (cfg.trials < 1) throw ConfigError("trials must be positive");
  TaskSpec spec = task;
  if (cfg.occlusion_radius) spec.occlusion_radius = *cfg.occlusion_radius;
  spec.validate();
  ToyEnv env(spec);

  SuiteReport rep;
  rep.trials = cfg.trials;
  rep.base_seed = cfg.seed;
  rep.exec_steps = cfg.exec_steps == 0 ? ctx.n_cond : cfg.exec_steps;
  rep.oracle = cfg.oracle;
  rep.oracle_sigma_rot = cfg.oracle_sigma_rot;
  rep.oracle_sigma_trans = cfg.oracle_sigma_trans;
  rep.occlusion_radius = spec.occlusion_radius;
  rep.task = to_string(spec.kind);
  rep.variant = variant_label;

  std::size_t max_len = 0;
  for (int i = 0; i < cfg.trials; ++i) {
    rep.rows.push_back(run_trial(plan, ctx, env, cfg,
                                 cfg.seed + static_cast<std::uint64_t>(i)));
    max_len = std::max(max_len, rep.rows.back().errors.size());
  }

  int wins = 0;
  double sum = 0.0, sum_sq = 0.0;
  for (const TrialResult& t : rep.rows) {
    wins += t.success ? 1 : 0;
    sum += t.steps;
    sum_sq += static_cast<double>(t.steps) * t.steps;
  }
  const double n = static_cast<double>(cfg.trials);
  rep.success_rate = wins / n;
  rep.mean_steps = sum / n;
  // Sample standard deviation; zero for a single trial.
  rep.std_steps =
      cfg.trials > 1
          ? std::sqrt(std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0)))
          : 0.0;

  rep.mean_curve.resize(max_len);
  rep.curve_counts.resize(max_len, 0);
  for (const TrialResult& t : rep.rows)
    for (std::size_t k = 0; k < t.errors.size(); ++k) {
      rep.mean_curve[k].rot += t.errors[k].rot;
      rep.mean_curve[k].trans += t.errors[k].trans;
      ++rep.curve_counts[k];
    }
  for (std::size_t k = 0; k < max_len; ++k) {
    rep.mean_curve[k].rot /= rep.curve_counts[k];
    rep.mean_curve[k].trans /= rep.curve_counts[k];
  }
  return rep;
}

SuiteReport run_suite(const XPolicy& policy, const TaskSpec& task,
                      const EvalConfig& cfg) {
  const PolicyConfig& pc = policy.config();
  cfg.validate(pc);
  if (pc.obs_dim != static_cast<std::size_t>(task.obs_dim()))
    throw ConfigError("policy observation width does not match the task");
  if (pc.n_objects != static_cast<std::size_t>(task.n_objects))
    throw ConfigError("policy object count does not match the task");
  PlanContext ctx{pc.horizon, pc.n_cond, static_cast<int>(pc.n_objects)};
  return run_suite_plan(policy_planner(policy), ctx, task, cfg,
                        to_string(pc.variant));
}

MeanCi mean_ci95(std::span<const double> xs) {
  if (xs.empty()) throw ConfigError("mean_ci95 needs at least one value");
  MeanCi ci;
  ci.n = static_cast<int>(xs.size());
  double sum = 0.0;
  for (double v : xs) sum += v;
  ci.mean = sum / ci.n;
  if (ci.n == 1) {
    ci.lo = ci.hi = ci.mean;
    return ci;
  }
  double ss = 0.0;
  for (double v : xs) ss += (v - ci.mean) * (v - ci.mean);
  const double half =
      1.96 * std::sqrt(ss / (ci.n - 1)) / std::sqrt(static_cast<double>(ci.n));
  ci.lo = ci.mean - half;
  ci.hi = ci.mean + half;
  return ci;
}

void write_suite_json(const SuiteReport& r, const std::filesystem::path& path) {
  json j;
  j["format"] = "xpol-eval";
  j["version"] = 1;
  j["task"] = r.task;
  j["variant"] = r.variant;
  j["trials"] = r.trials;
  j["base_seed"] = r.base_seed;
  j["exec_steps"] = r.exec_steps;
  j["oracle"] = to_string(r.oracle);
  j["oracle_sigma_rot"] = r.oracle_sigma_rot;
  j["oracle_sigma_trans"] = r.oracle_sigma_trans;
  j["occlusion_radius"] = r.occlusion_radius;
  j["success_rate"] = r.success_rate;
  j["mean_steps"] = r.mean_steps;
  j["std_steps"] = r.std_steps;
  j["rows"] = json::array();
  for (const TrialResult& t : r.rows)
    j["rows"].push_back(
        {{"seed", t.env_seed}, {"success", t.success}, {"steps", t.steps}});
  j["mean_curve"] = json::array();
  for (const StepError& e : r.mean_curve)
    j["mean_curve"].push_back({e.rot, e.trans});
  j["curve_counts"] = r.curve_counts;
  write_text(path, j.dump(2) + "\n");
}

void write_suite_csv(const SuiteReport& r, const std::filesystem::path& path) {
  std::string body = "trial,seed,success,steps\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const TrialResult& t = r.rows[i];
    body += std::to_string(i) + "," + std::to_string(t.env_seed) + "," +
            (t.success ? "1" : "0") + "," + std::to_string(t.steps) + "\n";
  }
  write_text(path, body);
}

void write_curve_csv(const SuiteReport& r, const std::filesystem::path& path) {
  std::string body = "step,mean_rot_err,mean_trans_err,count\n";
  for (std::size_t k = 0; k < r.mean_curve.size(); ++k)
    body += std::to_string(k) + "," + fmt(r.mean_curve[k].rot) + "," +
            fmt(r.mean_curve[k].trans) + "," +
            std::to_string(r.curve_counts[k]) + "\n";
  write_text(path, body);
}

SuiteReport train_and_eval(const Dataset& data, TrainConfig tc,
                           const TaskSpec& task, const EvalConfig& ec,
                           std::uint64_t train_seed) {
  tc.seed = train_seed;
  tc.validate();
  std::vector<TrainPair> pairs =
      make_training_pairs(data, tc.policy.horizon, tc.policy.n_cond);
  XPolicy policy(tc.policy, Rng::derive(train_seed, "init").next_u64());
  train_policy(policy, pairs, tc);
  return run_suite(policy, task, ec);
}

std::vector<AblateRow> ablate(const Dataset& data, const TrainConfig& base,
                              const TaskSpec& task, const EvalConfig& ec,
                              std::span<const VariantKind> variants,
                              std::span<const std::uint64_t> seeds) {
  std::vector<AblateRow> rows;
  for (VariantKind v : variants)
    for (std::uint64_t s : seeds) {
      TrainConfig tc = base;
      tc.policy.variant = v;
      SuiteReport rep = train_and_eval(data, tc, task, ec, s);
      rows.push_back({v, s, rep.success_rate});
    }
  return rows;
}

std::vector<SweepRow> sweep_n(const Dataset& data, const TrainConfig& base,
                              const TaskSpec& task, const EvalConfig& ec,
                              std::span<const int> n_values,
                              std::span<const std::uint64_t> seeds) {
  std::vector<SweepRow> rows;
  for (int n : n_values)
    for (std::uint64_t s : seeds) {
      TrainConfig tc = base;
      tc.policy.n_cond = n;
      EvalConfig e = ec;
      e.exec_steps = n;
      SuiteReport rep = train_and_eval(data, tc, task, e, s);
      rows.push_back({n, s, rep.success_rate});
    }
  return rows;
}

std::vector<OracleRow> oracle_compare(const XPolicy& policy,
                                      const TaskSpec& task,
                                      const EvalConfig& ec) {
  std::vector<OracleRow> rows;
  for (OracleMode m : {OracleMode::Predicted, OracleMode::GroundTruth,
                       OracleMode::GroundTruthPlusNoise}) {
    EvalConfig e = ec;
    e.oracle = m;
    rows.push_back({m, run_suite(policy, task, e).success_rate});
  }
  return rows;
}

void write_ablate_csv(std::span<const AblateRow> rows,
                      const std::filesystem::path& path) {
  std::string body = "variant,seed,success_rate\n";
  for (const AblateRow& r : rows)
    body += to_string(r.variant) + "," + std::to_string(r.seed) + "," +
            fmt(r.success_rate) + "\n";
  write_text(path, body);
}

void write_sweep_csv(std::span<const SweepRow> rows,
                     const std::filesystem::path& path) {
  std::string body = "n_cond,seed,success_rate\n";
  for (const SweepRow& r : rows)
    body += std::to_string(r.n) + "," + std::to_string(r.seed) + "," +
            fmt(r.success_rate) + "\n";
  write_text(path, body);
}

void write_oracle_csv(std::span<const OracleRow> rows,
                      const std::filesystem::path& path) {
  std::string body = "oracle,success_rate\n";
  for (const OracleRow& r : rows)
    body += to_string(r.mode) + "," + fmt(r.success_rate) + "\n";
  write_text(path, body);
}

}  // namespace xpol
