#include "xpol/eval.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "json.hpp"

using namespace xpol;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Receding-horizon wrapper over the scripted expert: each plan repeats the
// current expert action, so execution approximates the closed loop with a
// replan lag of exec_steps.
Planner expert_planner(int horizon) {
  return [horizon](const ToyEnv& env, const ObservationRecord&,
                   const ConditionState&, Rng&) {
    Prediction p;
    p.actions = ActionTraj(horizon, 10);
    std::array<double, 10> a = expert_action(env.state(), env.spec());
    for (int k = 0; k < horizon; ++k)
      std::copy(a.begin(), a.end(), p.actions.step(k));
    p.poses = PoseTraj(horizon, env.spec().n_objects);
    p.pose_valid = false;
    return p;
  };
}

struct CaptureLog {
  std::vector<bool> cond_present;
  std::vector<ActionTraj> cond_a;
  std::vector<PoseTraj> cond_p;
  std::vector<ActionTraj> plan_a;
  std::vector<PoseTraj> plan_p;
  Pose9 first_obj{};
};

// Holds the ee in place (apertures stay above the close threshold) while
// tagging every action row and pose row with a value unique to its cycle and
// step, so condition chaining can be checked bitwise.
Planner capture_planner(CaptureLog& log, int horizon, bool pose_valid) {
  return [&log, horizon, pose_valid](const ToyEnv& env,
                                     const ObservationRecord&,
                                     const ConditionState& cond, Rng&) {
    const int c = static_cast<int>(log.plan_a.size());
    if (c == 0) log.first_obj = env.state().objects[0];
    log.cond_present.push_back(cond.present());
    if (cond.present()) {
      log.cond_a.push_back(*cond.prev_action);
      log.cond_p.push_back(*cond.prev_pose);
    }
    Prediction p;
    p.actions = ActionTraj(horizon, 10);
    p.poses = PoseTraj(horizon, 1);
    for (int k = 0; k < horizon; ++k) {
      const double tag = 0.001 * (c * horizon + k);
      std::array<double, 10> a =
          encode_action(env.state().ee, 0.6 + tag);
      std::copy(a.begin(), a.end(), p.actions.step(k));
      p.poses.set_pose(k, 0, planar_pose(tag, 0.002, 0.0));
    }
    p.pose_valid = pose_valid;
    log.plan_a.push_back(p.actions);
    log.plan_p.push_back(p.poses);
    return p;
  };
}

XPolicy tiny_trained_policy(const Dataset& data, VariantKind v, int iters) {
  PolicyConfig pc;
  pc.obs_dim = data.obs_dim();
  pc.horizon = 4;
  pc.n_cond = 2;
  pc.feature_dim = 32;
  pc.enc_hidden = 32;
  pc.phi_hidden = 32;
  pc.denoiser_hidden = 64;
  pc.n_vis_tokens = 2;
  pc.diffusion_steps = 5;
  pc.variant = v;
  TrainConfig tc;
  tc.policy = pc;
  tc.batch_size = 16;
  tc.lr = 1e-3;
  tc.iterations = iters;
  tc.seed = 7;
  XPolicy policy(pc, Rng::derive(7, "init").next_u64());
  if (iters > 0) {
    std::vector<TrainPair> pairs = make_training_pairs(data, 4, 2);
    train_policy(policy, pairs, tc);
  }
  return policy;
}

}  // namespace

TEST_CASE("oracle mode names round trip") {
  for (OracleMode m : {OracleMode::Predicted, OracleMode::GroundTruth,
                       OracleMode::GroundTruthPlusNoise})
    CHECK(oracle_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(oracle_from_string("psychic"), ConfigError);
}

TEST_CASE("eval config validation") {
  PolicyConfig pc;
  pc.obs_dim = 29;
  pc.horizon = 8;
  pc.n_cond = 4;
  EvalConfig ec;
  CHECK(ec.resolve_exec(pc) == 4);
  ec.validate(pc);
  ec.exec_steps = 8;
  ec.validate(pc);

  EvalConfig bad = ec;
  bad.trials = 0;
  CHECK_THROWS_AS(bad.validate(pc), ConfigError);
  bad = ec;
  bad.exec_steps = 3;  // below n_cond: the condition window would be short
  CHECK_THROWS_AS(bad.validate(pc), ConfigError);
  bad = ec;
  bad.exec_steps = 9;
  CHECK_THROWS_AS(bad.validate(pc), ConfigError);
  bad = ec;
  bad.oracle_sigma_rot = -0.1;
  CHECK_THROWS_AS(bad.validate(pc), ConfigError);
  bad = ec;
  bad.occlusion_radius = -1.0;
  CHECK_THROWS_AS(bad.validate(pc), ConfigError);
}

TEST_CASE("expert through the receding-horizon loop keeps its success rate") {
  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  PlanContext ctx{8, 4, 1};
  EvalConfig ec;
  ec.trials = 100;
  ec.seed = 500;
  SuiteReport rep = run_suite_plan(expert_planner(8), ctx, task, ec, "expert");

  CHECK(rep.rows.size() == 100);
  int wins = 0;
  for (const TrialResult& t : rep.rows) {
    wins += t.success ? 1 : 0;
    CHECK(t.errors.empty());  // the wrapper exposes no pose stream
    CHECK(t.steps <= task.max_steps);
  }
  CHECK(wins >= 95);
  CHECK(rep.success_rate == doctest::Approx(wins / 100.0));
  CHECK(rep.mean_curve.empty());
  CHECK(rep.mean_steps < task.max_steps);
  CHECK(rep.std_steps > 0.0);
}

TEST_CASE("trial records one pose error per executed step") {
  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(task);
  PlanContext ctx{6, 3, 1};
  EvalConfig ec;

  CaptureLog log;
  TrialResult t = run_trial(capture_planner(log, 6, true), ctx, env, ec, 3);

  // Hold actions never move the object, so the trial runs to the step cap
  // and every step's error is the distance from the tagged fake pose to the
  // untouched true pose.
  CHECK(t.steps == task.max_steps);
  CHECK_FALSE(t.success);
  CHECK(t.errors.size() == static_cast<std::size_t>(t.steps));
  CHECK(env.state().step_count == t.steps);
  auto [rot0, trans0] = pose_error(log.plan_p[0].pose_at(0, 0), log.first_obj);
  CHECK(t.errors[0].rot == doctest::Approx(rot0));
  CHECK(t.errors[0].trans == doctest::Approx(trans0));
}

TEST_CASE("predicted-mode conditions chain the planner's own outputs") {
  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(task);
  PlanContext ctx{6, 3, 1};
  EvalConfig ec;  // exec resolves to n_cond = 3

  CaptureLog log;
  run_trial(capture_planner(log, 6, true), ctx, env, ec, 11);

  REQUIRE(log.plan_a.size() >= 3);
  CHECK_FALSE(log.cond_present[0]);
  for (std::size_t c = 1; c < log.plan_a.size(); ++c) {
    CHECK(log.cond_present[c]);
    const ActionTraj want_a = log.plan_a[c - 1].slice(0, 3);
    const PoseTraj want_p = log.plan_p[c - 1].slice(0, 3);
    CHECK(log.cond_a[c - 1].data == want_a.data);
    CHECK(log.cond_p[c - 1].data == want_p.data);
  }
}

TEST_CASE("planner without a pose stream runs unconditioned") {
  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(task);
  PlanContext ctx{6, 3, 1};
  EvalConfig ec;

  CaptureLog log;
  TrialResult t = run_trial(capture_planner(log, 6, false), ctx, env, ec, 11);
  CHECK(t.errors.empty());
  for (bool present : log.cond_present) CHECK_FALSE(present);
}

TEST_CASE("ground-truth oracle feeds simulator poses into the condition") {
  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(task);
  PlanContext ctx{6, 3, 1};
  EvalConfig ec;
  ec.oracle = OracleMode::GroundTruth;

  CaptureLog log;
  run_trial(capture_planner(log, 6, true), ctx, env, ec, 19);

  REQUIRE(log.cond_p.size() >= 2);
  for (const PoseTraj& cond : log.cond_p)
    for (int k = 0; k < cond.horizon; ++k) {
      auto [rot, trans] = pose_error(cond.pose_at(k, 0), log.first_obj);
      CHECK(rot == 0.0);  // object never moved and truth is copied bitwise
      CHECK(trans == 0.0);
    }
}

TEST_CASE("zero-noise oracle is bitwise the ground-truth oracle") {
  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  PlanContext ctx{6, 3, 1};

  auto conds = [&](OracleMode mode, double sigma_rot, double sigma_trans) {
    ToyEnv env(task);
    EvalConfig ec;
    ec.oracle = mode;
    ec.oracle_sigma_rot = sigma_rot;
    ec.oracle_sigma_trans = sigma_trans;
    CaptureLog log;
    run_trial(capture_planner(log, 6, true), ctx, env, ec, 23);
    return log.cond_p;
  };

  std::vector<PoseTraj> gt = conds(OracleMode::GroundTruth, 0.0, 0.0);
  std::vector<PoseTraj> zero =
      conds(OracleMode::GroundTruthPlusNoise, 0.0, 0.0);
  std::vector<PoseTraj> noisy =
      conds(OracleMode::GroundTruthPlusNoise, 0.2, 0.02);

  REQUIRE(gt.size() == zero.size());
  for (std::size_t i = 0; i < gt.size(); ++i)
    CHECK(gt[i].data == zero[i].data);

  REQUIRE_FALSE(noisy.empty());
  bool any_diff = false;
  for (std::size_t i = 0; i < std::min(gt.size(), noisy.size()); ++i)
    if (gt[i].data != noisy[i].data) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("occlusion override replaces the task radius for the run") {
  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  REQUIRE(task.occlusion_radius > 0.0);
  PlanContext ctx{8, 4, 1};
  EvalConfig ec;
  ec.trials = 3;
  ec.occlusion_radius = 0.0;
  SuiteReport rep = run_suite_plan(expert_planner(8), ctx, task, ec, "expert");
  CHECK(rep.occlusion_radius == 0.0);
  for (const TrialResult& t : rep.rows) CHECK(t.success);
}

TEST_CASE("suite aggregates and writers") {
  Dataset data = generate_demos(TaskSpec::make(TaskKind::PushToPose), 6, 1234);
  XPolicy policy = tiny_trained_policy(data, VariantKind::XFull, 200);

  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  EvalConfig ec;
  ec.trials = 5;
  ec.seed = 900;
  SuiteReport rep = run_suite(policy, task, ec);

  CHECK(rep.rows.size() == 5);
  CHECK(rep.exec_steps == 2);
  CHECK(rep.variant == "xfull");
  CHECK(rep.success_rate >= 0.0);
  CHECK(rep.success_rate <= 1.0);
  REQUIRE_FALSE(rep.mean_curve.empty());
  CHECK(rep.curve_counts[0] == 5);  // every trial executes a first step
  std::size_t max_len = 0;
  for (const TrialResult& t : rep.rows) {
    CHECK(t.errors.size() == static_cast<std::size_t>(t.steps));
    max_len = std::max(max_len, t.errors.size());
  }
  CHECK(rep.mean_curve.size() == max_len);
  for (std::size_t k = 0; k < rep.mean_curve.size(); ++k) {
    CHECK(std::isfinite(rep.mean_curve[k].rot));
    CHECK(std::isfinite(rep.mean_curve[k].trans));
    CHECK(rep.mean_curve[k].rot >= 0.0);
    CHECK(rep.mean_curve[k].trans >= 0.0);
    CHECK(rep.curve_counts[k] >= 1);
    if (k > 0) CHECK(rep.curve_counts[k] <= rep.curve_counts[k - 1]);
  }

  const fs::path dir = fs::temp_directory_path();
  const fs::path pj = dir / "xpol_eval_suite.json";
  const fs::path pc = dir / "xpol_eval_suite.csv";
  const fs::path pv = dir / "xpol_eval_curve.csv";
  write_suite_json(rep, pj);
  write_suite_csv(rep, pc);
  write_curve_csv(rep, pv);

  nlohmann::json j = nlohmann::json::parse(slurp(pj));
  CHECK(j.at("format") == "xpol-eval");
  CHECK(j.at("task") == "push-to-pose");
  CHECK(j.at("variant") == "xfull");
  CHECK(j.at("trials") == 5);
  CHECK(j.at("success_rate").get<double>() ==
        doctest::Approx(rep.success_rate));
  CHECK(j.at("rows").size() == 5);
  CHECK(j.at("mean_curve").size() == rep.mean_curve.size());

  std::string csv = slurp(pc);
  CHECK(csv.rfind("trial,seed,success,steps\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  std::string curve = slurp(pv);
  CHECK(curve.rfind("step,mean_rot_err,mean_trans_err,count\n", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') ==
        static_cast<long>(rep.mean_curve.size()) + 1);

  fs::remove(pj);
  fs::remove(pc);
  fs::remove(pv);
}

TEST_CASE("suite rerun is bitwise reproducible") {
  Dataset data = generate_demos(TaskSpec::make(TaskKind::PushToPose), 4, 77);
  XPolicy policy = tiny_trained_policy(data, VariantKind::XFull, 50);

  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  EvalConfig ec;
  ec.trials = 3;
  ec.seed = 40;
  SuiteReport a = run_suite(policy, task, ec);
  SuiteReport b = run_suite(policy, task, ec);

  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].success == b.rows[i].success);
    CHECK(a.rows[i].steps == b.rows[i].steps);
    REQUIRE(a.rows[i].errors.size() == b.rows[i].errors.size());
    for (std::size_t k = 0; k < a.rows[i].errors.size(); ++k) {
      CHECK(a.rows[i].errors[k].rot == b.rows[i].errors[k].rot);
      CHECK(a.rows[i].errors[k].trans == b.rows[i].errors[k].trans);
    }
  }

  const fs::path p1 = fs::temp_directory_path() / "xpol_eval_rerun1.json";
  const fs::path p2 = fs::temp_directory_path() / "xpol_eval_rerun2.json";
  write_suite_json(a, p1);
  write_suite_json(b, p2);
  CHECK(slurp(p1) == slurp(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("oracle modes cannot matter to a conditionless variant") {
  Dataset data = generate_demos(TaskSpec::make(TaskKind::PushToPose), 3, 55);
  XPolicy base = tiny_trained_policy(data, VariantKind::Base, 0);

  TaskSpec task = TaskSpec::make(TaskKind::PushToPose);
  EvalConfig ec;
  ec.trials = 3;
  ec.seed = 60;
  std::vector<OracleRow> rows = oracle_compare(base, task, ec);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].mode == OracleMode::Predicted);
  CHECK(rows[1].mode == OracleMode::GroundTruth);
  CHECK(rows[2].mode == OracleMode::GroundTruthPlusNoise);
  CHECK(rows[0].success_rate == rows[1].success_rate);
  CHECK(rows[0].success_rate == rows[2].success_rate);

  // Stronger: the whole trial stream is identical, not just the rate.
  EvalConfig gt = ec;
  gt.oracle = OracleMode::GroundTruth;
  SuiteReport ra = run_suite(base, task, ec);
  SuiteReport rb = run_suite(base, task, gt);
  for (std::size_t i = 0; i < ra.rows.size(); ++i)
    CHECK(ra.rows[i].steps == rb.rows[i].steps);
}

TEST_CASE("mean_ci95 matches the direct formula") {
  const std::array<double, 4> xs{1.0, 2.0, 3.0, 4.0};
  MeanCi ci = mean_ci95(xs);
  const double mean = (1.0 + 2.0 + 3.0 + 4.0) / 4.0;
  double ss = 0.0;
  for (double v : xs) ss += (v - mean) * (v - mean);
  const double half = 1.96 * std::sqrt(ss / 3.0) / 2.0;
  CHECK(ci.mean == doctest::Approx(mean));
  CHECK(ci.lo == doctest::Approx(mean - half));
  CHECK(ci.hi == doctest::Approx(mean + half));
  CHECK(ci.n == 4);

  const std::array<double, 1> one{0.7};
  MeanCi point = mean_ci95(one);
  CHECK(point.lo == point.mean);
  CHECK(point.hi == point.mean);

  CHECK_THROWS_AS(mean_ci95(std::span<const double>{}), ConfigError);
}

TEST_CASE("experiment row writers") {
  const fs::path dir = fs::temp_directory_path();
  const fs::path pa = dir / "xpol_eval_ablate.csv";
  const fs::path ps = dir / "xpol_eval_sweep.csv";
  const fs::path po = dir / "xpol_eval_oracle.csv";

  const std::array<AblateRow, 2> ar{
      AblateRow{VariantKind::XFull, 1, 0.9},
      AblateRow{VariantKind::Base, 1, 0.5},
  };
  const std::array<SweepRow, 2> sr{SweepRow{4, 1, 0.5}, SweepRow{8, 1, 0.75}};
  const std::array<OracleRow, 1> orr{OracleRow{OracleMode::GroundTruth, 1.0}};
  write_ablate_csv(ar, pa);
  write_sweep_csv(sr, ps);
  write_oracle_csv(orr, po);

  CHECK(slurp(pa) ==
        "variant,seed,success_rate\nxfull,1,0.90000000000000002\n"
        "base,1,0.5\n");
  CHECK(slurp(ps) ==
        "n_cond,seed,success_rate\n4,1,0.5\n8,1,0.75\n");
  CHECK(slurp(po) == "oracle,success_rate\nground_truth,1\n");

  fs::remove(pa);
  fs::remove(ps);
  fs::remove(po);
}

TEST_CASE("suite rejects a policy whose shape does not fit the task") {
  Dataset data = generate_demos(TaskSpec::make(TaskKind::PushToPose), 3, 55);
  XPolicy policy = tiny_trained_policy(data, VariantKind::XFull, 0);
  TaskSpec wide = TaskSpec::make(TaskKind::PushToPose);
  wide.n_objects = 2;  // observation grows by 10, policy stays at 29
  EvalConfig ec;
  ec.trials = 1;
  CHECK_THROWS_AS(run_suite(policy, wide, ec), ConfigError);
}
