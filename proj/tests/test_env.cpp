#include "xpol/env.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "xpol/geom.hpp"

using namespace xpol;

namespace {

struct Rollout {
  bool success = false;
  int steps = 0;
  std::vector<ObservationRecord> obs;  // one per executed step, post-step
};

Rollout run_expert(ToyEnv& env, std::uint64_t seed) {
  Rollout r;
  env.reset(seed);
  while (!env.done()) {
    const auto a = expert_action(env.state(), env.spec());
    StepResult res = env.step(a);
    r.obs.push_back(res.obs);
    ++r.steps;
    if (res.done) {
      r.success = res.success;
      break;
    }
  }
  return r;
}

std::array<double, 10> hold_action(const WorldState& s) {
  return encode_action(s.ee, s.aperture);
}

}  // namespace

TEST_CASE("task names round trip and bad names are rejected") {
  for (TaskKind k : {TaskKind::PushToPose, TaskKind::PickPlaceOriented,
                     TaskKind::HookHang}) {
    CHECK(task_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(task_from_string("push"), ConfigError);
}

TEST_CASE("task spec validation names the offending field") {
  TaskSpec s = TaskSpec::make(TaskKind::PushToPose);
  s.validate();

  TaskSpec bad = s;
  bad.n_objects = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.trans_cap = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.spawn_half = s.workspace_half;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.min_goal_dist = 2 * s.spawn_half;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("reset is reproducible and seeds are non-degenerate") {
  ToyEnv a(TaskSpec::make(TaskKind::PushToPose));
  ToyEnv b(TaskSpec::make(TaskKind::PushToPose));
  ObservationRecord oa = a.reset(7);
  ObservationRecord ob = b.reset(7);
  CHECK(oa.v == ob.v);

  ObservationRecord oc = b.reset(8);
  CHECK(oa.v != oc.v);
}

TEST_CASE("reset keeps every sampled pose inside the configured ranges") {
  TaskSpec spec = TaskSpec::make(TaskKind::PushToPose);
  spec.n_objects = 2;
  ToyEnv env(spec);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    env.reset(seed);
    const WorldState& s = env.state();
    for (const Pose9& p : s.objects) {
      CHECK(std::fabs(p.t[0]) <= spec.spawn_half);
      CHECK(std::fabs(p.t[1]) <= spec.spawn_half);
      CHECK(p.t[2] == 0.0);
    }
    CHECK(std::hypot(s.objects[0].t[0] - s.target.t[0],
                     s.objects[0].t[1] - s.target.t[1]) >=
          spec.min_goal_dist);
    // The episode must open with the manipulated object visible.
    const double d = std::hypot(s.ee.t[0] - s.objects[0].t[0],
                                s.ee.t[1] - s.objects[0].t[1]);
    CHECK(d >= spec.occlusion_radius);
    CHECK(s.aperture == 1.0);
    CHECK_FALSE(s.attached);
    CHECK(s.step_count == 0);
    CHECK(env.observe().visibility(0) == 1.0);
  }
}

TEST_CASE("holding the current pose changes nothing but the step counter") {
  ToyEnv env(TaskSpec::make(TaskKind::PushToPose));
  ObservationRecord before = env.reset(3);
  StepResult res = env.step(hold_action(env.state()));
  CHECK(res.obs.v == before.v);
  CHECK(env.state().step_count == 1);
  CHECK_FALSE(res.done);
  CHECK_FALSE(res.info.clamped);
  CHECK_FALSE(res.info.bad_action);
}

TEST_CASE("an object already at the target succeeds on the first step") {
  ToyEnv env(TaskSpec::make(TaskKind::PushToPose));
  env.reset(4);
  env.mutable_state().objects[0] = env.state().target;
  StepResult res = env.step(hold_action(env.state()));
  CHECK(res.success);
  CHECK(res.done);
}

TEST_CASE("per-step translation and rotation caps bind exactly") {
  TaskSpec spec = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(spec);
  env.reset(5);
  const Pose9 ee0 = env.state().ee;
  const double yaw0 = pose_yaw(ee0);

  // Far target straight along +x with a large yaw change requested.
  const Pose9 cmd = planar_pose(ee0.t[0] + 0.2, ee0.t[1], yaw0 + 1.0);
  env.step(encode_action(cmd, 1.0));
  const Pose9& ee1 = env.state().ee;
  CHECK(ee1.t[0] - ee0.t[0] == doctest::Approx(spec.trans_cap).epsilon(1e-12));
  CHECK(ee1.t[1] == ee0.t[1]);
  CHECK(wrap_angle(pose_yaw(ee1) - yaw0) ==
        doctest::Approx(spec.rot_cap).epsilon(1e-12));
}

TEST_CASE("out-of-workspace commands are clamped and flagged") {
  TaskSpec spec = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(spec);
  env.reset(6);
  const Pose9 cmd = planar_pose(5.0, -5.0, 0.0);
  for (int i = 0; i < 400 && !env.done(); ++i) {
    StepResult res = env.step(encode_action(cmd, 1.0));
    CHECK(res.info.clamped);
    CHECK(std::fabs(env.state().ee.t[0]) <= spec.workspace_half);
    CHECK(std::fabs(env.state().ee.t[1]) <= spec.workspace_half);
  }
  // After enough steps the ee parks on the workspace corner.
  CHECK(env.state().ee.t[0] == doctest::Approx(spec.workspace_half));
  CHECK(env.state().ee.t[1] == doctest::Approx(-spec.workspace_half));
}

TEST_CASE("planar tasks pin commanded z to the table without flagging") {
  ToyEnv env(TaskSpec::make(TaskKind::PushToPose));
  env.reset(17);
  Pose9 cmd = env.state().ee;
  cmd.t[2] = 0.1;
  StepResult res = env.step(encode_action(cmd, 1.0));
  CHECK_FALSE(res.info.clamped);
  CHECK(env.state().ee.t[2] == 0.0);
}

TEST_CASE("malformed actions are neutralized and flagged") {
  ToyEnv env(TaskSpec::make(TaskKind::PushToPose));
  env.reset(9);
  const Pose9 ee0 = env.state().ee;

  SUBCASE("non-finite values hold everything") {
    auto a = hold_action(env.state());
    a[0] = std::numeric_limits<double>::quiet_NaN();
    StepResult res = env.step(a);
    CHECK(res.info.bad_action);
    CHECK(env.state().ee.t == ee0.t);
    CHECK(env.state().ee.r.v == ee0.r.v);
    CHECK(env.state().step_count == 1);
  }

  SUBCASE("a degenerate rotation keeps the yaw but not the translation") {
    Pose9 cmd = ee0;
    cmd.t[0] += 0.1;
    cmd.r.v = {1, 0, 0, 1, 0, 0};  // parallel columns
    StepResult res = env.step(encode_action(cmd, 1.0));
    CHECK(res.info.bad_action);
    CHECK(env.state().ee.t[0] > ee0.t[0]);
    CHECK(env.state().ee.r.v == ee0.r.v);
  }
}

TEST_CASE("attachment is rigid and release drops the object in place") {
  TaskSpec spec = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(spec);
  env.reset(11);
  // Drive the expert until attachment.
  int guard = 0;
  while (!env.state().attached) {
    REQUIRE(++guard < spec.max_steps);
    env.step(expert_action(env.state(), spec));
  }
  // Rigid follow for a few transport steps.
  for (int i = 0; i < 10; ++i) {
    env.step(expert_action(env.state(), spec));
    if (!env.state().attached) break;
    const Pose9 follow =
        pose_compose(env.state().ee, env.state().attach_offset);
    const auto [th, d] = pose_error(follow, env.state().objects[0]);
    CHECK(th < 1e-9);
    CHECK(d < 1e-9);
  }
  // Open the hand: the object stays where it was.
  const Pose9 before = env.state().objects[0];
  Pose9 away = env.state().ee;
  away.t[0] += 0.05;
  env.step(encode_action(away, 1.0));
  CHECK_FALSE(env.state().attached);
  const auto [th, d] = pose_error(before, env.state().objects[0]);
  CHECK(th == 0.0);
  CHECK(d == 0.0);
}

TEST_CASE("occlusion zeroes the pose slice consistently") {
  TaskSpec spec = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(spec);
  env.reset(12);

  SUBCASE("radius zero disables occlusion entirely") {
    WorldState s = env.state();
    s.ee = s.objects[0];  // right on top of the object
    ObservationRecord o = observe(s, spec, 0.0);
    CHECK(o.visibility(0) == 1.0);
  }

  SUBCASE("inside the radius the slice is zeroed with visibility 0") {
    WorldState s = env.state();
    s.ee = s.objects[0];
    ObservationRecord o = observe(s, spec, spec.occlusion_radius);
    CHECK(o.visibility(0) == 0.0);
    for (int i = 0; i < 9; ++i) CHECK(o.v[static_cast<std::size_t>(10 + i)] == 0.0);
  }
}

TEST_CASE("a straight pass over the object occludes one contiguous window") {
  TaskSpec spec = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(spec);
  env.reset(13);
  WorldState& s = env.mutable_state();
  s.ee = planar_pose(-0.2, 0.0, 0.0);
  s.objects[0] = planar_pose(0.0, 0.0, 1.0);
  s.target = planar_pose(0.2, 0.15, -2.0);  // far from the object

  std::vector<int> vis;
  const Pose9 cmd = planar_pose(0.25, 0.0, 0.0);
  for (int i = 0; i < 50; ++i) {
    StepResult res = env.step(encode_action(cmd, 1.0));  // open: no attach
    vis.push_back(res.obs.visibility(0) == 1.0 ? 1 : 0);
  }
  CHECK(vis.front() == 1);
  CHECK(vis.back() == 1);
  int down = 0, up = 0, hidden = 0;
  for (std::size_t i = 1; i < vis.size(); ++i) {
    if (vis[i - 1] == 1 && vis[i] == 0) ++down;
    if (vis[i - 1] == 0 && vis[i] == 1) ++up;
  }
  for (int b : vis) hidden += 1 - b;
  CHECK(down == 1);
  CHECK(up == 1);
  CHECK(hidden >= 9);
  // The sweep never moved the object.
  const auto [th, d] = pose_error(env.state().objects[0],
                                  planar_pose(0.0, 0.0, 1.0));
  CHECK(th == 0.0);
  CHECK(d == 0.0);
}

TEST_CASE("scripted experts solve at least 95 of 100 seeds per task") {
  for (TaskKind k : {TaskKind::PushToPose, TaskKind::PickPlaceOriented,
                     TaskKind::HookHang}) {
    CAPTURE(to_string(k));
    ToyEnv env(TaskSpec::make(k));
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rollout r = run_expert(env, seed);
      wins += r.success ? 1 : 0;
      CHECK(r.steps <= env.spec().max_steps);
      // Rigidity invariant along the way is covered by the dedicated case;
      // here we only demand the calibration gate.
    }
    CHECK(wins >= 95);
  }
}

TEST_CASE("expert pushes spend a long contiguous stretch occluded") {
  TaskSpec spec = TaskSpec::make(TaskKind::PushToPose);
  ToyEnv env(spec);
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    Rollout r = run_expert(env, seed);
    REQUIRE(r.success);
    int longest = 0, cur = 0, hidden = 0;
    for (const ObservationRecord& o : r.obs) {
      if (o.visibility(0) == 0.0) {
        ++hidden;
        longest = std::max(longest, ++cur);
      } else {
        cur = 0;
      }
    }
    const double frac = static_cast<double>(hidden) /
                        static_cast<double>(r.obs.size());
    // The whole contact phase happens blind: much longer than one
    // prediction horizon. The spawn keep-out guarantees the approach keeps
    // at least a couple of steps visible.
    CHECK(longest >= 10);
    CHECK(frac > 0.1);
    CHECK(hidden < static_cast<int>(r.obs.size()));
    // The episode ends inside the occluded contact phase.
    CHECK(r.obs.back().visibility(0) == 0.0);
  }
}

TEST_CASE("expert rollouts are bitwise reproducible") {
  TaskSpec spec = TaskSpec::make(TaskKind::HookHang);
  ToyEnv a(spec);
  ToyEnv b(spec);
  Rollout ra = run_expert(a, 33);
  Rollout rb = run_expert(b, 33);
  REQUIRE(ra.obs.size() == rb.obs.size());
  for (std::size_t i = 0; i < ra.obs.size(); ++i)
    CHECK(ra.obs[i].v == rb.obs[i].v);
  CHECK(ra.success == rb.success);
}

TEST_CASE("stepping a finished episode is a no-op") {
  ToyEnv env(TaskSpec::make(TaskKind::PushToPose));
  env.reset(14);
  env.mutable_state().objects[0] = env.state().target;
  StepResult first = env.step(hold_action(env.state()));
  REQUIRE(first.done);
  const int count = env.state().step_count;
  StepResult again = env.step(hold_action(env.state()));
  CHECK(again.done);
  CHECK(again.success);
  CHECK(env.state().step_count == count);
}
