#include "xpol/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace xpol {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::PushToPose:
      return "push-to-pose";
    case TaskKind::PickPlaceOriented:
      return "pick-place-oriented";
    case TaskKind::HookHang:
      return "hook-hang";
  }
  throw ConfigError("task kind: unknown enum value");
}

TaskKind task_from_string(const std::string& s) {
  if (s == "push-to-pose") return TaskKind::PushToPose;
  if (s == "pick-place-oriented") return TaskKind::PickPlaceOriented;
  if (s == "hook-hang") return TaskKind::HookHang;
  throw ConfigError("task kind: unknown name '" + s + "'");
}

TaskSpec TaskSpec::make(TaskKind k) {
  TaskSpec spec;
  spec.kind = k;
  if (k == TaskKind::PushToPose) spec.occlusion_radius = 0.06;
  return spec;
}

void TaskSpec::validate() const {
  if (n_objects < 1) throw ConfigError("TaskSpec.n_objects: must be >= 1");
  if (occlusion_radius < 0)
    throw ConfigError("TaskSpec.occlusion_radius: must be >= 0");
  if (attach_radius <= 0)
    throw ConfigError("TaskSpec.attach_radius: must be > 0");
  if (trans_cap <= 0) throw ConfigError("TaskSpec.trans_cap: must be > 0");
  if (rot_cap <= 0) throw ConfigError("TaskSpec.rot_cap: must be > 0");
  if (theta_succ <= 0) throw ConfigError("TaskSpec.theta_succ: must be > 0");
  if (d_succ <= 0) throw ConfigError("TaskSpec.d_succ: must be > 0");
  if (max_steps < 1) throw ConfigError("TaskSpec.max_steps: must be >= 1");
  if (spawn_half <= 0 || spawn_half >= workspace_half)
    throw ConfigError("TaskSpec.spawn_half: must be in (0, workspace_half)");
  if (min_goal_dist <= 0 || min_goal_dist >= 2 * spawn_half)
    throw ConfigError("TaskSpec.min_goal_dist: must be in (0, 2*spawn_half)");
  if (lift_z <= 0 || lift_z > workspace_z_max)
    throw ConfigError("TaskSpec.lift_z: must be in (0, workspace_z_max]");
  if (hang_offset <= 0) throw ConfigError("TaskSpec.hang_offset: must be > 0");
}

Pose9 planar_pose(double x, double y, double yaw, double z) {
  Pose9 p;
  p.t = {x, y, z};
  const double c = std::cos(yaw), s = std::sin(yaw);
  p.r.v = {c, s, 0, -s, c, 0};
  return p;
}

double pose_yaw(const Pose9& p) {
  const Mat3 R = rot6d_to_matrix(p.r);
  return std::atan2(R[3], R[0]);
}

double wrap_angle(double a) {
  double r = std::remainder(a, 2 * M_PI);
  if (r <= -M_PI) r += 2 * M_PI;
  return r;
}

namespace {

double dist3(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double dist_xy(const Vec3& a, const Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

void write_pose(double* out, const Pose9& p) {
  out[0] = p.t[0];
  out[1] = p.t[1];
  out[2] = p.t[2];
  for (int i = 0; i < 6; ++i) out[3 + i] = p.r.v[i];
}

Pose9 read_pose(const double* in) {
  Pose9 p;
  p.t = {in[0], in[1], in[2]};
  for (int i = 0; i < 6; ++i) p.r.v[i] = in[3 + i];
  return p;
}

}  // namespace

std::array<double, 10> encode_action(const Pose9& target, double aperture) {
  std::array<double, 10> a{};
  write_pose(a.data(), target);
  a[9] = aperture;
  return a;
}

double ObservationRecord::visibility(int object) const {
  return v[static_cast<std::size_t>(10 + 10 * object + 9)];
}

Pose9 ObservationRecord::object_pose(int object) const {
  return read_pose(v.data() + 10 + 10 * object);
}

Pose9 ObservationRecord::ee_pose() const { return read_pose(v.data()); }

Pose9 ObservationRecord::target_pose() const {
  return read_pose(v.data() + v.size() - 9);
}

ObservationRecord observe(const WorldState& s, const TaskSpec& spec,
                          double occlusion_radius) {
  ObservationRecord o;
  o.v.assign(static_cast<std::size_t>(spec.obs_dim()), 0.0);
  double* p = o.v.data();
  write_pose(p, s.ee);
  p[9] = s.aperture;
  for (int i = 0; i < spec.n_objects; ++i) {
    double* slot = p + 10 + 10 * i;
    const bool hidden = occlusion_radius > 0 &&
                        dist3(s.ee.t, s.objects[static_cast<std::size_t>(i)].t) <
                            occlusion_radius;
    if (hidden) {
      slot[9] = 0.0;  // slot[0..8] already zero
    } else {
      write_pose(slot, s.objects[static_cast<std::size_t>(i)]);
      slot[9] = 1.0;
    }
  }
  write_pose(p + 10 + 10 * spec.n_objects, s.target);
  return o;
}

ToyEnv::ToyEnv(const TaskSpec& spec) : spec_(spec) { spec_.validate(); }

ObservationRecord ToyEnv::reset(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "env.reset");
  auto sample_planar = [&](double half) {
    const double x = rng.uniform(-half, half);
    const double y = rng.uniform(-half, half);
    const double yaw = rng.uniform(-M_PI, M_PI);
    return planar_pose(x, y, yaw);
  };
  constexpr int kMaxTries = 10000;

  WorldState s;
  s.target = sample_planar(spec_.spawn_half);

  s.objects.resize(static_cast<std::size_t>(spec_.n_objects));
  int tries = 0;
  for (;;) {
    s.objects[0] = sample_planar(spec_.spawn_half);
    if (dist_xy(s.objects[0].t, s.target.t) >= spec_.min_goal_dist) break;
    if (++tries > kMaxTries)
      throw ConfigError("ToyEnv::reset: object sampling failed");
  }
  for (int i = 1; i < spec_.n_objects; ++i) {
    tries = 0;
    for (;;) {
      Pose9 cand = sample_planar(spec_.spawn_half);
      if (dist_xy(cand.t, s.objects[0].t) >= 0.05 &&
          dist_xy(cand.t, s.target.t) >= 0.05) {
        s.objects[static_cast<std::size_t>(i)] = cand;
        break;
      }
      if (++tries > kMaxTries)
        throw ConfigError("ToyEnv::reset: prop sampling failed");
    }
  }

  const double keep_out =
      std::max(spec_.occlusion_radius, spec_.attach_radius) + 0.02;
  tries = 0;
  for (;;) {
    Pose9 cand = sample_planar(spec_.spawn_half);
    if (dist_xy(cand.t, s.objects[0].t) >= keep_out) {
      s.ee = cand;
      break;
    }
    if (++tries > kMaxTries)
      throw ConfigError("ToyEnv::reset: ee sampling failed");
  }
  if (!spec_.planar()) s.ee.t[2] = spec_.lift_z;

  s.aperture = 1.0;
  s.attached = false;
  s.step_count = 0;
  state_ = s;
  done_ = false;
  success_ = false;
  return observe();
}

ObservationRecord ToyEnv::observe() const {
  return xpol::observe(state_, spec_, spec_.occlusion_radius);
}

StepResult ToyEnv::step(const std::array<double, 10>& action) {
  if (done_) return {observe(), true, success_, {}};

  StepInfo info;
  const double ee_yaw = pose_yaw(state_.ee);
  Vec3 tgt = state_.ee.t;
  double yaw_t = ee_yaw;
  double ap = state_.aperture;

  bool finite = true;
  for (double x : action)
    if (!std::isfinite(x)) finite = false;
  if (finite) {
    tgt = {action[0], action[1], action[2]};
    ap = std::clamp(action[9], 0.0, 1.0);
    bool rot_ok = true;
    try {
      const Mat3 R = rot6d_to_matrix(read_pose(action.data()).r);
      // Heading of the rotated x axis; unusable when that axis is vertical.
      if (R[0] * R[0] + R[3] * R[3] < 1e-12)
        rot_ok = false;
      else
        yaw_t = std::atan2(R[3], R[0]);
    } catch (const DegenerateRotation&) {
      rot_ok = false;
    }
    if (!rot_ok) info.bad_action = true;  // hold current yaw
  } else {
    info.bad_action = true;  // hold everything
  }

  // Planar tasks live on the table; z is task law, not a clamp event.
  for (int i = 0; i < 2; ++i) {
    const double c =
        std::clamp(tgt[static_cast<std::size_t>(i)], -spec_.workspace_half,
                   spec_.workspace_half);
    if (c != tgt[static_cast<std::size_t>(i)]) info.clamped = true;
    tgt[static_cast<std::size_t>(i)] = c;
  }
  if (spec_.planar()) {
    tgt[2] = 0.0;
  } else {
    const double c = std::clamp(tgt[2], 0.0, spec_.workspace_z_max);
    if (c != tgt[2]) info.clamped = true;
    tgt[2] = c;
  }

  Vec3 d = {tgt[0] - state_.ee.t[0], tgt[1] - state_.ee.t[1],
            tgt[2] - state_.ee.t[2]};
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (n > spec_.trans_cap) {
    const double f = spec_.trans_cap / n;
    state_.ee.t = {state_.ee.t[0] + d[0] * f, state_.ee.t[1] + d[1] * f,
                   state_.ee.t[2] + d[2] * f};
  } else {
    state_.ee.t = tgt;
  }
  const double dy =
      std::clamp(wrap_angle(yaw_t - ee_yaw), -spec_.rot_cap, spec_.rot_cap);
  if (dy != 0.0) {
    // Rebuild the rotation only on actual motion so a hold action leaves the
    // state bitwise untouched (the yaw->trig round trip is not exact).
    state_.ee = planar_pose(state_.ee.t[0], state_.ee.t[1], ee_yaw + dy,
                            state_.ee.t[2]);
  }
  state_.aperture = ap;

  if (state_.attached) {
    if (ap >= 0.5)
      state_.attached = false;  // open hand drops the object in place
    else
      state_.objects[0] = pose_compose(state_.ee, state_.attach_offset);
  }
  if (!state_.attached && ap < 0.5 &&
      dist3(state_.ee.t, state_.objects[0].t) <= spec_.attach_radius) {
    state_.attached = true;
    state_.attach_offset =
        pose_compose(pose_inverse(state_.ee), state_.objects[0]);
  }

  ++state_.step_count;
  const auto [th, dd] = pose_error(state_.objects[0], state_.target);
  success_ = th < spec_.theta_succ && dd < spec_.d_succ;
  done_ = success_ || state_.step_count >= spec_.max_steps;
  return {observe(), done_, success_, info};
}

namespace {

// Expert phase thresholds. kCloseDist sits inside attach_radius so the hand
// closes one step before contact is guaranteed; the reach tolerances are
// well under the success thresholds.
constexpr double kCloseDist = 0.02;
constexpr double kReachTol = 0.004;
constexpr double kGraspHeight = 0.015;
constexpr double kPlaceTolXY = 0.006;
constexpr double kYawTol = 0.05;

std::array<double, 10> expert_push(const WorldState& s, const TaskSpec&) {
  if (!s.attached) {
    const Pose9& obj = s.objects[0];
    // Approach the object center holding the spawn yaw; close at contact
    // range. The relative grasp pose this produces varies with approach
    // direction and yaw, so the transport goal below cannot be read off the
    // target alone.
    const Pose9 cmd =
        planar_pose(obj.t[0], obj.t[1], pose_yaw(s.ee), 0.0);
    const double ap = dist3(s.ee.t, obj.t) < kCloseDist ? 0.0 : 1.0;
    return encode_action(cmd, ap);
  }
  const Pose9 goal = pose_compose(s.target, pose_inverse(s.attach_offset));
  return encode_action(goal, 0.0);
}

std::array<double, 10> expert_pick(const WorldState& s, const TaskSpec& spec) {
  if (!s.attached) {
    const Pose9& obj = s.objects[0];
    Pose9 cmd = planar_pose(obj.t[0], obj.t[1], pose_yaw(s.ee),
                            obj.t[2] + kGraspHeight);
    const double ap = dist3(s.ee.t, cmd.t) < kReachTol ? 0.0 : 1.0;
    return encode_action(cmd, ap);
  }
  const Pose9 place = pose_compose(s.target, pose_inverse(s.attach_offset));
  const Pose9& obj = s.objects[0];
  const double horiz = dist_xy(obj.t, s.target.t);
  const double yaw_err =
      std::fabs(wrap_angle(pose_yaw(obj) - pose_yaw(s.target)));
  if (horiz > kPlaceTolXY || yaw_err > kYawTol) {
    // Transport at height; descend only once aligned above the target.
    Pose9 high = place;
    high.t[2] += spec.lift_z;
    return encode_action(high, 0.0);
  }
  return encode_action(place, 0.0);
}

std::array<double, 10> expert_hook(const WorldState& s, const TaskSpec& spec) {
  if (!s.attached) {
    const Pose9& obj = s.objects[0];
    const Pose9 cmd = planar_pose(obj.t[0], obj.t[1], pose_yaw(s.ee), 0.0);
    const double ap = dist3(s.ee.t, obj.t) < kCloseDist ? 0.0 : 1.0;
    return encode_action(cmd, ap);
  }
  // Object pose in the target frame: insert once on-axis and aligned, else
  // head for the pre-insert waypoint behind the target.
  const Pose9 rel = pose_compose(pose_inverse(s.target), s.objects[0]);
  const bool aligned =
      std::fabs(rel.t[1]) < kReachTol && std::fabs(pose_yaw(rel)) < kYawTol;
  Pose9 stage = s.target;
  if (!aligned) {
    Pose9 back;
    back.t = {-spec.hang_offset, 0.0, 0.0};
    stage = pose_compose(s.target, back);
  }
  const Pose9 goal = pose_compose(stage, pose_inverse(s.attach_offset));
  return encode_action(goal, 0.0);
}

}  // namespace

std::array<double, 10> expert_action(const WorldState& s,
                                     const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::PushToPose:
      return expert_push(s, spec);
    case TaskKind::PickPlaceOriented:
      return expert_pick(s, spec);
    case TaskKind::HookHang:
      return expert_hook(s, spec);
  }
  throw ConfigError("expert_action: unknown task kind");
}

}  // namespace xpol
