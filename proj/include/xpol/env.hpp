#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xpol/common.hpp"
#include "xpol/geom.hpp"

namespace xpol {

// PushToPose: planar block pushed/dragged to a target pose on the table.
// PickPlaceOriented: block grasped, lifted, placed at an oriented target.
// HookHang: planar two-stage placement — reach a pre-insert waypoint offset
//   along the target's -x axis, then slide in along that axis; orientation
//   errors at the waypoint turn into position errors at the goal.
enum class TaskKind { PushToPose, PickPlaceOriented, HookHang };

std::string to_string(TaskKind k);
TaskKind task_from_string(const std::string& s);  // ConfigError

struct TaskSpec {
  TaskKind kind = TaskKind::PushToPose;
  int n_objects = 1;  // object 0 is manipulated; the rest are inert props

  // Radius around the end effector inside which object poses are hidden
  // from the observation (0 disables). Deliberately much larger than
  // attach_radius so the whole contact phase happens blind.
  double occlusion_radius = 0.0;

  double attach_radius = 0.03;  // max ee-object distance for attachment
  double trans_cap = 0.01;      // per-step translation of the ee, meters
  double rot_cap = 0.15;        // per-step yaw change of the ee, radians
  double theta_succ = 0.15;     // success threshold, geodesic radians
  double d_succ = 0.02;         // success threshold, meters
  int max_steps = 300;

  double workspace_half = 0.30;  // ee positions clamped to |x|,|y| <= this
  double workspace_z_max = 0.20;
  double spawn_half = 0.22;     // object/target sampling half-range
  double min_goal_dist = 0.10;  // object-target separation at reset
  double lift_z = 0.05;         // transport height for PickPlaceOriented
  double hang_offset = 0.04;    // pre-insert offset for HookHang

  // Per-task defaults; PushToPose comes with occlusion enabled because the
  // blind contact phase is the whole point of that task.
  static TaskSpec make(TaskKind k);

  void validate() const;  // ConfigError naming the offending field

  bool planar() const { return kind != TaskKind::PickPlaceOriented; }
  // [ee pose 9 | aperture 1 | per object (pose 9, visibility 1) | target 9]
  int obs_dim() const { return 19 + 10 * n_objects; }
};

struct WorldState {
  Pose9 ee;
  double aperture = 1.0;  // 1 open, 0 closed
  std::vector<Pose9> objects;
  Pose9 target;  // goal pose for object 0
  bool attached = false;
  Pose9 attach_offset;  // ee^-1 * object0, captured at attachment
  int step_count = 0;
};

// Flat observation in the layout documented on TaskSpec::obs_dim. When the
// visibility entry for an object is 0 its nine pose slots are all zero.
struct ObservationRecord {
  std::vector<double> v;

  double visibility(int object) const;
  Pose9 object_pose(int object) const;  // all-zero slice when hidden
  Pose9 ee_pose() const;
  Pose9 target_pose() const;
};

struct StepInfo {
  bool clamped = false;     // commanded ee position left the workspace
  bool bad_action = false;  // non-finite values or unusable rotation
};

struct StepResult {
  ObservationRecord obs;
  bool done = false;
  bool success = false;
  StepInfo info;
};

// Yaw-only planar pose helpers. Every rotation this simulator produces is a
// rotation about z, so the scalar yaw is a faithful coordinate.
Pose9 planar_pose(double x, double y, double yaw, double z = 0.0);
double pose_yaw(const Pose9& p);
double wrap_angle(double a);  // into (-pi, pi]

// Action layout: target ee pose (9, Pose9 order) then commanded aperture.
std::array<double, 10> encode_action(const Pose9& target, double aperture);

// Observation with an explicit occlusion radius; the member observe() uses
// the spec's radius.
ObservationRecord observe(const WorldState& s, const TaskSpec& spec,
                          double occlusion_radius);

// Deterministic kinematic environment. One step moves the ee toward the
// commanded pose under the translation/rotation caps, applies the aperture,
// then updates the attachment: a closed aperture within attach_radius of
// object 0 grabs it (capturing the relative pose), an open aperture drops
// it, and while attached the object rigidly follows the ee. Success when
// object 0 is within (theta_succ, d_succ) of the target.
class ToyEnv {
 public:
  explicit ToyEnv(const TaskSpec& spec);  // ConfigError via validate()

  // Samples a fresh episode: object/target/ee poses from the spec ranges,
  // same seed giving a bitwise-identical state. The ee spawns outside the
  // occlusion radius so every episode opens with the object visible.
  ObservationRecord reset(std::uint64_t seed);

  // Never throws: malformed actions are neutralized and flagged in info,
  // out-of-bounds targets are clamped and flagged. Calling after done is a
  // no-op that returns the terminal observation again.
  StepResult step(const std::array<double, 10>& action);

  ObservationRecord observe() const;
  const WorldState& state() const { return state_; }
  WorldState& mutable_state() { return state_; }  // test hook
  const TaskSpec& spec() const { return spec_; }
  bool done() const { return done_; }
  bool success() const { return success_; }

 private:
  TaskSpec spec_;
  WorldState state_;
  bool done_ = false;
  bool success_ = false;
};

// Stateless scripted expert: the phase (approach / close / transport /
// insert) is re-derived from the world state every call, so replaying the
// same states yields the same actions. Commands waypoint poses and lets the
// per-step caps do the interpolation.
std::array<double, 10> expert_action(const WorldState& s, const TaskSpec& spec);

}  // namespace xpol
