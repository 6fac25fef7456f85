#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "xpol/common.hpp"

namespace xpol {

using Vec3 = std::array<double, 3>;
// Row-major 3x3 matrix.
using Mat3 = std::array<double, 9>;

// Continuous 6D rotation encoding: the first two columns of a rotation
// matrix, stored column-after-column (a1x,a1y,a1z, a2x,a2y,a2z), before
// orthonormalization.
struct Rot6d {
  std::array<double, 6> v{1, 0, 0, 0, 1, 0};
};

// One rigid pose: 3D translation in meters plus the 6D rotation encoding.
// Serialized order is (tx,ty,tz, r1..r6).
struct Pose9 {
  Vec3 t{0, 0, 0};
  Rot6d r{};

  static Pose9 identity() { return Pose9{}; }
};

// Decodes the 6D encoding via Gram-Schmidt:
//   b1 = normalize(a1), b2 = normalize(a2 - (b1.a2) b1), b3 = b1 x b2,
// assembled as the columns of the result.
// Throws DegenerateRotation when |a1| <= 1e-12 or the residual of a2 after
// projection is <= 1e-12 (parallel columns). Degenerate inputs are the
// caller's problem to re-sample or reject.
Mat3 rot6d_to_matrix(const Rot6d& r);

// Returns the first two columns of R. Throws NotARotation when R fails the
// orthonormality check (|R R^T - I| or |det - 1| beyond 1e-6).
Rot6d matrix_to_rot6d(const Mat3& R);

Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Mat3 mat3_transpose(const Mat3& a);
Vec3 mat3_apply(const Mat3& a, const Vec3& v);
double mat3_det(const Mat3& a);

// SE(3) composition: (a * b).t = R_a b.t + a.t, (a * b).R = R_a R_b.
Pose9 pose_compose(const Pose9& a, const Pose9& b);
Pose9 pose_inverse(const Pose9& p);

// (geodesic angle of R_a^T R_b in [0, pi], Euclidean translation distance).
std::pair<double, double> pose_error(const Pose9& a, const Pose9& b);

// Gaussian pose perturbation: rotation by a random-axis angle drawn from
// N(0, sigma_rot^2), applied on the right (body frame); translation by
// independent N(0, sigma_trans^2) per axis. A zero sigma leaves the
// corresponding part bitwise untouched.
Pose9 perturb_pose(const Pose9& p, double sigma_rot, double sigma_trans,
                   Rng& rng);

// Fixed-horizon pose sequence for n_objects rigid bodies. Layout is
// step-major, object-major within a step: step 0 object 0, step 0 object 1,
// ..., each as 9 doubles in Pose9 serialization order.
struct PoseTraj {
  int horizon = 0;
  int n_objects = 1;
  std::vector<double> data;  // horizon * 9 * n_objects

  PoseTraj() = default;
  PoseTraj(int horizon, int n_objects);

  static constexpr int kPoseDim = 9;
  int step_dim() const { return kPoseDim * n_objects; }

  Pose9 pose_at(int step, int object = 0) const;
  void set_pose(int step, int object, const Pose9& p);

  // First `count` steps as a new trajectory.
  PoseTraj head(int count) const;
  PoseTraj slice(int start, int count) const;
};

// Fixed-horizon action sequence. The toy action layout is a target
// end-effector pose (9, same order as Pose9) followed by a gripper aperture
// in [0, 1]; action_dim = 10.
struct ActionTraj {
  int horizon = 0;
  int action_dim = 10;
  std::vector<double> data;  // horizon * action_dim

  ActionTraj() = default;
  ActionTraj(int horizon, int action_dim);

  double* step(int i) { return data.data() + static_cast<std::size_t>(i) * action_dim; }
  const double* step(int i) const {
    return data.data() + static_cast<std::size_t>(i) * action_dim;
  }

  ActionTraj head(int count) const;
  ActionTraj slice(int start, int count) const;
};

struct PerturbSigmas {
  double rot = 0.0;    // radians
  double trans = 0.0;  // meters
  double extra = 0.0;  // std for non-pose action components (gripper)
};

// Applies perturb_pose per step per object.
PoseTraj perturb_traj(const PoseTraj& traj, const PerturbSigmas& s, Rng& rng);

// Pose part of each action step perturbed like a pose; remaining components
// get N(0, extra^2) noise and are clamped back to [0, 1] (gripper aperture).
// Actions with fewer than 9 leading pose dims are rejected (ShapeMismatch).
ActionTraj perturb_traj(const ActionTraj& traj, const PerturbSigmas& s,
                        Rng& rng);

}  // namespace xpol
