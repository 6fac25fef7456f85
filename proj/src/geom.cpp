#include "xpol/geom.hpp"

#include <algorithm>
#include <cmath>

namespace xpol {

namespace {

double dot3(const double* a, const double* b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

double norm3(const double* a) { return std::sqrt(dot3(a, a)); }

void cross3(const double* a, const double* b, double* out) {
  out[0] = a[1] * b[2] - a[2] * b[1];
  out[1] = a[2] * b[0] - a[0] * b[2];
  out[2] = a[0] * b[1] - a[1] * b[0];
}

constexpr double kDegenerateEps = 1e-12;

}  // namespace

Mat3 rot6d_to_matrix(const Rot6d& r) {
  const double* a1 = r.v.data();
  const double* a2 = r.v.data() + 3;

  const double n1 = norm3(a1);
  if (!(n1 > kDegenerateEps)) {
    throw DegenerateRotation("rot6d_to_matrix: first column norm <= 1e-12");
  }
  double b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};

  const double proj = dot3(b1, a2);
  double u2[3] = {a2[0] - proj * b1[0], a2[1] - proj * b1[1],
                  a2[2] - proj * b1[2]};
  const double n2 = norm3(u2);
  if (!(n2 > kDegenerateEps)) {
    throw DegenerateRotation("rot6d_to_matrix: columns parallel within 1e-12");
  }
  double b2[3] = {u2[0] / n2, u2[1] / n2, u2[2] / n2};

  double b3[3];
  cross3(b1, b2, b3);

  // b1, b2, b3 are the columns of R.
  return Mat3{b1[0], b2[0], b3[0],  //
              b1[1], b2[1], b3[1],  //
              b1[2], b2[2], b3[2]};
}

Rot6d matrix_to_rot6d(const Mat3& R) {
  const Mat3 rrt = mat3_mul(R, mat3_transpose(R));
  double max_dev = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double expected = (i == j) ? 1.0 : 0.0;
      max_dev = std::max(max_dev, std::abs(rrt[3 * i + j] - expected));
    }
  }
  if (max_dev > 1e-6 || std::abs(mat3_det(R) - 1.0) > 1e-6) {
    throw NotARotation("matrix_to_rot6d: input fails orthonormality within 1e-6");
  }
  Rot6d out;
  out.v = {R[0], R[3], R[6], R[1], R[4], R[7]};
  return out;
}

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[3 * i + k] * b[3 * k + j];
      c[3 * i + j] = s;
    }
  }
  return c;
}

Mat3 mat3_transpose(const Mat3& a) {
  return Mat3{a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

Vec3 mat3_apply(const Mat3& a, const Vec3& v) {
  return Vec3{a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
              a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
              a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

double mat3_det(const Mat3& a) {
  return a[0] * (a[4] * a[8] - a[5] * a[7]) -
         a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Pose9 pose_compose(const Pose9& a, const Pose9& b) {
  const Mat3 Ra = rot6d_to_matrix(a.r);
  const Mat3 Rb = rot6d_to_matrix(b.r);
  Pose9 out;
  const Vec3 rb = mat3_apply(Ra, b.t);
  out.t = {a.t[0] + rb[0], a.t[1] + rb[1], a.t[2] + rb[2]};
  out.r = matrix_to_rot6d(mat3_mul(Ra, Rb));
  return out;
}

Pose9 pose_inverse(const Pose9& p) {
  const Mat3 R = rot6d_to_matrix(p.r);
  const Mat3 Rt = mat3_transpose(R);
  Pose9 out;
  const Vec3 nt = mat3_apply(Rt, p.t);
  out.t = {-nt[0], -nt[1], -nt[2]};
  out.r = matrix_to_rot6d(Rt);
  return out;
}

std::pair<double, double> pose_error(const Pose9& a, const Pose9& b) {
  const Mat3 Ra = rot6d_to_matrix(a.r);
  const Mat3 Rb = rot6d_to_matrix(b.r);
  const Mat3 rel = mat3_mul(mat3_transpose(Ra), Rb);
  // theta = atan2(|skew(rel)|, (tr - 1)/2); stable at both ends of [0, pi].
  const double c = 0.5 * (rel[0] + rel[4] + rel[8] - 1.0);
  const double sx = 0.5 * (rel[7] - rel[5]);
  const double sy = 0.5 * (rel[2] - rel[6]);
  const double sz = 0.5 * (rel[3] - rel[1]);
  const double s = std::sqrt(sx * sx + sy * sy + sz * sz);
  const double rot_err = std::atan2(s, c);

  const double dx = a.t[0] - b.t[0];
  const double dy = a.t[1] - b.t[1];
  const double dz = a.t[2] - b.t[2];
  return {rot_err, std::sqrt(dx * dx + dy * dy + dz * dz)};
}

namespace {

Mat3 axis_angle_matrix(const Vec3& axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return Mat3{t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
              t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
              t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

}  // namespace

Pose9 perturb_pose(const Pose9& p, double sigma_rot, double sigma_trans,
                   Rng& rng) {
  Pose9 out = p;
  if (sigma_rot > 0.0) {
    const Vec3 axis = rng.unit_vector();
    const double angle = rng.normal(0.0, sigma_rot);
    const Mat3 R = rot6d_to_matrix(p.r);
    out.r = matrix_to_rot6d(mat3_mul(R, axis_angle_matrix(axis, angle)));
  }
  if (sigma_trans > 0.0) {
    for (int i = 0; i < 3; ++i) out.t[i] = p.t[i] + rng.normal(0.0, sigma_trans);
  }
  return out;
}

PoseTraj::PoseTraj(int horizon_, int n_objects_)
    : horizon(horizon_), n_objects(n_objects_) {
  if (horizon < 0 || n_objects < 1) {
    throw InvalidRange("PoseTraj: horizon must be >= 0 and n_objects >= 1");
  }
  data.assign(static_cast<std::size_t>(horizon) * kPoseDim * n_objects, 0.0);
  for (int s = 0; s < horizon; ++s) {
    for (int o = 0; o < n_objects; ++o) set_pose(s, o, Pose9::identity());
  }
}

Pose9 PoseTraj::pose_at(int step, int object) const {
  if (step < 0 || step >= horizon || object < 0 || object >= n_objects) {
    throw IndexOutOfRange("PoseTraj::pose_at: index out of range");
  }
  const double* p =
      data.data() + (static_cast<std::size_t>(step) * n_objects + object) * kPoseDim;
  Pose9 out;
  out.t = {p[0], p[1], p[2]};
  std::copy(p + 3, p + 9, out.r.v.begin());
  return out;
}

void PoseTraj::set_pose(int step, int object, const Pose9& p) {
  if (step < 0 || step >= horizon || object < 0 || object >= n_objects) {
    throw IndexOutOfRange("PoseTraj::set_pose: index out of range");
  }
  double* dst =
      data.data() + (static_cast<std::size_t>(step) * n_objects + object) * kPoseDim;
  dst[0] = p.t[0];
  dst[1] = p.t[1];
  dst[2] = p.t[2];
  std::copy(p.r.v.begin(), p.r.v.end(), dst + 3);
}

PoseTraj PoseTraj::head(int count) const { return slice(0, count); }

PoseTraj PoseTraj::slice(int start, int count) const {
  if (start < 0 || count < 0 || start + count > horizon) {
    throw IndexOutOfRange("PoseTraj::slice: range out of bounds");
  }
  PoseTraj out(count, n_objects);
  const std::size_t sd = static_cast<std::size_t>(step_dim());
  std::copy(data.begin() + start * sd, data.begin() + (start + count) * sd,
            out.data.begin());
  return out;
}

ActionTraj::ActionTraj(int horizon_, int action_dim_)
    : horizon(horizon_), action_dim(action_dim_) {
  if (horizon < 0 || action_dim < 1) {
    throw InvalidRange("ActionTraj: horizon must be >= 0 and action_dim >= 1");
  }
  data.assign(static_cast<std::size_t>(horizon) * action_dim, 0.0);
}

ActionTraj ActionTraj::head(int count) const { return slice(0, count); }

ActionTraj ActionTraj::slice(int start, int count) const {
  if (start < 0 || count < 0 || start + count > horizon) {
    throw IndexOutOfRange("ActionTraj::slice: range out of bounds");
  }
  ActionTraj out(count, action_dim);
  const std::size_t ad = static_cast<std::size_t>(action_dim);
  std::copy(data.begin() + start * ad, data.begin() + (start + count) * ad,
            out.data.begin());
  return out;
}

PoseTraj perturb_traj(const PoseTraj& traj, const PerturbSigmas& s, Rng& rng) {
  PoseTraj out = traj;
  if (s.rot == 0.0 && s.trans == 0.0) return out;
  for (int step = 0; step < traj.horizon; ++step) {
    for (int obj = 0; obj < traj.n_objects; ++obj) {
      out.set_pose(step, obj, perturb_pose(traj.pose_at(step, obj), s.rot,
                                           s.trans, rng));
    }
  }
  return out;
}

ActionTraj perturb_traj(const ActionTraj& traj, const PerturbSigmas& s,
                        Rng& rng) {
  if (traj.action_dim < 9) {
    throw ShapeMismatch("perturb_traj: action_dim < 9 has no pose slice");
  }
  ActionTraj out = traj;
  if (s.rot == 0.0 && s.trans == 0.0 && s.extra == 0.0) return out;
  for (int step = 0; step < traj.horizon; ++step) {
    const double* src = traj.step(step);
    double* dst = out.step(step);
    Pose9 p;
    p.t = {src[0], src[1], src[2]};
    std::copy(src + 3, src + 9, p.r.v.begin());
    const Pose9 q = perturb_pose(p, s.rot, s.trans, rng);
    dst[0] = q.t[0];
    dst[1] = q.t[1];
    dst[2] = q.t[2];
    std::copy(q.r.v.begin(), q.r.v.end(), dst + 3);
    if (s.extra > 0.0) {
      for (int k = 9; k < traj.action_dim; ++k) {
        dst[k] = std::clamp(src[k] + rng.normal(0.0, s.extra), 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace xpol
