#include "xpol/geom.hpp"

#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"

using namespace xpol;

namespace {

Rot6d rot6d_from(std::array<double, 6> v) {
  Rot6d r;
  r.v = v;
  return r;
}

Pose9 random_pose(Rng& rng) {
  Pose9 p;
  for (int i = 0; i < 3; ++i) p.t[i] = rng.uniform(-1.0, 1.0);
  const auto q = oracle::random_unit_quat(rng);
  p.r = matrix_to_rot6d(oracle::quat_to_matrix(q));
  return p;
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
  double m = 0;
  for (int i = 0; i < 9; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("rot6d decode: already orthonormal input gives identity") {
  const Mat3 R = rot6d_to_matrix(rot6d_from({1, 0, 0, 0, 1, 0}));
  Mat3 I{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(max_abs_diff(R, I) == doctest::Approx(0.0));
}

TEST_CASE("rot6d decode: normalization collapses column scales") {
  const Mat3 R = rot6d_to_matrix(rot6d_from({2, 0, 0, 0, 3, 0}));
  Mat3 I{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(max_abs_diff(R, I) < 1e-15);
}

TEST_CASE("rot6d decode/encode round trip over 1000 random rotations") {
  Rng rng(20260825);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = oracle::quat_to_matrix(oracle::random_unit_quat(rng));
    const Rot6d enc = matrix_to_rot6d(R);
    const Mat3 dec = rot6d_to_matrix(enc);
    CHECK(max_abs_diff(dec, R) < 1e-9);
    // Re-encoding an orthonormal frame is the identity on the 6 numbers.
    const Rot6d enc2 = matrix_to_rot6d(dec);
    for (int k = 0; k < 6; ++k) CHECK(std::abs(enc2.v[k] - enc.v[k]) < 1e-9);
    CHECK(std::abs(mat3_det(dec) - 1.0) < 1e-9);
    const Mat3 rrt = mat3_mul(dec, mat3_transpose(dec));
    Mat3 I{1, 0, 0, 0, 1, 0, 0, 0, 1};
    CHECK(max_abs_diff(rrt, I) < 1e-9);
  }
}

TEST_CASE("rot6d decode: proper rotation from skewed but valid input") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Rot6d r;
    for (auto& v : r.v) v = rng.uniform(-2.0, 2.0);
    // Inputs this random are essentially never degenerate.
    const Mat3 R = rot6d_to_matrix(r);
    CHECK(std::abs(mat3_det(R) - 1.0) < 1e-9);
  }
}

TEST_CASE("rot6d decode rejects degenerate inputs") {
  CHECK_THROWS_AS(rot6d_to_matrix(rot6d_from({0, 0, 0, 0, 1, 0})),
                  DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix(rot6d_from({1, 0, 0, 2, 0, 0})),
                  DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix(rot6d_from({1, 1, 0, -3, -3, 0})),
                  DegenerateRotation);
}

TEST_CASE("matrix_to_rot6d reads off the first two columns") {
  Mat3 I{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const Rot6d ri = matrix_to_rot6d(I);
  for (int k = 0; k < 6; ++k)
    CHECK(ri.v[k] == doctest::Approx(k == 0 || k == 4 ? 1.0 : 0.0));

  // 90 degrees about z: columns (0,1,0) and (-1,0,0).
  Mat3 Rz{0, -1, 0, 1, 0, 0, 0, 0, 1};
  const Rot6d rz = matrix_to_rot6d(Rz);
  CHECK(rz.v[0] == doctest::Approx(0.0));
  CHECK(rz.v[1] == doctest::Approx(1.0));
  CHECK(rz.v[2] == doctest::Approx(0.0));
  CHECK(rz.v[3] == doctest::Approx(-1.0));
  CHECK(rz.v[4] == doctest::Approx(0.0));
  CHECK(rz.v[5] == doctest::Approx(0.0));
}

TEST_CASE("matrix_to_rot6d rejects non-rotations") {
  Mat3 scaled{2, 0, 0, 0, 2, 0, 0, 0, 2};
  CHECK_THROWS_AS(matrix_to_rot6d(scaled), NotARotation);
  Mat3 reflect{1, 0, 0, 0, 1, 0, 0, 0, -1};
  CHECK_THROWS_AS(matrix_to_rot6d(reflect), NotARotation);
}

TEST_CASE("pose_compose: identity neutral, inverse cancels") {
  Rng rng(11);
  const Pose9 p = random_pose(rng);
  const Pose9 pid = pose_compose(p, Pose9::identity());
  for (int i = 0; i < 3; ++i) CHECK(pid.t[i] == doctest::Approx(p.t[i]));
  for (int i = 0; i < 6; ++i) CHECK(pid.r.v[i] == doctest::Approx(p.r.v[i]));

  const Pose9 e = pose_compose(p, pose_inverse(p));
  auto [re, te] = pose_error(e, Pose9::identity());
  CHECK(re < 1e-9);
  CHECK(te < 1e-9);
}

TEST_CASE("pose_compose matches the 4x4 homogeneous oracle") {
  Rng rng(12);
  for (int i = 0; i < 300; ++i) {
    const Pose9 a = random_pose(rng);
    const Pose9 b = random_pose(rng);
    const Pose9 c = pose_compose(a, b);

    const auto Ma = oracle::make_homogeneous(rot6d_to_matrix(a.r), a.t);
    const auto Mb = oracle::make_homogeneous(rot6d_to_matrix(b.r), b.t);
    const auto Mc = oracle::mat4_mul(Ma, Mb);

    const Mat3 Rc = rot6d_to_matrix(c.r);
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col)
        CHECK(std::abs(Rc[3 * r + col] - Mc[4 * r + col]) < 1e-9);
      CHECK(std::abs(c.t[r] - Mc[4 * r + 3]) < 1e-9);
    }
  }
}

TEST_CASE("pose_compose is associative") {
  Rng rng(13);
  const Pose9 a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
  const Pose9 lhs = pose_compose(pose_compose(a, b), c);
  const Pose9 rhs = pose_compose(a, pose_compose(b, c));
  auto [re, te] = pose_error(lhs, rhs);
  CHECK(re < 1e-9);
  CHECK(te < 1e-9);
}

TEST_CASE("pose_error basics") {
  Rng rng(14);
  const Pose9 p = random_pose(rng);
  auto [re, te] = pose_error(p, p);
  CHECK(re == doctest::Approx(0.0));
  CHECK(te == doctest::Approx(0.0));

  Pose9 q = p;
  q.r = matrix_to_rot6d(Mat3{0, -1, 0, 1, 0, 0, 0, 0, 1});
  Pose9 e = p;
  e.r = matrix_to_rot6d(Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto [r90, t90] = pose_error(e, q);
  CHECK(r90 == doctest::Approx(M_PI / 2).epsilon(1e-12));
  CHECK(t90 == doctest::Approx(0.0));
}

TEST_CASE("pose_error matches the axis-angle oracle on random pairs") {
  Rng rng(15);
  for (int i = 0; i < 300; ++i) {
    const Pose9 a = random_pose(rng);
    const Pose9 b = random_pose(rng);
    auto [re, te] = pose_error(a, b);
    const double want =
        oracle::relative_angle(rot6d_to_matrix(a.r), rot6d_to_matrix(b.r));
    CHECK(std::abs(re - want) < 1e-9);
    // Symmetry.
    auto [re2, te2] = pose_error(b, a);
    CHECK(std::abs(re - re2) < 1e-12);
    CHECK(std::abs(te - te2) < 1e-12);
  }
}

TEST_CASE("trans_err satisfies the triangle inequality") {
  Rng rng(16);
  for (int i = 0; i < 100; ++i) {
    const Pose9 a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const double ab = pose_error(a, b).second;
    const double bc = pose_error(b, c).second;
    const double ac = pose_error(a, c).second;
    CHECK(ac <= ab + bc + 1e-12);
  }
}

TEST_CASE("perturb_pose: zero sigma is bitwise identity") {
  Rng rng(17);
  const Pose9 p = random_pose(rng);
  Rng prng(1);
  const Pose9 q = perturb_pose(p, 0.0, 0.0, prng);
  CHECK(std::memcmp(&q.t, &p.t, sizeof(p.t)) == 0);
  CHECK(std::memcmp(q.r.v.data(), p.r.v.data(), sizeof(p.r.v)) == 0);
}

TEST_CASE("perturb_pose: translation-only keeps rotation bitwise") {
  Rng rng(18);
  const Pose9 p = random_pose(rng);
  Rng prng(2);
  const Pose9 q = perturb_pose(p, 0.0, 0.02, prng);
  CHECK(std::memcmp(q.r.v.data(), p.r.v.data(), sizeof(p.r.v)) == 0);
  CHECK((q.t[0] != p.t[0] || q.t[1] != p.t[1] || q.t[2] != p.t[2]));
}

TEST_CASE("perturb_pose: empirical stds match (0.2 rad, 0.02 m) within 10%") {
  Rng rng(19);
  const Pose9 p = random_pose(rng);
  Rng prng(3);
  const int n = 10000;
  double rot_sq = 0.0, trans_comp_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const Pose9 q = perturb_pose(p, 0.2, 0.02, prng);
    const auto [re, te] = pose_error(p, q);
    rot_sq += re * re;
    (void)te;
    for (int k = 0; k < 3; ++k) {
      const double d = q.t[k] - p.t[k];
      trans_comp_sq += d * d;
    }
  }
  // Rotation angle is |N(0, 0.2^2)|, so E[angle^2] = 0.2^2.
  const double rot_std = std::sqrt(rot_sq / n);
  CHECK(rot_std == doctest::Approx(0.2).epsilon(0.10));
  const double trans_std = std::sqrt(trans_comp_sq / (3.0 * n));
  CHECK(trans_std == doctest::Approx(0.02).epsilon(0.10));
}

TEST_CASE("perturb_traj on poses mirrors perturb_pose per step") {
  PoseTraj traj(4, 2);
  Rng rng(21);
  for (int s = 0; s < 4; ++s)
    for (int o = 0; o < 2; ++o) traj.set_pose(s, o, random_pose(rng));

  SUBCASE("zero sigmas bitwise identity") {
    Rng prng(4);
    const PoseTraj out = perturb_traj(traj, PerturbSigmas{}, prng);
    CHECK(out.data == traj.data);
  }
  SUBCASE("statistical std per step") {
    Rng prng(5);
    const int n = 10000;
    double rot_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const PoseTraj out = perturb_traj(traj, {0.2, 0.0, 0.0}, prng);
      const auto [re, te] = pose_error(traj.pose_at(2, 1), out.pose_at(2, 1));
      (void)te;
      rot_sq += re * re;
    }
    CHECK(std::sqrt(rot_sq / n) == doctest::Approx(0.2).epsilon(0.10));
  }
  SUBCASE("translation-only leaves rotations bitwise") {
    Rng prng(6);
    const PoseTraj out = perturb_traj(traj, {0.0, 0.02, 0.0}, prng);
    for (int s = 0; s < 4; ++s)
      for (int o = 0; o < 2; ++o) {
        const Pose9 a = traj.pose_at(s, o), b = out.pose_at(s, o);
        CHECK(std::memcmp(a.r.v.data(), b.r.v.data(), sizeof(a.r.v)) == 0);
      }
  }
}

TEST_CASE("perturb_traj on actions clamps the gripper to [0,1]") {
  ActionTraj traj(3, 10);
  Rng rng(22);
  for (int s = 0; s < 3; ++s) {
    double* a = traj.step(s);
    const Pose9 p = random_pose(rng);
    a[0] = p.t[0];
    a[1] = p.t[1];
    a[2] = p.t[2];
    std::copy(p.r.v.begin(), p.r.v.end(), a + 3);
    a[9] = (s == 0) ? 0.0 : (s == 1 ? 1.0 : 0.5);
  }
  Rng prng(7);
  for (int i = 0; i < 200; ++i) {
    const ActionTraj out = perturb_traj(traj, {0.1, 0.01, 0.5}, prng);
    for (int s = 0; s < 3; ++s) {
      CHECK(out.step(s)[9] >= 0.0);
      CHECK(out.step(s)[9] <= 1.0);
    }
  }
}
