// Test-only oracles, deliberately independent of the library code paths
// they check.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "artifit/geom.hpp"

namespace oracles {

using artifit::Mat3;
using artifit::Vec3;

// --- quaternion oracle ------------------------------------------------------
// Textbook quaternion algebra, no Eigen::Quaternion and no Rodrigues form.

struct Quat {
  double w, x, y, z;
};

inline Quat quat_from_axis_angle(const Vec3& axis, double angle) {
  const double h = angle / 2.0;
  const Vec3 a = axis.normalized();
  return {std::cos(h), a.x() * std::sin(h), a.y() * std::sin(h), a.z() * std::sin(h)};
}

inline Quat quat_mul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

inline Mat3 quat_to_matrix(const Quat& q) {
  Mat3 m;
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

inline Mat3 matrix_from_rotation_vector(const Vec3& r) {
  const double angle = r.norm();
  if (angle == 0.0) return Mat3::Identity();
  return quat_to_matrix(quat_from_axis_angle(r / angle, angle));
}

inline double quat_dot(const Quat& a, const Quat& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

inline Quat quat_from_matrix(const Mat3& m) {
  // Shepperd's method
  Quat q{1, 0, 0, 0};
  const double tr = m.trace();
  if (tr > 0) {
    const double s = std::sqrt(tr + 1.0) * 2;
    q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
         (m(1, 0) - m(0, 1)) / s};
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2;
    q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
         (m(0, 2) + m(2, 0)) / s};
  } else if (m(1, 1) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2;
    q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
         (m(1, 2) + m(2, 1)) / s};
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2;
    q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s,
         0.25 * s};
  }
  return q;
}

// angle of relative rotation via the quaternion dot product
inline double angle_between_oracle(const Mat3& a, const Mat3& b) {
  const double d = std::abs(quat_dot(quat_from_matrix(a), quat_from_matrix(b)));
  return 2.0 * std::acos(std::min(d, 1.0));
}

// --- brute-force nearest neighbors ------------------------------------------

inline void brute_knn(const Eigen::Matrix3Xd& pts, int query, int k,
                      std::vector<int>& idx, std::vector<double>& dist,
                      bool self_first = true) {
  const int n = static_cast<int>(pts.cols());
  std::vector<std::pair<double, int>> all;
  for (int j = 0; j < n; ++j) {
    if (self_first && j == query) continue;
    all.emplace_back((pts.col(j) - pts.col(query)).norm(), j);
  }
  std::sort(all.begin(), all.end());
  idx.clear();
  dist.clear();
  if (self_first) {
    idx.push_back(query);
    dist.push_back(0.0);
  }
  for (const auto& [d, j] : all) {
    if (static_cast<int>(idx.size()) >= k) break;
    idx.push_back(j);
    dist.push_back(d);
  }
}

inline double brute_nn_dist(const Vec3& p, const Eigen::Matrix3Xd& q) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    best = std::min(best, (p - q.col(j)).norm());
  return best;
}

inline double brute_cd(const Eigen::Matrix3Xd& p, const Eigen::Matrix3Xd& q,
                       const Eigen::VectorXd& w) {
  double acc = 0;
  for (Eigen::Index i = 0; i < p.cols(); ++i)
    acc += w[i] * brute_nn_dist(p.col(i), q);
  return acc / static_cast<double>(p.cols());
}

inline double brute_dcd(const Eigen::Matrix3Xd& p, const Eigen::Matrix3Xd& q,
                        const Eigen::VectorXd& w, double alpha, bool squared) {
  double acc = 0;
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    const double d = brute_nn_dist(p.col(i), q);
    acc += w[i] * (1.0 - std::exp(-alpha * (squared ? d * d : d)));
  }
  return acc / static_cast<double>(p.cols());
}

// --- misc ---------------------------------------------------------------

inline Eigen::Matrix3Xd random_cloud(std::mt19937_64& rng, int n, double half = 0.5) {
  std::uniform_real_distribution<double> u(-half, half);
  Eigen::Matrix3Xd pts(3, n);
  for (int i = 0; i < n; ++i) pts.col(i) = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

// 4x4 homogeneous composition oracle
inline Eigen::Matrix4d homogeneous(const Mat3& r, const Vec3& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

}  // namespace oracles
