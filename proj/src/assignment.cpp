#include "artifit/assignment.hpp"

#include <stdexcept>

#include "artifit/distance.hpp"

namespace artifit {

void fill_share_counts(Assignment& a) {
  const int j_count = a.joints();
  a.b.resize(j_count, 2);
  for (int j = 0; j < j_count; ++j)
    for (int i = 0; i < 2; ++i) {
      int count = 0;
      for (int jj = 0; jj < j_count; ++jj)
        for (int ii = 0; ii < 2; ++ii)
          if (a.sigma(jj, ii) == a.sigma(j, i)) ++count;
      a.b(j, i) = count;
    }
}

std::vector<Assignment> enumerate_assignments(int parts, int joints) {
  if (parts < 2) throw std::invalid_argument("enumerate_assignments: need P >= 2");
  if (parts > 6) throw std::invalid_argument("enumerate_assignments: P > 6 unsupported");
  if (joints != parts - 1)
    throw std::invalid_argument("enumerate_assignments: J must equal P - 1");

  const int slots = 2 * joints;
  std::vector<Assignment> out;
  std::vector<int> label(slots, 1);  // odometer over slot-major labels
  while (true) {
    bool ok = true;
    for (int j = 0; j < joints && ok; ++j)
      if (label[2 * j] == label[2 * j + 1]) ok = false;
    if (ok) {
      std::vector<bool> used(parts + 1, false);
      for (int s = 0; s < slots; ++s) used[label[s]] = true;
      for (int p = 1; p <= parts && ok; ++p)
        if (!used[p]) ok = false;
    }
    if (ok) {
      Assignment a;
      a.sigma.resize(joints, 2);
      for (int j = 0; j < joints; ++j) {
        a.sigma(j, 0) = label[2 * j];
        a.sigma(j, 1) = label[2 * j + 1];
      }
      a.b = Eigen::MatrixXi::Zero(joints, 2);
      out.push_back(std::move(a));
    }
    int s = slots - 1;
    while (s >= 0 && label[s] == parts) label[s--] = 1;
    if (s < 0) break;
    ++label[s];
  }
  return out;
}

Assignment select_assignment(const std::vector<PointCloud>& Z, const PointCloud& Y,
                             const Eigen::MatrixXd& W_x) {
  const int parts = static_cast<int>(W_x.rows());
  const int joints = static_cast<int>(Z.size()) / 2;
  if (static_cast<int>(Z.size()) != 2 * joints || joints != parts - 1)
    throw std::invalid_argument("select_assignment: need 2(P-1) aligned clouds");

  // Per-slot nearest-neighbor distances depend only on Z and Y, so compute
  // them once and reduce candidate evaluation to weight dot products.
  const NnIndex y_index(Y.pts);
  const int n = static_cast<int>(W_x.cols());
  Eigen::MatrixXd slot_cost(parts, 2 * joints);  // (p, slot) -> CD with W_x row p
  std::vector<int> nn_idx;
  std::vector<double> nn_dist;
  for (int s = 0; s < 2 * joints; ++s) {
    if (Z[s].size() != n)
      throw std::invalid_argument("select_assignment: Z/W size mismatch");
    nearest_each(Z[s].pts, y_index, nn_idx, nn_dist);
    Eigen::Map<const Eigen::VectorXd> d(nn_dist.data(), n);
    slot_cost.col(s) = (W_x * d) / static_cast<double>(n);
  }

  auto candidates = enumerate_assignments(parts, joints);
  int best = -1;
  double best_cost = 0.0;
  for (size_t c = 0; c < candidates.size(); ++c) {
    Assignment& a = candidates[c];
    fill_share_counts(a);
    double cost = 0.0;
    for (int j = 0; j < joints; ++j)
      for (int i = 0; i < 2; ++i)
        cost += slot_cost(a.sigma(j, i) - 1, 2 * j + i) / a.b(j, i);
    if (best < 0 || cost < best_cost) {
      best = static_cast<int>(c);
      best_cost = cost;
    }
  }
  return candidates[best];
}

std::pair<Rotation, Vec3> fuse_shared_pose(
    const std::vector<std::pair<Rotation, Vec3>>& poses) {
  if (poses.empty()) throw std::invalid_argument("fuse_shared_pose: empty list");
  if (poses.size() == 1) return poses[0];
  if (poses.size() > 2)
    throw std::invalid_argument("fuse_shared_pose: more than 2 shared slots");
  return {slerp(poses[0].first, poses[1].first, 0.5),
          0.5 * (poses[0].second + poses[1].second)};
}

}  // namespace artifit
