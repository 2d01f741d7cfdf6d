#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

#include "artifit/cloud.hpp"
#include "artifit/geom.hpp"

namespace artifit {

/// Map from (joint j, side i) slots to part labels (1..P) plus per-slot
/// share counts b.
struct Assignment {
  Eigen::MatrixXi sigma;  // J x 2, entries in 1..P
  Eigen::MatrixXi b;      // J x 2 share counts (zero until filled)

  int joints() const { return static_cast<int>(sigma.rows()); }
};

// b(j,i) = number of slots assigned the same label as (j,i).
void fill_share_counts(Assignment& a);

// All label tables for J = P-1 joints with sigma(j,0) != sigma(j,1) and
// every label in 1..P used at least once, in a deterministic (odometer)
// order. Share counts are left unfilled. P > 6 throws.
std::vector<Assignment> enumerate_assignments(int parts, int joints);

// Argmin over the enumeration of
//   sum_j sum_i (1/b(j,i)) * weighted_cd(Z[slot], Y, W_x row sigma(j,i))
// with b recomputed per candidate; ties break toward enumeration order.
// Z is indexed slot-major: Z[2*j + i]. W_x is P x N, columns sum to 1.
Assignment select_assignment(const std::vector<PointCloud>& Z, const PointCloud& Y,
                             const Eigen::MatrixXd& W_x);

// Pose fusion for shared parts: passthrough for one pose, SLERP midpoint and
// arithmetic translation mean for two. More than two throws.
std::pair<Rotation, Vec3> fuse_shared_pose(
    const std::vector<std::pair<Rotation, Vec3>>& poses);

}  // namespace artifit
