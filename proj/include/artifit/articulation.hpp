#pragma once

#include <Eigen/Core>

#include "artifit/cloud.hpp"
#include "artifit/geom.hpp"

namespace artifit {

enum class JointKind { Revolute, Prismatic };

/// Joint type plus the total state range (radians for revolute joints,
/// normalized length units for prismatic joints).
struct JointSpec {
  JointKind kind = JointKind::Revolute;
  double range = kDefaultRevoluteRange;

  static constexpr double kDefaultRevoluteRange = 2.0 * 3.14159265358979323846 / 3.0;
  static constexpr double kDefaultPrismaticRange = 0.2;

  static JointSpec revolute(double range = kDefaultRevoluteRange) {
    return {JointKind::Revolute, range};
  }
  static JointSpec prismatic(double range = kDefaultPrismaticRange) {
    return {JointKind::Prismatic, range};
  }
};

/// Realized joint parameters for one cloud side: pivot, unit direction and
/// the two per-part states.
struct JointParams {
  Vec3 pivot = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  Eigen::Vector2d states = Eigen::Vector2d::Zero();
};

// range * (sigmoid(theta) - 0.5); strictly monotone, bounded in
// (-range/2, range/2).
double joint_state_from_raw(double theta, const JointSpec& spec);

// Rotation R with R * d_x = d_y, built from the rotation vector
// axis(d_x x d_y) * arccos(<d_x, d_y>). Antiparallel inputs rotate by pi
// about a deterministic axis orthogonal to d_x (the cross product with the
// standard basis vector least aligned with d_x).
Rotation direction_alignment(const Vec3& d_x, const Vec3& d_y);

// Rotation about the unit axis d_y by delta_a.
Rotation state_rotation(const Vec3& d_y, double delta_a);

// Translation d_y * delta_a along the unit axis.
Vec3 state_translation(const Vec3& d_y, double delta_a);

/// Rigid map sending the object-level-aligned input onto one side of a
/// joint: z = R * (x - c_x) + t_extra + c_y.
struct PartMap {
  Rotation R;
  Vec3 pivot_x = Vec3::Zero();  // subtracted before rotating
  Vec3 shift = Vec3::Zero();    // added after rotating (c_y, plus T_a if prismatic)

  Vec3 apply(const Vec3& x) const { return R.m * (x - pivot_x) + shift; }
  // As a plain rigid transform x -> R x + t.
  Vec3 translation() const { return shift - R.m * pivot_x; }
  PartMap inverse() const;
};

// The cased alignment for side i (0 or 1):
//   revolute:  Z = R_a R_d (X_aligned - c_x) + c_y,  R_a from a_y[i] - a_x[i]
//   prismatic: Z = R_d (X_aligned - c_x) + c_y + T_a
PartMap part_alignment(const JointParams& jx, const JointParams& jy,
                       const JointSpec& spec, int side);
PointCloud part_aligned_input(const PointCloud& x_aligned, const JointParams& jx,
                              const JointParams& jy, const JointSpec& spec,
                              int side);

// Rotation about raw/||raw|| by 0.2*pi*tanh(||raw||); raw = 0 gives the
// identity and the angle stays strictly below 0.2*pi.
Rotation residual_rotation_from_raw(const Vec3& raw);

}  // namespace artifit
