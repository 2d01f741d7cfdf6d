#include "artifit/articulation.hpp"

#include <cmath>
#include <stdexcept>

namespace artifit {

double joint_state_from_raw(double theta, const JointSpec& spec) {
  const double sig = 1.0 / (1.0 + std::exp(-theta));
  return spec.range * (sig - 0.5);
}

Rotation direction_alignment(const Vec3& d_x, const Vec3& d_y) {
  if (std::abs(d_x.norm() - 1.0) > 1e-6 || std::abs(d_y.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("direction_alignment: directions must be unit");
  const double c = std::clamp(d_x.dot(d_y), -1.0, 1.0);
  const Vec3 cross = d_x.cross(d_y);
  const double s = cross.norm();
  if (s < 1e-9) {
    if (c > 0) return Rotation::identity();
    // antiparallel: rotate by pi about an axis orthogonal to d_x
    int least;
    d_x.cwiseAbs().minCoeff(&least);
    const Vec3 axis = d_x.cross(Vec3::Unit(least)).normalized();
    return axis_angle_to_rotation(axis * std::acos(-1.0));
  }
  return axis_angle_to_rotation((cross / s) * std::acos(c));
}

Rotation state_rotation(const Vec3& d_y, double delta_a) {
  return axis_angle_to_rotation(d_y * delta_a);
}

Vec3 state_translation(const Vec3& d_y, double delta_a) {
  return d_y * delta_a;
}

PartMap PartMap::inverse() const {
  PartMap inv;
  inv.R = R.transposed();
  inv.pivot_x = shift;
  inv.shift = pivot_x;
  return inv;
}

PartMap part_alignment(const JointParams& jx, const JointParams& jy,
                       const JointSpec& spec, int side) {
  if (side != 0 && side != 1)
    throw std::invalid_argument("part_alignment: side must be 0 or 1");
  const Rotation r_d = direction_alignment(jx.direction, jy.direction);
  const double delta = jy.states[side] - jx.states[side];
  PartMap map;
  map.pivot_x = jx.pivot;
  if (spec.kind == JointKind::Revolute) {
    map.R = state_rotation(jy.direction, delta) * r_d;
    map.shift = jy.pivot;
  } else {
    map.R = r_d;
    map.shift = jy.pivot + state_translation(jy.direction, delta);
  }
  return map;
}

PointCloud part_aligned_input(const PointCloud& x_aligned, const JointParams& jx,
                              const JointParams& jy, const JointSpec& spec,
                              int side) {
  const PartMap map = part_alignment(jx, jy, spec, side);
  PointCloud out;
  out.labels = x_aligned.labels;
  out.pts = (map.R.m * (x_aligned.pts.colwise() - map.pivot_x)).colwise() + map.shift;
  return out;
}

Rotation residual_rotation_from_raw(const Vec3& raw) {
  const double m = raw.norm();
  if (m < 1e-12) return Rotation::identity();
  const double angle = 0.2 * std::acos(-1.0) * std::tanh(m);
  return axis_angle_to_rotation((raw / m) * angle);
}

}  // namespace artifit
