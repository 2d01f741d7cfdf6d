#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <utility>
#include <vector>

namespace artifit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Proper rotation, stored as a 3x3 orthonormal matrix with det +1.
struct Rotation {
  Mat3 m = Mat3::Identity();

  Rotation() = default;
  explicit Rotation(const Mat3& mat) : m(mat) {}

  static Rotation identity() { return Rotation(); }

  Rotation operator*(const Rotation& o) const { return Rotation(m * o.m); }
  Vec3 operator*(const Vec3& v) const { return m * v; }
  Rotation transposed() const { return Rotation(m.transpose()); }

  // mᵀm = I and det = +1, both within tol
  bool is_valid(double tol = 1e-9) const;
};

// Rodrigues closed form; r = axis * angle, r = 0 maps to identity.
Rotation axis_angle_to_rotation(const Vec3& r);

// Inverse of the above for rotation angles < pi.
Vec3 rotation_to_axis_angle(const Rotation& R);

// Angle of a*bᵀ in [0, pi], arccos argument clamped to [-1, 1].
double rotation_angle_between(const Rotation& a, const Rotation& b);

// Adjoint of the Rodrigues map: given dL/dR at R(r), returns dL/dr.
// Uses the compact closed form of Gallego & Yezzi for the derivative of a
// rotation in exponential coordinates.
Vec3 rotation_vector_grad(const Vec3& r, const Mat3& d_rotation);

// Geodesic interpolation, t in [0, 1]. For antipodal inputs (relative
// angle pi) the geodesic through the canonicalized (nonnegative scalar
// part) quaternion of b is used.
Rotation slerp(const Rotation& a, const Rotation& b, double t);

/// The 60 rotations of the icosahedral rotation group, in a stable order.
struct AnchorSet {
  std::vector<Rotation> rotations;
  int size() const { return static_cast<int>(rotations.size()); }
  const Rotation& operator[](int i) const { return rotations[i]; }
};

// Built once from a fixed icosahedron vertex layout and sorted
// lexicographically by matrix entries, so anchor IDs are reproducible.
const AnchorSet& icosahedral_anchors();

/// Exact nearest-neighbor index over a fixed 3D point set (kd-tree).
class NnIndex {
 public:
  explicit NnIndex(const Eigen::Matrix3Xd& points);

  int size() const { return static_cast<int>(pts_.cols()); }
  const Eigen::Matrix3Xd& points() const { return pts_; }

  // Nearest point; ties broken by lowest index. Returns (index, distance).
  std::pair<int, double> nearest(const Vec3& q) const;

  // k nearest, sorted by (distance, index) ascending. k <= size().
  void knearest(const Vec3& q, int k, int* idx_out, double* dist_out) const;

 private:
  struct Node {
    int left = -1, right = -1;  // children, -1 for leaf
    int begin = 0, end = 0;     // index range for leaves
    int axis = 0;
    double split = 0.0;
  };

  int build(int begin, int end);

  Eigen::Matrix3Xd pts_;
  std::vector<int> order_;  // permutation of point indices
  std::vector<Node> nodes_;
  int root_ = -1;
};

struct KnnResult {
  Eigen::MatrixXi indices;    // N x K
  Eigen::MatrixXd distances;  // N x K, row-wise nondecreasing
};

// Exact k nearest neighbors of every point within the same cloud.
// The query point itself is reported at rank 1 with distance 0; the
// remaining ranks follow (distance, index) order. K > N is an error.
KnnResult knn(const Eigen::Matrix3Xd& points, int k);

}  // namespace artifit
