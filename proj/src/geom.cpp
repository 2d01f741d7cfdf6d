#include "artifit/geom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace artifit {

bool Rotation::is_valid(double tol) const {
  const Mat3 gram = m.transpose() * m;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(m.determinant() - 1.0) <= tol;
}

Rotation axis_angle_to_rotation(const Vec3& r) {
  const double angle = r.norm();
  if (angle < 1e-12) {
    // second-order expansion keeps the map smooth through zero
    Mat3 k;
    k << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
    return Rotation(Mat3::Identity() + k + 0.5 * k * k);
  }
  const Vec3 axis = r / angle;
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Rotation(Mat3::Identity() + std::sin(angle) * k +
                  (1.0 - std::cos(angle)) * k * k);
}

Vec3 rotation_to_axis_angle(const Rotation& R) {
  const Mat3& m = R.m;
  const double c = std::clamp((m.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double angle = std::acos(c);
  Vec3 skew(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double s = std::sin(angle);
  if (s > 1e-7) return (angle / (2.0 * s)) * skew;
  if (angle < 1e-7) return 0.5 * skew;  // small angle: skew ≈ 2r
  // angle near pi: axis from the dominant column of m + I
  Mat3 a = m + Mat3::Identity();
  int col;
  a.colwise().norm().maxCoeff(&col);
  Vec3 axis = a.col(col).normalized();
  // fix sign so that skew part (may be tiny) agrees
  if (axis.dot(skew) < 0) axis = -axis;
  return axis * angle;
}

double rotation_angle_between(const Rotation& a, const Rotation& b) {
  const double tr = (a.m * b.m.transpose()).trace();
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

Vec3 rotation_vector_grad(const Vec3& r, const Mat3& d_rotation) {
  const Rotation R = axis_angle_to_rotation(r);
  const Mat3 B = d_rotation * R.m.transpose();
  // s = vee(B - Bᵀ): the pairing of B with the skew basis
  const Vec3 s(B(2, 1) - B(1, 2), B(0, 2) - B(2, 0), B(1, 0) - B(0, 1));
  const double n2 = r.squaredNorm();
  if (n2 < 1e-16) return s;
  return (r * s.dot(r) + (Mat3::Identity() - R.m).transpose() * s.cross(r)) / n2;
}

namespace {

// Sign canonicalization: nonnegative scalar part; if the scalar part is
// zero, the first nonzero vector component is made positive.
Eigen::Quaterniond canonical(const Eigen::Quaterniond& q) {
  double lead = q.w();
  if (lead == 0.0) lead = q.x() != 0.0 ? q.x() : (q.y() != 0.0 ? q.y() : q.z());
  if (lead < 0.0) return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

}  // namespace

Rotation slerp(const Rotation& a, const Rotation& b, double t) {
  Eigen::Quaterniond qa = canonical(Eigen::Quaterniond(a.m));
  Eigen::Quaterniond qb = canonical(Eigen::Quaterniond(b.m));
  double dot = qa.dot(qb);
  if (dot < 0.0) {  // shortest path; dot == 0 keeps the canonical sign of qb
    qb = Eigen::Quaterniond(-qb.w(), -qb.x(), -qb.y(), -qb.z());
    dot = -dot;
  }
  dot = std::min(dot, 1.0);
  const double omega = std::acos(dot);
  Eigen::Quaterniond out;
  if (omega < 1e-9) {
    out = Eigen::Quaterniond(qa.coeffs() + t * (qb.coeffs() - qa.coeffs()));
  } else {
    const double sin_omega = std::sin(omega);
    out = Eigen::Quaterniond((std::sin((1.0 - t) * omega) / sin_omega) * qa.coeffs() +
                             (std::sin(t * omega) / sin_omega) * qb.coeffs());
  }
  out.normalize();
  return Rotation(out.toRotationMatrix());
}

namespace {

std::vector<Vec3> dedupe_axes(std::vector<Vec3> dirs) {
  for (Vec3& d : dirs) {
    d.normalize();
    // canonical sign: first component with magnitude > tol positive
    for (int i = 0; i < 3; ++i) {
      if (std::abs(d[i]) > 1e-9) {
        if (d[i] < 0) d = -d;
        break;
      }
    }
  }
  std::vector<Vec3> out;
  for (const Vec3& d : dirs) {
    bool seen = false;
    for (const Vec3& e : out)
      if ((d - e).norm() < 1e-6) {
        seen = true;
        break;
      }
    if (!seen) out.push_back(d);
  }
  return out;
}

AnchorSet build_icosahedral_anchors() {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts;
  for (double s1 : {1.0, -1.0})
    for (double s2 : {1.0, -1.0}) {
      verts.emplace_back(0.0, s1, s2 * phi);
      verts.emplace_back(s1, s2 * phi, 0.0);
      verts.emplace_back(s1 * phi, 0.0, s2);
    }

  // adjacency: edge length is 2 in this layout
  const int n = static_cast<int>(verts.size());
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs((verts[i] - verts[j]).norm() - 2.0) < 1e-9)
        edges.emplace_back(i, j);

  std::vector<Vec3> vertex_axes(verts.begin(), verts.end());

  std::vector<Vec3> edge_axes;
  for (auto [i, j] : edges) edge_axes.push_back(verts[i] + verts[j]);

  std::vector<Vec3> face_axes;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k) {
        const bool adj = std::abs((verts[i] - verts[j]).norm() - 2.0) < 1e-9 &&
                         std::abs((verts[i] - verts[k]).norm() - 2.0) < 1e-9 &&
                         std::abs((verts[j] - verts[k]).norm() - 2.0) < 1e-9;
        if (adj) face_axes.push_back(verts[i] + verts[j] + verts[k]);
      }

  const auto v_axes = dedupe_axes(vertex_axes);  // 6
  const auto e_axes = dedupe_axes(edge_axes);    // 15
  const auto f_axes = dedupe_axes(face_axes);    // 10

  AnchorSet set;
  set.rotations.push_back(Rotation::identity());
  const double pi = std::acos(-1.0);
  for (const Vec3& a : v_axes)
    for (int k = 1; k <= 4; ++k)
      set.rotations.push_back(axis_angle_to_rotation(a * (2.0 * pi * k / 5.0)));
  for (const Vec3& a : f_axes)
    for (int k : {1, 2})
      set.rotations.push_back(axis_angle_to_rotation(a * (2.0 * pi * k / 3.0)));
  for (const Vec3& a : e_axes)
    set.rotations.push_back(axis_angle_to_rotation(a * pi));

  std::sort(set.rotations.begin(), set.rotations.end(),
            [](const Rotation& x, const Rotation& y) {
              for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) {
                  if (x.m(r, c) < y.m(r, c)) return true;
                  if (x.m(r, c) > y.m(r, c)) return false;
                }
              return false;
            });
  return set;
}

}  // namespace

const AnchorSet& icosahedral_anchors() {
  static const AnchorSet set = build_icosahedral_anchors();
  return set;
}

// ---------------------------------------------------------------------------
// kd-tree

namespace {
constexpr int kLeafSize = 8;

struct HeapEntry {
  double d2;
  int idx;
};
// max-heap on (d2, idx): lexicographically larger entries float to the top
inline bool heap_less(const HeapEntry& a, const HeapEntry& b) {
  return a.d2 < b.d2 || (a.d2 == b.d2 && a.idx < b.idx);
}
}  // namespace

NnIndex::NnIndex(const Eigen::Matrix3Xd& points) : pts_(points) {
  const int n = static_cast<int>(pts_.cols());
  if (n == 0) throw std::invalid_argument("NnIndex: empty point set");
  order_.resize(n);
  for (int i = 0; i < n; ++i) order_[i] = i;
  nodes_.reserve(2 * n / kLeafSize + 2);
  root_ = build(0, n);
}

int NnIndex::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{-1, -1, begin, end, 0, 0.0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = pts_.col(order_[begin]);
  Vec3 hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(pts_.col(order_[i]));
    hi = hi.cwiseMax(pts_.col(order_[i]));
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int a, int b) {
                     const double pa = pts_(axis, a), pb = pts_(axis, b);
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = pts_(axis, order_[mid]);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {

struct KnnSearch {
  const Eigen::Matrix3Xd& pts;
  const std::vector<int>& order;
  const Vec3& q;
  int k;
  std::vector<HeapEntry>& heap;

  bool full() const { return static_cast<int>(heap.size()) == k; }
  double worst_d2() const { return heap.front().d2; }

  void offer(int idx) {
    const double d2 = (pts.col(idx) - q).squaredNorm();
    const HeapEntry e{d2, idx};
    if (!full()) {
      heap.push_back(e);
      std::push_heap(heap.begin(), heap.end(), heap_less);
    } else if (heap_less(e, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), heap_less);
      heap.back() = e;
      std::push_heap(heap.begin(), heap.end(), heap_less);
    }
  }
};

}  // namespace

void NnIndex::knearest(const Vec3& q, int k, int* idx_out,
                       double* dist_out) const {
  if (k < 1 || k > size())
    throw std::invalid_argument("NnIndex::knearest: k out of range");
  std::vector<HeapEntry> heap;
  heap.reserve(k);
  KnnSearch s{pts_, order_, q, k, heap};

  // iterative traversal, near child first
  struct Frame {
    int node;
    double plane_d2;  // squared distance to the splitting plane guarding this subtree
  };
  std::vector<Frame> stack;
  stack.push_back({root_, 0.0});
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (s.full() && f.plane_d2 > s.worst_d2()) continue;
    const Node& nd = nodes_[f.node];
    if (nd.left < 0) {
      for (int i = nd.begin; i < nd.end; ++i) s.offer(order_[i]);
      continue;
    }
    const double diff = q[nd.axis] - nd.split;
    const int near = diff < 0 ? nd.left : nd.right;
    const int far = diff < 0 ? nd.right : nd.left;
    stack.push_back({far, diff * diff});
    stack.push_back({near, f.plane_d2});
  }

  std::sort(heap.begin(), heap.end(), heap_less);
  for (int i = 0; i < k; ++i) {
    idx_out[i] = heap[i].idx;
    dist_out[i] = std::sqrt(heap[i].d2);
  }
}

std::pair<int, double> NnIndex::nearest(const Vec3& q) const {
  int best_idx = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  struct Frame {
    int node;
    double plane_d2;
  };
  Frame stack[64];
  int top = 0;
  stack[top++] = {root_, 0.0};
  while (top) {
    const Frame f = stack[--top];
    if (f.plane_d2 > best_d2) continue;
    const Node& nd = nodes_[f.node];
    if (nd.left < 0) {
      for (int i = nd.begin; i < nd.end; ++i) {
        const int idx = order_[i];
        const double d2 = (pts_.col(idx) - q).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
          best_d2 = d2;
          best_idx = idx;
        }
      }
      continue;
    }
    const double diff = q[nd.axis] - nd.split;
    const int near = diff < 0 ? nd.left : nd.right;
    const int far = diff < 0 ? nd.right : nd.left;
    stack[top++] = {far, diff * diff};
    stack[top++] = {near, f.plane_d2};
  }
  return {best_idx, std::sqrt(best_d2)};
}

KnnResult knn(const Eigen::Matrix3Xd& points, int k) {
  const int n = static_cast<int>(points.cols());
  if (k < 1 || k > n) throw std::invalid_argument("knn: K must be in [1, N]");
  NnIndex index(points);
  KnnResult out;
  out.indices.resize(n, k);
  out.distances.resize(n, k);

  const int m = std::min(k + 1, n);
  std::vector<int> idx(m);
  std::vector<double> dist(m);
  for (int i = 0; i < n; ++i) {
    index.knearest(points.col(i), m, idx.data(), dist.data());
    // self is pinned at rank 1 regardless of duplicate-point index ties
    out.indices(i, 0) = i;
    out.distances(i, 0) = 0.0;
    int col = 1;
    for (int j = 0; j < m && col < k; ++j) {
      if (idx[j] == i) continue;
      out.indices(i, col) = idx[j];
      out.distances(i, col) = dist[j];
      ++col;
    }
  }
  return out;
}

}  // namespace artifit
