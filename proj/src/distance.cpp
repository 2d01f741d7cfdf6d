#include "artifit/distance.hpp"

#include <cmath>
#include <stdexcept>

namespace artifit {

namespace {

void check_inputs(Eigen::Index n_source, Eigen::Index n_weights, int n_target) {
  if (n_target < 1) throw std::invalid_argument("distance: empty target cloud");
  if (n_source < 1) throw std::invalid_argument("distance: empty source cloud");
  if (n_weights != n_source)
    throw std::invalid_argument("distance: weight count must match source size");
}

}  // namespace

void nearest_each(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                  std::vector<int>& idx, std::vector<double>& dist) {
  const int n = static_cast<int>(P.cols());
  idx.resize(n);
  dist.resize(n);
  for (int i = 0; i < n; ++i) {
    auto [j, d] = q_index.nearest(P.col(i));
    idx[i] = j;
    dist[i] = d;
  }
}

double weighted_cd(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                   const Eigen::VectorXd& w) {
  check_inputs(P.cols(), w.size(), q_index.size());
  double acc = 0.0;
  for (int i = 0; i < P.cols(); ++i) {
    if (w[i] == 0.0) continue;  // skip the query, the term is zero anyway
    acc += w[i] * q_index.nearest(P.col(i)).second;
  }
  return acc / static_cast<double>(P.cols());
}

double weighted_cd(const PointCloud& P, const PointCloud& Q,
                   const Eigen::VectorXd& w) {
  check_inputs(P.size(), w.size(), Q.size());
  return weighted_cd(P.pts, NnIndex(Q.pts), w);
}

namespace {

inline double dcd_kernel(double d, double alpha, DcdExponent e) {
  const double f = e == DcdExponent::Squared ? d * d : d;
  return 1.0 - std::exp(-alpha * f);
}

}  // namespace

double weighted_dcd(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                    const Eigen::VectorXd& w, double alpha, DcdExponent exponent) {
  check_inputs(P.cols(), w.size(), q_index.size());
  if (alpha <= 0) throw std::invalid_argument("weighted_dcd: alpha must be positive");
  double acc = 0.0;
  for (int i = 0; i < P.cols(); ++i) {
    if (w[i] == 0.0) continue;
    acc += w[i] * dcd_kernel(q_index.nearest(P.col(i)).second, alpha, exponent);
  }
  return acc / static_cast<double>(P.cols());
}

double weighted_dcd(const PointCloud& P, const PointCloud& Q,
                    const Eigen::VectorXd& w, double alpha, DcdExponent exponent) {
  check_inputs(P.size(), w.size(), Q.size());
  return weighted_dcd(P.pts, NnIndex(Q.pts), w, alpha, exponent);
}

DistanceGrad weighted_dcd_grad(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                               const Eigen::VectorXd& w, double alpha,
                               DcdExponent exponent) {
  check_inputs(P.cols(), w.size(), q_index.size());
  if (alpha <= 0) throw std::invalid_argument("weighted_dcd_grad: alpha must be positive");
  const int n = static_cast<int>(P.cols());
  const double inv_n = 1.0 / static_cast<double>(n);

  DistanceGrad g;
  g.d_source = Eigen::Matrix3Xd::Zero(3, n);
  g.d_weights = Eigen::VectorXd::Zero(n);
  g.d_target = Eigen::Matrix3Xd::Zero(3, q_index.size());

  for (int i = 0; i < n; ++i) {
    auto [j, d] = q_index.nearest(P.col(i));
    const Vec3 diff = P.col(i) - q_index.points().col(j);
    double kernel, slope;  // slope = d(kernel)/d(distance)
    if (exponent == DcdExponent::Squared) {
      const double e = std::exp(-alpha * d * d);
      kernel = 1.0 - e;
      slope = 2.0 * alpha * e * d;
    } else {
      const double e = std::exp(-alpha * d);
      kernel = 1.0 - e;
      slope = alpha * e;
    }
    g.d_weights[i] = inv_n * kernel;
    if (w[i] == 0.0) continue;
    Vec3 dir = Vec3::Zero();
    if (exponent == DcdExponent::Squared) {
      // slope/d * diff = 2 alpha e diff, finite at d = 0
      dir = 2.0 * alpha * std::exp(-alpha * d * d) * diff;
    } else if (d > 1e-12) {
      dir = (slope / d) * diff;
    }
    const Vec3 contrib = (w[i] * inv_n) * dir;
    g.d_source.col(i) += contrib;
    g.d_target.col(j) -= contrib;
  }
  return g;
}

DistanceGrad weighted_dcd_grad(const PointCloud& P, const PointCloud& Q,
                               const Eigen::VectorXd& w, double alpha,
                               DcdExponent exponent) {
  check_inputs(P.size(), w.size(), Q.size());
  return weighted_dcd_grad(P.pts, NnIndex(Q.pts), w, alpha, exponent);
}

}  // namespace artifit
