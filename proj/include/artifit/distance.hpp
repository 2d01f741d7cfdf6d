#pragma once

#include <Eigen/Core>

#include "artifit/cloud.hpp"
#include "artifit/geom.hpp"

namespace artifit {

// Exponent convention for the DCD kernel 1 - exp(-alpha * f(d)):
// Squared uses f(d) = d^2 (differentiable at d = 0), Euclidean uses f(d) = d.
enum class DcdExponent { Squared, Euclidean };

// Nearest neighbor in Q for every column of P; ties by lowest index.
void nearest_each(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                  std::vector<int>& idx, std::vector<double>& dist);

// Single-directional weighted Chamfer distance with un-squared Euclidean
// point distances: (1/|P|) sum_n w_n min_m ||P_n - Q_m||.
double weighted_cd(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                   const Eigen::VectorXd& w);
double weighted_cd(const PointCloud& P, const PointCloud& Q,
                   const Eigen::VectorXd& w);

// Density-aware variant: (1/|P|) sum_n w_n (1 - exp(-alpha f(d_n))).
double weighted_dcd(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                    const Eigen::VectorXd& w, double alpha,
                    DcdExponent exponent = DcdExponent::Squared);
double weighted_dcd(const PointCloud& P, const PointCloud& Q,
                    const Eigen::VectorXd& w, double alpha,
                    DcdExponent exponent = DcdExponent::Squared);

/// Gradients of weighted_dcd with nearest-neighbor indices held fixed.
struct DistanceGrad {
  Eigen::Matrix3Xd d_source;  // 3 x |P|
  Eigen::VectorXd d_weights;  // |P|
  Eigen::Matrix3Xd d_target;  // 3 x |Q| (value depends on Q through matches)
};

DistanceGrad weighted_dcd_grad(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                               const Eigen::VectorXd& w, double alpha,
                               DcdExponent exponent = DcdExponent::Squared);
DistanceGrad weighted_dcd_grad(const PointCloud& P, const PointCloud& Q,
                               const Eigen::VectorXd& w, double alpha,
                               DcdExponent exponent = DcdExponent::Squared);

}  // namespace artifit
