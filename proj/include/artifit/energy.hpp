#pragma once

#include <Eigen/Core>

#include <vector>

#include "artifit/articulation.hpp"
#include "artifit/assignment.hpp"
#include "artifit/cloud.hpp"
#include "artifit/distance.hpp"
#include "artifit/geom.hpp"

namespace artifit {

struct LossWeights {
  double object = 10, part = 10, reg_s = 100, reg_d = 10;
  double reg_w = 10, reg_p = 10, reg_a = 10, reg_j = 10;
};

struct EnergyBreakdown {
  double object = 0, part = 0, reg_s = 0, reg_d = 0;
  double reg_w = 0, reg_p = 0, reg_a = 0, reg_j = 0;
  double total = 0;

  EnergyBreakdown& operator+=(const EnergyBreakdown& o);
  EnergyBreakdown& operator/=(double f);
};

struct EnergyConfig {
  LossWeights weights;
  double alpha_l = 30.0;
  double alpha_r = 120.0;
  double beta = 0.05;
  int k_density = 64;
  DcdExponent exponent = DcdExponent::Squared;
};

// --- individual loss terms ---------------------------------------------

// DCD(Xa -> Y, 1, alpha_l) + DCD(Y -> Xa, 1, alpha_r)
double loss_object(const PointCloud& x_aligned, const PointCloud& y,
                   double alpha_l, double alpha_r,
                   DcdExponent exponent = DcdExponent::Squared);

// mean per-point Euclidean distance between Y and the base shape
double loss_regS(const Eigen::Matrix3Xd& y, const Eigen::Matrix3Xd& y_base);

// mean over ranks 2..K of the across-point variance of the rank-k
// neighbor distance (population variance)
double loss_regD(const Eigen::Matrix3Xd& y, int k);

// segmentation-weighted part-level reconstruction loss
double loss_part(const std::vector<PointCloud>& z, const PointCloud& y,
                 const Eigen::MatrixXd& w_x, const Eigen::MatrixXd& w_y,
                 const Assignment& assign, double alpha_l, double alpha_r,
                 DcdExponent exponent = DcdExponent::Squared);

// (1/P) sum_p max(beta - mean_n w_y(p,n), 0)
double loss_regW(const Eigen::MatrixXd& w_y, double beta);

// coincidence of the aligned inputs of each shared part
double loss_regP(const std::vector<PointCloud>& z, const Assignment& assign,
                 int parts);

// (1/(2(P-1))) sum of squared reconstruction-side joint states
double loss_regA(const Eigen::MatrixXd& a_y, int parts);

// joint pivots must lie close to their respective clouds
double loss_regJ(const Eigen::Matrix3Xd& pivots_x, const Eigen::Matrix3Xd& pivots_y,
                 const PointCloud& x_aligned, const PointCloud& y,
                 double alpha_l, double alpha_r,
                 DcdExponent exponent = DcdExponent::Squared);

// --- instance-state energy ----------------------------------------------

/// Raw (unsquashed) per-joint parameters for one cloud side.
struct JointRaw {
  Vec3 pivot = Vec3::Zero();
  Vec3 dir_raw = Vec3::UnitZ();
  Eigen::Vector2d state_raw = Eigen::Vector2d::Zero();
};

/// Free parameters of one instance, with the anchor choice frozen.
struct InstanceState {
  PointCloud x;  // normalized input
  int anchor = 0;
  Vec3 rot_raw = Vec3::Zero();      // residual rotation of the frozen anchor
  Vec3 translation = Vec3::Zero();  // translation of the frozen anchor
  Eigen::MatrixXd seg_logits_x;     // P x N
  Eigen::MatrixXd seg_logits_y;     // P x M
  std::vector<JointRaw> joints_x, joints_y;
  Eigen::Matrix3Xd deformation;     // 3 x M, added to the base shape
};

/// Everything the losses consume, computed from an InstanceState.
struct Realized {
  Rotation r_o;
  Vec3 t_o;
  PointCloud x_aligned;
  Eigen::Matrix3Xd y;  // y_base + deformation
  Eigen::MatrixXd w_x, w_y;
  std::vector<JointParams> jx, jy;
  std::vector<PointCloud> z;  // slot-major: z[2j + i]
  Eigen::MatrixXd a_y;        // J x 2 realized reconstruction states
};

Eigen::MatrixXd colwise_softmax(const Eigen::MatrixXd& logits);

Realized realize(const InstanceState& s, const Eigen::Matrix3Xd& y_base,
                 const std::vector<JointSpec>& specs);

EnergyBreakdown total_energy(const InstanceState& s, const Eigen::Matrix3Xd& y_base,
                             const std::vector<JointSpec>& specs,
                             const Assignment& assign, const EnergyConfig& cfg);

struct JointRawGrad {
  Vec3 pivot = Vec3::Zero();
  Vec3 dir_raw = Vec3::Zero();
  Eigen::Vector2d state_raw = Eigen::Vector2d::Zero();
};

/// Gradient of the weighted total w.r.t. every free parameter.
struct EnergyGrad {
  Vec3 rot_raw = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
  Eigen::MatrixXd seg_logits_x, seg_logits_y;
  std::vector<JointRawGrad> joints_x, joints_y;
  Eigen::Matrix3Xd deformation;
  Eigen::Matrix3Xd y_base;
};

// Analytic gradients with nearest-neighbor matches, the anchor choice and
// the assignment held fixed. Returns the same breakdown as total_energy.
EnergyBreakdown total_energy_grad(const InstanceState& s,
                                  const Eigen::Matrix3Xd& y_base,
                                  const std::vector<JointSpec>& specs,
                                  const Assignment& assign,
                                  const EnergyConfig& cfg, EnergyGrad& grad);

}  // namespace artifit
