#include "artifit/energy.hpp"

#include <cmath>
#include <stdexcept>

namespace artifit {

EnergyBreakdown& EnergyBreakdown::operator+=(const EnergyBreakdown& o) {
  object += o.object;
  part += o.part;
  reg_s += o.reg_s;
  reg_d += o.reg_d;
  reg_w += o.reg_w;
  reg_p += o.reg_p;
  reg_a += o.reg_a;
  reg_j += o.reg_j;
  total += o.total;
  return *this;
}

EnergyBreakdown& EnergyBreakdown::operator/=(double f) {
  object /= f;
  part /= f;
  reg_s /= f;
  reg_d /= f;
  reg_w /= f;
  reg_p /= f;
  reg_a /= f;
  reg_j /= f;
  total /= f;
  return *this;
}

Eigen::MatrixXd colwise_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd w(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.cols(); ++n) {
    const Eigen::VectorXd col = logits.col(n);
    const Eigen::VectorXd e = (col.array() - col.maxCoeff()).exp();
    w.col(n) = e / e.sum();
  }
  return w;
}

// ---------------------------------------------------------------------------
// forward terms

double loss_object(const PointCloud& x_aligned, const PointCloud& y,
                   double alpha_l, double alpha_r, DcdExponent exponent) {
  const Eigen::VectorXd ones_n = Eigen::VectorXd::Ones(x_aligned.size());
  const Eigen::VectorXd ones_m = Eigen::VectorXd::Ones(y.size());
  return weighted_dcd(x_aligned.pts, NnIndex(y.pts), ones_n, alpha_l, exponent) +
         weighted_dcd(y.pts, NnIndex(x_aligned.pts), ones_m, alpha_r, exponent);
}

double loss_regS(const Eigen::Matrix3Xd& y, const Eigen::Matrix3Xd& y_base) {
  if (y.cols() != y_base.cols())
    throw std::invalid_argument("loss_regS: size mismatch");
  return (y - y_base).colwise().norm().mean();
}

namespace {

double reg_d_from_ranks(const Eigen::MatrixXd& distances, int k) {
  const double m = static_cast<double>(distances.rows());
  double acc = 0.0;
  for (int rank = 1; rank < k; ++rank) {  // ranks 2..K (0-based columns)
    const Eigen::VectorXd v = distances.col(rank);
    const double mu = v.mean();
    acc += (v.array() - mu).matrix().squaredNorm() / m;
  }
  return acc / static_cast<double>(k - 1);
}

}  // namespace

double loss_regD(const Eigen::Matrix3Xd& y, int k) {
  if (k < 2) throw std::invalid_argument("loss_regD: K must be >= 2");
  if (y.cols() < k) throw std::invalid_argument("loss_regD: N must be >= K");
  return reg_d_from_ranks(knn(y, k).distances, k);
}

double loss_part(const std::vector<PointCloud>& z, const PointCloud& y,
                 const Eigen::MatrixXd& w_x, const Eigen::MatrixXd& w_y,
                 const Assignment& assign, double alpha_l, double alpha_r,
                 DcdExponent exponent) {
  const int joints = assign.joints();
  if (static_cast<int>(z.size()) != 2 * joints)
    throw std::invalid_argument("loss_part: slot count mismatch");
  const NnIndex y_index(y.pts);
  double acc = 0.0;
  for (int j = 0; j < joints; ++j)
    for (int i = 0; i < 2; ++i) {
      const int slot = 2 * j + i;
      const int p = assign.sigma(j, i) - 1;
      const double inv_b = 1.0 / assign.b(j, i);
      acc += inv_b * weighted_dcd(z[slot].pts, y_index, w_x.row(p).transpose(),
                                  alpha_l, exponent);
      acc += inv_b * weighted_dcd(y.pts, NnIndex(z[slot].pts),
                                  w_y.row(p).transpose(), alpha_r, exponent);
    }
  return acc;
}

double loss_regW(const Eigen::MatrixXd& w_y, double beta) {
  const int parts = static_cast<int>(w_y.rows());
  double acc = 0.0;
  for (int p = 0; p < parts; ++p)
    acc += std::max(beta - w_y.row(p).mean(), 0.0);
  return acc / parts;
}

double loss_regP(const std::vector<PointCloud>& z, const Assignment& assign,
                 int parts) {
  const int joints = assign.joints();
  const double norm = 1.0 / (2.0 * (parts - 1));
  double acc = 0.0;
  for (int p = 1; p <= parts; ++p) {
    std::vector<int> slots;
    for (int j = 0; j < joints; ++j)
      for (int i = 0; i < 2; ++i)
        if (assign.sigma(j, i) == p) slots.push_back(2 * j + i);
    if (slots.size() < 2) continue;  // singleton class coincides with its mean
    Eigen::Matrix3Xd mean = Eigen::Matrix3Xd::Zero(3, z[slots[0]].size());
    for (int s : slots) mean += z[s].pts;
    mean /= static_cast<double>(slots.size());
    for (int s : slots)
      acc += (z[s].pts - mean).colwise().norm().mean();
  }
  return norm * acc;
}

double loss_regA(const Eigen::MatrixXd& a_y, int parts) {
  return a_y.array().square().sum() / (2.0 * (parts - 1));
}

double loss_regJ(const Eigen::Matrix3Xd& pivots_x, const Eigen::Matrix3Xd& pivots_y,
                 const PointCloud& x_aligned, const PointCloud& y,
                 double alpha_l, double alpha_r, DcdExponent exponent) {
  if (pivots_x.cols() < 1) throw std::invalid_argument("loss_regJ: need J >= 1");
  const Eigen::VectorXd ones_j = Eigen::VectorXd::Ones(pivots_x.cols());
  return weighted_dcd(pivots_y, NnIndex(y.pts), ones_j, alpha_l, exponent) +
         weighted_dcd(pivots_x, NnIndex(x_aligned.pts), ones_j, alpha_r, exponent);
}

// ---------------------------------------------------------------------------
// realization

Realized realize(const InstanceState& s, const Eigen::Matrix3Xd& y_base,
                 const std::vector<JointSpec>& specs) {
  const int joints = static_cast<int>(specs.size());
  if (joints < 1) throw std::invalid_argument("realize: need at least one joint");
  if (s.joints_x.size() != specs.size() || s.joints_y.size() != specs.size())
    throw std::invalid_argument("realize: joint parameter count mismatch");
  if (s.deformation.cols() != y_base.cols())
    throw std::invalid_argument("realize: deformation/base size mismatch");

  Realized r;
  const Rotation r_res = residual_rotation_from_raw(s.rot_raw);
  r.r_o = r_res * icosahedral_anchors()[s.anchor];
  r.t_o = s.translation;
  r.x_aligned.pts = (r.r_o.m * s.x.pts).colwise() + r.t_o;
  r.x_aligned.labels = s.x.labels;
  r.y = y_base + s.deformation;
  r.w_x = colwise_softmax(s.seg_logits_x);
  r.w_y = colwise_softmax(s.seg_logits_y);

  r.jx.resize(joints);
  r.jy.resize(joints);
  r.a_y.resize(joints, 2);
  for (int j = 0; j < joints; ++j) {
    const JointRaw& rx = s.joints_x[j];
    const JointRaw& ry = s.joints_y[j];
    const double nx = rx.dir_raw.norm(), ny = ry.dir_raw.norm();
    if (nx < 1e-6 || ny < 1e-6)
      throw std::invalid_argument("realize: joint direction raw is degenerate");
    r.jx[j].pivot = rx.pivot;
    r.jy[j].pivot = ry.pivot;
    r.jx[j].direction = rx.dir_raw / nx;
    r.jy[j].direction = ry.dir_raw / ny;
    for (int i = 0; i < 2; ++i) {
      r.jx[j].states[i] = joint_state_from_raw(rx.state_raw[i], specs[j]);
      r.jy[j].states[i] = joint_state_from_raw(ry.state_raw[i], specs[j]);
      r.a_y(j, i) = r.jy[j].states[i];
    }
  }

  r.z.resize(2 * joints);
  for (int j = 0; j < joints; ++j)
    for (int i = 0; i < 2; ++i)
      r.z[2 * j + i] = part_aligned_input(r.x_aligned, r.jx[j], r.jy[j], specs[j], i);
  return r;
}

// ---------------------------------------------------------------------------
// total energy

namespace {

struct TermValues {
  EnergyBreakdown bd;
};

EnergyBreakdown assemble(const EnergyConfig& cfg, EnergyBreakdown bd) {
  const LossWeights& lw = cfg.weights;
  bd.total = lw.object * bd.object + lw.part * bd.part + lw.reg_s * bd.reg_s +
             lw.reg_d * bd.reg_d + lw.reg_w * bd.reg_w + lw.reg_p * bd.reg_p +
             lw.reg_a * bd.reg_a + lw.reg_j * bd.reg_j;
  return bd;
}

Eigen::Matrix3Xd pivot_matrix(const std::vector<JointParams>& joints) {
  Eigen::Matrix3Xd m(3, joints.size());
  for (size_t j = 0; j < joints.size(); ++j) m.col(j) = joints[j].pivot;
  return m;
}

}  // namespace

EnergyBreakdown total_energy(const InstanceState& s, const Eigen::Matrix3Xd& y_base,
                             const std::vector<JointSpec>& specs,
                             const Assignment& assign, const EnergyConfig& cfg) {
  const Realized r = realize(s, y_base, specs);
  const int parts = static_cast<int>(s.seg_logits_x.rows());
  const NnIndex y_index(r.y);
  const NnIndex xa_index(r.x_aligned.pts);
  const Eigen::VectorXd ones_n = Eigen::VectorXd::Ones(r.x_aligned.size());
  const Eigen::VectorXd ones_m = Eigen::VectorXd::Ones(r.y.cols());
  const Eigen::VectorXd ones_j = Eigen::VectorXd::Ones(specs.size());

  EnergyBreakdown bd;
  bd.object = weighted_dcd(r.x_aligned.pts, y_index, ones_n, cfg.alpha_l, cfg.exponent) +
              weighted_dcd(r.y, xa_index, ones_m, cfg.alpha_r, cfg.exponent);
  double part_acc = 0.0;
  for (int j = 0; j < assign.joints(); ++j)
    for (int i = 0; i < 2; ++i) {
      const int slot = 2 * j + i;
      const int p = assign.sigma(j, i) - 1;
      const double inv_b = 1.0 / assign.b(j, i);
      part_acc += inv_b * weighted_dcd(r.z[slot].pts, y_index,
                                       r.w_x.row(p).transpose(), cfg.alpha_l,
                                       cfg.exponent);
      part_acc += inv_b * weighted_dcd(r.y, NnIndex(r.z[slot].pts),
                                       r.w_y.row(p).transpose(), cfg.alpha_r,
                                       cfg.exponent);
    }
  bd.part = part_acc;
  bd.reg_s = loss_regS(r.y, y_base);
  bd.reg_d = loss_regD(r.y, cfg.k_density);
  bd.reg_w = loss_regW(r.w_y, cfg.beta);
  bd.reg_p = loss_regP(r.z, assign, parts);
  bd.reg_a = loss_regA(r.a_y, parts);
  bd.reg_j = weighted_dcd(pivot_matrix(r.jy), y_index, ones_j, cfg.alpha_l, cfg.exponent) +
             weighted_dcd(pivot_matrix(r.jx), xa_index, ones_j, cfg.alpha_r, cfg.exponent);
  return assemble(cfg, bd);
}

// ---------------------------------------------------------------------------
// gradients

namespace {

// value + gradient of a weighted DCD with matches held fixed; value is
// accumulated exactly like weighted_dcd so the two paths agree bitwise
double dcd_value_grad(const Eigen::Matrix3Xd& P, const NnIndex& q_index,
                      const Eigen::VectorXd& w, double alpha, DcdExponent exponent,
                      double lambda, Eigen::Matrix3Xd& d_source,
                      Eigen::Matrix3Xd& d_target, Eigen::VectorXd* d_weights) {
  const int n = static_cast<int>(P.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    auto [j, d] = q_index.nearest(P.col(i));
    double kernel, radial;  // radial * diff = d(kernel)/d(P_i)
    if (exponent == DcdExponent::Squared) {
      const double e = std::exp(-alpha * d * d);
      kernel = 1.0 - e;
      radial = 2.0 * alpha * e;
    } else {
      const double e = std::exp(-alpha * d);
      kernel = 1.0 - e;
      radial = d > 1e-12 ? alpha * e / d : 0.0;
    }
    acc += w[i] * kernel;
    if (d_weights) (*d_weights)[i] += lambda * inv_n * kernel;
    if (w[i] != 0.0) {
      const Vec3 contrib =
          (lambda * w[i] * inv_n * radial) * (P.col(i) - q_index.points().col(j));
      d_source.col(i) += contrib;
      d_target.col(j) -= contrib;
    }
  }
  return acc * inv_n;
}

struct Skew {
  static Mat3 of(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
  }
};

// phi/sin(phi) and its derivative w.r.t. cos(phi)
void direction_gain(double c, double& g, double& gp) {
  c = std::clamp(c, -1.0, 1.0);
  const double phi = std::acos(c);
  const double s = std::sqrt(std::max(1.0 - c * c, 0.0));
  if (s < 1e-6) {
    if (c > 0) {  // parallel
      g = 1.0 + phi * phi / 6.0;
      gp = -1.0 / 3.0 - 2.0 * phi * phi / 15.0;
    } else {  // antiparallel: degenerate branch, caller freezes the chain
      g = 0.0;
      gp = 0.0;
    }
    return;
  }
  g = phi / s;
  gp = -(s - phi * c) / (s * s * s);
}

}  // namespace

EnergyBreakdown total_energy_grad(const InstanceState& s,
                                  const Eigen::Matrix3Xd& y_base,
                                  const std::vector<JointSpec>& specs,
                                  const Assignment& assign,
                                  const EnergyConfig& cfg, EnergyGrad& grad) {
  const Realized r = realize(s, y_base, specs);
  const int n = r.x_aligned.size();
  const int m = static_cast<int>(r.y.cols());
  const int parts = static_cast<int>(s.seg_logits_x.rows());
  const int joints = static_cast<int>(specs.size());
  const LossWeights& lw = cfg.weights;

  const NnIndex y_index(r.y);
  const NnIndex xa_index(r.x_aligned.pts);
  const Eigen::VectorXd ones_n = Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd ones_m = Eigen::VectorXd::Ones(m);
  const Eigen::VectorXd ones_j = Eigen::VectorXd::Ones(joints);

  // accumulation buffers over realized quantities
  Eigen::Matrix3Xd d_xa = Eigen::Matrix3Xd::Zero(3, n);
  Eigen::Matrix3Xd d_y = Eigen::Matrix3Xd::Zero(3, m);
  Eigen::MatrixXd d_wx = Eigen::MatrixXd::Zero(parts, n);
  Eigen::MatrixXd d_wy = Eigen::MatrixXd::Zero(parts, m);
  std::vector<Eigen::Matrix3Xd> d_z(2 * joints, Eigen::Matrix3Xd::Zero(3, n));
  std::vector<Vec3> d_pivot_x(joints, Vec3::Zero()), d_pivot_y(joints, Vec3::Zero());
  std::vector<Vec3> d_dir_x(joints, Vec3::Zero()), d_dir_y(joints, Vec3::Zero());
  Eigen::MatrixXd d_ax = Eigen::MatrixXd::Zero(joints, 2);
  Eigen::MatrixXd d_ay = Eigen::MatrixXd::Zero(joints, 2);
  Eigen::Matrix3Xd d_ybase_direct = Eigen::Matrix3Xd::Zero(3, m);

  EnergyBreakdown bd;

  // object term
  bd.object = dcd_value_grad(r.x_aligned.pts, y_index, ones_n, cfg.alpha_l,
                             cfg.exponent, lw.object, d_xa, d_y, nullptr) +
              dcd_value_grad(r.y, xa_index, ones_m, cfg.alpha_r, cfg.exponent,
                             lw.object, d_y, d_xa, nullptr);

  // part term
  {
    double acc = 0.0;
    Eigen::VectorXd dw_row_x(n), dw_row_y(m);
    for (int j = 0; j < joints; ++j)
      for (int i = 0; i < 2; ++i) {
        const int slot = 2 * j + i;
        const int p = assign.sigma(j, i) - 1;
        const double inv_b = 1.0 / assign.b(j, i);
        const double lam = lw.part * inv_b;
        dw_row_x.setZero();
        double v = dcd_value_grad(r.z[slot].pts, y_index, r.w_x.row(p).transpose(),
                                  cfg.alpha_l, cfg.exponent, lam, d_z[slot], d_y,
                                  &dw_row_x);
        d_wx.row(p) += dw_row_x.transpose();
        acc += inv_b * v;

        const NnIndex z_index(r.z[slot].pts);
        dw_row_y.setZero();
        v = dcd_value_grad(r.y, z_index, r.w_y.row(p).transpose(), cfg.alpha_r,
                           cfg.exponent, lam, d_y, d_z[slot], &dw_row_y);
        d_wy.row(p) += dw_row_y.transpose();
        acc += inv_b * v;
      }
    bd.part = acc;
  }

  // shape variance regularizer
  {
    const double inv_m = 1.0 / static_cast<double>(m);
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      const Vec3 u = r.y.col(i) - y_base.col(i);
      const double d = u.norm();
      acc += d;
      if (d > 1e-12) {
        const Vec3 g = (lw.reg_s * inv_m / d) * u;
        d_y.col(i) += g;
        d_ybase_direct.col(i) -= g;
      }
    }
    bd.reg_s = acc * inv_m;
  }

  // density regularizer
  {
    const int k = cfg.k_density;
    if (m < k) throw std::invalid_argument("total_energy_grad: N must be >= K");
    const KnnResult nn = knn(r.y, k);
    bd.reg_d = reg_d_from_ranks(nn.distances, k);
    const double scale = lw.reg_d / static_cast<double>(k - 1);
    for (int rank = 1; rank < k; ++rank) {
      const Eigen::VectorXd v = nn.distances.col(rank);
      const double mu = v.mean();
      for (int i = 0; i < m; ++i) {
        const double d = v[i];
        if (d < 1e-12) continue;
        const int o = nn.indices(i, rank);
        const Vec3 u = (scale * 2.0 / m * (d - mu) / d) * (r.y.col(i) - r.y.col(o));
        d_y.col(i) += u;
        d_y.col(o) -= u;
      }
    }
  }

  // segmentation mass regularizer
  {
    double acc = 0.0;
    const double inv_mass = 1.0 / (static_cast<double>(parts) * m);
    for (int p = 0; p < parts; ++p) {
      const double short_fall = cfg.beta - r.w_y.row(p).mean();
      if (short_fall > 0) {
        acc += short_fall;
        d_wy.row(p).array() -= lw.reg_w * inv_mass;
      }
    }
    bd.reg_w = acc / parts;
  }

  // shared-part coincidence regularizer
  {
    const double norm = 1.0 / (2.0 * (parts - 1));
    const double c0 = lw.reg_p * norm / static_cast<double>(n);
    double acc = 0.0;
    for (int p = 1; p <= parts; ++p) {
      std::vector<int> slots;
      for (int j = 0; j < joints; ++j)
        for (int i = 0; i < 2; ++i)
          if (assign.sigma(j, i) == p) slots.push_back(2 * j + i);
      if (slots.size() < 2) continue;
      const double inv_c = 1.0 / static_cast<double>(slots.size());
      Eigen::Matrix3Xd mean = Eigen::Matrix3Xd::Zero(3, n);
      for (int t : slots) mean += r.z[t].pts;
      mean *= inv_c;
      for (int t : slots) acc += (r.z[t].pts - mean).colwise().norm().mean();
      for (int t : slots)
        for (int i = 0; i < n; ++i) {
          const Vec3 u = r.z[t].pts.col(i) - mean.col(i);
          const double d = u.norm();
          if (d < 1e-12) continue;
          const Vec3 g = (c0 / d) * u;
          d_z[t].col(i) += g;
          for (int t2 : slots) d_z[t2].col(i) -= inv_c * g;
        }
    }
    bd.reg_p = norm * acc;
  }

  // joint state regularizer
  bd.reg_a = loss_regA(r.a_y, parts);
  d_ay.array() += (lw.reg_a / (parts - 1)) * r.a_y.array();

  // pivot proximity regularizer
  {
    const Eigen::Matrix3Xd piv_x = pivot_matrix(r.jx);
    const Eigen::Matrix3Xd piv_y = pivot_matrix(r.jy);
    Eigen::Matrix3Xd d_piv_x = Eigen::Matrix3Xd::Zero(3, joints);
    Eigen::Matrix3Xd d_piv_y = Eigen::Matrix3Xd::Zero(3, joints);
    bd.reg_j = dcd_value_grad(piv_y, y_index, ones_j, cfg.alpha_l, cfg.exponent,
                              lw.reg_j, d_piv_y, d_y, nullptr) +
               dcd_value_grad(piv_x, xa_index, ones_j, cfg.alpha_r, cfg.exponent,
                              lw.reg_j, d_piv_x, d_xa, nullptr);
    for (int j = 0; j < joints; ++j) {
      d_pivot_x[j] += d_piv_x.col(j);
      d_pivot_y[j] += d_piv_y.col(j);
    }
  }

  // --- dissolve the part-level alignments -------------------------------
  for (int j = 0; j < joints; ++j) {
    const Vec3 dx = r.jx[j].direction, dy = r.jy[j].direction;
    const Rotation r_d = direction_alignment(dx, dy);
    const double c = std::clamp(dx.dot(dy), -1.0, 1.0);
    const Vec3 cross = dx.cross(dy);
    const bool degenerate = c < -1.0 + 1e-6;  // R_d chain frozen here
    double g, gp;
    direction_gain(c, g, gp);
    const Vec3 r_d_vec = degenerate ? rotation_to_axis_angle(r_d) : Vec3(g * cross);

    for (int i = 0; i < 2; ++i) {
      const int slot = 2 * j + i;
      const Eigen::Matrix3Xd& G = d_z[slot];
      if (G.size() == 0) continue;
      const Vec3 g1 = G.rowwise().sum();
      const double delta = r.jy[j].states[i] - r.jx[j].states[i];
      const Eigen::Matrix3Xd u_pts = r.x_aligned.pts.colwise() - r.jx[j].pivot;

      Mat3 full;  // the rotation applied to (Xa - c_x)
      Mat3 d_rd = Mat3::Zero();
      if (specs[j].kind == JointKind::Revolute) {
        const Vec3 r_a_vec = dy * delta;
        const Rotation r_a = axis_angle_to_rotation(r_a_vec);
        full = r_a.m * r_d.m;
        const Mat3 d_full = G * u_pts.transpose();
        const Mat3 d_ra = d_full * r_d.m.transpose();
        d_rd = r_a.m.transpose() * d_full;
        const Vec3 d_ra_vec = rotation_vector_grad(r_a_vec, d_ra);
        const double d_delta = dy.dot(d_ra_vec);
        d_dir_y[j] += delta * d_ra_vec;
        d_ay(j, i) += d_delta;
        d_ax(j, i) -= d_delta;
      } else {
        full = r_d.m;
        d_rd = G * u_pts.transpose();
        // prismatic state enters through the shift d_y * delta
        const double d_delta = dy.dot(g1);
        d_dir_y[j] += delta * g1;
        d_ay(j, i) += d_delta;
        d_ax(j, i) -= d_delta;
      }

      d_xa += full.transpose() * G;
      d_pivot_x[j] -= full.transpose() * g1;
      d_pivot_y[j] += g1;

      if (!degenerate) {
        const Vec3 d_rd_vec = rotation_vector_grad(r_d_vec, d_rd);
        const double wdot = cross.dot(d_rd_vec);
        d_dir_x[j] += gp * wdot * dy + g * dy.cross(d_rd_vec);
        d_dir_y[j] += gp * wdot * dx - g * dx.cross(d_rd_vec);
      }
    }
  }

  // --- dissolve the object-level alignment ------------------------------
  grad.translation = d_xa.rowwise().sum();
  {
    const Mat3 r_anc = icosahedral_anchors()[s.anchor].m;
    const Mat3 d_ro = d_xa * s.x.pts.transpose();
    const Mat3 d_rres = d_ro * r_anc.transpose();
    const double mnorm = s.rot_raw.norm();
    const double fifth_pi = 0.2 * std::acos(-1.0);
    if (mnorm < 1e-4) {
      // r = 0.2*pi*(1 - m^2/3 + ...) raw; series keeps the chain smooth
      const Vec3 r_vec = fifth_pi * (1.0 - mnorm * mnorm / 3.0) * s.rot_raw;
      const Vec3 d_rvec = rotation_vector_grad(r_vec, d_rres);
      const double sp_over_m = fifth_pi * (-2.0 / 3.0 + 8.0 * mnorm * mnorm / 15.0);
      grad.rot_raw = fifth_pi * (1.0 - mnorm * mnorm / 3.0) * d_rvec +
                     sp_over_m * s.rot_raw.dot(d_rvec) * s.rot_raw;
    } else {
      const double th = std::tanh(mnorm);
      const double scale = fifth_pi * th / mnorm;
      const Vec3 r_vec = scale * s.rot_raw;
      const Vec3 d_rvec = rotation_vector_grad(r_vec, d_rres);
      const double sp = fifth_pi * (mnorm * (1.0 - th * th) - th) / (mnorm * mnorm);
      grad.rot_raw = scale * d_rvec + (sp / mnorm) * s.rot_raw.dot(d_rvec) * s.rot_raw;
    }
  }

  // --- squashing chains --------------------------------------------------
  grad.seg_logits_x.resize(parts, n);
  grad.seg_logits_y.resize(parts, m);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd w = r.w_x.col(i), dw = d_wx.col(i);
    grad.seg_logits_x.col(i) = w.array() * (dw.array() - w.dot(dw));
  }
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd w = r.w_y.col(i), dw = d_wy.col(i);
    grad.seg_logits_y.col(i) = w.array() * (dw.array() - w.dot(dw));
  }

  grad.joints_x.assign(joints, JointRawGrad{});
  grad.joints_y.assign(joints, JointRawGrad{});
  for (int j = 0; j < joints; ++j) {
    grad.joints_x[j].pivot = d_pivot_x[j];
    grad.joints_y[j].pivot = d_pivot_y[j];
    const double nx = s.joints_x[j].dir_raw.norm();
    const double ny = s.joints_y[j].dir_raw.norm();
    const Vec3 ux = r.jx[j].direction, uy = r.jy[j].direction;
    grad.joints_x[j].dir_raw = (d_dir_x[j] - ux * ux.dot(d_dir_x[j])) / nx;
    grad.joints_y[j].dir_raw = (d_dir_y[j] - uy * uy.dot(d_dir_y[j])) / ny;
    for (int i = 0; i < 2; ++i) {
      const double sx = 1.0 / (1.0 + std::exp(-s.joints_x[j].state_raw[i]));
      const double sy = 1.0 / (1.0 + std::exp(-s.joints_y[j].state_raw[i]));
      grad.joints_x[j].state_raw[i] = d_ax(j, i) * specs[j].range * sx * (1.0 - sx);
      grad.joints_y[j].state_raw[i] = d_ay(j, i) * specs[j].range * sy * (1.0 - sy);
    }
  }

  grad.deformation = d_y;
  grad.y_base = d_y + d_ybase_direct;

  return assemble(cfg, bd);
}

}  // namespace artifit
