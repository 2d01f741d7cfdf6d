#include <doctest.h>

#include <random>

#include "artifit/energy.hpp"
#include "artifit/gradcheck.hpp"
#include "artifit/rng.hpp"
#include "oracles.hpp"

using namespace artifit;

namespace {

PointCloud cloud_of(const Eigen::Matrix3Xd& pts) {
  PointCloud c;
  c.pts = pts;
  return c;
}

}  // namespace

TEST_CASE("loss_object") {
  auto rng = make_rng(61);
  const PointCloud y = cloud_of(oracles::random_cloud(rng, 20));
  CHECK(loss_object(y, y, 30, 120) == 0.0);

  PointCloud a, b;
  a.pts = Vec3(0, 0, 0);
  b.pts = Vec3(0.1, 0, 0);
  const double expected = (1 - std::exp(-0.3)) + (1 - std::exp(-1.2));
  CHECK(loss_object(a, b, 30, 120) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(expected == doctest::Approx(0.9579875674060799).epsilon(1e-12));

  const PointCloud far = cloud_of(oracles::random_cloud(rng, 15).colwise() +
                                  Vec3(0.4, 0, 0));
  CHECK(loss_object(y, far, 30, 120) < 2.0);
  CHECK(loss_object(y, far, 30, 120) > 0.0);
}

TEST_CASE("loss_regS") {
  auto rng = make_rng(62);
  const Eigen::Matrix3Xd y = oracles::random_cloud(rng, 30);
  CHECK(loss_regS(y, y) == 0.0);

  Eigen::Matrix3Xd shifted = y.colwise() + Vec3(0.1, 0, 0);
  CHECK(loss_regS(shifted, y) == doctest::Approx(0.1).epsilon(1e-12));

  const Eigen::Matrix3Xd other = oracles::random_cloud(rng, 30);
  double expected = 0;
  for (int i = 0; i < 30; ++i) expected += (y.col(i) - other.col(i)).norm();
  CHECK(loss_regS(y, other) == doctest::Approx(expected / 30).epsilon(1e-12));

  CHECK_THROWS_AS(loss_regS(y, oracles::random_cloud(rng, 8)),
                  std::invalid_argument);
}

TEST_CASE("loss_regD zero on symmetric constructions") {
  // interior-symmetric 1D lattice: a circle has all rank-k distances equal
  const int n = 24;
  Eigen::Matrix3Xd ring(3, n);
  const double pi = std::acos(-1.0);
  for (int i = 0; i < n; ++i)
    ring.col(i) = Vec3(std::cos(2 * pi * i / n), std::sin(2 * pi * i / n), 0.0);
  CHECK(loss_regD(ring, 3) == doctest::Approx(0.0).epsilon(1e-18));

  // regular simplex: all pairwise distances equal, K = N
  Eigen::Matrix3Xd simplex(3, 4);
  simplex.col(0) = Vec3(1, 1, 1);
  simplex.col(1) = Vec3(1, -1, -1);
  simplex.col(2) = Vec3(-1, 1, -1);
  simplex.col(3) = Vec3(-1, -1, 1);
  CHECK(loss_regD(simplex, 4) == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("loss_regD matches a brute-force variance oracle") {
  auto rng = make_rng(63);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 20 + trial;
    const int k = 6;
    const Eigen::Matrix3Xd y = oracles::random_cloud(rng, n);
    double acc = 0;
    for (int rank = 1; rank < k; ++rank) {
      std::vector<double> v(n);
      std::vector<int> idx;
      std::vector<double> dist;
      for (int i = 0; i < n; ++i) {
        oracles::brute_knn(y, i, k, idx, dist);
        v[i] = dist[rank];
      }
      double mean = 0;
      for (double d : v) mean += d;
      mean /= n;
      double var = 0;
      for (double d : v) var += (d - mean) * (d - mean);
      acc += var / n;
    }
    CHECK(loss_regD(y, k) == doctest::Approx(acc / (k - 1)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(loss_regD(oracles::random_cloud(rng, 6), 8),
                  std::invalid_argument);
}

TEST_CASE("loss_regW") {
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(2, 10, 0.5);
  CHECK(loss_regW(uniform, 0.05) == 0.0);

  Eigen::MatrixXd dead(2, 10);
  dead.row(0).setZero();
  dead.row(1).setOnes();
  CHECK(loss_regW(dead, 0.05) == doctest::Approx(0.05 / 2).epsilon(1e-15));

  Eigen::MatrixXd low(2, 100);
  low.row(0).setConstant(0.02);
  low.row(1).setConstant(0.98);
  CHECK(loss_regW(low, 0.05) == doctest::Approx(0.015).epsilon(1e-12));
}

TEST_CASE("loss_regP") {
  auto rng = make_rng(64);
  // no shared parts: every class is a singleton
  Assignment plain;
  plain.sigma.resize(1, 2);
  plain.sigma << 1, 2;
  fill_share_counts(plain);
  std::vector<PointCloud> z = {cloud_of(oracles::random_cloud(rng, 10)),
                               cloud_of(oracles::random_cloud(rng, 10))};
  CHECK(loss_regP(z, plain, 2) == 0.0);

  // shared part offset by +-0.1 from the class mean
  Assignment shared;
  shared.sigma.resize(2, 2);
  shared.sigma << 1, 2, 1, 3;
  fill_share_counts(shared);
  const Eigen::Matrix3Xd base = oracles::random_cloud(rng, 10);
  std::vector<PointCloud> z3 = {
      cloud_of(base.colwise() + Vec3(0.1, 0, 0)),
      cloud_of(oracles::random_cloud(rng, 10)),
      cloud_of(base.colwise() - Vec3(0.1, 0, 0)),
      cloud_of(oracles::random_cloud(rng, 10))};
  // each shared slot sits 0.1 from the mean; norm constant over points
  const double expected = (0.1 + 0.1) / (2.0 * (3 - 1));
  CHECK(loss_regP(z3, shared, 3) == doctest::Approx(expected).epsilon(1e-12));

  // direct recomputation oracle on a random 3-part instance
  std::vector<PointCloud> zr;
  for (int s = 0; s < 4; ++s) zr.push_back(cloud_of(oracles::random_cloud(rng, 6)));
  const Eigen::Matrix3Xd mean = 0.5 * (zr[0].pts + zr[2].pts);
  double acc = 0;
  acc += (zr[0].pts - mean).colwise().norm().mean();
  acc += (zr[2].pts - mean).colwise().norm().mean();
  CHECK(loss_regP(zr, shared, 3) == doctest::Approx(acc / 4.0).epsilon(1e-12));
}

TEST_CASE("loss_regA") {
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 2);
  CHECK(loss_regA(zero, 2) == 0.0);

  Eigen::MatrixXd single(1, 2);
  single << 0.5, 0.0;
  CHECK(loss_regA(single, 2) == doctest::Approx(0.125).epsilon(1e-15));

  auto rng = make_rng(65);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd a(2, 2);
  for (int i = 0; i < 4; ++i) a.data()[i] = u(rng);
  CHECK(loss_regA(a, 3) ==
        doctest::Approx(a.array().square().sum() / 4.0).epsilon(1e-14));
}

TEST_CASE("loss_regJ") {
  auto rng = make_rng(66);
  const PointCloud y = cloud_of(oracles::random_cloud(rng, 20));
  const PointCloud xa = cloud_of(oracles::random_cloud(rng, 20));

  // pivots coincident with cloud points
  Eigen::Matrix3Xd piv_y = y.pts.col(3);
  Eigen::Matrix3Xd piv_x = xa.pts.col(5);
  CHECK(loss_regJ(piv_x, piv_y, xa, y, 30, 120) == 0.0);

  // pivot at distance 0.1 from the nearest reconstruction point
  PointCloud lone_y;
  lone_y.pts = Vec3(0, 0, 0);
  PointCloud lone_x;
  lone_x.pts = Vec3(5, 5, 5);
  Eigen::Matrix3Xd far_y = Vec3(0.1, 0, 0);
  Eigen::Matrix3Xd on_x = Vec3(5, 5, 5);
  CHECK(loss_regJ(on_x, far_y, lone_x, lone_y, 30, 120) ==
        doctest::Approx(1 - std::exp(-0.3)).epsilon(1e-12));

  CHECK(loss_regJ(piv_x, piv_y, xa, y, 30, 120) < 2.0);
}

// ---------------------------------------------------------------------------
// instance-state energy

namespace {

// instance where every alignment term vanishes: X = Y, identical joints,
// zero states, pivots on cloud points, uniform logits, zero deformation
struct PerfectFit {
  InstanceState state;
  Eigen::Matrix3Xd y_base;
  std::vector<JointSpec> specs;
  Assignment assign;
  EnergyConfig cfg;
};

PerfectFit make_perfect_fit(uint64_t seed, int n = 24) {
  auto rng = make_rng(seed);
  PerfectFit p;
  p.y_base = oracles::random_cloud(rng, n);
  p.specs = {JointSpec::revolute()};
  p.cfg.k_density = 6;

  // the identity anchor's index inside the sorted set
  const AnchorSet& anchors = icosahedral_anchors();
  int identity_index = 0;
  for (int i = 0; i < anchors.size(); ++i)
    if ((anchors[i].m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12)
      identity_index = i;

  p.state.x.pts = p.y_base;
  p.state.anchor = identity_index;
  p.state.rot_raw.setZero();
  p.state.translation.setZero();
  p.state.seg_logits_x = Eigen::MatrixXd::Zero(2, n);
  p.state.seg_logits_y = Eigen::MatrixXd::Zero(2, n);
  p.state.deformation = Eigen::Matrix3Xd::Zero(3, n);
  JointRaw joint;
  joint.pivot = p.y_base.col(0);
  joint.dir_raw = Vec3(0, 0, 1);
  joint.state_raw.setZero();
  p.state.joints_x = {joint};
  p.state.joints_y = {joint};

  p.assign.sigma.resize(1, 2);
  p.assign.sigma << 1, 2;
  fill_share_counts(p.assign);
  return p;
}

}  // namespace

TEST_CASE("total_energy with zero weights is zero") {
  PerfectFit p = make_perfect_fit(70);
  p.cfg.weights = LossWeights{0, 0, 0, 0, 0, 0, 0, 0};
  const EnergyBreakdown bd =
      total_energy(p.state, p.y_base, p.specs, p.assign, p.cfg);
  CHECK(bd.total == 0.0);
}

TEST_CASE("perfect fit leaves only the density term") {
  const PerfectFit p = make_perfect_fit(71);
  const EnergyBreakdown bd =
      total_energy(p.state, p.y_base, p.specs, p.assign, p.cfg);
  CHECK(bd.object == 0.0);
  CHECK(bd.part == 0.0);
  CHECK(bd.reg_s == 0.0);
  CHECK(bd.reg_w == 0.0);
  CHECK(bd.reg_p == 0.0);
  CHECK(bd.reg_a == 0.0);
  CHECK(bd.reg_j == 0.0);
  CHECK(bd.reg_d > 0.0);
  const double expected = p.cfg.weights.reg_d * loss_regD(p.y_base, p.cfg.k_density);
  CHECK(bd.total == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("breakdown equals the weighted sum and the term-by-term recomputation") {
  auto rng = make_rng(72);
  const int n = 20;
  PerfectFit base = make_perfect_fit(73, n);
  // randomize into a generic configuration
  std::normal_distribution<double> g(0, 0.3);
  base.state.rot_raw = Vec3(g(rng), g(rng), g(rng));
  base.state.translation = Vec3(g(rng), g(rng), g(rng)) * 0.2;
  for (int i = 0; i < 2 * n; ++i) {
    base.state.seg_logits_x.data()[i] = g(rng);
    base.state.seg_logits_y.data()[i] = g(rng);
  }
  for (int i = 0; i < 3 * n; ++i) base.state.deformation.data()[i] = 0.1 * g(rng);
  base.state.joints_x[0].dir_raw = random_unit_vector(rng) * 1.3;
  base.state.joints_y[0].state_raw << g(rng), g(rng);

  const EnergyBreakdown bd =
      total_energy(base.state, base.y_base, base.specs, base.assign, base.cfg);
  const LossWeights& w = base.cfg.weights;
  const double total = w.object * bd.object + w.part * bd.part + w.reg_s * bd.reg_s +
                       w.reg_d * bd.reg_d + w.reg_w * bd.reg_w + w.reg_p * bd.reg_p +
                       w.reg_a * bd.reg_a + w.reg_j * bd.reg_j;
  CHECK(bd.total == doctest::Approx(total).epsilon(1e-12));
  for (double v : {bd.object, bd.part, bd.reg_s, bd.reg_d, bd.reg_w, bd.reg_p,
                   bd.reg_a, bd.reg_j})
    CHECK(v >= 0.0);

  // term-by-term recomputation through the public per-term functions
  const Realized r = realize(base.state, base.y_base, base.specs);
  PointCloud y_cloud = cloud_of(r.y);
  CHECK(bd.object == doctest::Approx(loss_object(r.x_aligned, y_cloud,
                                                 base.cfg.alpha_l, base.cfg.alpha_r))
                         .epsilon(1e-12));
  CHECK(bd.part ==
        doctest::Approx(loss_part(r.z, y_cloud, r.w_x, r.w_y, base.assign,
                                  base.cfg.alpha_l, base.cfg.alpha_r))
            .epsilon(1e-12));
  CHECK(bd.reg_s == doctest::Approx(loss_regS(r.y, base.y_base)).epsilon(1e-12));
  CHECK(bd.reg_d == doctest::Approx(loss_regD(r.y, base.cfg.k_density)).epsilon(1e-12));
  CHECK(bd.reg_w == doctest::Approx(loss_regW(r.w_y, base.cfg.beta)).epsilon(1e-12));
  CHECK(bd.reg_p == doctest::Approx(loss_regP(r.z, base.assign, 2)).epsilon(1e-12));
  CHECK(bd.reg_a == doctest::Approx(loss_regA(r.a_y, 2)).epsilon(1e-12));
  Eigen::Matrix3Xd piv_x(3, 1), piv_y(3, 1);
  piv_x.col(0) = r.jx[0].pivot;
  piv_y.col(0) = r.jy[0].pivot;
  CHECK(bd.reg_j == doctest::Approx(loss_regJ(piv_x, piv_y, r.x_aligned, y_cloud,
                                              base.cfg.alpha_l, base.cfg.alpha_r))
                        .epsilon(1e-12));

  // the gradient entry point reports the identical breakdown
  EnergyGrad grad;
  const EnergyBreakdown bd2 = total_energy_grad(base.state, base.y_base, base.specs,
                                                base.assign, base.cfg, grad);
  CHECK(bd2.total == doctest::Approx(bd.total).epsilon(1e-12));
  CHECK(bd2.object == doctest::Approx(bd.object).epsilon(1e-12));
  CHECK(bd2.reg_d == doctest::Approx(bd.reg_d).epsilon(1e-12));
}

TEST_CASE("gradients vanish for alignment terms at the perfect fit") {
  const PerfectFit p = make_perfect_fit(74);
  EnergyGrad grad;
  total_energy_grad(p.state, p.y_base, p.specs, p.assign, p.cfg, grad);
  CHECK(grad.rot_raw.norm() < 1e-8);
  CHECK(grad.translation.norm() < 1e-8);
  CHECK(grad.seg_logits_x.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(grad.joints_x[0].pivot.norm() < 1e-8);
  CHECK(grad.joints_x[0].state_raw.norm() < 1e-8);
  CHECK(grad.joints_y[0].state_raw.norm() < 1e-8);
  // the density term still pulls on the reconstruction
  CHECK(grad.deformation.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zeroing the part weight silences only part-reachable parameters") {
  PerfectFit p = make_perfect_fit(75);
  auto rng = make_rng(76);
  std::normal_distribution<double> g(0, 0.3);
  p.state.rot_raw = Vec3(g(rng), g(rng), g(rng));
  for (int i = 0; i < p.state.seg_logits_x.size(); ++i)
    p.state.seg_logits_x.data()[i] = g(rng);
  p.state.joints_y[0].state_raw << g(rng), g(rng);

  EnergyConfig only_part = p.cfg;
  only_part.weights = LossWeights{0, 1, 0, 0, 0, 0, 0, 0};
  EnergyGrad grad;
  total_energy_grad(p.state, p.y_base, p.specs, p.assign, only_part, grad);
  CHECK(grad.seg_logits_x.cwiseAbs().maxCoeff() > 0.0);  // reachable through L_p

  EnergyConfig no_part = p.cfg;
  no_part.weights = LossWeights{0, 0, 0, 0, 0, 0, 0, 0};
  EnergyGrad silent;
  total_energy_grad(p.state, p.y_base, p.specs, p.assign, no_part, silent);
  CHECK(silent.seg_logits_x.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("monotone response: scaling the input away increases the object loss") {
  auto rng = make_rng(77);
  PerfectFit p = make_perfect_fit(78);
  double prev = -1;
  for (double scale : {1.0, 1.2, 1.5, 2.0, 3.0}) {
    InstanceState st = p.state;
    st.x.pts = p.state.x.pts * scale;
    const EnergyBreakdown bd = total_energy(st, p.y_base, p.specs, p.assign, p.cfg);
    if (prev >= 0) CHECK(bd.object > prev);
    prev = bd.object;
  }
}

TEST_CASE("finite-difference certification on small random instances") {
  GradCheckOptions options;
  options.seeds = 12;
  const GradCheckReport report = gradcheck_energy(options, 991);
  CHECK(report.seeds_used >= 8);
  for (const auto& [term, err] : report.max_rel_err) {
    INFO(term);
    CHECK(err < 1e-3);
  }
}
