#include "artifit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "artifit/rng.hpp"

namespace artifit {

namespace {

struct Problem {
  InstanceState state;
  Eigen::Matrix3Xd y_base;
  std::vector<JointSpec> specs;
  Assignment assignment;
  EnergyConfig cfg;
};

Problem random_problem(uint64_t seed, int points) {
  auto rng = make_rng(seed, 0x6c4d);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::normal_distribution<double> g(0.0, 1.0);

  Problem prob;
  const int parts = 2 + static_cast<int>(seed % 2);
  const int joints = parts - 1;
  const int n = points;

  prob.specs.resize(joints);
  for (int j = 0; j < joints; ++j) {
    const bool revolute = joints == 1 ? (seed / 2) % 2 == 0 : j % 2 == 0;
    prob.specs[j] = revolute ? JointSpec::revolute() : JointSpec::prismatic();
  }

  prob.state.x.pts.resize(3, n);
  prob.y_base.resize(3, n);
  for (int i = 0; i < n; ++i) {
    prob.state.x.pts.col(i) = Vec3(u(rng), u(rng), u(rng));
    prob.y_base.col(i) = Vec3(u(rng), u(rng), u(rng));
  }
  prob.state.anchor = static_cast<int>(mix64(seed) % 60);
  prob.state.rot_raw = 0.3 * Vec3(g(rng), g(rng), g(rng));
  prob.state.translation = 0.1 * Vec3(g(rng), g(rng), g(rng));
  prob.state.seg_logits_x.resize(parts, n);
  prob.state.seg_logits_y.resize(parts, n);
  for (int p = 0; p < parts; ++p)
    for (int i = 0; i < n; ++i) {
      prob.state.seg_logits_x(p, i) = 0.5 * g(rng);
      prob.state.seg_logits_y(p, i) = 0.5 * g(rng);
    }
  prob.state.joints_x.resize(joints);
  prob.state.joints_y.resize(joints);
  for (int j = 0; j < joints; ++j) {
    for (JointRaw* raw : {&prob.state.joints_x[j], &prob.state.joints_y[j]}) {
      raw->pivot = 0.3 * Vec3(g(rng), g(rng), g(rng));
      raw->dir_raw = random_unit_vector(rng) * (0.7 + 0.6 * std::abs(g(rng)));
      raw->state_raw = Eigen::Vector2d(0.5 * g(rng), 0.5 * g(rng));
    }
  }
  prob.state.deformation.resize(3, n);
  for (int i = 0; i < n; ++i)
    prob.state.deformation.col(i) = 0.05 * Vec3(g(rng), g(rng), g(rng));

  prob.cfg.k_density = 8;  // instances are small; the formula is unchanged

  const Realized r = realize(prob.state, prob.y_base, prob.specs);
  PointCloud y_cloud;
  y_cloud.pts = r.y;
  prob.assignment = select_assignment(r.z, y_cloud, r.w_x);
  return prob;
}

// smallest margin between the best and second-best neighbor over all
// source points; flips inside this margin switch the frozen matches
double min_nn_gap(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& tgt) {
  double min_gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < src.cols(); ++i) {
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    for (Eigen::Index j = 0; j < tgt.cols(); ++j) {
      const double d = (src.col(i) - tgt.col(j)).norm();
      if (d < d1) {
        d2 = d1;
        d1 = d;
      } else if (d < d2) {
        d2 = d;
      }
    }
    min_gap = std::min(min_gap, d2 - d1);
  }
  return min_gap;
}

bool in_tie_region(const Problem& prob) {
  const Realized r = realize(prob.state, prob.y_base, prob.specs);
  constexpr double kGap = 1e-6;
  if (min_nn_gap(r.x_aligned.pts, r.y) < kGap) return true;
  if (min_nn_gap(r.y, r.x_aligned.pts) < kGap) return true;
  for (const PointCloud& z : r.z) {
    if (min_nn_gap(z.pts, r.y) < kGap) return true;
    if (min_nn_gap(r.y, z.pts) < kGap) return true;
  }
  // rank stability for the density term
  const KnnResult nn = knn(r.y, std::min<int>(prob.cfg.k_density + 1,
                                              static_cast<int>(r.y.cols())));
  for (Eigen::Index i = 0; i < nn.distances.rows(); ++i)
    for (Eigen::Index k = 1; k + 1 < nn.distances.cols(); ++k)
      if (nn.distances(i, k + 1) - nn.distances(i, k) < kGap) return true;
  // kink of the segmentation-mass hinge
  for (Eigen::Index p = 0; p < r.w_y.rows(); ++p)
    if (std::abs(r.w_y.row(p).mean() - prob.cfg.beta) < kGap) return true;
  // near-antiparallel joint directions (direction-alignment chain is frozen)
  for (size_t j = 0; j < r.jx.size(); ++j)
    if (r.jx[j].direction.dot(r.jy[j].direction) < -1.0 + 1e-5) return true;
  return false;
}

int param_count(const Problem& prob) {
  const int parts = static_cast<int>(prob.state.seg_logits_x.rows());
  const int joints = static_cast<int>(prob.specs.size());
  const int n = prob.state.x.size();
  const int m = static_cast<int>(prob.y_base.cols());
  return 6 + parts * n + parts * m + 16 * joints + 3 * m + 3 * m;
}

double* param_slot(Problem& prob, int index) {
  const int parts = static_cast<int>(prob.state.seg_logits_x.rows());
  const int joints = static_cast<int>(prob.specs.size());
  const int n = prob.state.x.size();
  const int m = static_cast<int>(prob.y_base.cols());
  if (index < 3) return prob.state.rot_raw.data() + index;
  index -= 3;
  if (index < 3) return prob.state.translation.data() + index;
  index -= 3;
  if (index < parts * n) return prob.state.seg_logits_x.data() + index;
  index -= parts * n;
  if (index < parts * m) return prob.state.seg_logits_y.data() + index;
  index -= parts * m;
  for (auto* side : {&prob.state.joints_x, &prob.state.joints_y}) {
    if (index < 8 * joints) {
      JointRaw& raw = (*side)[index / 8];
      const int o = index % 8;
      if (o < 3) return raw.pivot.data() + o;
      if (o < 6) return raw.dir_raw.data() + (o - 3);
      return raw.state_raw.data() + (o - 6);
    }
    index -= 8 * joints;
  }
  if (index < 3 * m) return prob.state.deformation.data() + index;
  index -= 3 * m;
  return prob.y_base.data() + index;
}

double grad_slot(const Problem& prob, const EnergyGrad& g, int index) {
  const int parts = static_cast<int>(prob.state.seg_logits_x.rows());
  const int joints = static_cast<int>(prob.specs.size());
  const int n = prob.state.x.size();
  const int m = static_cast<int>(prob.y_base.cols());
  if (index < 3) return g.rot_raw[index];
  index -= 3;
  if (index < 3) return g.translation[index];
  index -= 3;
  if (index < parts * n) return g.seg_logits_x.data()[index];
  index -= parts * n;
  if (index < parts * m) return g.seg_logits_y.data()[index];
  index -= parts * m;
  for (auto* side : {&g.joints_x, &g.joints_y}) {
    if (index < 8 * joints) {
      const JointRawGrad& raw = (*side)[index / 8];
      const int o = index % 8;
      if (o < 3) return raw.pivot[o];
      if (o < 6) return raw.dir_raw[o - 3];
      return raw.state_raw[o - 6];
    }
    index -= 8 * joints;
  }
  if (index < 3 * m) return g.deformation.data()[index];
  index -= 3 * m;
  return g.y_base.data()[index];
}

double term_value(const EnergyBreakdown& bd, const std::string& term) {
  if (term == "object") return bd.object;
  if (term == "part") return bd.part;
  if (term == "regS") return bd.reg_s;
  if (term == "regD") return bd.reg_d;
  if (term == "regW") return bd.reg_w;
  if (term == "regP") return bd.reg_p;
  if (term == "regA") return bd.reg_a;
  if (term == "regJ") return bd.reg_j;
  return bd.total;
}

LossWeights one_hot_weights(const std::string& term) {
  LossWeights w;
  w.object = term == "object" ? 1 : 0;
  w.part = term == "part" ? 1 : 0;
  w.reg_s = term == "regS" ? 1 : 0;
  w.reg_d = term == "regD" ? 1 : 0;
  w.reg_w = term == "regW" ? 1 : 0;
  w.reg_p = term == "regP" ? 1 : 0;
  w.reg_a = term == "regA" ? 1 : 0;
  w.reg_j = term == "regJ" ? 1 : 0;
  return w;
}

}  // namespace

const std::vector<std::string>& gradcheck_term_names() {
  static const std::vector<std::string> names = {
      "object", "part", "regS", "regD", "regW", "regP", "regA", "regJ", "total"};
  return names;
}

GradCheckReport gradcheck_energy(const GradCheckOptions& options, uint64_t seed) {
  std::vector<std::string> terms =
      options.terms.empty() ? gradcheck_term_names() : options.terms;
  for (const std::string& t : terms)
    if (std::find(gradcheck_term_names().begin(), gradcheck_term_names().end(), t) ==
        gradcheck_term_names().end())
      throw std::invalid_argument("gradcheck: unknown term '" + t + "'");

  GradCheckReport report;
  for (const std::string& t : terms) report.max_rel_err[t] = 0.0;

  for (int s = 0; s < options.seeds; ++s) {
    Problem prob = random_problem(mix64(seed) + s, options.points);
    if (in_tie_region(prob)) {
      ++report.seeds_skipped;
      continue;
    }
    ++report.seeds_used;

    // analytic gradient per term (one-hot weights; "total" keeps defaults)
    std::vector<EnergyGrad> grads(terms.size());
    for (size_t t = 0; t < terms.size(); ++t) {
      EnergyConfig cfg = prob.cfg;
      if (terms[t] != "total") cfg.weights = one_hot_weights(terms[t]);
      total_energy_grad(prob.state, prob.y_base, prob.specs, prob.assignment, cfg,
                        grads[t]);
    }
    EnergyConfig total_cfg = prob.cfg;  // default weights for forward values

    const int count = param_count(prob);
    const double h = options.step;
    for (int i = 0; i < count; ++i) {
      double* slot = param_slot(prob, i);
      const double saved = *slot;
      *slot = saved + h;
      const EnergyBreakdown plus = total_energy(prob.state, prob.y_base, prob.specs,
                                                prob.assignment, total_cfg);
      *slot = saved - h;
      const EnergyBreakdown minus = total_energy(prob.state, prob.y_base, prob.specs,
                                                 prob.assignment, total_cfg);
      *slot = saved;

      for (size_t t = 0; t < terms.size(); ++t) {
        const double numeric =
            (term_value(plus, terms[t]) - term_value(minus, terms[t])) / (2.0 * h);
        const double analytic = grad_slot(prob, grads[t], i);
        const double rel =
            std::abs(analytic - numeric) /
            std::max(std::abs(analytic) + std::abs(numeric), 1e-5);
        report.max_rel_err[terms[t]] = std::max(report.max_rel_err[terms[t]], rel);
      }
    }
  }
  return report;
}

}  // namespace artifit
