#include "artifit/fit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "artifit/rng.hpp"

namespace artifit {

using json = nlohmann::ordered_json;

namespace {

Eigen::Matrix3Xd fibonacci_sphere(int m, double radius) {
  Eigen::Matrix3Xd pts(3, m);
  const double golden = std::acos(-1.0) * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < m; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / m;
    const double r = std::sqrt(std::max(1.0 - z * z, 0.0));
    const double th = golden * i;
    pts.col(i) = radius * Vec3(r * std::cos(th), r * std::sin(th), z);
  }
  return pts;
}

}  // namespace

FitState init_params(const Dataset& data, const FitConfig& config) {
  if (data.clouds.empty()) throw std::invalid_argument("init_params: empty dataset");
  const int parts = data.parts;
  const int joints = static_cast<int>(data.joint_specs.size());
  if (joints != parts - 1)
    throw std::invalid_argument("init_params: need P-1 joint specs");
  const int n = data.clouds[0].size();
  for (const PointCloud& c : data.clouds)
    if (c.size() != n)
      throw std::invalid_argument("init_params: instances must share a point count");

  FitState state;
  state.config = config;
  // The sphere is the neutral default; seeding from an instance breaks the
  // rotational symmetry that otherwise leaves anchor selection untied.
  state.y_base = config.init == TemplateInit::FirstInstance
                     ? Eigen::Matrix3Xd(data.clouds[0].pts)
                     : fibonacci_sphere(n, 0.5);
  const int anchors = icosahedral_anchors().size();
  const Assignment default_assign = [&] {
    auto all = enumerate_assignments(parts, joints);
    fill_share_counts(all.front());
    return all.front();
  }();

  state.instances.resize(data.clouds.size());
  state.opt.resize(data.clouds.size());
  for (size_t k = 0; k < data.clouds.size(); ++k) {
    InstanceParams& p = state.instances[k];
    auto rng = make_rng(config.seed, 0x1000 + k);
    std::normal_distribution<double> logit_noise(0.0, 0.1);  // N(0, 0.01)

    p.anchor_residuals.assign(anchors, AnchorResidual{});
    p.seg_logits_x.resize(parts, n);
    p.seg_logits_y.resize(parts, n);
    for (int r = 0; r < parts; ++r)
      for (int c = 0; c < n; ++c) p.seg_logits_x(r, c) = logit_noise(rng);
    for (int r = 0; r < parts; ++r)
      for (int c = 0; c < n; ++c) p.seg_logits_y(r, c) = logit_noise(rng);
    p.deformation = Eigen::Matrix3Xd::Zero(3, n);

    const Vec3 centroid_x = data.clouds[k].pts.rowwise().mean();
    const Vec3 centroid_y = state.y_base.rowwise().mean();
    p.joints_x.resize(joints);
    p.joints_y.resize(joints);
    for (int j = 0; j < joints; ++j) {
      p.joints_x[j].pivot = centroid_x;
      p.joints_y[j].pivot = centroid_y;
      p.joints_x[j].dir_raw = random_unit_vector(rng);
      p.joints_y[j].dir_raw = random_unit_vector(rng);
      p.joints_x[j].state_raw.setZero();
      p.joints_y[j].state_raw.setZero();
    }
    p.assignment = default_assign;
    p.last_anchor = 0;
  }
  return state;
}

AnchorChoice select_anchor(const PointCloud& x, const NnIndex& y_index,
                           const InstanceParams& params) {
  const AnchorSet& anchors = icosahedral_anchors();
  const int n = x.size();
  AnchorChoice best;
  bool first = true;
  double best_acc = 0.0;  // best.cd * n, for early abandoning
  Eigen::Matrix3Xd transformed(3, n);
  for (int i = 0; i < anchors.size(); ++i) {
    const AnchorResidual& res = params.anchor_residuals[i];
    const Rotation r_cand = residual_rotation_from_raw(res.rot_raw) * anchors[i];
    transformed = (r_cand.m * x.pts).colwise() + res.translation;
    double acc = 0.0;
    bool abandoned = false;
    for (int p = 0; p < n; ++p) {
      acc += y_index.nearest(transformed.col(p)).second;
      if (!first && acc >= best_acc) {  // partial sums only grow
        abandoned = true;
        break;
      }
    }
    if (first || (!abandoned && acc < best_acc)) {
      best = AnchorChoice{i, r_cand, res.translation,
                          acc / static_cast<double>(n)};
      best_acc = acc;
      first = false;
    }
  }
  return best;
}

AnchorChoice select_anchor(const PointCloud& x, const PointCloud& y,
                           const InstanceParams& params) {
  return select_anchor(x, NnIndex(y.pts), params);
}

std::vector<int> batch_indices(int dataset_size, int batch, uint64_t seed,
                               long step) {
  std::vector<int> out;
  out.reserve(batch);
  long epoch = -1;
  std::vector<int> perm(dataset_size);
  for (int k = 0; k < batch; ++k) {
    const long pos = step * static_cast<long>(batch) + k;
    const long e = pos / dataset_size;
    if (e != epoch) {
      epoch = e;
      std::iota(perm.begin(), perm.end(), 0);
      auto rng = make_rng(seed, 0xe90c + static_cast<uint64_t>(e));
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

namespace {

void adam_update(Eigen::Ref<Eigen::ArrayXd> p, const Eigen::ArrayXd& g,
                 AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.size() != p.size()) {
    st.m = Eigen::ArrayXd::Zero(p.size());
    st.v = Eigen::ArrayXd::Zero(p.size());
    st.t = 0;
  }
  st.t += 1;
  st.m = b1 * st.m + (1.0 - b1) * g;
  st.v = b2 * st.v + (1.0 - b2) * g.square();
  const double mc = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double vc = 1.0 - std::pow(b2, static_cast<double>(st.t));
  p -= lr * (st.m / mc) / ((st.v / vc).sqrt() + eps);
}

Eigen::ArrayXd pack_joints(const std::vector<JointRaw>& joints) {
  Eigen::ArrayXd out(8 * joints.size());
  for (size_t j = 0; j < joints.size(); ++j) {
    out.segment(8 * j, 3) = joints[j].pivot.array();
    out.segment(8 * j + 3, 3) = joints[j].dir_raw.array();
    out.segment(8 * j + 6, 2) = joints[j].state_raw.array();
  }
  return out;
}

void unpack_joints(const Eigen::ArrayXd& flat, std::vector<JointRaw>& joints) {
  for (size_t j = 0; j < joints.size(); ++j) {
    joints[j].pivot = flat.segment(8 * j, 3).matrix();
    joints[j].dir_raw = flat.segment(8 * j + 3, 3).matrix();
    joints[j].state_raw = flat.segment(8 * j + 6, 2).matrix();
  }
}

Eigen::ArrayXd pack_joint_grads(const std::vector<JointRawGrad>& grads) {
  Eigen::ArrayXd out(8 * grads.size());
  for (size_t j = 0; j < grads.size(); ++j) {
    out.segment(8 * j, 3) = grads[j].pivot.array();
    out.segment(8 * j + 3, 3) = grads[j].dir_raw.array();
    out.segment(8 * j + 6, 2) = grads[j].state_raw.array();
  }
  return out;
}

const char* first_nonfinite_term(const EnergyBreakdown& bd) {
  if (!std::isfinite(bd.object)) return "object";
  if (!std::isfinite(bd.part)) return "part";
  if (!std::isfinite(bd.reg_s)) return "regS";
  if (!std::isfinite(bd.reg_d)) return "regD";
  if (!std::isfinite(bd.reg_w)) return "regW";
  if (!std::isfinite(bd.reg_p)) return "regP";
  if (!std::isfinite(bd.reg_a)) return "regA";
  if (!std::isfinite(bd.reg_j)) return "regJ";
  if (!std::isfinite(bd.total)) return "total";
  return nullptr;
}

struct BatchItem {
  int dataset_index = 0;
  AnchorChoice choice;
  Assignment assignment;
  EnergyGrad grad;
  EnergyBreakdown bd;
};

void run_parallel(int jobs, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || jobs <= 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(threads, jobs);
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

EnergyBreakdown fit_step(FitState& state, const Dataset& data,
                         const std::vector<int>& batch) {
  const FitConfig& cfg = state.config;
  const int joints = static_cast<int>(data.joint_specs.size());
  const double lr =
      cfg.lr * std::exp2(-static_cast<double>(state.step / cfg.lr_halve_every));
  const bool refresh_assignment =
      cfg.assignment_interval <= 1 || state.step % cfg.assignment_interval == 0;

  // phase 1: gradients at batch-start parameters
  std::vector<BatchItem> items(batch.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  run_parallel(static_cast<int>(batch.size()), cfg.threads, [&](int k) {
    try {
      BatchItem& item = items[k];
      item.dataset_index = batch[k];
      const InstanceParams& p = state.instances[item.dataset_index];

      InstanceState st;
      st.x = data.clouds[item.dataset_index];
      if (cfg.augment)
        st.x = augment(st.x,
                       mix64(cfg.seed ^ mix64(state.step)) + item.dataset_index,
                       std::sqrt(cfg.noise_var));
      const Eigen::Matrix3Xd y = state.y_base + p.deformation;
      const NnIndex y_index(y);
      item.choice = select_anchor(st.x, y_index, p);

      st.anchor = item.choice.index;
      st.rot_raw = p.anchor_residuals[st.anchor].rot_raw;
      st.translation = p.anchor_residuals[st.anchor].translation;
      st.seg_logits_x = p.seg_logits_x;
      st.seg_logits_y = p.seg_logits_y;
      st.joints_x = p.joints_x;
      st.joints_y = p.joints_y;
      st.deformation = p.deformation;

      if (refresh_assignment) {
        const Realized r = realize(st, state.y_base, data.joint_specs);
        PointCloud y_cloud;
        y_cloud.pts = r.y;
        item.assignment = select_assignment(r.z, y_cloud, r.w_x);
      } else {
        item.assignment = p.assignment;
      }

      item.bd = total_energy_grad(st, state.y_base, data.joint_specs,
                                  item.assignment, cfg.energy, item.grad);
      if (const char* term = first_nonfinite_term(item.bd))
        throw DivergenceError(term, state.step);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);

  // phase 2: apply instance updates in batch position order
  for (const BatchItem& item : items) {
    InstanceParams& p = state.instances[item.dataset_index];
    InstanceOpt& opt = state.opt[item.dataset_index];
    if (opt.anchors.empty()) opt.anchors.resize(p.anchor_residuals.size());

    AnchorResidual& res = p.anchor_residuals[item.choice.index];
    Eigen::ArrayXd pose(6), pose_g(6);
    pose << res.rot_raw.array(), res.translation.array();
    pose_g << item.grad.rot_raw.array(), item.grad.translation.array();
    adam_update(pose, pose_g, opt.anchors[item.choice.index], lr);
    res.rot_raw = pose.segment(0, 3).matrix();
    res.translation = pose.segment(3, 3).matrix();

    Eigen::ArrayXd seg = p.seg_logits_x.reshaped().array();
    adam_update(seg, item.grad.seg_logits_x.reshaped().array(), opt.seg_x, lr);
    p.seg_logits_x = seg.matrix().reshaped(p.seg_logits_x.rows(), p.seg_logits_x.cols());
    seg = p.seg_logits_y.reshaped().array();
    adam_update(seg, item.grad.seg_logits_y.reshaped().array(), opt.seg_y, lr);
    p.seg_logits_y = seg.matrix().reshaped(p.seg_logits_y.rows(), p.seg_logits_y.cols());

    Eigen::ArrayXd jx = pack_joints(p.joints_x);
    adam_update(jx, pack_joint_grads(item.grad.joints_x), opt.joints_x, lr);
    unpack_joints(jx, p.joints_x);
    Eigen::ArrayXd jy = pack_joints(p.joints_y);
    adam_update(jy, pack_joint_grads(item.grad.joints_y), opt.joints_y, lr);
    unpack_joints(jy, p.joints_y);

    // re-normalization guard: directions keep a usable magnitude
    for (int j = 0; j < joints; ++j) {
      for (JointRaw* raw : {&p.joints_x[j], &p.joints_y[j]}) {
        const double nrm = raw->dir_raw.norm();
        if (nrm < 1e-6)
          raw->dir_raw = nrm < 1e-12 ? Vec3::UnitZ() : Vec3(raw->dir_raw / nrm);
      }
    }

    Eigen::ArrayXd def = p.deformation.reshaped().array();
    adam_update(def, item.grad.deformation.reshaped().array(), opt.deformation, lr);
    p.deformation = def.matrix().reshaped(3, p.deformation.cols());

    p.assignment = item.assignment;
    p.last_anchor = item.choice.index;
  }

  // shared base shape: reduce in dataset order, apply once
  {
    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return items[a].dataset_index < items[b].dataset_index;
    });
    Eigen::Matrix3Xd sum = Eigen::Matrix3Xd::Zero(3, state.y_base.cols());
    for (int k : order) sum += items[k].grad.y_base;
    sum /= static_cast<double>(items.size());
    Eigen::ArrayXd yb = state.y_base.reshaped().array();
    adam_update(yb, sum.reshaped().array(), state.opt_y_base, lr);
    state.y_base = yb.matrix().reshaped(3, state.y_base.cols());
  }

  state.step += 1;

  EnergyBreakdown mean;
  for (const BatchItem& item : items) mean += item.bd;
  mean /= static_cast<double>(items.size());
  return mean;
}

FitLog fit_run(FitState& state, const Dataset& data,
               const std::string& checkpoint_path) {
  FitLog log;
  const int n = static_cast<int>(data.clouds.size());
  while (state.step < state.config.iterations) {
    const long step = state.step;
    const double lr = state.config.lr *
                      std::exp2(-static_cast<double>(step / state.config.lr_halve_every));
    const auto batch = batch_indices(n, state.config.batch, state.config.seed, step);
    const EnergyBreakdown bd = fit_step(state, data, batch);
    log.records.push_back(StepRecord{step, lr, bd});
    if (state.config.checkpoint_interval > 0 && !checkpoint_path.empty() &&
        state.step % state.config.checkpoint_interval == 0)
      export_state(state, checkpoint_path);
  }
  return log;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec_from_json(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index rows = j.size();
  const Eigen::Index cols = rows ? j.at(0).size() : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c);
  return m;
}

json array_to_json(const Eigen::ArrayXd& a) {
  json out = json::array();
  for (Eigen::Index i = 0; i < a.size(); ++i) out.push_back(a[i]);
  return out;
}

Eigen::ArrayXd array_from_json(const json& j) {
  Eigen::ArrayXd a(j.size());
  for (size_t i = 0; i < j.size(); ++i) a[i] = j.at(i);
  return a;
}

json adam_to_json(const AdamState& st) {
  return json{{"m", array_to_json(st.m)}, {"v", array_to_json(st.v)}, {"t", st.t}};
}

AdamState adam_from_json(const json& j) {
  AdamState st;
  st.m = array_from_json(j.at("m"));
  st.v = array_from_json(j.at("v"));
  st.t = j.at("t");
  return st;
}

json config_to_json(const FitConfig& c) {
  return json{{"iterations", c.iterations},
              {"batch", c.batch},
              {"lr", c.lr},
              {"lr_halve_every", c.lr_halve_every},
              {"lambda_o", c.energy.weights.object},
              {"lambda_p", c.energy.weights.part},
              {"lambda_regS", c.energy.weights.reg_s},
              {"lambda_regD", c.energy.weights.reg_d},
              {"lambda_regW", c.energy.weights.reg_w},
              {"lambda_regP", c.energy.weights.reg_p},
              {"lambda_regA", c.energy.weights.reg_a},
              {"lambda_regJ", c.energy.weights.reg_j},
              {"alpha_l", c.energy.alpha_l},
              {"alpha_r", c.energy.alpha_r},
              {"beta", c.energy.beta},
              {"k_density", c.energy.k_density},
              {"dcd_exponent", c.energy.exponent == DcdExponent::Squared ? "sq" : "l2"},
              {"init", c.init == TemplateInit::FirstInstance ? "instance" : "sphere"},
              {"seed", c.seed},
              {"assignment_interval", c.assignment_interval},
              {"augment", c.augment},
              {"noise_var", c.noise_var},
              {"sample_points", c.sample_points},
              {"checkpoint_interval", c.checkpoint_interval}};
}

FitConfig config_from_json(const json& j) {
  FitConfig c;
  c.iterations = j.at("iterations");
  c.batch = j.at("batch");
  c.lr = j.at("lr");
  c.lr_halve_every = j.at("lr_halve_every");
  c.energy.weights.object = j.at("lambda_o");
  c.energy.weights.part = j.at("lambda_p");
  c.energy.weights.reg_s = j.at("lambda_regS");
  c.energy.weights.reg_d = j.at("lambda_regD");
  c.energy.weights.reg_w = j.at("lambda_regW");
  c.energy.weights.reg_p = j.at("lambda_regP");
  c.energy.weights.reg_a = j.at("lambda_regA");
  c.energy.weights.reg_j = j.at("lambda_regJ");
  c.energy.alpha_l = j.at("alpha_l");
  c.energy.alpha_r = j.at("alpha_r");
  c.energy.beta = j.at("beta");
  c.energy.k_density = j.at("k_density");
  c.energy.exponent = j.at("dcd_exponent") == "sq" ? DcdExponent::Squared
                                                   : DcdExponent::Euclidean;
  c.init = j.at("init") == "instance" ? TemplateInit::FirstInstance
                                      : TemplateInit::FibonacciSphere;
  c.seed = j.at("seed");
  c.assignment_interval = j.at("assignment_interval");
  c.augment = j.at("augment");
  c.noise_var = j.at("noise_var");
  c.sample_points = j.at("sample_points");
  c.checkpoint_interval = j.at("checkpoint_interval");
  return c;
}

}  // namespace

uint64_t config_hash(const FitConfig& config) {
  const std::string dump = config_to_json(config).dump();
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

void export_state(const FitState& state, const std::string& path) {
  json root;
  root["version"] = 1;
  root["config_hash"] = config_hash(state.config);
  root["config"] = config_to_json(state.config);
  root["step"] = state.step;
  root["template"] = json{{"y_base", matrix_to_json(state.y_base)}};

  json instances = json::array();
  for (const InstanceParams& p : state.instances) {
    json anchors = json::array();
    for (const AnchorResidual& r : p.anchor_residuals)
      anchors.push_back(json{{"rot", vec_to_json(r.rot_raw)},
                             {"t", vec_to_json(r.translation)}});
    json jx = json::array(), jy = json::array();
    for (const JointRaw& r : p.joints_x)
      jx.push_back(json{{"pivot", vec_to_json(r.pivot)},
                        {"dir", vec_to_json(r.dir_raw)},
                        {"state", json::array({r.state_raw[0], r.state_raw[1]})}});
    for (const JointRaw& r : p.joints_y)
      jy.push_back(json{{"pivot", vec_to_json(r.pivot)},
                        {"dir", vec_to_json(r.dir_raw)},
                        {"state", json::array({r.state_raw[0], r.state_raw[1]})}});
    instances.push_back(json{{"anchor_residuals", std::move(anchors)},
                             {"seg_logits_x", matrix_to_json(p.seg_logits_x)},
                             {"seg_logits_y", matrix_to_json(p.seg_logits_y)},
                             {"joints_x", std::move(jx)},
                             {"joints_y", std::move(jy)},
                             {"deformation", matrix_to_json(p.deformation)},
                             {"sigma", matrix_to_json(p.assignment.sigma.cast<double>())},
                             {"shares", matrix_to_json(p.assignment.b.cast<double>())},
                             {"last_anchor", p.last_anchor}});
  }
  root["instances"] = std::move(instances);

  json opt;
  opt["y_base"] = adam_to_json(state.opt_y_base);
  json opt_inst = json::array();
  for (const InstanceOpt& o : state.opt) {
    json anchors = json::array();
    for (const AdamState& st : o.anchors) anchors.push_back(adam_to_json(st));
    opt_inst.push_back(json{{"anchors", std::move(anchors)},
                            {"seg_x", adam_to_json(o.seg_x)},
                            {"seg_y", adam_to_json(o.seg_y)},
                            {"joints_x", adam_to_json(o.joints_x)},
                            {"joints_y", adam_to_json(o.joints_y)},
                            {"deformation", adam_to_json(o.deformation)}});
  }
  opt["instances"] = std::move(opt_inst);
  root["optimizer_state"] = std::move(opt);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_state: cannot open " + path);
  out << root.dump(1) << '\n';
}

FitState import_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_state: cannot open " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error("import_state: malformed document: " + std::string(e.what()));
  }
  if (!root.contains("version"))
    throw std::runtime_error("import_state: missing version field");
  if (root.at("version") != 1)
    throw std::runtime_error("import_state: unsupported version");

  FitState state;
  state.config = config_from_json(root.at("config"));
  if (root.at("config_hash") != config_hash(state.config))
    throw std::runtime_error("import_state: config hash mismatch");
  state.step = root.at("step");
  state.y_base = matrix_from_json(root.at("template").at("y_base"));

  for (const json& ji : root.at("instances")) {
    InstanceParams p;
    for (const json& ja : ji.at("anchor_residuals")) {
      AnchorResidual r;
      r.rot_raw = vec_from_json(ja.at("rot"));
      r.translation = vec_from_json(ja.at("t"));
      p.anchor_residuals.push_back(r);
    }
    p.seg_logits_x = matrix_from_json(ji.at("seg_logits_x"));
    p.seg_logits_y = matrix_from_json(ji.at("seg_logits_y"));
    for (const json& jj : ji.at("joints_x")) {
      JointRaw r;
      r.pivot = vec_from_json(jj.at("pivot"));
      r.dir_raw = vec_from_json(jj.at("dir"));
      r.state_raw << jj.at("state").at(0), jj.at("state").at(1);
      p.joints_x.push_back(r);
    }
    for (const json& jj : ji.at("joints_y")) {
      JointRaw r;
      r.pivot = vec_from_json(jj.at("pivot"));
      r.dir_raw = vec_from_json(jj.at("dir"));
      r.state_raw << jj.at("state").at(0), jj.at("state").at(1);
      p.joints_y.push_back(r);
    }
    p.deformation = matrix_from_json(ji.at("deformation"));
    p.assignment.sigma = matrix_from_json(ji.at("sigma")).cast<int>();
    p.assignment.b = matrix_from_json(ji.at("shares")).cast<int>();
    p.last_anchor = ji.at("last_anchor");
    state.instances.push_back(std::move(p));
  }

  const json& opt = root.at("optimizer_state");
  state.opt_y_base = adam_from_json(opt.at("y_base"));
  for (const json& jo : opt.at("instances")) {
    InstanceOpt o;
    for (const json& ja : jo.at("anchors")) o.anchors.push_back(adam_from_json(ja));
    o.seg_x = adam_from_json(jo.at("seg_x"));
    o.seg_y = adam_from_json(jo.at("seg_y"));
    o.joints_x = adam_from_json(jo.at("joints_x"));
    o.joints_y = adam_from_json(jo.at("joints_y"));
    o.deformation = adam_from_json(jo.at("deformation"));
    state.opt.push_back(std::move(o));
  }
  return state;
}

RelativePoses relative_part_maps(const InstanceParams& params, const PointCloud& x,
                                 const std::vector<JointSpec>& specs,
                                 const Eigen::Matrix3Xd& y_base, int parts) {
  InstanceState st;
  st.x = x;
  const Eigen::Matrix3Xd y = y_base + params.deformation;
  const AnchorChoice choice = select_anchor(x, NnIndex(y), params);
  st.anchor = choice.index;
  st.rot_raw = params.anchor_residuals[choice.index].rot_raw;
  st.translation = params.anchor_residuals[choice.index].translation;
  st.seg_logits_x = params.seg_logits_x;
  st.seg_logits_y = params.seg_logits_y;
  st.joints_x = params.joints_x;
  st.joints_y = params.joints_y;
  st.deformation = params.deformation;
  const Realized r = realize(st, y_base, specs);

  RelativePoses out;
  out.r_o = r.r_o;
  out.t_o = r.t_o;
  out.joints_x = r.jx;
  out.joint_slots = params.assignment.sigma;
  out.joint_shares = params.assignment.b;
  out.per_part.resize(parts);
  for (int p = 1; p <= parts; ++p) {
    std::vector<std::pair<Rotation, Vec3>> slot_poses;
    for (int j = 0; j < params.assignment.joints(); ++j)
      for (int i = 0; i < 2; ++i) {
        if (params.assignment.sigma(j, i) != p) continue;
        const PartMap map = part_alignment(r.jx[j], r.jy[j], specs[j], i);
        // full map camera -> reconstruction: z = A(R_o x + t_o)
        const Rotation rot = Rotation(map.R.m * r.r_o.m);
        const Vec3 t = map.R.m * (r.t_o - map.pivot_x) + map.shift;
        slot_poses.emplace_back(rot, t);
      }
    out.per_part[p - 1] = fuse_shared_pose(slot_poses);
  }
  return out;
}

}  // namespace artifit
