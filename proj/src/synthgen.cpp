#include "artifit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "artifit/rng.hpp"

namespace artifit {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

CategorySpec CategorySpec::laptop2() {
  CategorySpec s;
  s.name = "laptop2";
  s.parts = 2;
  s.joints = {JointSpec::revolute()};
  s.box_dims = {Vec3(0.5, 0.35, 0.03), Vec3(0.5, 0.015, 0.35)};
  s.box_centers = {Vec3(0, 0, 0.015), Vec3(0, 0.1675, 0.205)};
  s.attachments = {{Vec3(0, 0.175, 0.03), Vec3(1, 0, 0), 1, 2}};
  return s;
}

CategorySpec CategorySpec::drawer2() {
  CategorySpec s;
  s.name = "drawer2";
  s.parts = 2;
  s.joints = {JointSpec::prismatic()};
  s.box_dims = {Vec3(0.45, 0.45, 0.25), Vec3(0.4, 0.42, 0.18)};
  s.box_centers = {Vec3(0, 0, 0.125), Vec3(0, 0.0, 0.105)};
  s.attachments = {{Vec3(0, 0, 0.105), Vec3(0, 1, 0), 1, 2}};
  return s;
}

CategorySpec CategorySpec::basket3() {
  CategorySpec s;
  s.name = "basket3";
  s.parts = 3;
  s.joints = {JointSpec::revolute(), JointSpec::revolute()};
  s.box_dims = {Vec3(0.45, 0.3, 0.22), Vec3(0.04, 0.3, 0.18), Vec3(0.04, 0.3, 0.18)};
  s.box_centers = {Vec3(0, 0, 0.11), Vec3(-0.245, 0, 0.31), Vec3(0.245, 0, 0.31)};
  s.attachments = {{Vec3(-0.225, 0, 0.22), Vec3(0, 1, 0), 1, 2},
                   {Vec3(0.225, 0, 0.22), Vec3(0, 1, 0), 1, 3}};
  return s;
}

CategorySpec CategorySpec::by_name(const std::string& name) {
  if (name == "laptop2") return laptop2();
  if (name == "drawer2") return drawer2();
  if (name == "basket3") return basket3();
  throw std::invalid_argument("unknown category '" + name + "'");
}

namespace {

// area-weighted surface sample of an axis-aligned box, in the box frame
Vec3 sample_box_surface(const Vec3& dims, std::mt19937_64& rng) {
  const Vec3 h = dims / 2.0;
  const double areas[3] = {dims.y() * dims.z(), dims.x() * dims.z(),
                           dims.x() * dims.y()};
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double pick = u(rng) * total;
  int face_axis = 0;
  double face_sign = 1.0;
  for (int a = 0; a < 3; ++a)
    for (double sgn : {1.0, -1.0}) {
      if (pick < areas[a]) {
        face_axis = a;
        face_sign = sgn;
        goto found;
      }
      pick -= areas[a];
    }
found:
  Vec3 p;
  p[face_axis] = face_sign * h[face_axis];
  const int u_axis = (face_axis + 1) % 3, v_axis = (face_axis + 2) % 3;
  p[u_axis] = (2.0 * u(rng) - 1.0) * h[u_axis];
  p[v_axis] = (2.0 * u(rng) - 1.0) * h[v_axis];
  return p;
}

// joint motion as a rigid map for the moving part
PartPose joint_motion(const CategorySpec::Attachment& at, const JointSpec& spec,
                      double state) {
  PartPose m;
  if (spec.kind == JointKind::Revolute) {
    m.R = axis_angle_to_rotation(at.axis.normalized() * state);
    m.t = at.pivot - m.R.m * at.pivot;
  } else {
    m.R = Rotation::identity();
    m.t = at.axis.normalized() * state;
  }
  return m;
}

PartPose compose(const PartPose& a, const PartPose& b) {  // a after b
  return PartPose{Rotation(a.R.m * b.R.m), a.R.m * b.t + a.t};
}

}  // namespace

std::pair<PointCloud, GroundTruth> gen_instance(const CategorySpec& spec,
                                                const std::vector<double>& states,
                                                const Rotation& global_rot,
                                                const Vec3& global_t, int n,
                                                uint64_t seed) {
  const int joints = static_cast<int>(spec.joints.size());
  if (static_cast<int>(states.size()) != joints)
    throw std::invalid_argument("gen_instance: state count mismatch");
  for (int j = 0; j < joints; ++j)
    if (std::abs(states[j]) > spec.joints[j].range / 2.0 + 1e-12)
      throw std::invalid_argument("gen_instance: joint state outside range");
  if (n < 1) throw std::invalid_argument("gen_instance: need n >= 1");

  const PartPose global{global_rot, global_t};
  std::vector<PartPose> part_pose(spec.parts);
  for (int p = 0; p < spec.parts; ++p) part_pose[p] = global;
  for (int j = 0; j < joints; ++j) {
    const auto& at = spec.attachments[j];
    part_pose[at.moving_part - 1] =
        compose(global, joint_motion(at, spec.joints[j], states[j]));
  }

  // area-weighted part selection
  std::vector<double> area(spec.parts);
  for (int p = 0; p < spec.parts; ++p) {
    const Vec3& d = spec.box_dims[p];
    area[p] = 2.0 * (d.x() * d.y() + d.y() * d.z() + d.x() * d.z());
  }
  std::discrete_distribution<int> pick_part(area.begin(), area.end());

  auto rng = make_rng(seed, 0x9e4);
  PointCloud cloud;
  cloud.pts.resize(3, n);
  cloud.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int p = pick_part(rng);
    const Vec3 local = sample_box_surface(spec.box_dims[p], rng) + spec.box_centers[p];
    cloud.pts.col(i) = part_pose[p].R.m * local + part_pose[p].t;
    cloud.labels[i] = p + 1;
  }

  GroundTruth gt;
  gt.labels = cloud.labels;
  gt.part_poses = part_pose;
  gt.joints.resize(joints);
  for (int j = 0; j < joints; ++j) {
    gt.joints[j].pivot = global.R.m * spec.attachments[j].pivot + global.t;
    gt.joints[j].direction = global.R.m * spec.attachments[j].axis.normalized();
    gt.joints[j].state = states[j];
  }
  return {cloud, gt};
}

// ---------------------------------------------------------------------------
// convex hull (incremental) and hidden-point removal

namespace {

struct HullFace {
  int a, b, c;
  Vec3 n;
  double d;  // plane: n.dot(x) = d, n pointing outward
};

HullFace make_face(const Eigen::Matrix3Xd& pts, int a, int b, int c,
                   const Vec3& interior) {
  HullFace f{a, b, c, Vec3::Zero(), 0.0};
  f.n = (pts.col(b) - pts.col(a)).cross(pts.col(c) - pts.col(a));
  f.d = f.n.dot(pts.col(a));
  if (f.n.dot(interior) > f.d) {  // flip to outward
    std::swap(f.b, f.c);
    f.n = -f.n;
    f.d = -f.d;
  }
  return f;
}

}  // namespace

std::vector<int> convex_hull_vertices(const Eigen::Matrix3Xd& pts) {
  const int n = static_cast<int>(pts.cols());
  if (n < 4) throw std::invalid_argument("convex_hull_vertices: need >= 4 points");

  const Vec3 lo = pts.rowwise().minCoeff(), hi = pts.rowwise().maxCoeff();
  const double eps = 1e-12 * std::max((hi - lo).norm(), 1.0);

  // initial tetrahedron from extreme points
  int i0 = 0;
  for (int i = 1; i < n; ++i)
    if (pts(0, i) < pts(0, i0)) i0 = i;
  int i1 = -1;
  double best = -1;
  for (int i = 0; i < n; ++i) {
    const double d = (pts.col(i) - pts.col(i0)).squaredNorm();
    if (d > best) {
      best = d;
      i1 = i;
    }
  }
  int i2 = -1;
  best = -1;
  for (int i = 0; i < n; ++i) {
    const double d =
        (pts.col(i1) - pts.col(i0)).cross(pts.col(i) - pts.col(i0)).squaredNorm();
    if (d > best) {
      best = d;
      i2 = i;
    }
  }
  const Vec3 plane_n = (pts.col(i1) - pts.col(i0)).cross(pts.col(i2) - pts.col(i0));
  int i3 = -1;
  best = -1;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(plane_n.dot(pts.col(i) - pts.col(i0)));
    if (d > best) {
      best = d;
      i3 = i;
    }
  }
  if (best <= eps)
    throw std::invalid_argument("convex_hull_vertices: degenerate (coplanar) input");

  const Vec3 interior =
      (pts.col(i0) + pts.col(i1) + pts.col(i2) + pts.col(i3)) / 4.0;
  std::vector<HullFace> faces = {make_face(pts, i0, i1, i2, interior),
                                 make_face(pts, i0, i1, i3, interior),
                                 make_face(pts, i0, i2, i3, interior),
                                 make_face(pts, i1, i2, i3, interior)};

  for (int i = 0; i < n; ++i) {
    if (i == i0 || i == i1 || i == i2 || i == i3) continue;
    // visible faces
    std::vector<char> visible(faces.size(), 0);
    bool any = false;
    for (size_t f = 0; f < faces.size(); ++f)
      if (faces[f].n.dot(pts.col(i)) > faces[f].d + eps) {
        visible[f] = 1;
        any = true;
      }
    if (!any) continue;
    // horizon: edges of visible faces whose reverse edge is not visible
    std::vector<std::pair<int, int>> edges;
    for (size_t f = 0; f < faces.size(); ++f) {
      if (!visible[f]) continue;
      const int v[3] = {faces[f].a, faces[f].b, faces[f].c};
      for (int e = 0; e < 3; ++e) edges.emplace_back(v[e], v[(e + 1) % 3]);
    }
    std::vector<std::pair<int, int>> horizon;
    for (const auto& e : edges) {
      const bool internal =
          std::find(edges.begin(), edges.end(),
                    std::make_pair(e.second, e.first)) != edges.end();
      if (!internal) horizon.push_back(e);
    }
    std::vector<HullFace> next;
    for (size_t f = 0; f < faces.size(); ++f)
      if (!visible[f]) next.push_back(faces[f]);
    for (const auto& e : horizon)
      next.push_back(make_face(pts, e.first, e.second, i, interior));
    faces = std::move(next);
  }

  std::vector<char> on_hull(n, 0);
  for (const HullFace& f : faces) {
    on_hull[f.a] = 1;
    on_hull[f.b] = 1;
    on_hull[f.c] = 1;
  }
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (on_hull[i]) out.push_back(i);
  return out;
}

std::vector<int> partial_view_indices(const PointCloud& cloud, const Vec3& viewpoint) {
  const int n = cloud.size();
  if (n <= 3) throw std::invalid_argument("partial_view: need more than 3 points");
  const Vec3 centroid = cloud.pts.rowwise().mean();
  const double radius = (cloud.pts.colwise() - centroid).colwise().norm().maxCoeff();
  if ((viewpoint - centroid).norm() <= radius)
    throw std::invalid_argument("partial_view: viewpoint inside the bounding sphere");

  Eigen::Matrix3Xd rel = cloud.pts.colwise() - viewpoint;
  const double flip_radius = 100.0 * rel.colwise().norm().maxCoeff();

  Eigen::Matrix3Xd flipped(3, n + 1);
  for (int i = 0; i < n; ++i) {
    const double d = rel.col(i).norm();
    flipped.col(i) = rel.col(i) * (2.0 * flip_radius / d - 1.0);
  }
  flipped.col(n) = Vec3::Zero();  // the viewpoint itself

  std::vector<int> hull = convex_hull_vertices(flipped);
  std::vector<int> out;
  for (int i : hull)
    if (i < n) out.push_back(i);
  return out;
}

PointCloud partial_view(const PointCloud& cloud, const Vec3& viewpoint) {
  return select_points(cloud, partial_view_indices(cloud, viewpoint));
}

// ---------------------------------------------------------------------------
// dataset generation and file formats

namespace {

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

DatasetManifest gen_dataset(const CategorySpec& spec, int count, uint64_t seed,
                            bool partial, double outlier_rate, double noise_std,
                            int points_per_cloud, double max_tilt_deg,
                            double max_yaw_deg, const std::string& out_dir) {
  if (count < 0) throw std::invalid_argument("gen_dataset: negative count");
  if (outlier_rate < 0 || outlier_rate > 1)
    throw std::invalid_argument("gen_dataset: outlier rate must be in [0,1]");
  if (max_tilt_deg < 0) throw std::invalid_argument("gen_dataset: negative tilt");
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.category = spec.name;
  manifest.parts = spec.parts;
  manifest.joints = spec.joints;
  manifest.points = points_per_cloud;
  manifest.seed = seed;
  manifest.partial = partial;
  manifest.outlier_rate = outlier_rate;
  manifest.noise_std = noise_std;
  manifest.base_dir = out_dir;

  const int joints = static_cast<int>(spec.joints.size());
  for (int k = 0; k < count; ++k) {
    auto rng = make_rng(seed, 0xd5 + static_cast<uint64_t>(k));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::vector<double> states(joints);
    for (int j = 0; j < joints; ++j)
      states[j] = (u(rng) - 0.5) * spec.joints[j].range;
    Rotation rot;
    if (max_tilt_deg >= 180.0) {
      rot = random_rotation(rng);
    } else {
      const double pi = std::acos(-1.0);
      const double yaw_angle = max_yaw_deg / 180.0 * pi * (2 * u(rng) - 1);
      const Rotation yaw = axis_angle_to_rotation(Vec3(0, 0, 1) * yaw_angle);
      const double azimuth = 2 * pi * u(rng);
      const Vec3 tilt_axis(std::cos(azimuth), std::sin(azimuth), 0.0);
      const Rotation tilt = axis_angle_to_rotation(
          tilt_axis * (max_tilt_deg * pi / 180.0 * u(rng)));
      rot = tilt * yaw;
    }
    const Vec3 t(0.6 * (u(rng) - 0.5), 0.6 * (u(rng) - 0.5), 0.6 * (u(rng) - 0.5));

    const int oversample = partial ? 3 * points_per_cloud : points_per_cloud;
    auto [cloud, gt] = gen_instance(spec, states, rot, t, oversample,
                                    mix64(seed) + static_cast<uint64_t>(k));

    ManifestEntry entry;
    entry.joint_states = states;
    if (partial) {
      const Vec3 centroid = cloud.pts.rowwise().mean();
      const double radius =
          (cloud.pts.colwise() - centroid).colwise().norm().maxCoeff();
      // camera in the upper hemisphere (tabletop capture): uniform azimuth,
      // elevation in [30, 70] degrees above the horizon
      const double pi = std::acos(-1.0);
      const double azimuth = 2 * pi * u(rng);
      const double elevation = (30.0 + 40.0 * u(rng)) * pi / 180.0;
      const Vec3 dir(std::cos(elevation) * std::cos(azimuth),
                     std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
      entry.has_viewpoint = true;
      entry.viewpoint = centroid + dir * (3.0 * radius);
      cloud = partial_view(cloud, entry.viewpoint);
    }
    if (cloud.size() != points_per_cloud)
      cloud = sample_points(cloud, points_per_cloud,
                            mix64(seed ^ 0x5eed) + static_cast<uint64_t>(k));

    if (outlier_rate > 0) {
      const Vec3 lo = cloud.pts.rowwise().minCoeff();
      const Vec3 hi = cloud.pts.rowwise().maxCoeff();
      const Vec3 margin = 0.1 * (hi - lo);
      for (int i = 0; i < cloud.size(); ++i) {
        if (u(rng) >= outlier_rate) continue;
        for (int a = 0; a < 3; ++a) {
          const double span = hi[a] - lo[a] + 2.0 * margin[a];
          cloud.pts(a, i) = lo[a] - margin[a] + u(rng) * span;
        }
        cloud.labels[i] = 0;
      }
    }
    if (noise_std > 0) {
      std::normal_distribution<double> g(0.0, noise_std);
      for (int i = 0; i < cloud.size(); ++i)
        for (int a = 0; a < 3; ++a) cloud.pts(a, i) += g(rng);
    }
    gt.labels = cloud.labels;

    entry.cloud_path = "cloud_" + zero_pad(k, 4) + ".ply";
    entry.gt_path = "gt_" + zero_pad(k, 4) + ".txt";
    PointCloud bare;  // observations carry no labels
    bare.pts = cloud.pts;
    save_cloud(bare, (fs::path(out_dir) / entry.cloud_path).string());
    save_gt(gt, (fs::path(out_dir) / entry.gt_path).string());
    manifest.instances.push_back(std::move(entry));
  }

  save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json root;
  root["category"] = m.category;
  root["parts"] = m.parts;
  json joints = json::array();
  for (const JointSpec& j : m.joints)
    joints.push_back(json{{"kind", j.kind == JointKind::Revolute ? "revolute" : "prismatic"},
                          {"range", j.range}});
  root["joints"] = std::move(joints);
  root["points"] = m.points;
  root["seed"] = m.seed;
  root["partial"] = m.partial;
  root["outlier_rate"] = m.outlier_rate;
  root["noise_std"] = m.noise_std;
  json instances = json::array();
  for (const ManifestEntry& e : m.instances) {
    json inst{{"cloud_path", e.cloud_path},
              {"gt_path", e.gt_path},
              {"joint_states", e.joint_states}};
    if (e.has_viewpoint)
      inst["viewpoint"] = json::array({e.viewpoint.x(), e.viewpoint.y(), e.viewpoint.z()});
    else
      inst["viewpoint"] = nullptr;
    instances.push_back(std::move(inst));
  }
  root["instances"] = std::move(instances);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
  out << root.dump(1) << '\n';
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_manifest: malformed JSON: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.category = root.at("category");
  m.parts = root.at("parts");
  for (const json& j : root.at("joints")) {
    JointSpec spec;
    spec.kind = j.at("kind") == "revolute" ? JointKind::Revolute : JointKind::Prismatic;
    spec.range = j.at("range");
    m.joints.push_back(spec);
  }
  m.points = root.at("points");
  m.seed = root.at("seed");
  m.partial = root.at("partial");
  m.outlier_rate = root.at("outlier_rate");
  m.noise_std = root.at("noise_std");
  for (const json& j : root.at("instances")) {
    ManifestEntry e;
    e.cloud_path = j.at("cloud_path");
    e.gt_path = j.at("gt_path");
    e.joint_states = j.at("joint_states").get<std::vector<double>>();
    if (!j.at("viewpoint").is_null()) {
      e.has_viewpoint = true;
      e.viewpoint = Vec3(j.at("viewpoint").at(0), j.at("viewpoint").at(1),
                         j.at("viewpoint").at(2));
    }
    m.instances.push_back(std::move(e));
  }
  m.base_dir = fs::path(path).parent_path().string();
  return m;
}

void save_gt(const GroundTruth& gt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_gt: cannot open " + path);
  char buf[400];
  out << "artifit-gt 1\n";
  out << "parts " << gt.part_poses.size() << " joints " << gt.joints.size()
      << " points " << gt.labels.size() << "\n";
  for (int label : gt.labels) out << label << "\n";
  for (const PartPose& p : gt.part_poses) {
    int off = std::snprintf(buf, sizeof buf, "part");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        off += std::snprintf(buf + off, sizeof buf - off, " %.17g", p.R.m(r, c));
    for (int k = 0; k < 3; ++k)
      off += std::snprintf(buf + off, sizeof buf - off, " %.17g", p.t[k]);
    out << buf << "\n";
  }
  for (const GtJoint& j : gt.joints) {
    int off = std::snprintf(buf, sizeof buf, "joint");
    for (int k = 0; k < 3; ++k)
      off += std::snprintf(buf + off, sizeof buf - off, " %.17g", j.pivot[k]);
    for (int k = 0; k < 3; ++k)
      off += std::snprintf(buf + off, sizeof buf - off, " %.17g", j.direction[k]);
    std::snprintf(buf + off, sizeof buf - off, " %.17g", j.state);
    out << buf << "\n";
  }
}

GroundTruth load_gt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_gt: cannot open " + path);
  int line_no = 0;
  std::string line;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) throw ParseError("unexpected end of file", line_no);
    ++line_no;
    return line;
  };

  if (next_line() != "artifit-gt 1") throw ParseError("bad ground-truth header", line_no);
  std::istringstream head(next_line());
  std::string tok;
  int parts, joints, points;
  if (!(head >> tok >> parts) || tok != "parts")
    throw ParseError("expected 'parts <P>'", line_no);
  if (!(head >> tok >> joints) || tok != "joints")
    throw ParseError("expected 'joints <J>'", line_no);
  if (!(head >> tok >> points) || tok != "points")
    throw ParseError("expected 'points <N>'", line_no);

  GroundTruth gt;
  gt.labels.resize(points);
  for (int i = 0; i < points; ++i) {
    std::istringstream ls(next_line());
    if (!(ls >> gt.labels[i])) throw ParseError("malformed label", line_no);
  }
  gt.part_poses.resize(parts);
  for (int p = 0; p < parts; ++p) {
    std::istringstream ls(next_line());
    ls >> tok;
    if (tok != "part") throw ParseError("expected 'part' row", line_no);
    PartPose& pose = gt.part_poses[p];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (!(ls >> pose.R.m(r, c))) throw ParseError("malformed part row", line_no);
    for (int k = 0; k < 3; ++k)
      if (!(ls >> pose.t[k])) throw ParseError("malformed part row", line_no);
  }
  gt.joints.resize(joints);
  for (int j = 0; j < joints; ++j) {
    std::istringstream ls(next_line());
    ls >> tok;
    if (tok != "joint") throw ParseError("expected 'joint' row", line_no);
    GtJoint& joint = gt.joints[j];
    for (int k = 0; k < 3; ++k)
      if (!(ls >> joint.pivot[k])) throw ParseError("malformed joint row", line_no);
    for (int k = 0; k < 3; ++k)
      if (!(ls >> joint.direction[k])) throw ParseError("malformed joint row", line_no);
    if (!(ls >> joint.state)) throw ParseError("malformed joint row", line_no);
  }
  return gt;
}

}  // namespace artifit
