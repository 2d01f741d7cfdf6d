#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "artifit/rng.hpp"
#include "artifit/synthgen.hpp"
#include "oracles.hpp"

using namespace artifit;
namespace fs = std::filesystem;

TEST_CASE("gen_instance canonical configuration") {
  const CategorySpec spec = CategorySpec::laptop2();
  auto [cloud, gt] = gen_instance(spec, {0.0}, Rotation::identity(), Vec3::Zero(),
                                  200, 5);
  REQUIRE(cloud.size() == 200);
  REQUIRE(gt.part_poses.size() == 2);
  for (const PartPose& p : gt.part_poses) {
    CHECK((p.R.m - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.t.norm() == 0.0);
  }
  CHECK(gt.joints[0].state == 0.0);
  for (int label : cloud.labels) {
    CHECK(label >= 1);
    CHECK(label <= 2);
  }
}

TEST_CASE("gen_instance applies the recorded transforms exactly") {
  auto rng = make_rng(101);
  for (const std::string& name : {"laptop2", "drawer2", "basket3"}) {
    const CategorySpec spec = CategorySpec::by_name(name);
    std::vector<double> states(spec.joints.size());
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (size_t j = 0; j < states.size(); ++j)
      states[j] = u(rng) * spec.joints[j].range;
    const Rotation rot = random_rotation(rng);
    const Vec3 t(u(rng), u(rng), u(rng));

    auto [canonical, gt0] = gen_instance(spec, std::vector<double>(states.size(), 0.0),
                                         Rotation::identity(), Vec3::Zero(), 150, 77);
    auto [posed, gt] = gen_instance(spec, states, rot, t, 150, 77);

    // same seed draws the same canonical surface samples
    for (int i = 0; i < 150; ++i) {
      REQUIRE(canonical.labels[i] == posed.labels[i]);
      const PartPose& pose = gt.part_poses[posed.labels[i] - 1];
      CHECK((posed.pts.col(i) - (pose.R.m * canonical.pts.col(i) + pose.t)).norm() <
            1e-12);
    }
  }
}

TEST_CASE("gen_instance joint consistency") {
  auto rng = make_rng(102);
  for (int trial = 0; trial < 10; ++trial) {
    const CategorySpec spec =
        trial % 2 ? CategorySpec::drawer2() : CategorySpec::laptop2();
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const double state = u(rng) * spec.joints[0].range;
    const Rotation rot = random_rotation(rng);
    const Vec3 t(u(rng), u(rng), u(rng));
    auto [cloud, gt] = gen_instance(spec, {state}, rot, t, 60, trial);

    const PartPose& fixed = gt.part_poses[spec.attachments[0].static_part - 1];
    const PartPose& moving = gt.part_poses[spec.attachments[0].moving_part - 1];
    // relative transform from the static to the moving part
    const Mat3 r_rel = moving.R.m * fixed.R.m.transpose();
    const Vec3 t_rel = moving.t - r_rel * fixed.t;

    if (spec.joints[0].kind == JointKind::Revolute) {
      CHECK(rotation_angle_between(Rotation(r_rel), Rotation::identity()) ==
            doctest::Approx(std::abs(state)).epsilon(1e-9));
      // pivot is a fixed point; direction is the rotation axis
      CHECK((r_rel * gt.joints[0].pivot + t_rel - gt.joints[0].pivot).norm() < 1e-9);
      if (std::abs(state) > 1e-6) {
        const Vec3 axis = rotation_to_axis_angle(Rotation(r_rel)).normalized();
        CHECK(std::min((axis - gt.joints[0].direction).norm(),
                       (axis + gt.joints[0].direction).norm()) < 1e-9);
      }
    } else {
      CHECK((r_rel - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((t_rel - gt.joints[0].direction * state).norm() < 1e-9);
    }
  }
}

TEST_CASE("gen_instance determinism and validation") {
  const CategorySpec spec = CategorySpec::laptop2();
  auto [a, gta] = gen_instance(spec, {0.3}, Rotation::identity(), Vec3::Zero(), 64, 9);
  auto [b, gtb] = gen_instance(spec, {0.3}, Rotation::identity(), Vec3::Zero(), 64, 9);
  CHECK((a.pts - b.pts).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.labels == b.labels);

  CHECK_THROWS_AS(gen_instance(spec, {spec.joints[0].range}, Rotation::identity(),
                               Vec3::Zero(), 10, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(gen_instance(spec, {0.0, 0.0}, Rotation::identity(), Vec3::Zero(),
                               10, 1),
                  std::invalid_argument);
}

TEST_CASE("partial_view on a sphere keeps the camera-facing side") {
  // Fibonacci sphere: roughly uniform, generic positions
  const int n = 400;
  Eigen::Matrix3Xd sphere(3, n);
  const double golden = std::acos(-1.0) * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(1.0 - z * z);
    sphere.col(i) = Vec3(r * std::cos(golden * i), r * std::sin(golden * i), z);
  }
  PointCloud cloud;
  cloud.pts = sphere;
  cloud.labels.assign(n, 1);

  const Vec3 viewpoint(0, 0, 8);
  const std::vector<int> kept = partial_view_indices(cloud, viewpoint);
  CHECK(kept.size() > 50);
  CHECK(kept.size() < static_cast<size_t>(n));

  // exact visibility oracle for a sphere: p visible iff (p-c).(v-c) >= r^2.
  // The spherical flip keeps a band slightly beyond the horizon, so demand
  // strong agreement rather than equality.
  int agree = 0;
  for (int i : kept) {
    CHECK(sphere.col(i).z() > -0.25);  // front-hemisphere dominance
    if (sphere.col(i).dot(viewpoint) >= 1.0 - 1e-9) ++agree;
  }
  CHECK(static_cast<double>(agree) / kept.size() > 0.8);

  // clearly visible points (well inside the visible cap) are all kept
  std::set<int> kept_set(kept.begin(), kept.end());
  for (int i = 0; i < n; ++i)
    if (sphere.col(i).dot(viewpoint.normalized()) > 0.6)
      CHECK(kept_set.count(i) == 1);

  // subset with labels preserved
  const PointCloud visible = partial_view(cloud, viewpoint);
  CHECK(visible.size() == static_cast<int>(kept.size()));
  CHECK(visible.has_labels());

  // idempotent for a fixed viewpoint
  const PointCloud again = partial_view(visible, viewpoint);
  CHECK(again.size() == visible.size());
  CHECK((again.pts - visible.pts).cwiseAbs().maxCoeff() == 0.0);

  // antipodal viewpoints see mostly disjoint subsets
  const std::vector<int> other = partial_view_indices(cloud, -viewpoint);
  int overlap = 0;
  for (int i : other) overlap += kept_set.count(i);
  CHECK(static_cast<double>(overlap) /
            std::min(kept.size(), other.size()) < 0.2);

  CHECK_THROWS_AS(partial_view(cloud, Vec3(0, 0, 0.5)), std::invalid_argument);
  PointCloud tiny;
  tiny.pts = Eigen::Matrix3Xd::Zero(3, 3);
  CHECK_THROWS_AS(partial_view(tiny, viewpoint), std::invalid_argument);
}

TEST_CASE("convex hull vertices of a cube with interior points") {
  auto rng = make_rng(103);
  Eigen::Matrix3Xd pts(3, 8 + 20);
  int c = 0;
  for (double x : {-1.0, 1.0})
    for (double y : {-1.0, 1.0})
      for (double z : {-1.0, 1.0}) pts.col(c++) = Vec3(x, y, z);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (int i = 0; i < 20; ++i) pts.col(8 + i) = Vec3(u(rng), u(rng), u(rng));

  const std::vector<int> hull = convex_hull_vertices(pts);
  REQUIRE(hull.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(hull[i] == i);
}

TEST_CASE("gen_dataset writes a consistent corpus") {
  const std::string dir = (fs::temp_directory_path() / "artifit_ds").string();
  fs::remove_all(dir);
  const CategorySpec spec = CategorySpec::laptop2();
  const DatasetManifest manifest =
      gen_dataset(spec, 5, 11, /*partial=*/true, /*outlier_rate=*/0.1,
                  /*noise_std=*/0.001, /*points=*/128, /*max_tilt_deg=*/180, 180, dir);

  REQUIRE(manifest.instances.size() == 5);
  const DatasetManifest loaded = load_manifest(dir + "/manifest.json");
  CHECK(loaded.category == "laptop2");
  CHECK(loaded.parts == 2);
  CHECK(loaded.points == 128);
  CHECK(loaded.partial);
  REQUIRE(loaded.instances.size() == 5);

  for (const ManifestEntry& e : loaded.instances) {
    const PointCloud cloud = load_cloud(dir + "/" + e.cloud_path);
    CHECK(cloud.size() == 128);
    CHECK(!cloud.has_labels());  // observations carry no labels
    const GroundTruth gt = load_gt(dir + "/" + e.gt_path);
    CHECK(gt.labels.size() == 128);
    CHECK(gt.part_poses.size() == 2);
    CHECK(gt.joints.size() == 1);
    CHECK(e.has_viewpoint);
    CHECK(std::abs(e.joint_states[0]) <= spec.joints[0].range / 2 + 1e-12);
  }

  // empty dataset: manifest only
  const std::string dir0 = (fs::temp_directory_path() / "artifit_ds0").string();
  fs::remove_all(dir0);
  const DatasetManifest empty = gen_dataset(spec, 0, 1, false, 0, 0, 64, 180, 180, dir0);
  CHECK(empty.instances.empty());
  CHECK(load_manifest(dir0 + "/manifest.json").instances.empty());
}

TEST_CASE("outlier rate is honored within binomial bounds") {
  const std::string dir = (fs::temp_directory_path() / "artifit_ds_out").string();
  fs::remove_all(dir);
  const CategorySpec spec = CategorySpec::drawer2();
  gen_dataset(spec, 1, 21, false, 0.05, 0.0, 1000, 180, 180, dir);
  const GroundTruth gt = load_gt(dir + "/gt_0000.txt");
  int outliers = 0;
  for (int label : gt.labels)
    if (label == 0) ++outliers;
  CHECK(outliers >= 35);
  CHECK(outliers <= 65);
}

TEST_CASE("ground-truth file round trip") {
  auto rng = make_rng(104);
  GroundTruth gt;
  gt.labels = {1, 2, 0, 1};
  gt.part_poses.resize(2);
  gt.part_poses[0] = PartPose{random_rotation(rng), Vec3(0.25, -1, 3)};
  gt.part_poses[1] = PartPose{random_rotation(rng), Vec3(1.0 / 3, 0, -2e-7)};
  gt.joints.resize(1);
  gt.joints[0].pivot = Vec3(0.1, 0.2, 0.3);
  gt.joints[0].direction = Vec3(0, 1, 0);
  gt.joints[0].state = -0.7;

  const std::string path = (fs::temp_directory_path() / "artifit_gt.txt").string();
  save_gt(gt, path);
  const GroundTruth back = load_gt(path);
  CHECK(back.labels == gt.labels);
  for (int p = 0; p < 2; ++p) {
    CHECK((back.part_poses[p].R.m - gt.part_poses[p].R.m).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.part_poses[p].t - gt.part_poses[p].t).norm() == 0.0);
  }
  CHECK((back.joints[0].pivot - gt.joints[0].pivot).norm() == 0.0);
  CHECK(back.joints[0].state == gt.joints[0].state);

  // malformed file names the line
  {
    std::ofstream bad(path);
    bad << "artifit-gt 1\nparts 1 joints 0 points 2\n1\nnope\n";
  }
  try {
    load_gt(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 4);
  }
}

TEST_CASE("gen_dataset is deterministic") {
  const std::string dir_a = (fs::temp_directory_path() / "artifit_det_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "artifit_det_b").string();
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  const CategorySpec spec = CategorySpec::basket3();
  gen_dataset(spec, 3, 33, true, 0.05, 0.001, 96, 60, 120, dir_a);
  gen_dataset(spec, 3, 33, true, 0.05, 0.001, 96, 60, 120, dir_b);
  for (const std::string name : {"cloud_0000.ply", "gt_0001.txt", "manifest.json"}) {
    std::ifstream fa(dir_a + "/" + name), fb(dir_b + "/" + name);
    const std::string sa((std::istreambuf_iterator<char>(fa)),
                         std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(fb)),
                         std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
  }
}
