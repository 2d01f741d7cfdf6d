#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "artifit/articulation.hpp"
#include "artifit/cloud.hpp"
#include "artifit/geom.hpp"

namespace artifit {

/// Canonical-frame layout of one synthetic category: box parts connected by
/// one joint per moving part.
struct CategorySpec {
  struct Attachment {
    Vec3 pivot = Vec3::Zero();
    Vec3 axis = Vec3::UnitZ();
    int static_part = 1;  // labels, 1-based
    int moving_part = 2;
  };

  std::string name;
  int parts = 2;
  std::vector<JointSpec> joints;       // size parts-1
  std::vector<Vec3> box_dims;          // per part
  std::vector<Vec3> box_centers;       // per part, canonical frame
  std::vector<Attachment> attachments; // per joint

  static CategorySpec laptop2();
  static CategorySpec drawer2();
  static CategorySpec basket3();
  static CategorySpec by_name(const std::string& name);
};

struct GtJoint {
  Vec3 pivot = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double state = 0.0;
};

struct PartPose {
  Rotation R;
  Vec3 t = Vec3::Zero();
};

struct GroundTruth {
  std::vector<int> labels;           // per point, 1..P (0 = outlier)
  std::vector<PartPose> part_poses;  // canonical -> observed, per part
  std::vector<GtJoint> joints;       // observed frame
};

// Surface-samples each part's box, applies the joint motion of moving parts
// and then the global pose. Ground truth is recorded exactly.
std::pair<PointCloud, GroundTruth> gen_instance(const CategorySpec& spec,
                                                const std::vector<double>& states,
                                                const Rotation& global_rot,
                                                const Vec3& global_t, int n,
                                                uint64_t seed);

// Hidden-point removal by the spherical-flip convex-hull method with flip
// radius 100x the cloud radius. Returns the visible subset (labels kept).
std::vector<int> partial_view_indices(const PointCloud& cloud, const Vec3& viewpoint);
PointCloud partial_view(const PointCloud& cloud, const Vec3& viewpoint);

// Vertex indices of the convex hull of a generic-position point set.
std::vector<int> convex_hull_vertices(const Eigen::Matrix3Xd& pts);

struct ManifestEntry {
  std::string cloud_path;  // relative to the manifest directory
  std::string gt_path;
  std::vector<double> joint_states;
  bool has_viewpoint = false;
  Vec3 viewpoint = Vec3::Zero();
};

struct DatasetManifest {
  std::string category;
  int parts = 2;
  std::vector<JointSpec> joints;
  int points = 0;
  uint64_t seed = 0;
  bool partial = false;
  double outlier_rate = 0.0;
  double noise_std = 0.0;
  std::vector<ManifestEntry> instances;
  std::string base_dir;  // set on load; not serialized
};

// Writes `count` clouds plus ground-truth files and a manifest into out_dir.
// Joint states are sampled uniformly within the spec ranges; outliers are
// uniform in the enlarged bounding box and GT-labeled 0. Global poses use a
// yaw bounded by max_yaw_deg and a tilt bounded by max_tilt_deg
// (max_tilt_deg >= 180 switches to fully unrestricted rotations), mirroring
// tabletop capture setups.
DatasetManifest gen_dataset(const CategorySpec& spec, int count, uint64_t seed,
                            bool partial, double outlier_rate, double noise_std,
                            int points_per_cloud, double max_tilt_deg,
                            double max_yaw_deg, const std::string& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
void save_gt(const GroundTruth& gt, const std::string& path);
GroundTruth load_gt(const std::string& path);

}  // namespace artifit
