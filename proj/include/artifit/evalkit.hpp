#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "artifit/cloud.hpp"
#include "artifit/fit.hpp"
#include "artifit/geom.hpp"
#include "artifit/synthgen.hpp"

namespace artifit {

struct JointPrediction {
  Vec3 pivot = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

/// Per-instance predictions in the camera frame (original units).
struct PosePrediction {
  std::vector<PartPose> parts;
  std::vector<JointPrediction> joints;
  Eigen::MatrixXd probs;        // P x N per-point part probabilities
  Eigen::MatrixXi joint_slots;  // J x 2 model part labels per joint (may be empty)
  Eigen::MatrixXi joint_shares; // J x 2 share counts (may be empty)
};

struct MetricThresholds {
  std::vector<double> rot_deg{5.0, 10.0, 15.0};
  std::vector<double> trans{0.05, 0.10, 0.15};
  std::vector<double> iou{0.75, 0.50};
};

// 100 trials of: average 4 random samples' poses per part (iterated SLERP
// for rotations, arithmetic mean for translations), score by the summed
// rotation+translation error over all samples and parts, keep the best.
std::vector<PartPose> ransac_common_pose(
    const std::vector<std::vector<PartPose>>& sample_poses, uint64_t seed,
    int trials = 100);

// Per part: (rotation error in degrees, Euclidean translation distance).
std::vector<std::pair<double, double>> part_pose_error(
    const std::vector<PartPose>& pred, const std::vector<PartPose>& gt);

struct JointErrorResult {
  double direction_deg = 0.0;
  bool has_pivot = false;  // false for prismatic joints
  double pivot = 0.0;      // distance from the predicted pivot to the GT line
};

// Direction error folded to [0, 90] degrees unless fold_direction is false.
JointErrorResult joint_error(const JointPrediction& pred, const GtJoint& gt,
                             const JointSpec& spec, bool fold_direction = true);

struct IouResult {
  Eigen::VectorXd per_part;      // IoU per GT part under the best permutation
  double mean = 0.0;
  std::vector<int> permutation;  // permutation[model_label-1] = gt label
};

// Hard labels by per-point argmax (ties -> lowest part), all P! label
// permutations evaluated, outlier-labeled GT points (label 0) excluded.
IouResult segmentation_iou(const Eigen::MatrixXd& probs,
                           const std::vector<int>& gt_labels);

struct MapRow {
  std::string family;     // segmentation | joint | part
  std::string threshold;  // iou75, 5deg5cm, ...
  double value = 0.0;     // percent
};

struct MapTable {
  std::string category;
  std::vector<MapRow> rows;
};

// Instance-level mAP: a part (or joint) prediction counts when its
// mean-over-parts rotation AND translation errors are under the paired
// thresholds; poses follow the IoU-chosen permutation.
// gt_joint_moving_parts maps each GT joint to its moving part label (used
// to pair joints across permuted labelings; empty = identity pairing).
MapTable map_table(const std::string& category,
                   const std::vector<PosePrediction>& preds,
                   const std::vector<GroundTruth>& gts,
                   const std::vector<JointSpec>& specs,
                   const MetricThresholds& thresholds,
                   const std::vector<int>& gt_joint_moving_parts = {},
                   bool fold_direction = true);

// GT pose conjugated into the normalized frame: (R, scale * (t - offset)).
PartPose normalize_pose(const PartPose& pose, const NormalizationRecord& rec);
PartPose compose_poses(const PartPose& a, const PartPose& b);  // a after b
PartPose invert_pose(const PartPose& pose);

// Camera-frame prediction for one fitted instance: per-part inverse relative
// transform composed with the calibrated common pose, joints pulled back
// through the object-level alignment, everything denormalized.
PosePrediction relative_to_absolute(const RelativePoses& rel,
                                    const Eigen::MatrixXd& probs,
                                    const std::vector<PartPose>& common_poses,
                                    const std::vector<JointSpec>& specs,
                                    const NormalizationRecord& rec);

enum class ReportFormat { Csv, Json };
void emit_report(const MapTable& table, const std::string& path, ReportFormat format);

/// Dataset after the preprocessing both fit and eval share: per instance,
/// a deterministic point subsample followed by normalization.
struct PreprocessedDataset {
  Dataset dataset;
  std::vector<GroundTruth> gts;  // labels subset to the sampled points
  std::vector<NormalizationRecord> recs;
};

PreprocessedDataset load_and_preprocess(const DatasetManifest& manifest,
                                        int n_points, uint64_t seed, bool with_gt);

struct EvalOutcome {
  MapTable table;
  std::vector<int> test_indices;
  std::vector<double> test_mean_iou;  // per test instance
  std::vector<PosePrediction> preds;
};

// The full evaluation protocol: RANSAC common-pose calibration on the
// training split (ground-truth poses paired through each sample's IoU
// permutation), relative-to-absolute conversion on the test split, and the
// mAP table. split: "parity" (even = train, odd = test) or "all".
EvalOutcome evaluate_fitted_state(const FitState& state,
                                  const DatasetManifest& manifest,
                                  const std::string& split, uint64_t ransac_seed);

}  // namespace artifit
