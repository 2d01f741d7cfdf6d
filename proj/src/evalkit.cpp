#include "artifit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "artifit/rng.hpp"

namespace artifit {

namespace {
constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;
}

std::vector<PartPose> ransac_common_pose(
    const std::vector<std::vector<PartPose>>& sample_poses, uint64_t seed,
    int trials) {
  const int samples = static_cast<int>(sample_poses.size());
  if (samples < 4)
    throw std::invalid_argument("ransac_common_pose: need at least 4 samples");
  const int parts = static_cast<int>(sample_poses[0].size());
  for (const auto& s : sample_poses)
    if (static_cast<int>(s.size()) != parts)
      throw std::invalid_argument("ransac_common_pose: ragged sample poses");

  auto rng = make_rng(seed, 0x4a5c);
  std::vector<int> pool(samples);
  std::vector<PartPose> best(parts);
  double best_score = -1.0;

  for (int trial = 0; trial < trials; ++trial) {
    // first 4 entries of a partial Fisher-Yates shuffle
    std::iota(pool.begin(), pool.end(), 0);
    for (int k = 0; k < 4; ++k) {
      std::uniform_int_distribution<int> u(k, samples - 1);
      std::swap(pool[k], pool[u(rng)]);
    }

    std::vector<PartPose> mean(parts);
    for (int p = 0; p < parts; ++p) {
      Rotation r = sample_poses[pool[0]][p].R;
      Vec3 t = sample_poses[pool[0]][p].t;
      for (int k = 1; k < 4; ++k) {
        const double w = 1.0 / (k + 1.0);
        r = slerp(r, sample_poses[pool[k]][p].R, w);
        t += sample_poses[pool[k]][p].t;
      }
      mean[p] = PartPose{r, t / 4.0};
    }

    double score = 0.0;
    for (int s = 0; s < samples; ++s)
      for (int p = 0; p < parts; ++p) {
        score += rotation_angle_between(mean[p].R, sample_poses[s][p].R);
        score += (mean[p].t - sample_poses[s][p].t).norm();
      }
    if (best_score < 0 || score < best_score) {
      best_score = score;
      best = mean;
    }
  }
  return best;
}

std::vector<std::pair<double, double>> part_pose_error(
    const std::vector<PartPose>& pred, const std::vector<PartPose>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("part_pose_error: part count mismatch");
  std::vector<std::pair<double, double>> out;
  out.reserve(pred.size());
  for (size_t p = 0; p < pred.size(); ++p)
    out.emplace_back(rotation_angle_between(pred[p].R, gt[p].R) * kRadToDeg,
                     (pred[p].t - gt[p].t).norm());
  return out;
}

JointErrorResult joint_error(const JointPrediction& pred, const GtJoint& gt,
                             const JointSpec& spec, bool fold_direction) {
  JointErrorResult out;
  const double c = std::clamp(pred.direction.normalized().dot(gt.direction.normalized()),
                              -1.0, 1.0);
  const double deg = std::acos(fold_direction ? std::abs(c) : c) * kRadToDeg;
  out.direction_deg = deg;
  if (spec.kind == JointKind::Revolute) {
    out.has_pivot = true;
    const Vec3 d = gt.direction.normalized();
    const Vec3 rel = pred.pivot - gt.pivot;
    out.pivot = (rel - d * d.dot(rel)).norm();
  }
  return out;
}

IouResult segmentation_iou(const Eigen::MatrixXd& probs,
                           const std::vector<int>& gt_labels) {
  const int parts = static_cast<int>(probs.rows());
  const int n = static_cast<int>(probs.cols());
  if (static_cast<int>(gt_labels.size()) != n)
    throw std::invalid_argument("segmentation_iou: label count mismatch");

  std::vector<int> pred(n);
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    for (int p = 1; p < parts; ++p)
      if (probs(p, i) > probs(arg, i)) arg = p;  // ties keep the lowest index
    pred[i] = arg + 1;
  }

  std::vector<int> perm(parts);
  std::iota(perm.begin(), perm.end(), 1);
  IouResult best;
  best.mean = -1.0;
  do {
    // perm[model_label - 1] = aligned gt label
    Eigen::VectorXd inter = Eigen::VectorXd::Zero(parts);
    Eigen::VectorXd uni = Eigen::VectorXd::Zero(parts);
    for (int i = 0; i < n; ++i) {
      if (gt_labels[i] == 0) continue;  // outliers excluded
      const int g = gt_labels[i] - 1;
      const int m = perm[pred[i] - 1] - 1;
      if (g == m) {
        inter[g] += 1;
        uni[g] += 1;
      } else {
        uni[g] += 1;
        uni[m] += 1;
      }
    }
    Eigen::VectorXd iou = Eigen::VectorXd::Zero(parts);
    double mean = 0.0;
    int counted = 0;
    for (int p = 0; p < parts; ++p) {
      if (uni[p] > 0) {
        iou[p] = inter[p] / uni[p];
        mean += iou[p];
        ++counted;
      }
    }
    mean = counted ? mean / counted : 0.0;
    if (mean > best.mean) {
      best.per_part = iou;
      best.mean = mean;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

namespace {

std::string threshold_name(double rot_deg, double trans) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%gdeg%gcm", rot_deg, trans * 100.0);
  return buf;
}

}  // namespace

MapTable map_table(const std::string& category,
                   const std::vector<PosePrediction>& preds,
                   const std::vector<GroundTruth>& gts,
                   const std::vector<JointSpec>& specs,
                   const MetricThresholds& thresholds,
                   const std::vector<int>& gt_joint_moving_parts,
                   bool fold_direction) {
  if (preds.empty() || preds.size() != gts.size())
    throw std::invalid_argument("map_table: prediction/gt size mismatch");
  const int count = static_cast<int>(preds.size());
  const int joints = static_cast<int>(specs.size());

  std::vector<double> mean_iou(count);
  std::vector<double> mean_rot(count), mean_trans(count);
  std::vector<double> mean_dir(count), mean_pivot(count);
  std::vector<bool> any_pivot(count, false);

  for (int k = 0; k < count; ++k) {
    const PosePrediction& pred = preds[k];
    const GroundTruth& gt = gts[k];
    const int parts = static_cast<int>(gt.part_poses.size());

    const IouResult iou = segmentation_iou(pred.probs, gt.labels);
    mean_iou[k] = iou.mean;

    // poses follow the IoU-chosen permutation
    std::vector<PartPose> aligned(parts);
    for (int p = 0; p < parts; ++p)
      aligned[iou.permutation[p] - 1] = pred.parts[p];
    const auto errors = part_pose_error(aligned, gt.part_poses);
    double rot = 0, trans = 0;
    for (const auto& [r, t] : errors) {
      rot += r;
      trans += t;
    }
    mean_rot[k] = rot / parts;
    mean_trans[k] = trans / parts;

    // joint pairing through the permutation (moving-part identity)
    std::vector<int> pair(joints);
    std::iota(pair.begin(), pair.end(), 0);
    if (pred.joint_slots.rows() == joints && !gt_joint_moving_parts.empty()) {
      for (int j = 0; j < joints; ++j) {
        int moving_slot = 1;  // prefer the less-shared slot as the moving part
        if (pred.joint_shares.rows() == joints &&
            pred.joint_shares(j, 0) < pred.joint_shares(j, 1))
          moving_slot = 0;
        const int model_label = pred.joint_slots(j, moving_slot);
        const int gt_label = iou.permutation[model_label - 1];
        for (int g = 0; g < joints; ++g)
          if (gt_joint_moving_parts[g] == gt_label) {
            pair[j] = g;
            break;
          }
      }
    }

    double dir = 0, pivot = 0;
    int pivot_count = 0;
    for (int j = 0; j < joints; ++j) {
      const JointErrorResult err =
          joint_error(pred.joints[j], gt.joints[pair[j]], specs[j], fold_direction);
      dir += err.direction_deg;
      if (err.has_pivot) {
        pivot += err.pivot;
        ++pivot_count;
      }
    }
    mean_dir[k] = dir / joints;
    any_pivot[k] = pivot_count > 0;
    mean_pivot[k] = pivot_count ? pivot / pivot_count : 0.0;
  }

  MapTable table;
  table.category = category;
  for (double thr : thresholds.iou) {
    int hits = 0;
    for (int k = 0; k < count; ++k)
      if (mean_iou[k] >= thr) ++hits;
    char name[32];
    std::snprintf(name, sizeof name, "iou%g", thr * 100.0);
    table.rows.push_back(MapRow{"segmentation", name, 100.0 * hits / count});
  }
  for (size_t i = 0; i < thresholds.rot_deg.size(); ++i) {
    const double r = thresholds.rot_deg[i], t = thresholds.trans[i];
    int hits = 0;
    for (int k = 0; k < count; ++k)
      if (mean_dir[k] < r && (!any_pivot[k] || mean_pivot[k] < t)) ++hits;
    table.rows.push_back(MapRow{"joint", threshold_name(r, t), 100.0 * hits / count});
  }
  for (size_t i = 0; i < thresholds.rot_deg.size(); ++i) {
    const double r = thresholds.rot_deg[i], t = thresholds.trans[i];
    int hits = 0;
    for (int k = 0; k < count; ++k)
      if (mean_rot[k] < r && mean_trans[k] < t) ++hits;
    table.rows.push_back(MapRow{"part", threshold_name(r, t), 100.0 * hits / count});
  }
  return table;
}

PartPose normalize_pose(const PartPose& pose, const NormalizationRecord& rec) {
  return PartPose{pose.R, rec.scale * (pose.t - rec.offset)};
}

PartPose compose_poses(const PartPose& a, const PartPose& b) {
  return PartPose{Rotation(a.R.m * b.R.m), a.R.m * b.t + a.t};
}

PartPose invert_pose(const PartPose& pose) {
  return PartPose{pose.R.transposed(), -(pose.R.m.transpose() * pose.t)};
}

PosePrediction relative_to_absolute(const RelativePoses& rel,
                                    const Eigen::MatrixXd& probs,
                                    const std::vector<PartPose>& common_poses,
                                    const std::vector<JointSpec>& specs,
                                    const NormalizationRecord& rec) {
  if (common_poses.size() != rel.per_part.size())
    throw std::invalid_argument("relative_to_absolute: missing calibration");
  PosePrediction out;
  out.probs = probs;
  out.joint_slots = rel.joint_slots;
  out.joint_shares = rel.joint_shares;

  const int parts = static_cast<int>(rel.per_part.size());
  out.parts.resize(parts);
  for (int p = 0; p < parts; ++p) {
    const PartPose relative{rel.per_part[p].first, rel.per_part[p].second};
    const PartPose normalized = compose_poses(invert_pose(relative), common_poses[p]);
    out.parts[p] = PartPose{normalized.R, normalized.t / rec.scale + rec.offset};
  }

  out.joints.resize(specs.size());
  for (size_t j = 0; j < specs.size(); ++j) {
    // pull the aligned-frame joint back to the (normalized) camera frame
    const Vec3 pivot_cam = rel.r_o.m.transpose() * (rel.joints_x[j].pivot - rel.t_o);
    const Vec3 dir_cam = rel.r_o.m.transpose() * rel.joints_x[j].direction;
    out.joints[j].pivot = pivot_cam / rec.scale + rec.offset;
    out.joints[j].direction = dir_cam;
  }
  return out;
}

PreprocessedDataset load_and_preprocess(const DatasetManifest& manifest,
                                        int n_points, uint64_t seed, bool with_gt) {
  namespace fs = std::filesystem;
  PreprocessedDataset out;
  out.dataset.parts = manifest.parts;
  out.dataset.joint_specs = manifest.joints;
  for (size_t k = 0; k < manifest.instances.size(); ++k) {
    const ManifestEntry& e = manifest.instances[k];
    const PointCloud raw =
        load_cloud((fs::path(manifest.base_dir) / e.cloud_path).string());
    const auto idx = sample_indices(raw.size(), n_points, mix64(seed ^ 0xda7a) + k);
    const PointCloud sampled = select_points(raw, idx);
    auto [normalized, rec] = normalize(sampled);
    out.dataset.clouds.push_back(std::move(normalized));
    out.recs.push_back(rec);
    if (with_gt) {
      GroundTruth gt = load_gt((fs::path(manifest.base_dir) / e.gt_path).string());
      std::vector<int> labels(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) labels[i] = gt.labels[idx[i]];
      gt.labels = std::move(labels);
      out.gts.push_back(std::move(gt));
    }
  }
  return out;
}

EvalOutcome evaluate_fitted_state(const FitState& state,
                                  const DatasetManifest& manifest,
                                  const std::string& split, uint64_t ransac_seed) {
  const PreprocessedDataset loaded = load_and_preprocess(
      manifest, state.config.sample_points, state.config.seed, true);
  const int count = static_cast<int>(loaded.dataset.clouds.size());
  if (static_cast<int>(state.instances.size()) != count)
    throw std::runtime_error("eval: state and dataset disagree on instance count");

  std::vector<int> train_idx, test_idx;
  for (int k = 0; k < count; ++k) {
    if (split == "all") {
      train_idx.push_back(k);
      test_idx.push_back(k);
    } else {
      (k % 2 == 0 ? train_idx : test_idx).push_back(k);
    }
  }
  if (train_idx.size() < 4)
    throw std::runtime_error("eval: need at least 4 training instances");

  const auto& specs = loaded.dataset.joint_specs;
  const int parts = loaded.dataset.parts;

  // calibration: estimated reconstruction pose per model part, ground truth
  // paired through each training sample's IoU permutation
  std::vector<std::vector<PartPose>> sample_poses;
  for (int k : train_idx) {
    const RelativePoses rel = relative_part_maps(
        state.instances[k], loaded.dataset.clouds[k], specs, state.y_base, parts);
    const Eigen::MatrixXd probs = colwise_softmax(state.instances[k].seg_logits_x);
    const IouResult iou = segmentation_iou(probs, loaded.gts[k].labels);
    std::vector<PartPose> per_part(parts);
    for (int p = 1; p <= parts; ++p) {
      const int gt_label = iou.permutation[p - 1];
      const PartPose rel_pose{rel.per_part[p - 1].first, rel.per_part[p - 1].second};
      per_part[p - 1] = compose_poses(
          rel_pose,
          normalize_pose(loaded.gts[k].part_poses[gt_label - 1], loaded.recs[k]));
    }
    sample_poses.push_back(std::move(per_part));
  }
  const std::vector<PartPose> common = ransac_common_pose(sample_poses, ransac_seed);

  EvalOutcome out;
  out.test_indices = test_idx;
  std::vector<GroundTruth> gts;
  for (int k : test_idx) {
    const RelativePoses rel = relative_part_maps(
        state.instances[k], loaded.dataset.clouds[k], specs, state.y_base, parts);
    const Eigen::MatrixXd probs = colwise_softmax(state.instances[k].seg_logits_x);
    out.preds.push_back(
        relative_to_absolute(rel, probs, common, specs, loaded.recs[k]));
    gts.push_back(loaded.gts[k]);
    out.test_mean_iou.push_back(
        segmentation_iou(probs, loaded.gts[k].labels).mean);
  }

  std::vector<int> gt_moving;
  try {
    const CategorySpec cat = CategorySpec::by_name(manifest.category);
    for (const auto& at : cat.attachments) gt_moving.push_back(at.moving_part);
  } catch (const std::invalid_argument&) {
    // unknown category: identity joint pairing
  }
  out.table = map_table(manifest.category, out.preds, gts, specs,
                        MetricThresholds{}, gt_moving);
  return out;
}

void emit_report(const MapTable& table, const std::string& path, ReportFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_report: cannot open " + path);
  if (format == ReportFormat::Csv) {
    out << "category,metric_family,threshold,value\n";
    char buf[64];
    for (const MapRow& row : table.rows) {
      std::snprintf(buf, sizeof buf, "%.4f", row.value);
      out << table.category << ',' << row.family << ',' << row.threshold << ','
          << buf << '\n';
    }
  } else {
    nlohmann::ordered_json root;
    root["category"] = table.category;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const MapRow& row : table.rows)
      rows.push_back(nlohmann::ordered_json{{"metric_family", row.family},
                                            {"threshold", row.threshold},
                                            {"value", row.value}});
    root["rows"] = std::move(rows);
    out << root.dump(1) << '\n';
  }
}

}  // namespace artifit
