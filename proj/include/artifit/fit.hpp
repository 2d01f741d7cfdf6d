#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "artifit/energy.hpp"

namespace artifit {

/// Residual pose attached to one anchor candidate.
struct AnchorResidual {
  Vec3 rot_raw = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
};

/// Every free parameter fitted for one instance.
struct InstanceParams {
  std::vector<AnchorResidual> anchor_residuals;  // one per anchor
  Eigen::MatrixXd seg_logits_x, seg_logits_y;    // P x N, P x M
  std::vector<JointRaw> joints_x, joints_y;
  Eigen::Matrix3Xd deformation;                  // 3 x M
  Assignment assignment;
  int last_anchor = 0;
};

enum class TemplateInit { FibonacciSphere, FirstInstance };

struct FitConfig {
  int iterations = 20000;
  int batch = 24;
  double lr = 1e-4;
  int lr_halve_every = 5000;
  EnergyConfig energy;
  TemplateInit init = TemplateInit::FibonacciSphere;
  uint64_t seed = 0;
  int assignment_interval = 1;  // refresh sigma every k steps
  bool augment = false;
  double noise_var = 0.001;  // augmentation noise variance per coordinate
  int sample_points = 1024;  // input resampling size (CLI preprocessing)
  int checkpoint_interval = 0;  // steps between checkpoints, 0 = off
  int threads = 1;
};

/// Instances of one category, already preprocessed (sampled + normalized).
struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<JointSpec> joint_specs;
  int parts = 2;
};

struct AdamState {
  Eigen::ArrayXd m, v;
  long t = 0;
};

struct InstanceOpt {
  std::vector<AdamState> anchors;  // per anchor: 6 values
  AdamState seg_x, seg_y, joints_x, joints_y, deformation;
};

struct FitState {
  Eigen::Matrix3Xd y_base;
  std::vector<InstanceParams> instances;
  std::vector<InstanceOpt> opt;
  AdamState opt_y_base;
  long step = 0;
  FitConfig config;
};

/// Raised when a loss term stops being finite; names the offending term.
struct DivergenceError : std::runtime_error {
  std::string term;
  DivergenceError(const std::string& term_name, long at_step)
      : std::runtime_error("non-finite loss term '" + term_name + "' at step " +
                           std::to_string(at_step)),
        term(term_name) {}
};

// Deterministic initialization: base shape on a Fibonacci sphere of mean
// radius 0.5, zero residuals and deformations, small-noise logits, pivots
// at the cloud centroids, random unit joint directions.
FitState init_params(const Dataset& data, const FitConfig& config);

struct AnchorChoice {
  int index = 0;
  Rotation r_o;
  Vec3 t_o = Vec3::Zero();
  double cd = 0.0;
};

// Exhaustive argmin of CD(R_i X + t_i, Y, 1) over all anchor candidates;
// ties go to the lowest anchor index.
AnchorChoice select_anchor(const PointCloud& x, const NnIndex& y_index,
                           const InstanceParams& params);
AnchorChoice select_anchor(const PointCloud& x, const PointCloud& y,
                           const InstanceParams& params);

// Batch positions drawn from an epoch-shuffled stream; a pure function of
// (seed, step) so interrupted runs resume on the same trajectory.
std::vector<int> batch_indices(int dataset_size, int batch, uint64_t seed,
                               long step);

// One optimization step over the given batch. Gradients are evaluated at
// batch-start parameters; updates are applied in batch position order and
// the shared base-shape gradient is reduced in dataset order. Returns the
// batch-mean breakdown.
EnergyBreakdown fit_step(FitState& state, const Dataset& data,
                         const std::vector<int>& batch);

struct StepRecord {
  long step;
  double lr;
  EnergyBreakdown bd;
};

struct FitLog {
  std::vector<StepRecord> records;
};

// Iterates fit_step from state.step to config.iterations, optionally
// checkpointing to checkpoint_path every checkpoint_interval steps.
FitLog fit_run(FitState& state, const Dataset& data,
               const std::string& checkpoint_path = "");

// Lossless JSON round trip of the whole state (version tag required).
void export_state(const FitState& state, const std::string& path);
FitState import_state(const std::string& path);

uint64_t config_hash(const FitConfig& config);

// Camera(normalized) -> reconstruction rigid map per part, slot poses fused
// for shared parts, using the stored assignment and a fresh anchor choice.
struct RelativePoses {
  Rotation r_o;
  Vec3 t_o;
  std::vector<std::pair<Rotation, Vec3>> per_part;  // size P
  std::vector<JointParams> joints_x;  // realized input-side joints (aligned frame)
  Eigen::MatrixXi joint_slots;        // the assignment's sigma table
  Eigen::MatrixXi joint_shares;
};
RelativePoses relative_part_maps(const InstanceParams& params, const PointCloud& x,
                                 const std::vector<JointSpec>& specs,
                                 const Eigen::Matrix3Xd& y_base, int parts);

}  // namespace artifit
