#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "artifit/geom.hpp"

namespace artifit {

/// Ordered set of 3D points with optional per-point part labels.
/// Labels use 1..P for parts; 0 is reserved for outlier-tagged points.
struct PointCloud {
  Eigen::Matrix3Xd pts;
  std::vector<int> labels;  // empty, or one entry per point

  int size() const { return static_cast<int>(pts.cols()); }
  bool has_labels() const { return !labels.empty(); }
};

/// Inverse map of normalize(): original = normalized / scale + offset.
struct NormalizationRecord {
  Vec3 offset = Vec3::Zero();
  double scale = 1.0;
};

// Translates the mean coordinate to the origin and scales the mean
// point-to-origin distance to 0.5. Degenerate (all points coincident,
// or fewer than two points) input throws.
std::pair<PointCloud, NormalizationRecord> normalize(const PointCloud& cloud);

PointCloud denormalize(const PointCloud& cloud, const NormalizationRecord& rec);
Vec3 denormalize_point(const Vec3& p, const NormalizationRecord& rec);

// One uniformly random SO(3) rotation followed by i.i.d. Gaussian noise of
// the given standard deviation per coordinate. `rotate = false` keeps the
// rotation fixed at identity (used for noise-only calibration).
PointCloud augment(const PointCloud& cloud, uint64_t seed, double noise_std,
                   bool rotate = true);

// n indices drawn from [0, N): without replacement when n <= N, with
// replacement otherwise. Deterministic per seed.
std::vector<int> sample_indices(int n_points, int n, uint64_t seed);
PointCloud sample_points(const PointCloud& cloud, int n, uint64_t seed);
PointCloud select_points(const PointCloud& cloud, const std::vector<int>& idx);

/// Parse failure carrying the 1-based offending line.
struct ParseError : std::runtime_error {
  int line;
  ParseError(const std::string& msg, int line_no)
      : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"),
        line(line_no) {}
};

// ASCII PLY (properties x y z as float64 text, optional int label) or CSV
// (x,y,z[,label] rows, '#' comments). Dispatch: files starting with a "ply"
// magic line parse as PLY, everything else as CSV. save_cloud picks the
// format from the extension (.ply / anything else = CSV) and writes
// coordinates with 17 significant digits so round trips are bit exact.
PointCloud load_cloud(const std::string& path);
void save_cloud(const PointCloud& cloud, const std::string& path);

}  // namespace artifit
