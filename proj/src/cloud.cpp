#include "artifit/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "artifit/rng.hpp"

namespace artifit {

std::pair<PointCloud, NormalizationRecord> normalize(const PointCloud& cloud) {
  const int n = cloud.size();
  if (n < 2) throw std::invalid_argument("normalize: need at least 2 points");
  const Vec3 mean = cloud.pts.rowwise().mean();
  const Eigen::Matrix3Xd centered = cloud.pts.colwise() - mean;
  const double mean_dist = centered.colwise().norm().mean();
  if (mean_dist < 1e-12)
    throw std::invalid_argument("normalize: degenerate cloud (all points coincident)");
  const double scale = 0.5 / mean_dist;
  PointCloud out;
  out.pts = centered * scale;
  out.labels = cloud.labels;
  return {out, NormalizationRecord{mean, scale}};
}

PointCloud denormalize(const PointCloud& cloud, const NormalizationRecord& rec) {
  PointCloud out;
  out.pts = (cloud.pts / rec.scale).colwise() + rec.offset;
  out.labels = cloud.labels;
  return out;
}

Vec3 denormalize_point(const Vec3& p, const NormalizationRecord& rec) {
  return p / rec.scale + rec.offset;
}

PointCloud augment(const PointCloud& cloud, uint64_t seed, double noise_std,
                   bool rotate) {
  if (noise_std < 0) throw std::invalid_argument("augment: negative noise std");
  auto rng = make_rng(seed, 0xa46);
  PointCloud out;
  out.labels = cloud.labels;
  if (rotate) {
    const Rotation r = random_rotation(rng);
    out.pts = r.m * cloud.pts;
  } else {
    out.pts = cloud.pts;
  }
  if (noise_std > 0) {
    std::normal_distribution<double> g(0.0, noise_std);
    for (int i = 0; i < out.size(); ++i)
      for (int k = 0; k < 3; ++k) out.pts(k, i) += g(rng);
  }
  return out;
}

std::vector<int> sample_indices(int n_points, int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_indices: n must be positive");
  if (n_points < 1) throw std::invalid_argument("sample_indices: empty source");
  auto rng = make_rng(seed, 0x5a3);
  std::vector<int> idx;
  idx.reserve(n);
  if (n <= n_points) {
    std::vector<int> perm(n_points);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    idx.assign(perm.begin(), perm.begin() + n);
  } else {
    std::uniform_int_distribution<int> u(0, n_points - 1);
    for (int i = 0; i < n; ++i) idx.push_back(u(rng));
  }
  return idx;
}

PointCloud select_points(const PointCloud& cloud, const std::vector<int>& idx) {
  PointCloud out;
  out.pts.resize(3, static_cast<int>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out.pts.col(i) = cloud.pts.col(idx[i]);
  if (cloud.has_labels()) {
    out.labels.reserve(idx.size());
    for (int j : idx) out.labels.push_back(cloud.labels[j]);
  }
  return out;
}

PointCloud sample_points(const PointCloud& cloud, int n, uint64_t seed) {
  return select_points(cloud, sample_indices(cloud.size(), n, seed));
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

void write_double(std::FILE* f, double v) { std::fprintf(f, "%.17g", v); }

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

PointCloud parse_ply(std::istream& in, int& line_no) {
  std::string line;
  long vertex_count = -1;
  bool has_label = false;
  bool fmt_seen = false;
  int coord_props = 0;
  // header (the "ply" magic line was already consumed)
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok.empty()) continue;
    if (tok == "format") {
      std::string kind, version;
      ls >> kind >> version;
      if (kind != "ascii") throw ParseError("only ascii PLY is supported", line_no);
      fmt_seen = true;
    } else if (tok == "element") {
      std::string name;
      ls >> name >> vertex_count;
      if (name != "vertex") throw ParseError("unsupported element '" + name + "'", line_no);
      if (vertex_count < 1) throw ParseError("vertex count must be >= 1", line_no);
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      if (name == "x" || name == "y" || name == "z") {
        if (type != "double" && type != "float64")
          throw ParseError("coordinate property must be float64", line_no);
        ++coord_props;
      } else if (name == "label") {
        has_label = true;
      } else {
        throw ParseError("unsupported property '" + name + "'", line_no);
      }
    } else if (tok == "end_header") {
      break;
    } else {
      throw ParseError("unexpected header token '" + tok + "'", line_no);
    }
  }
  if (!fmt_seen) throw ParseError("missing 'format ascii 1.0' line", line_no);
  if (vertex_count < 0) throw ParseError("missing 'element vertex' line", line_no);
  if (coord_props != 3) throw ParseError("need x, y and z properties", line_no);

  PointCloud cloud;
  cloud.pts.resize(3, vertex_count);
  if (has_label) cloud.labels.reserve(vertex_count);
  for (long i = 0; i < vertex_count; ++i) {
    if (!std::getline(in, line)) throw ParseError("unexpected end of file", line_no);
    ++line_no;
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z)) throw ParseError("malformed vertex row", line_no);
    cloud.pts.col(i) = Vec3(x, y, z);
    if (has_label) {
      int label;
      if (!(ls >> label)) throw ParseError("missing label", line_no);
      cloud.labels.push_back(label);
    }
  }
  return cloud;
}

PointCloud parse_csv(std::istream& in, const std::string& first_line, int& line_no) {
  std::vector<Vec3> pts;
  std::vector<int> labels;
  bool any_label = false;
  std::string line = first_line;
  bool pending = !first_line.empty();
  while (pending || std::getline(in, line)) {
    if (!pending) ++line_no;
    pending = false;
    std::string trimmed = line;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r"));
    if (trimmed.empty() || trimmed[0] == '#') continue;
    std::replace(trimmed.begin(), trimmed.end(), ',', ' ');
    std::istringstream ls(trimmed);
    double x, y, z;
    if (!(ls >> x >> y >> z)) throw ParseError("malformed CSV row", line_no);
    pts.emplace_back(x, y, z);
    int label;
    if (ls >> label) {
      labels.push_back(label);
      any_label = true;
    } else {
      labels.push_back(-1);
    }
  }
  if (pts.empty()) throw ParseError("no points in file", line_no);
  PointCloud cloud;
  cloud.pts.resize(3, static_cast<int>(pts.size()));
  for (size_t i = 0; i < pts.size(); ++i) cloud.pts.col(i) = pts[i];
  if (any_label) {
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0)
        throw ParseError("row " + std::to_string(i + 1) + " is missing its label", line_no);
    cloud.labels = labels;
  }
  return cloud;
}

}  // namespace

PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cloud: cannot open " + path);
  int line_no = 0;
  std::string first;
  if (!std::getline(in, first)) throw ParseError("empty file", 1);
  ++line_no;
  std::string magic = first;
  if (!magic.empty() && magic.back() == '\r') magic.pop_back();
  if (magic == "ply") return parse_ply(in, line_no);
  return parse_csv(in, first, line_no);
}

void save_cloud(const PointCloud& cloud, const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "w"));
  if (!f) throw std::runtime_error("save_cloud: cannot open " + path);
  const bool ply = path.size() >= 4 && path.substr(path.size() - 4) == ".ply";
  const int n = cloud.size();
  if (ply) {
    std::fprintf(f.get(), "ply\nformat ascii 1.0\nelement vertex %d\n", n);
    std::fprintf(f.get(), "property double x\nproperty double y\nproperty double z\n");
    if (cloud.has_labels()) std::fprintf(f.get(), "property int label\n");
    std::fprintf(f.get(), "end_header\n");
  }
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      if (k) std::fputc(ply ? ' ' : ',', f.get());
      write_double(f.get(), cloud.pts(k, i));
    }
    if (cloud.has_labels())
      std::fprintf(f.get(), ply ? " %d" : ",%d", cloud.labels[i]);
    std::fputc('\n', f.get());
  }
}

}  // namespace artifit
