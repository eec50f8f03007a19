#include "dpt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dpt {

namespace {

inline double sq_dist(const double* c, size_t n, size_t a, size_t b) {
  double dx = c[a] - c[b];
  double dy = c[n + a] - c[n + b];
  double dz = c[2 * n + a] - c[2 * n + b];
  return dx * dx + dy * dy + dz * dz;
}

void check_coords(const Tensor& coords, const char* op) {
  DPT_CHECK(coords.defined() && coords.dim() == 2 && coords.size(0) == 3,
            op << ": coords must be (3, N)");
}

}  // namespace

PointCloud PointCloud::from_coords(Tensor coords) {
  DPT_CHECK(coords.dim() == 2 && coords.size(0) == 3, "from_coords: coords must be (3, N)");
  PointCloud c;
  c.coords = coords;
  c.features = coords;  // shared buffer; all downstream ops are read-only
  c.coord_channels = 3;
  return c;
}

std::vector<int32_t> farthest_point_sample(const Tensor& coords, int count, int seed_index) {
  check_coords(coords, "farthest_point_sample");
  size_t n = coords.size(1);
  DPT_CHECK(count >= 0 && size_t(count) <= n,
            "farthest_point_sample: count " << count << " exceeds cloud size " << n);
  DPT_CHECK(seed_index >= 0 && size_t(seed_index) < n,
            "farthest_point_sample: seed index " << seed_index << " out of range");
  std::vector<int32_t> picks;
  if (count == 0) return picks;
  picks.reserve(size_t(count));
  picks.push_back(int32_t(seed_index));

  const double* c = coords.data();
  // min squared distance from each point to the selected set
  std::vector<double> min_d(n);
  for (size_t i = 0; i < n; ++i) min_d[i] = sq_dist(c, n, i, size_t(seed_index));

  while (picks.size() < size_t(count)) {
    size_t best = 0;
    double best_d = -1.0;
    for (size_t i = 0; i < n; ++i) {
      if (min_d[i] > best_d) {  // strict: ties keep the lowest index
        best_d = min_d[i];
        best = i;
      }
    }
    picks.push_back(int32_t(best));
    for (size_t i = 0; i < n; ++i) min_d[i] = std::min(min_d[i], sq_dist(c, n, i, best));
  }
  return picks;
}

Neighborhood ball_query(const Tensor& coords, const std::vector<int32_t>& centroids,
                        const BallQuerySpec& spec, Rng* rng) {
  check_coords(coords, "ball_query");
  DPT_CHECK(spec.radius > 0.0, "ball_query: radius must be positive");
  DPT_CHECK(spec.all_neighbors || spec.max_neighbors > 0,
            "ball_query: max_neighbors must be positive");
  size_t n = coords.size(1);
  const double* c = coords.data();
  double r2 = spec.radius * spec.radius;

  // In-radius candidate lists, ascending index order by construction.
  std::vector<std::vector<int32_t>> balls(centroids.size());
  size_t widest = 1;
  for (size_t i = 0; i < centroids.size(); ++i) {
    size_t ctr = size_t(centroids[i]);
    DPT_CHECK(ctr < n, "ball_query: centroid index " << centroids[i] << " out of range");
    for (size_t j = 0; j < n; ++j)
      if (sq_dist(c, n, j, ctr) <= r2) balls[i].push_back(int32_t(j));
    widest = std::max(widest, balls[i].size());
  }

  Neighborhood out;
  out.centers = int(centroids.size());
  out.width = spec.all_neighbors ? int(widest) : spec.max_neighbors;
  out.centroid = centroids;
  out.idx.assign(centroids.size() * size_t(out.width), 0);

  for (size_t i = 0; i < centroids.size(); ++i) {
    std::vector<int32_t>& ball = balls[i];
    int32_t ctr = centroids[i];
    int32_t* row = out.idx.data() + i * size_t(out.width);
    size_t w = size_t(out.width);
    if (ball.size() <= w) {
      std::copy(ball.begin(), ball.end(), row);
      std::fill(row + ball.size(), row + w, ctr);  // centroid-reuse padding
    } else {
      DPT_CHECK(rng != nullptr, "ball_query: rng required to subsample overfull balls");
      // Keep the centroid, sample the remaining slots without replacement.
      auto self = std::find(ball.begin(), ball.end(), ctr);
      std::swap(*self, ball.front());
      row[0] = ctr;
      for (size_t j = 1; j < w; ++j) {
        size_t pick = j + size_t(rng->uniform_int(int64_t(ball.size() - j)));
        std::swap(ball[j], ball[pick]);
        row[j] = ball[j];
      }
    }
  }
  return out;
}

Neighborhood knn_query(const Tensor& coords, const std::vector<int32_t>& centroids, int k) {
  check_coords(coords, "knn_query");
  size_t n = coords.size(1);
  DPT_CHECK(k >= 1 && size_t(k) <= n, "knn_query: k " << k << " out of range for cloud size " << n);
  const double* c = coords.data();

  Neighborhood out;
  out.centers = int(centroids.size());
  out.width = k;
  out.centroid = centroids;
  out.idx.resize(centroids.size() * size_t(k));

  std::vector<std::pair<double, int32_t>> cand(n);
  for (size_t i = 0; i < centroids.size(); ++i) {
    size_t ctr = size_t(centroids[i]);
    DPT_CHECK(ctr < n, "knn_query: centroid index " << centroids[i] << " out of range");
    for (size_t j = 0; j < n; ++j) cand[j] = {sq_dist(c, n, j, ctr), int32_t(j)};
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());  // ties -> lowest index
    for (int j = 0; j < k; ++j) out.idx[i * size_t(k) + size_t(j)] = cand[size_t(j)].second;
  }
  return out;
}

InterpPlan make_interp_plan(const Tensor& coarse_coords, const Tensor& fine_coords, int k,
                            double eps) {
  check_coords(coarse_coords, "make_interp_plan");
  check_coords(fine_coords, "make_interp_plan");
  size_t nc = coarse_coords.size(1), nf = fine_coords.size(1);
  DPT_CHECK(nc >= 1, "make_interp_plan: empty coarse cloud");
  int kk = int(std::min<size_t>(size_t(k), nc));

  InterpPlan plan;
  plan.fine = int(nf);
  plan.k = kk;
  plan.idx.resize(nf * size_t(kk));
  plan.w.resize(nf * size_t(kk));

  const double* cc = coarse_coords.data();
  const double* fc = fine_coords.data();
  std::vector<std::pair<double, int32_t>> cand(nc);
  for (size_t f = 0; f < nf; ++f) {
    for (size_t j = 0; j < nc; ++j) {
      double dx = cc[j] - fc[f];
      double dy = cc[nc + j] - fc[nf + f];
      double dz = cc[2 * nc + j] - fc[2 * nf + f];
      cand[j] = {dx * dx + dy * dy + dz * dz, int32_t(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
    double wsum = 0.0;
    for (int j = 0; j < kk; ++j) {
      double w = 1.0 / (cand[size_t(j)].first + eps);  // inverse square distance
      plan.idx[f * size_t(kk) + size_t(j)] = cand[size_t(j)].second;
      plan.w[f * size_t(kk) + size_t(j)] = w;
      wsum += w;
    }
    for (int j = 0; j < kk; ++j) plan.w[f * size_t(kk) + size_t(j)] /= wsum;
  }
  return plan;
}

namespace {

// Applies x' = s*x + t per axis to a cloud, syncing coordinate feature channels
// and (optionally) re-deriving normals for anisotropic scales.
PointCloud affine_cloud(const PointCloud& cloud, const double s[3], const double t[3]) {
  size_t n = cloud.num_points();
  PointCloud out = cloud;
  Tensor coords({3, n});
  const double* src = cloud.coords.data();
  double* dst = coords.data();
  for (size_t c = 0; c < 3; ++c)
    for (size_t i = 0; i < n; ++i) dst[c * n + i] = s[c] * src[c * n + i] + t[c];
  out.coords = coords;

  if (cloud.coord_channels == 3 && cloud.features.defined()) {
    if (cloud.features.impl() == cloud.coords.impl()) {
      out.features = coords;
    } else {
      Tensor f = cloud.features.clone();
      std::copy_n(coords.data(), 3 * n, f.data());
      out.features = f;
    }
  }

  if (cloud.normals.defined()) {
    Tensor normals({3, n});
    const double* ns = cloud.normals.data();
    double* nd = normals.data();
    for (size_t i = 0; i < n; ++i) {
      double v[3];
      for (size_t c = 0; c < 3; ++c) v[c] = ns[c * n + i] / s[c];  // inverse-transpose scale
      double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (len < 1e-12) len = 1.0;
      for (size_t c = 0; c < 3; ++c) nd[c * n + i] = v[c] / len;
    }
    out.normals = normals;
  }
  return out;
}

}  // namespace

PointCloud normalize_to_unit_sphere(const PointCloud& cloud) {
  size_t n = cloud.num_points();
  DPT_CHECK(n > 0, "normalize_to_unit_sphere: empty cloud");
  const double* c = cloud.coords.data();
  double mean[3] = {0, 0, 0};
  for (size_t ax = 0; ax < 3; ++ax) {
    for (size_t i = 0; i < n; ++i) mean[ax] += c[ax * n + i];
    mean[ax] /= double(n);
  }
  double max_r2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dx = c[i] - mean[0], dy = c[n + i] - mean[1], dz = c[2 * n + i] - mean[2];
    max_r2 = std::max(max_r2, dx * dx + dy * dy + dz * dz);
  }
  double scale = std::sqrt(max_r2);
  if (scale < 1e-12) scale = 1.0;
  double s[3] = {1.0 / scale, 1.0 / scale, 1.0 / scale};
  double t[3] = {-mean[0] / scale, -mean[1] / scale, -mean[2] / scale};
  return affine_cloud(cloud, s, t);
}

PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec, Rng& rng) {
  double s[3], t[3];
  for (size_t ax = 0; ax < 3; ++ax) s[ax] = rng.uniform(spec.scale_lo, spec.scale_hi);
  for (size_t ax = 0; ax < 3; ++ax) t[ax] = rng.uniform(-spec.translate, spec.translate);
  return affine_cloud(cloud, s, t);
}

PointCloud resample(const PointCloud& cloud, int n, Rng& rng) {
  size_t src_n = cloud.num_points();
  DPT_CHECK(n > 0, "resample: target size must be positive");
  DPT_CHECK(src_n > 0, "resample: empty cloud");

  std::vector<int32_t> pick;
  pick.reserve(size_t(n));
  if (size_t(n) <= src_n) {
    std::vector<int32_t> all(src_n);
    std::iota(all.begin(), all.end(), 0);
    for (int i = 0; i < n; ++i) {
      size_t j = size_t(i) + size_t(rng.uniform_int(int64_t(src_n - size_t(i))));
      std::swap(all[size_t(i)], all[j]);
      pick.push_back(all[size_t(i)]);
    }
  } else {
    for (size_t i = 0; i < src_n; ++i) pick.push_back(int32_t(i));
    for (size_t i = src_n; i < size_t(n); ++i)
      pick.push_back(int32_t(rng.uniform_int(int64_t(src_n))));
  }

  PointCloud out;
  out.label = cloud.label;
  out.coord_channels = cloud.coord_channels;
  Tensor coords({3, size_t(n)});
  const double* src = cloud.coords.data();
  double* dst = coords.data();
  for (size_t c = 0; c < 3; ++c)
    for (size_t i = 0; i < size_t(n); ++i) dst[c * size_t(n) + i] = src[c * src_n + size_t(pick[i])];
  out.coords = coords;
  out.features = coords;
  if (!cloud.part_labels.empty()) {
    out.part_labels.resize(size_t(n));
    for (size_t i = 0; i < size_t(n); ++i) out.part_labels[i] = cloud.part_labels[size_t(pick[i])];
  }
  if (cloud.normals.defined()) {
    Tensor normals({3, size_t(n)});
    const double* ns = cloud.normals.data();
    double* nd = normals.data();
    for (size_t c = 0; c < 3; ++c)
      for (size_t i = 0; i < size_t(n); ++i)
        nd[c * size_t(n) + i] = ns[c * src_n + size_t(pick[i])];
    out.normals = normals;
  }
  return out;
}

}  // namespace dpt
