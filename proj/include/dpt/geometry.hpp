#pragma once

#include <vector>

#include "dpt/neighborhood.hpp"
#include "dpt/rng.hpp"
#include "dpt/tensor.hpp"

namespace dpt {

// One point cloud. Coordinates are (3, N); features are (C, N) and default to
// the coordinates themselves. `coord_channels` records how many leading feature
// channels are raw coordinates (and therefore subject to centroid subtraction
// when neighborhoods are gathered): 3 at ingestion, 0 after any learned layer.
struct PointCloud {
  Tensor coords;              // (3, N)
  Tensor features;            // (C, N)
  int coord_channels = 0;
  int label = -1;             // class id, -1 if unknown
  std::vector<int> part_labels;  // optional, N entries
  Tensor normals;             // optional (3, N), unit rows

  size_t num_points() const { return coords.defined() ? coords.size(1) : 0; }

  static PointCloud from_coords(Tensor coords);  // features := coords, coord_channels = 3
};

// --- sampling / neighborhoods -------------------------------------------------

// Greedy farthest point sampling: starts at seed_index, then repeatedly picks
// the point with maximum distance to the selected set (ties -> lowest index).
// Returns `count` distinct indices in pick order.
std::vector<int32_t> farthest_point_sample(const Tensor& coords, int count, int seed_index = 0);

struct BallQuerySpec {
  double radius = 0.25;
  int max_neighbors = 64;
  // Deterministic mode: take every in-radius point sorted by index; the table
  // width becomes the largest ball population. Used by invariance tests.
  bool all_neighbors = false;
};

// Spherical neighborhoods around `centroids` (indices into coords' cloud).
// The centroid is always a member. Overfull balls are randomly subsampled
// without replacement; underfull rows are padded with the centroid index.
// rng may be null only in all_neighbors mode or when no ball overflows.
Neighborhood ball_query(const Tensor& coords, const std::vector<int32_t>& centroids,
                        const BallQuerySpec& spec, Rng* rng);

// Exact k nearest neighbors of each centroid (the centroid itself included,
// distance ties -> lowest index). k must be <= N.
Neighborhood knn_query(const Tensor& coords, const std::vector<int32_t>& centroids, int k);

// Interpolation plan: k nearest coarse points per fine position with
// normalized inverse-square-distance weights (epsilon-guarded).
InterpPlan make_interp_plan(const Tensor& coarse_coords, const Tensor& fine_coords, int k = 3,
                            double eps = 1e-12);

// --- whole-cloud transforms ----------------------------------------------------

// Center at the mean and scale so max distance from the origin is 1.
PointCloud normalize_to_unit_sphere(const PointCloud& cloud);

struct AugmentSpec {
  double scale_lo = 0.66, scale_hi = 1.5;   // per-axis anisotropic scale
  double translate = 0.2;                   // per-axis shift in [-t, t]
};

// Random anisotropic scale + translation. Class/part labels untouched; stored
// normals are re-derived with the inverse-transpose scale and renormalized.
PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec, Rng& rng);

// Resample to exactly n points: random subset when larger (without
// replacement), random duplicates appended when smaller.
PointCloud resample(const PointCloud& cloud, int n, Rng& rng);

}  // namespace dpt
