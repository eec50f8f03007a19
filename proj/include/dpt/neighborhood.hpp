#pragma once

#include <cstdint>
#include <vector>

namespace dpt {

// Fixed-width neighborhood table for one point cloud: `centers` query points,
// each with `width` member indices into the source cloud. Rows padded with the
// centroid index when a ball holds fewer points than `width`.
struct Neighborhood {
  int centers = 0;
  int width = 0;
  std::vector<int32_t> centroid;  // centers entries
  std::vector<int32_t> idx;       // centers * width entries

  int32_t neighbor(int i, int m) const { return idx[size_t(i) * width + m]; }
};

// Interpolation plan from a coarse cloud onto fine positions: for each fine
// point, `k` coarse indices and normalized inverse-square-distance weights.
struct InterpPlan {
  int fine = 0;
  int k = 0;
  std::vector<int32_t> idx;  // fine * k
  std::vector<double> w;     // fine * k, rows sum to 1
};

}  // namespace dpt
