// Sampling, neighborhoods, and cloud transforms.
#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "dpt/geometry.hpp"

using namespace dpt;

namespace {

Tensor line_cloud(std::vector<double> xs) {
  size_t n = xs.size();
  Tensor c({3, n});
  for (size_t i = 0; i < n; ++i) c.data()[i] = xs[i];
  return c;
}

Tensor random_cloud(size_t n, Rng& rng) {
  Tensor c({3, n});
  for (size_t i = 0; i < c.numel(); ++i) c.data()[i] = rng.uniform(-1.0, 1.0);
  return c;
}

double dist(const Tensor& c, size_t a, size_t b) {
  size_t n = c.size(1);
  double dx = c.data()[a] - c.data()[b];
  double dy = c.data()[n + a] - c.data()[n + b];
  double dz = c.data()[2 * n + a] - c.data()[2 * n + b];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Independent oracle: recompute min distance to the selected set from scratch
// at every step.
std::vector<int32_t> fps_oracle(const Tensor& coords, int count, int seed) {
  std::vector<int32_t> sel{int32_t(seed)};
  size_t n = coords.size(1);
  while (sel.size() < size_t(count)) {
    double best = -1.0;
    size_t best_i = 0;
    for (size_t i = 0; i < n; ++i) {
      double d = 1e300;
      for (int32_t s : sel) d = std::min(d, dist(coords, i, size_t(s)));
      if (d > best) {
        best = d;
        best_i = i;
      }
    }
    sel.push_back(int32_t(best_i));
  }
  return sel;
}

}  // namespace

TEST_CASE("fps: collinear hand example") {
  Tensor c = line_cloud({0, 1, 2, 9});
  CHECK(farthest_point_sample(c, 4) == std::vector<int32_t>{0, 3, 2, 1});
  CHECK(farthest_point_sample(c, 2) == std::vector<int32_t>{0, 3});
}

TEST_CASE("fps: ties resolved toward the lowest index") {
  // square corners + center, seeded at the center: every corner ties
  Tensor c({3, 5});
  double xs[5] = {0, 2, 0, 2, 1}, ys[5] = {0, 0, 2, 2, 1};
  for (size_t i = 0; i < 5; ++i) {
    c.data()[i] = xs[i];
    c.data()[5 + i] = ys[i];
  }
  CHECK(farthest_point_sample(c, 5, 4) == std::vector<int32_t>{4, 0, 1, 2, 3});
}

TEST_CASE("fps: full count returns a permutation and matches the oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    size_t n = 12 + size_t(rng.uniform_int(30));
    Tensor c = random_cloud(n, rng);
    int count = 1 + int(rng.uniform_int(int64_t(n)));
    int seed = int(rng.uniform_int(int64_t(n)));
    auto got = farthest_point_sample(c, count, seed);
    CHECK(got == fps_oracle(c, count, seed));
    auto all = farthest_point_sample(c, int(n), seed);
    std::set<int32_t> uniq(all.begin(), all.end());
    CHECK(uniq.size() == n);
  }
  CHECK_THROWS(farthest_point_sample(random_cloud(4, rng), 5));
  CHECK_THROWS(farthest_point_sample(random_cloud(4, rng), 2, 9));
}

TEST_CASE("ball_query: membership, padding, and radius bound") {
  Tensor c = line_cloud({0.0, 0.1, 0.2, 1.0});
  BallQuerySpec spec;
  spec.radius = 0.25;
  spec.max_neighbors = 8;
  Neighborhood nb = ball_query(c, {0}, spec, nullptr);
  REQUIRE(nb.width == 8);
  CHECK(nb.neighbor(0, 0) == 0);
  CHECK(nb.neighbor(0, 1) == 1);
  CHECK(nb.neighbor(0, 2) == 2);
  for (int m = 3; m < 8; ++m) CHECK(nb.neighbor(0, m) == 0);  // centroid-reuse padding

  // overfull ball: random subsample keeps the centroid and stays in radius
  Rng rng(55);
  Tensor big = random_cloud(64, rng);
  BallQuerySpec tight;
  tight.radius = 0.8;
  tight.max_neighbors = 4;
  std::vector<int32_t> centroids{0, 11, 63};
  Neighborhood got = ball_query(big, centroids, tight, &rng);
  for (size_t i = 0; i < centroids.size(); ++i) {
    bool has_centroid = false;
    for (int m = 0; m < got.width; ++m) {
      int32_t j = got.neighbor(int(i), m);
      CHECK(dist(big, size_t(j), size_t(centroids[i])) <= tight.radius + 1e-12);
      has_centroid = has_centroid || j == centroids[i];
    }
    CHECK(has_centroid);
  }
}

TEST_CASE("ball_query: all-neighbors mode is exhaustive and index-sorted") {
  Rng rng(56);
  Tensor c = random_cloud(40, rng);
  BallQuerySpec spec;
  spec.radius = 0.6;
  spec.all_neighbors = true;
  Neighborhood nb = ball_query(c, {3, 17}, spec, nullptr);
  for (size_t i = 0; i < 2; ++i) {
    std::set<int32_t> members;
    for (int m = 0; m < nb.width; ++m) members.insert(nb.neighbor(int(i), m));
    for (size_t j = 0; j < 40; ++j) {
      bool in_radius = dist(c, j, size_t(nb.centroid[i])) <= spec.radius;
      CHECK(members.count(int32_t(j)) == (in_radius ? 1u : 0u));
    }
    // non-padded prefix ascends
    for (int m = 1; m < nb.width; ++m) {
      int32_t prev = nb.neighbor(int(i), m - 1), cur = nb.neighbor(int(i), m);
      if (cur != nb.centroid[i] || prev < cur) CHECK(prev <= cur);
    }
  }
}

TEST_CASE("knn_query: hand example, self-membership, tie order") {
  Tensor c = line_cloud({0, 1, 2, 9});
  Neighborhood nb = knn_query(c, {0}, 3);
  CHECK(std::vector<int32_t>(nb.idx.begin(), nb.idx.end()) == std::vector<int32_t>{0, 1, 2});

  Tensor sym = line_cloud({0, -1, 1});
  Neighborhood t = knn_query(sym, {0}, 3);
  CHECK(t.idx[0] == 0);   // distance 0 first
  CHECK(t.idx[1] == 1);   // equidistant pair -> lower index first
  CHECK(t.idx[2] == 2);
  CHECK_THROWS(knn_query(c, {0}, 5));
}

TEST_CASE("knn_query matches a naive sort oracle") {
  Rng rng(60);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor c = random_cloud(40, rng);
    int k = 1 + int(rng.uniform_int(10));
    std::vector<int32_t> centroids{0, 5, 39};
    Neighborhood got = knn_query(c, centroids, k);
    for (size_t i = 0; i < centroids.size(); ++i) {
      std::vector<std::pair<double, int32_t>> ref;
      for (size_t j = 0; j < 40; ++j) ref.push_back({dist(c, j, size_t(centroids[i])), int32_t(j)});
      std::sort(ref.begin(), ref.end());
      for (int m = 0; m < k; ++m) CHECK(got.neighbor(int(i), m) == ref[size_t(m)].second);
    }
  }
}

TEST_CASE("normalize_to_unit_sphere: centered with max radius 1") {
  Rng rng(61);
  PointCloud cloud = PointCloud::from_coords(random_cloud(50, rng));
  for (size_t i = 0; i < cloud.coords.numel(); ++i) cloud.coords.data()[i] += 3.0;  // offset
  PointCloud out = normalize_to_unit_sphere(cloud);
  size_t n = 50;
  double mean[3] = {0, 0, 0}, max_r = 0;
  for (size_t ax = 0; ax < 3; ++ax)
    for (size_t i = 0; i < n; ++i) mean[ax] += out.coords.data()[ax * n + i] / double(n);
  for (size_t i = 0; i < n; ++i) {
    double r = 0;
    for (size_t ax = 0; ax < 3; ++ax) {
      double v = out.coords.data()[ax * n + i];
      r += v * v;
    }
    max_r = std::max(max_r, std::sqrt(r));
  }
  for (size_t ax = 0; ax < 3; ++ax) CHECK(std::fabs(mean[ax]) < 1e-12);
  CHECK(max_r == doctest::Approx(1.0).epsilon(1e-12));
  // features track coordinates at ingestion
  CHECK(out.features.data()[0] == out.coords.data()[0]);
}

TEST_CASE("augment: per-axis affine with bounded draws, normals re-derived") {
  Rng rng(62);
  PointCloud cloud = PointCloud::from_coords(line_cloud({0.5, -0.25, 1.0}));
  Tensor normals({3, 3});
  for (size_t i = 0; i < 3; ++i) normals.data()[2 * 3 + i] = 1.0;  // all +z
  cloud.normals = normals;

  AugmentSpec spec;
  Rng expect_rng(62);
  double s[3], t[3];
  for (int ax = 0; ax < 3; ++ax) s[ax] = expect_rng.uniform(spec.scale_lo, spec.scale_hi);
  for (int ax = 0; ax < 3; ++ax) t[ax] = expect_rng.uniform(-spec.translate, spec.translate);

  PointCloud out = augment(cloud, spec, rng);
  for (size_t ax = 0; ax < 3; ++ax) {
    CHECK(s[ax] >= spec.scale_lo);
    CHECK(s[ax] <= spec.scale_hi);
    CHECK(std::fabs(t[ax]) <= spec.translate);
    for (size_t i = 0; i < 3; ++i)
      CHECK(out.coords.at({ax, i}) ==
            doctest::Approx(s[ax] * cloud.coords.at({ax, i}) + t[ax]).epsilon(1e-12));
  }
  // +z normals under diagonal scaling stay +z after renormalization
  for (size_t i = 0; i < 3; ++i) {
    CHECK(out.normals.at({2, i}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.normals.at({0, i}) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("resample: exact target sizes, labels follow points") {
  Rng rng(63);
  PointCloud cloud = PointCloud::from_coords(random_cloud(20, rng));
  cloud.part_labels.resize(20);
  for (int i = 0; i < 20; ++i) cloud.part_labels[size_t(i)] = i;

  PointCloud down = resample(cloud, 8, rng);
  CHECK(down.num_points() == 8);
  std::set<int> seen(down.part_labels.begin(), down.part_labels.end());
  CHECK(seen.size() == 8);  // subset without replacement
  for (size_t i = 0; i < 8; ++i) {
    int src = down.part_labels[i];
    CHECK(down.coords.at({0, i}) == cloud.coords.at({0, size_t(src)}));
  }

  PointCloud up = resample(cloud, 31, rng);
  CHECK(up.num_points() == 31);
  for (size_t i = 0; i < 20; ++i) CHECK(up.part_labels[i] == int(i));  // originals kept first
}

TEST_CASE("interp plan: rows sum to one and use the 3 nearest") {
  Rng rng(64);
  Tensor coarse = random_cloud(10, rng);
  Tensor fine = random_cloud(17, rng);
  InterpPlan plan = make_interp_plan(coarse, fine, 3);
  REQUIRE(plan.k == 3);
  for (size_t f = 0; f < 17; ++f) {
    double sum = 0;
    for (int j = 0; j < 3; ++j) sum += plan.w[f * 3 + size_t(j)];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}
