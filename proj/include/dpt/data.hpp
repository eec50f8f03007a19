#pragma once
// Dataset ingestion (plain-text XYZ directories with a tab-separated manifest),
// synthetic desk-scale dataset generation with analytic normals and part
// labels, a binary cache, and label encodings.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpt/geometry.hpp"
#include "dpt/networks.hpp"

namespace dpt {

struct Dataset {
  Task task = Task::Classification;
  std::vector<std::string> class_names;
  std::vector<PointCloud> samples;
  std::vector<int> splits;  // parallel to samples: 0 = train, 1 = test
  // Per-class [begin, end) in the global part-id space; empty when the dataset
  // carries no part structure. A sample's part labels must fall in its class's
  // range.
  std::vector<std::pair<int, int>> part_ranges;

  size_t num_classes() const { return class_names.size(); }
  size_t num_parts() const;  // 0 when no sample carries parts
  std::vector<size_t> train_indices() const;
  std::vector<size_t> test_indices() const;
  void validate() const;  // labels/splits/parts in range, sizes consistent
};

// Synthetic surface families. Each family draws per-sample shape parameters,
// samples the ideal surface uniformly by area, records the analytic surface
// normal at the pre-jitter point, then perturbs coordinates with Gaussian
// jitter. Part labels: sphere 1, box 6 faces, torus outer/inner 2, plane 4
// quadrants; ids are offset per class so the dataset's part space is global.
struct SyntheticShapeSpec {
  std::vector<std::string> families = {"sphere", "box", "torus", "plane"};
  size_t points = 256;  // >= 64
  double jitter = 0.01;
  size_t train_per_class = 200;
  size_t test_per_class = 80;
  uint64_t seed = 1;
};

// Deterministic under (spec, seed); per-sample streams are independent forks.
// Shapes stay in canonical pose (origin-centered by construction, overall
// scale within ~[0.7, 1.3]); ingestion-style normalization is not applied.
Dataset make_synthetic(const SyntheticShapeSpec& spec);

// Standard basis vector; 0 <= label < dim.
Tensor one_hot(int label, size_t dim);

// --- plain-text ingestion ----------------------------------------------------
// Manifest: one `relative_path<TAB>label_name<TAB>split` per line, split in
// {train, test}. Sample files hold one point per line:
//   x y z [nx ny nz] [part]    (3, 4, 6, or 7 numeric columns)
// Clouds are unit-sphere normalized (skipped when already normalized within
// fp32 tolerance, so reloading saved output is bit-stable) and resampled to
// n_points (random subset when long, resample-padded when short; left in file
// order when the count already matches).
//
// When class_names is empty the class list is the sorted set of manifest
// labels; otherwise every manifest label must be a member.
// manifest_path defaults to <dir>/manifest.tsv when empty.
Dataset load_xyz_dir(const std::string& dir, const std::string& manifest_path,
                     size_t n_points, uint64_t seed,
                     std::vector<std::string> class_names = {});

// Writes <class>_<index>.xyz files plus a manifest (numbers at %.9g, which
// reparses bit-exactly after one load/save cycle).
void save_xyz_dir(const Dataset& ds, const std::string& dir,
                  const std::string& manifest_name = "manifest.tsv");

// --- binary cache --------------------------------------------------------------
// Layout: magic "DPTC" | u32 version=1 | u32 task | u32 class count |
// per class: u16 length + UTF-8 name | u32 part-range count | per range:
// i32 begin, i32 end | then one checkpoint-format record block holding, per
// sample i: s%06u.meta [label, split], s%06u.coords (3,N), and optionally
// .normals (3,N) and .parts (N). Payloads are fp32, so caching quantizes
// coordinates exactly once; identical datasets produce byte-identical files.
void save_cache(const Dataset& ds, const std::string& path);
Dataset load_cache(const std::string& path);

}  // namespace dpt
