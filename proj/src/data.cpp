#include "dpt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dpt/checkpoint.hpp"
#include "dpt/common.hpp"

namespace fs = std::filesystem;

namespace dpt {
namespace {

constexpr double kTau = 6.283185307179586476925286766559;

[[noreturn]] void fail_at(const std::string& file, size_t line, const std::string& what) {
  throw std::runtime_error(file + ":" + std::to_string(line) + ": " + what);
}

// --- synthetic surface samplers -----------------------------------------------
// Each writes point i of (3,n) row-major planes plus its unit normal and part id.

struct SamplerOut {
  double p[3], normal[3];
  int part = 0;
};

SamplerOut sample_sphere(Rng& rng) {
  SamplerOut o;
  double len = 0.0;
  while (len < 1e-9) {
    for (double& v : o.p) v = rng.normal();
    len = std::sqrt(o.p[0] * o.p[0] + o.p[1] * o.p[1] + o.p[2] * o.p[2]);
  }
  for (size_t c = 0; c < 3; ++c) {
    o.p[c] /= len;
    o.normal[c] = o.p[c];
  }
  return o;
}

struct BoxShape {
  double h[3];  // half extents
};

SamplerOut sample_box(const BoxShape& box, Rng& rng) {
  // Face picked by area so the surface is sampled uniformly.
  double pair_area[3] = {box.h[1] * box.h[2], box.h[0] * box.h[2], box.h[0] * box.h[1]};
  double total = 2.0 * (pair_area[0] + pair_area[1] + pair_area[2]);
  double u = rng.uniform() * total;
  int face = 5;
  for (int f = 0; f < 6; ++f) {
    u -= pair_area[f / 2];
    if (u < 0.0) {
      face = f;
      break;
    }
  }
  int axis = face / 2;
  double sign = (face % 2 == 0) ? 1.0 : -1.0;
  SamplerOut o;
  o.p[axis] = sign * box.h[axis];
  o.normal[0] = o.normal[1] = o.normal[2] = 0.0;
  o.normal[axis] = sign;
  for (int c = 0; c < 3; ++c)
    if (c != axis) o.p[c] = rng.uniform(-box.h[c], box.h[c]);
  o.part = face;
  return o;
}

struct TorusShape {
  double R = 0.8, r = 0.3;
};

SamplerOut sample_torus(const TorusShape& t, Rng& rng) {
  // Rejection in the minor angle keeps the sampling uniform by area.
  double u = 0.0, v = 0.0;
  while (true) {
    u = rng.uniform(0.0, kTau);
    v = rng.uniform(0.0, kTau);
    if (rng.uniform() * (t.R + t.r) < t.R + t.r * std::cos(v)) break;
  }
  SamplerOut o;
  double ring = t.R + t.r * std::cos(v);
  o.p[0] = ring * std::cos(u);
  o.p[1] = ring * std::sin(u);
  o.p[2] = t.r * std::sin(v);
  o.normal[0] = std::cos(v) * std::cos(u);
  o.normal[1] = std::cos(v) * std::sin(u);
  o.normal[2] = std::sin(v);
  o.part = std::cos(v) >= 0.0 ? 0 : 1;  // outer / inner half
  return o;
}

struct PlaneShape {
  double a = 0.7, b = 0.7;  // half extents
};

SamplerOut sample_plane(const PlaneShape& pl, Rng& rng) {
  SamplerOut o;
  o.p[0] = rng.uniform(-pl.a, pl.a);
  o.p[1] = rng.uniform(-pl.b, pl.b);
  o.p[2] = 0.0;
  o.normal[0] = o.normal[1] = 0.0;
  o.normal[2] = 1.0;
  o.part = (o.p[0] >= 0.0 ? 1 : 0) + (o.p[1] >= 0.0 ? 2 : 0);  // quadrant
  return o;
}

int family_parts(const std::string& family) {
  if (family == "sphere") return 1;
  if (family == "box") return 6;
  if (family == "torus") return 2;
  if (family == "plane") return 4;
  throw std::runtime_error("unknown synthetic family '" + family +
                           "' (expected sphere, box, torus, or plane)");
}

PointCloud synth_cloud(const std::string& family, size_t n, double jitter, int part_offset,
                       Rng& rng) {
  // Per-sample shape parameters give intra-class variation.
  BoxShape box{{rng.uniform(0.4, 0.7), rng.uniform(0.4, 0.7), rng.uniform(0.4, 0.7)}};
  TorusShape torus{0.8, rng.uniform(0.2, 0.36)};
  PlaneShape plane{rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.9)};

  Tensor coords({3, n});
  Tensor normals({3, n});
  std::vector<int> parts(n);
  for (size_t i = 0; i < n; ++i) {
    SamplerOut s;
    if (family == "sphere")
      s = sample_sphere(rng);
    else if (family == "box")
      s = sample_box(box, rng);
    else if (family == "torus")
      s = sample_torus(torus, rng);
    else
      s = sample_plane(plane, rng);
    for (size_t c = 0; c < 3; ++c) {
      coords.data()[c * n + i] = s.p[c] + jitter * rng.normal();
      normals.data()[c * n + i] = s.normal[c];
    }
    parts[i] = part_offset + s.part;
  }
  PointCloud pc = PointCloud::from_coords(coords);
  pc.normals = normals;
  pc.part_labels = std::move(parts);
  return pc;
}

// --- text parsing ---------------------------------------------------------------

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

PointCloud parse_xyz_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open sample file '" + path + "'");
  std::vector<double> cols[7];
  int ncols = -1;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    std::istringstream ls(line);
    double vals[7];
    int c = 0;
    while (c < 7 && (ls >> vals[c])) ++c;
    std::string trailing;
    if (ls >> trailing) fail_at(path, line_no, "malformed row (extra token '" + trailing + "')");
    if (c != 3 && c != 4 && c != 6 && c != 7)
      fail_at(path, line_no,
              "expected 3, 4, 6, or 7 numeric columns, got " + std::to_string(c));
    if (ncols == -1) ncols = c;
    if (c != ncols)
      fail_at(path, line_no, "inconsistent column count (" + std::to_string(c) + " vs " +
                                 std::to_string(ncols) + ")");
    for (int k = 0; k < c; ++k) cols[k].push_back(vals[k]);
  }
  if (ncols == -1) throw std::runtime_error("empty sample file '" + path + "'");

  size_t n = cols[0].size();
  Tensor coords({3, n});
  for (size_t c = 0; c < 3; ++c)
    std::copy(cols[c].begin(), cols[c].end(), coords.data() + c * n);
  PointCloud pc = PointCloud::from_coords(coords);
  bool has_normals = (ncols >= 6);
  int part_col = (ncols == 4) ? 3 : (ncols == 7 ? 6 : -1);
  if (has_normals) {
    Tensor normals({3, n});
    for (size_t c = 0; c < 3; ++c)
      std::copy(cols[3 + c].begin(), cols[3 + c].end(), normals.data() + c * n);
    pc.normals = normals;
  }
  if (part_col >= 0) {
    pc.part_labels.resize(n);
    for (size_t i = 0; i < n; ++i) pc.part_labels[i] = int(std::llround(cols[part_col][i]));
  }
  return pc;
}

// Ingestion normalization, skipped when the cloud is already centered and
// unit-scaled within fp32 tolerance so save/load cycles are bit-stable.
PointCloud ingest_normalize(const PointCloud& cloud) {
  size_t n = cloud.num_points();
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
  bool centered = std::abs(mean[0]) < 1e-6 && std::abs(mean[1]) < 1e-6 && std::abs(mean[2]) < 1e-6;
  if (centered && std::abs(std::sqrt(max_r2) - 1.0) < 1e-6) return cloud;
  return normalize_to_unit_sphere(cloud);
}

std::string format_row(const double* vals, int n) {
  char buf[256];
  int off = 0;
  for (int i = 0; i < n; ++i)
    off += std::snprintf(buf + off, sizeof(buf) - size_t(off), i ? " %.9g" : "%.9g", vals[i]);
  return std::string(buf, size_t(off));
}

// --- little-endian scalar I/O for the cache header -----------------------------

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) b[i] = (unsigned char)((uint64_t(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  if (!is.good()) throw std::runtime_error("cache: truncated reading " + what);
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(b[i]) << (8 * i);
  return T(v);
}

std::string sample_prefix(size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%06zu", i);
  return buf;
}

}  // namespace

// --- Dataset -----------------------------------------------------------------------

size_t Dataset::num_parts() const {
  if (!part_ranges.empty()) {
    int hi = 0;
    for (auto& [b, e] : part_ranges) hi = std::max(hi, e);
    return size_t(hi);
  }
  int hi = -1;
  for (const PointCloud& s : samples)
    for (int p : s.part_labels) hi = std::max(hi, p);
  return size_t(hi + 1);
}

std::vector<size_t> Dataset::train_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == 0) out.push_back(i);
  return out;
}

std::vector<size_t> Dataset::test_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == 1) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  DPT_CHECK(!class_names.empty(), "dataset has no classes");
  DPT_CHECK(samples.size() == splits.size(), "dataset: samples/splits length mismatch");
  DPT_CHECK(part_ranges.empty() || part_ranges.size() == class_names.size(),
            "dataset: part_ranges must have one entry per class");
  for (auto& [b, e] : part_ranges)
    DPT_CHECK(b >= 0 && b < e, "dataset: invalid part range");
  for (size_t i = 0; i < samples.size(); ++i) {
    const PointCloud& s = samples[i];
    DPT_CHECK(s.label >= 0 && size_t(s.label) < class_names.size(),
              "dataset: sample " << i << " label " << s.label << " out of range");
    DPT_CHECK(splits[i] == 0 || splits[i] == 1, "dataset: sample " << i << " has invalid split");
    DPT_CHECK(s.num_points() > 0, "dataset: sample " << i << " is empty");
    if (s.normals.defined())
      DPT_CHECK(s.normals.shape() == s.coords.shape(),
                "dataset: sample " << i << " normals shape mismatch");
    if (!s.part_labels.empty()) {
      DPT_CHECK(s.part_labels.size() == s.num_points(),
                "dataset: sample " << i << " part labels length mismatch");
      if (!part_ranges.empty()) {
        auto [b, e] = part_ranges[size_t(s.label)];
        for (int p : s.part_labels)
          DPT_CHECK(p >= b && p < e,
                    "dataset: sample " << i << " part " << p << " outside class range");
      }
    }
  }
}

// --- generation ------------------------------------------------------------------

Dataset make_synthetic(const SyntheticShapeSpec& spec) {
  DPT_CHECK(spec.points >= 64, "synthetic clouds need at least 64 points, got " << spec.points);
  DPT_CHECK(!spec.families.empty(), "no synthetic families requested");
  Dataset ds;
  ds.task = Task::Classification;
  ds.class_names = spec.families;
  int part_offset = 0;
  for (const std::string& f : spec.families) {
    int parts = family_parts(f);  // also validates the name
    ds.part_ranges.emplace_back(part_offset, part_offset + parts);
    part_offset += parts;
  }
  Rng master(spec.seed);
  size_t per_class = spec.train_per_class + spec.test_per_class;
  for (size_t c = 0; c < spec.families.size(); ++c) {
    for (size_t s = 0; s < per_class; ++s) {
      Rng rng = master.fork(c * 1000003ull + s);
      PointCloud pc = synth_cloud(spec.families[c], spec.points, spec.jitter,
                                  ds.part_ranges[c].first, rng);
      pc.label = int(c);
      ds.samples.push_back(std::move(pc));
      ds.splits.push_back(s < spec.train_per_class ? 0 : 1);
    }
  }
  ds.validate();
  return ds;
}

Tensor one_hot(int label, size_t dim) {
  DPT_CHECK(label >= 0 && size_t(label) < dim,
            "one_hot: label " << label << " out of range [0, " << dim << ")");
  Tensor t = Tensor::zeros({dim});
  t.data()[size_t(label)] = 1.0;
  return t;
}

// --- text ingestion ---------------------------------------------------------------

Dataset load_xyz_dir(const std::string& dir, const std::string& manifest_path, size_t n_points,
                     uint64_t seed, std::vector<std::string> class_names) {
  DPT_CHECK(n_points > 0, "load_xyz_dir: n_points must be positive");
  std::string mpath = manifest_path.empty() ? dir + "/manifest.tsv" : manifest_path;
  std::ifstream in(mpath);
  if (!in.good()) throw std::runtime_error("cannot open manifest '" + mpath + "'");

  struct Entry {
    std::string rel, label;
    int split;
    size_t line;
  };
  std::vector<Entry> entries;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = split_tab(line);
    if (fields.size() != 3)
      fail_at(mpath, line_no, "expected path<TAB>label<TAB>split, got " +
                                  std::to_string(fields.size()) + " fields");
    int split;
    if (fields[2] == "train")
      split = 0;
    else if (fields[2] == "test")
      split = 1;
    else
      fail_at(mpath, line_no, "unknown split '" + fields[2] + "' (expected train or test)");
    entries.push_back({fields[0], fields[1], split, line_no});
  }
  if (entries.empty()) throw std::runtime_error("manifest '" + mpath + "' lists no samples");

  if (class_names.empty()) {
    std::set<std::string> uniq;
    for (const Entry& e : entries) uniq.insert(e.label);
    class_names.assign(uniq.begin(), uniq.end());
  }
  Dataset ds;
  ds.class_names = std::move(class_names);
  auto label_id = [&](const std::string& name, size_t ln) {
    auto it = std::find(ds.class_names.begin(), ds.class_names.end(), name);
    if (it == ds.class_names.end()) fail_at(mpath, ln, "unknown label '" + name + "'");
    return int(it - ds.class_names.begin());
  };
  Rng master(seed);
  size_t entry_no = 0;
  for (const Entry& e : entries) {
    PointCloud pc = parse_xyz_file(dir + "/" + e.rel);
    pc.label = label_id(e.label, e.line);
    pc = ingest_normalize(pc);
    if (pc.num_points() != n_points) {
      Rng r = master.fork(entry_no);
      pc = resample(pc, int(n_points), r);
    }
    ds.samples.push_back(std::move(pc));
    ds.splits.push_back(e.split);
    ++entry_no;
  }
  ds.validate();
  return ds;
}

void save_xyz_dir(const Dataset& ds, const std::string& dir, const std::string& manifest_name) {
  ds.validate();
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/" + manifest_name);
  DPT_CHECK(manifest.good(), "cannot write manifest in '" << dir << "'");
  std::vector<size_t> counter(ds.class_names.size(), 0);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const PointCloud& s = ds.samples[i];
    const std::string& cls = ds.class_names[size_t(s.label)];
    char num[16];
    std::snprintf(num, sizeof(num), "%05zu", counter[size_t(s.label)]++);
    std::string rel = cls + "_" + num + ".xyz";
    manifest << rel << '\t' << cls << '\t' << (ds.splits[i] == 0 ? "train" : "test") << '\n';

    std::ofstream out(dir + "/" + rel);
    DPT_CHECK(out.good(), "cannot write sample file '" << rel << "'");
    size_t n = s.num_points();
    bool with_normals = s.normals.defined();
    bool with_parts = !s.part_labels.empty();
    for (size_t p = 0; p < n; ++p) {
      double row[7];
      int cols = 0;
      for (size_t c = 0; c < 3; ++c) row[cols++] = s.coords.data()[c * n + p];
      if (with_normals)
        for (size_t c = 0; c < 3; ++c) row[cols++] = s.normals.data()[c * n + p];
      if (with_parts) row[cols++] = double(s.part_labels[p]);
      out << format_row(row, cols) << '\n';
    }
  }
}

// --- binary cache -----------------------------------------------------------------

void save_cache(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary);
  DPT_CHECK(os.good(), "cannot write cache '" << path << "'");
  os.write("DPTC", 4);
  write_le<uint32_t>(os, 1);
  write_le<uint32_t>(os, uint32_t(ds.task));
  write_le<uint32_t>(os, uint32_t(ds.class_names.size()));
  for (const std::string& name : ds.class_names) {
    DPT_CHECK(name.size() <= 0xffff, "class name too long");
    write_le<uint16_t>(os, uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
  }
  write_le<uint32_t>(os, uint32_t(ds.part_ranges.size()));
  for (auto& [b, e] : ds.part_ranges) {
    write_le<int32_t>(os, b);
    write_le<int32_t>(os, e);
  }

  std::vector<Parameter> records;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const PointCloud& s = ds.samples[i];
    std::string pre = sample_prefix(i);
    records.push_back({pre + ".meta",
                       Tensor::from_data({2}, {double(s.label), double(ds.splits[i])})});
    records.push_back({pre + ".coords", s.coords});
    if (s.normals.defined()) records.push_back({pre + ".normals", s.normals});
    if (!s.part_labels.empty()) {
      Tensor parts({s.part_labels.size()});
      for (size_t p = 0; p < s.part_labels.size(); ++p)
        parts.data()[p] = double(s.part_labels[p]);
      records.push_back({pre + ".parts", parts});
    }
  }
  write_records(os, records);
  DPT_CHECK(os.good(), "failed writing cache '" << path << "'");
}

Dataset load_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw std::runtime_error("cannot open cache '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is.good() || std::memcmp(magic, "DPTC", 4) != 0)
    throw std::runtime_error("'" + path + "' is not a dataset cache (bad magic)");
  uint32_t version = read_le<uint32_t>(is, "version");
  if (version != 1)
    throw std::runtime_error("cache '" + path + "': unsupported version " +
                             std::to_string(version));
  Dataset ds;
  uint32_t task = read_le<uint32_t>(is, "task");
  DPT_CHECK(task <= uint32_t(Task::Custom), "cache: invalid task field");
  ds.task = Task(task);
  uint32_t n_classes = read_le<uint32_t>(is, "class count");
  for (uint32_t c = 0; c < n_classes; ++c) {
    uint16_t len = read_le<uint16_t>(is, "class name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is.good()) throw std::runtime_error("cache: truncated class name");
    ds.class_names.push_back(std::move(name));
  }
  uint32_t n_ranges = read_le<uint32_t>(is, "part range count");
  for (uint32_t r = 0; r < n_ranges; ++r) {
    int32_t b = read_le<int32_t>(is, "part range");
    int32_t e = read_le<int32_t>(is, "part range");
    ds.part_ranges.emplace_back(b, e);
  }

  std::vector<Parameter> records = read_records(is, path);
  size_t i = 0;
  while (i < records.size()) {
    std::string pre = sample_prefix(ds.samples.size());
    DPT_CHECK(records[i].name == pre + ".meta",
              "cache: expected record '" << pre << ".meta', found '" << records[i].name << "'");
    const Tensor& meta = records[i].tensor;
    DPT_CHECK(meta.numel() == 2, "cache: malformed meta record");
    ++i;
    DPT_CHECK(i < records.size() && records[i].name == pre + ".coords",
              "cache: expected record '" << pre << ".coords'");
    PointCloud pc = PointCloud::from_coords(records[i].tensor.clone());
    ++i;
    if (i < records.size() && records[i].name == pre + ".normals") {
      pc.normals = records[i].tensor.clone();
      ++i;
    }
    if (i < records.size() && records[i].name == pre + ".parts") {
      const Tensor& parts = records[i].tensor;
      pc.part_labels.resize(parts.numel());
      for (size_t p = 0; p < parts.numel(); ++p)
        pc.part_labels[p] = int(std::llround(parts.data()[p]));
      ++i;
    }
    pc.label = int(std::llround(meta.data()[0]));
    ds.samples.push_back(std::move(pc));
    ds.splits.push_back(int(std::llround(meta.data()[1])));
  }
  ds.validate();
  return ds;
}

}  // namespace dpt
