// Schema registry, config-file parsing, dotted-key overrides, serialization.
#include "dpt/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dpt {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  if (trim(s).empty()) return parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) parts.push_back("");
  return parts;
}

uint64_t parse_uint(const std::string& s) {
  const std::string t = trim(s);
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    fail("expected a non-negative integer, got '" + s + "'");
  return v;
}

long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    fail("expected an integer, got '" + s + "'");
  return v;
}

double parse_float(const std::string& s) {
  const std::string t = trim(s);
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size())
    fail("expected a number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  fail("expected true/false, got '" + s + "'");
}

// Shortest decimal form that parses back to the same double.
std::string fmt_float(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::vector<size_t> parse_uint_list(const std::string& s) {
  std::vector<size_t> out;
  for (const std::string& item : split(s, ','))
    out.push_back(static_cast<size_t>(parse_uint(item)));
  return out;
}

std::string fmt_uint_list(const std::vector<size_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::vector<size_t>> parse_uint_lists(const std::string& s) {
  std::vector<std::vector<size_t>> out;
  for (const std::string& group : split(s, ';')) out.push_back(parse_uint_list(group));
  return out;
}

std::string fmt_uint_lists(const std::vector<std::vector<size_t>>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? " ; " : "") + fmt_uint_list(v[i]);
  return out;
}

std::string fmt_string_list(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

// --- stage list syntax ---------------------------------------------------------
// One stage: comma-separated field=value pairs; stages joined by ';'.

StageSpec parse_stage(const std::string& s) {
  StageSpec spec;
  for (const std::string& part : split(s, ',')) {
    size_t eq = part.find('=');
    if (eq == std::string::npos) fail("stage field '" + part + "' is not field=value");
    const std::string key = trim(part.substr(0, eq));
    const std::string val = trim(part.substr(eq + 1));
    if (key == "ratio")
      spec.pool_ratio = parse_float(val);
    else if (key == "global")
      spec.global_pool = parse_bool(val);
    else if (key == "radius")
      spec.pool_radius = parse_float(val);
    else if (key == "neighbors")
      spec.pool_neighbors = static_cast<int>(parse_int(val));
    else if (key == "out")
      spec.pool_out = static_cast<size_t>(parse_uint(val));
    else if (key == "layers")
      spec.layers = static_cast<int>(parse_int(val));
    else if (key == "conv_radius")
      spec.conv_radius = parse_float(val);
    else if (key == "conv_neighbors")
      spec.conv_neighbors = static_cast<int>(parse_int(val));
    else if (key == "dense")
      spec.dense = parse_bool(val);
    else
      fail("unknown stage field '" + key +
           "' (expected ratio|global|radius|neighbors|out|layers|conv_radius|conv_neighbors|dense)");
  }
  return spec;
}

std::string fmt_stage(const StageSpec& s) {
  std::ostringstream os;
  os << "ratio=" << fmt_float(s.pool_ratio) << ",global=" << (s.global_pool ? "true" : "false")
     << ",radius=" << fmt_float(s.pool_radius) << ",neighbors=" << s.pool_neighbors
     << ",out=" << s.pool_out << ",layers=" << s.layers
     << ",conv_radius=" << fmt_float(s.conv_radius) << ",conv_neighbors=" << s.conv_neighbors
     << ",dense=" << (s.dense ? "true" : "false");
  return os.str();
}

std::vector<StageSpec> parse_stages(const std::string& s) {
  std::vector<StageSpec> out;
  for (const std::string& stage : split(s, ';')) out.push_back(parse_stage(stage));
  return out;
}

std::string fmt_stages(const std::vector<StageSpec>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? " ; " : "") + fmt_stage(v[i]);
  return out;
}

// --- schema construction ---------------------------------------------------------

// `Ref`: callable RunConfig& -> field&. The const_cast in the getters is safe
// because they only read through the reference.
template <class Ref>
SchemaEntry key_uint(const char* sec, const char* key, const char* help, Ref ref) {
  SchemaEntry e{sec, key, "uint", help, true, {}, {}};
  e.get = [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); };
  e.set = [ref](RunConfig& c, const std::string& v) {
    ref(c) = static_cast<std::decay_t<decltype(ref(c))>>(parse_uint(v));
  };
  return e;
}

template <class Ref>
SchemaEntry key_int(const char* sec, const char* key, const char* help, Ref ref) {
  SchemaEntry e{sec, key, "int", help, true, {}, {}};
  e.get = [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); };
  e.set = [ref](RunConfig& c, const std::string& v) {
    ref(c) = static_cast<std::decay_t<decltype(ref(c))>>(parse_int(v));
  };
  return e;
}

template <class Ref>
SchemaEntry key_float(const char* sec, const char* key, const char* help, Ref ref) {
  SchemaEntry e{sec, key, "float", help, true, {}, {}};
  e.get = [ref](const RunConfig& c) { return fmt_float(ref(const_cast<RunConfig&>(c))); };
  e.set = [ref](RunConfig& c, const std::string& v) { ref(c) = parse_float(v); };
  return e;
}

template <class Ref>
SchemaEntry key_bool(const char* sec, const char* key, const char* help, Ref ref) {
  SchemaEntry e{sec, key, "bool", help, true, {}, {}};
  e.get = [ref](const RunConfig& c) {
    return ref(const_cast<RunConfig&>(c)) ? std::string("true") : std::string("false");
  };
  e.set = [ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); };
  return e;
}

template <class Ref>
SchemaEntry key_string(const char* sec, const char* key, const char* help, Ref ref) {
  SchemaEntry e{sec, key, "string", help, true, {}, {}};
  e.get = [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); };
  e.set = [ref](RunConfig& c, const std::string& v) { ref(c) = trim(v); };
  return e;
}

template <class Ref>
SchemaEntry key_string_list(const char* sec, const char* key, const char* help, Ref ref) {
  SchemaEntry e{sec, key, "string-list", help, true, {}, {}};
  e.get = [ref](const RunConfig& c) { return fmt_string_list(ref(const_cast<RunConfig&>(c))); };
  e.set = [ref](RunConfig& c, const std::string& v) { ref(c) = split(v, ','); };
  return e;
}

template <class Ref>
SchemaEntry key_uint_list(const char* sec, const char* key, const char* help, Ref ref) {
  SchemaEntry e{sec, key, "uint-list", help, true, {}, {}};
  e.get = [ref](const RunConfig& c) { return fmt_uint_list(ref(const_cast<RunConfig&>(c))); };
  e.set = [ref](RunConfig& c, const std::string& v) { ref(c) = parse_uint_list(v); };
  return e;
}

// Enum-style key: parse/print via the named conversion functions.
template <class Parse, class Print>
SchemaEntry key_enum(const char* sec, const char* key, const char* help, Parse parse,
                     Print print) {
  SchemaEntry e{sec, key, "string", help, true, {}, {}};
  e.get = [print](const RunConfig& c) { return print(c); };
  e.set = [parse](RunConfig& c, const std::string& v) { parse(c, trim(v)); };
  return e;
}

std::vector<SchemaEntry> build_schema() {
  std::vector<SchemaEntry> s;

  // -- [network]: presets first so they always apply before field overrides.
  {
    SchemaEntry preset{"network", "preset", "string",
                       "replace the [network] section with a named architecture "
                       "(classification|part_segmentation|normal_estimation) built from the "
                       "current growth/groups/classes/connectivity values",
                       false, {}, {}};
    preset.get = [](const RunConfig&) { return std::string(); };
    preset.set = [](RunConfig& c, const std::string& v) {
      const std::string t = trim(v);
      NetworkConfig& n = c.network;
      if (t == "classification")
        n = classification_config(n.k, n.groups, n.classes, n.connectivity);
      else if (t == "part_segmentation")
        n = segmentation_config(n.k, n.groups);
      else if (t == "normal_estimation")
        n = normal_estimation_config(n.k, n.groups);
      else
        fail("unknown preset '" + t +
             "' (expected classification|part_segmentation|normal_estimation)");
    };
    s.push_back(std::move(preset));

    SchemaEntry depth{"network", "depth", "int",
                      "replace the [network] section with the classification depth preset of "
                      "this many pooling+convolution layers (>= 5), built from the current "
                      "growth/groups/classes values",
                      false, {}, {}};
    depth.get = [](const RunConfig&) { return std::string(); };
    depth.set = [](RunConfig& c, const std::string& v) {
      NetworkConfig& n = c.network;
      n = depth_preset(static_cast<int>(parse_int(v)), n.k, n.groups, n.classes);
    };
    s.push_back(std::move(depth));
  }

  s.push_back(key_enum(
      "network", "task", "task: classification|part_segmentation|normal_estimation|custom",
      [](RunConfig& c, const std::string& v) { c.network.task = task_from_string(v); },
      [](const RunConfig& c) { return to_string(c.network.task); }));
  s.push_back(key_uint("network", "points", "expected input points per sample",
                       [](RunConfig& c) -> size_t& { return c.network.points; }));
  s.push_back(key_uint("network", "classes", "classes (classification) or parts (segmentation)",
                       [](RunConfig& c) -> size_t& { return c.network.classes; }));
  s.push_back(key_uint("network", "growth", "per-layer growth width inside dense blocks",
                       [](RunConfig& c) -> size_t& { return c.network.k; }));
  s.push_back(key_int("network", "groups", "group count of the expansion transform",
                      [](RunConfig& c) -> int& { return c.network.groups; }));
  s.push_back(key_uint("network", "expansion", "expansion transform output width",
                       [](RunConfig& c) -> size_t& { return c.network.expansion; }));
  s.push_back(key_enum(
      "network", "connectivity", "block connectivity: dense|layer|concat_end",
      [](RunConfig& c, const std::string& v) {
        c.network.connectivity = connectivity_from_string(v);
      },
      [](const RunConfig& c) { return to_string(c.network.connectivity); }));
  s.push_back(key_enum(
      "network", "rho", "neighborhood aggregation: max|avg|sum",
      [](RunConfig& c, const std::string& v) { c.network.rho = rho_from_string(v); },
      [](const RunConfig& c) { return to_string(c.network.rho); }));
  s.push_back(key_enum(
      "network", "order", "composite operator order: post (SLP-BN-ReLU) | pre (BN-ReLU-SLP)",
      [](RunConfig& c, const std::string& v) { c.network.order = order_from_string(v); },
      [](const RunConfig& c) { return to_string(c.network.order); }));
  s.push_back(key_bool("network", "knn", "k-nearest-neighbor neighborhoods instead of spherical",
                       [](RunConfig& c) -> bool& { return c.network.knn; }));
  s.push_back(key_float("network", "conv_dropout", "neighbor dropout ratio inside convolutions",
                        [](RunConfig& c) -> double& { return c.network.conv_dropout; }));
  s.push_back(key_float("network", "fc_dropout", "dropout ratio between classifier layers",
                        [](RunConfig& c) -> double& { return c.network.fc_dropout; }));
  {
    SchemaEntry stages{"network", "stages", "stages",
                       "encoder stages, ';'-separated records of comma-joined field=value pairs "
                       "(fields: ratio,global,radius,neighbors,out,layers,conv_radius,"
                       "conv_neighbors,dense)",
                       true, {}, {}};
    stages.get = [](const RunConfig& c) { return fmt_stages(c.network.stages); };
    stages.set = [](RunConfig& c, const std::string& v) { c.network.stages = parse_stages(v); };
    s.push_back(std::move(stages));
  }
  s.push_back(key_uint_list("network", "fc_dims", "classification head hidden widths",
                            [](RunConfig& c) -> std::vector<size_t>& { return c.network.fc_dims; }));
  {
    SchemaEntry fp{"network", "fp_dims", "uint-lists",
                   "decoder propagation widths, coarse-to-fine, one ';'-separated comma list "
                   "per encoder stage (empty for classification)",
                   true, {}, {}};
    fp.get = [](const RunConfig& c) { return fmt_uint_lists(c.network.fp_dims); };
    fp.set = [](RunConfig& c, const std::string& v) { c.network.fp_dims = parse_uint_lists(v); };
    s.push_back(std::move(fp));
  }
  s.push_back(key_uint_list("network", "head_dims", "per-point head hidden widths",
                            [](RunConfig& c) -> std::vector<size_t>& { return c.network.head_dims; }));
  s.push_back(key_float("network", "head_dropout", "dropout ratio inside the per-point head",
                        [](RunConfig& c) -> double& { return c.network.head_dropout; }));
  s.push_back(key_uint("network", "one_hot_dim",
                       "category one-hot width appended before the per-point head (0 = none)",
                       [](RunConfig& c) -> size_t& { return c.network.one_hot_dim; }));
  s.push_back(key_int("network", "interp_neighbors", "inverse-distance interpolation neighbors",
                      [](RunConfig& c) -> int& { return c.network.interp_neighbors; }));

  // -- [train]
  s.push_back(key_uint("train", "epochs", "training epochs",
                       [](RunConfig& c) -> size_t& { return c.train.epochs; }));
  s.push_back(key_uint("train", "batch_size", "training batch size",
                       [](RunConfig& c) -> size_t& { return c.train.batch_size; }));
  s.push_back(key_float("train", "lr", "Adam learning rate",
                        [](RunConfig& c) -> double& { return c.train.adam.lr; }));
  s.push_back(key_float("train", "beta1", "Adam first-moment decay",
                        [](RunConfig& c) -> double& { return c.train.adam.beta1; }));
  s.push_back(key_float("train", "beta2", "Adam second-moment decay",
                        [](RunConfig& c) -> double& { return c.train.adam.beta2; }));
  s.push_back(key_float("train", "adam_eps", "Adam denominator epsilon",
                        [](RunConfig& c) -> double& { return c.train.adam.eps; }));
  s.push_back(key_bool("train", "augment", "random scale+translate augmentation on train samples",
                       [](RunConfig& c) -> bool& { return c.train.augment_enabled; }));
  s.push_back(key_float("train", "scale_lo", "augmentation scale lower bound",
                        [](RunConfig& c) -> double& { return c.train.augment.scale_lo; }));
  s.push_back(key_float("train", "scale_hi", "augmentation scale upper bound",
                        [](RunConfig& c) -> double& { return c.train.augment.scale_hi; }));
  s.push_back(key_float("train", "translate", "augmentation translation bound",
                        [](RunConfig& c) -> double& { return c.train.augment.translate; }));
  s.push_back(key_uint("train", "seed", "training RNG seed (shuffling, augmentation, dropout)",
                       [](RunConfig& c) -> uint64_t& { return c.train.seed; }));
  s.push_back(key_uint("train", "votes", "voting passes reserved for in-training evaluation",
                       [](RunConfig& c) -> size_t& { return c.train.votes; }));

  // -- [data]
  s.push_back(key_enum(
      "data", "source", "dataset source: synthetic|dir|cache",
      [](RunConfig& c, const std::string& v) {
        if (v != "synthetic" && v != "dir" && v != "cache")
          fail("unknown data source '" + v + "' (expected synthetic|dir|cache)");
        c.data.source = v;
      },
      [](const RunConfig& c) { return c.data.source; }));
  s.push_back(key_string("data", "dir", "cloud directory (source=dir)",
                         [](RunConfig& c) -> std::string& { return c.data.dir; }));
  s.push_back(key_string("data", "manifest", "manifest file name inside the cloud directory",
                         [](RunConfig& c) -> std::string& { return c.data.manifest; }));
  s.push_back(key_string("data", "cache", "binary dataset cache path (source=cache)",
                         [](RunConfig& c) -> std::string& { return c.data.cache; }));
  s.push_back(key_string_list(
      "data", "families", "synthetic shape families (sphere,box,torus,plane)",
      [](RunConfig& c) -> std::vector<std::string>& { return c.data.families; }));
  s.push_back(key_uint("data", "points", "points per generated/loaded sample",
                       [](RunConfig& c) -> size_t& { return c.data.points; }));
  s.push_back(key_float("data", "jitter", "synthetic per-coordinate Gaussian jitter sigma",
                        [](RunConfig& c) -> double& { return c.data.jitter; }));
  s.push_back(key_uint("data", "train_per_class", "synthetic training samples per class",
                       [](RunConfig& c) -> size_t& { return c.data.train_per_class; }));
  s.push_back(key_uint("data", "test_per_class", "synthetic test samples per class",
                       [](RunConfig& c) -> size_t& { return c.data.test_per_class; }));
  s.push_back(key_uint("data", "seed", "dataset generation / resampling seed",
                       [](RunConfig& c) -> uint64_t& { return c.data.seed; }));

  // -- [eval]
  s.push_back(key_string("eval", "checkpoint", "checkpoint file to load before evaluating",
                         [](RunConfig& c) -> std::string& { return c.eval.checkpoint; }));
  s.push_back(key_uint("eval", "votes", "test-time voting passes",
                       [](RunConfig& c) -> size_t& { return c.eval.votes; }));
  s.push_back(key_uint("eval", "seed", "voting scale RNG seed",
                       [](RunConfig& c) -> uint64_t& { return c.eval.seed; }));
  s.push_back(key_float("eval", "scale_lo", "per-vote anisotropic scale lower bound",
                        [](RunConfig& c) -> double& { return c.eval.scale_lo; }));
  s.push_back(key_float("eval", "scale_hi", "per-vote anisotropic scale upper bound",
                        [](RunConfig& c) -> double& { return c.eval.scale_hi; }));
  s.push_back(key_string("eval", "dump", "per-sample TSV dump path (empty = no dump)",
                         [](RunConfig& c) -> std::string& { return c.eval.dump; }));

  // -- [bench]
  s.push_back(key_uint("bench", "warmup", "untimed warmup iterations",
                       [](RunConfig& c) -> size_t& { return c.bench.warmup; }));
  s.push_back(key_uint("bench", "reps", "timed repetitions",
                       [](RunConfig& c) -> size_t& { return c.bench.reps; }));
  s.push_back(key_uint("bench", "batch", "benchmark batch size",
                       [](RunConfig& c) -> size_t& { return c.bench.batch; }));

  // -- [run]
  s.push_back(key_string("run", "out_dir", "output directory for checkpoints, logs, reports",
                         [](RunConfig& c) -> std::string& { return c.out_dir; }));

  return s;
}

const SchemaEntry* find_entry(const std::string& section, const std::string& key) {
  for (const SchemaEntry& e : config_schema())
    if (e.section == section && e.key == key) return &e;
  return nullptr;
}

}  // namespace

const std::vector<SchemaEntry>& config_schema() {
  static const std::vector<SchemaEntry> schema = build_schema();
  return schema;
}

void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  size_t dot = dotted_key.find('.');
  if (dot == std::string::npos)
    fail("config key '" + dotted_key + "' must be section.key");
  const std::string section = dotted_key.substr(0, dot);
  const std::string key = dotted_key.substr(dot + 1);
  const SchemaEntry* e = find_entry(section, key);
  if (!e) fail("unknown config key '" + dotted_key + "'");
  try {
    e->set(cfg, value);
  } catch (const std::exception& ex) {
    fail(dotted_key + ": " + ex.what());
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open config file '" + path + "'");
  std::string line, section;
  size_t lineno = 0;
  auto where = [&] { return path + ":" + std::to_string(lineno); };
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(where() + ": malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      bool known = false;
      for (const SchemaEntry& e : config_schema()) known |= (e.section == section);
      if (!known) fail(where() + ": unknown section '" + section + "'");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) fail(where() + ": expected key = value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty()) fail(where() + ": key '" + key + "' appears before any [section]");
    const SchemaEntry* e = find_entry(section, key);
    if (!e) fail(where() + ": unknown key '" + key + "' in section [" + section + "]");
    try {
      e->set(cfg, value);
    } catch (const std::exception& ex) {
      fail(where() + ": " + key + ": " + ex.what());
    }
  }
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const SchemaEntry& e : config_schema()) {
    if (!e.serialize) continue;
    if (e.section != section) {
      if (!section.empty()) os << "\n";
      os << "[" << e.section << "]\n";
      section = e.section;
    }
    os << e.key << " = " << e.get(cfg) << "\n";
  }
  return os.str();
}

}  // namespace dpt
