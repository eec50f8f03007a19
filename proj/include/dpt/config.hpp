#pragma once
// Run configuration: a schema-driven registry of every tunable, plain-text
// config files (INI-style sections), dotted-key overrides for command-line
// flags, and an effective-config serializer whose output parses back exactly.

#include <functional>
#include <string>
#include <vector>

#include "dpt/data.hpp"
#include "dpt/networks.hpp"
#include "dpt/training.hpp"

namespace dpt {

// Dataset selection: "synthetic" generates shapes in memory, "dir" reads
// cloud files through a manifest, "cache" loads the binary dataset cache.
struct DataConfig {
  std::string source = "synthetic";
  std::string dir;                     // cloud directory (source=dir)
  std::string manifest = "manifest.tsv";  // manifest file inside `dir`
  std::string cache;                   // binary cache path (source=cache)
  std::vector<std::string> families = {"sphere", "box", "torus", "plane"};
  size_t points = 256;
  double jitter = 0.01;
  size_t train_per_class = 200;
  size_t test_per_class = 80;
  uint64_t seed = 1;
};

struct EvalConfig {
  std::string checkpoint;  // parameters to load before evaluating
  size_t votes = 10;
  uint64_t seed = 1;
  double scale_lo = 0.66;  // per-vote anisotropic scale range
  double scale_hi = 1.5;
  std::string dump;  // per-sample TSV path; empty disables the dump
};

struct BenchConfig {
  size_t warmup = 2;
  size_t reps = 10;
  size_t batch = 8;
};

struct RunConfig {
  // The default network is the full classification preset so that a bare
  // invocation (no config, no flags) describes a runnable model.
  NetworkConfig network = classification_config();
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  BenchConfig bench;
  std::string out_dir = "out";
};

// One tunable. `type` is the value syntax: uint, int, float, bool, string,
// string-list (comma separated), uint-list (comma separated), uint-lists
// (';'-separated groups of comma lists), or stages (';'-separated stage
// records of comma-separated field=value pairs).
struct SchemaEntry {
  std::string section, key, type, help;
  bool serialize = true;  // write-only convenience keys (presets) are skipped
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;  // throws on bad value
};

// Every tunable, in canonical serialization order. Within [network], preset
// keys come first so they always apply before individual field overrides.
const std::vector<SchemaEntry>& config_schema();

// Parses `[section]` headers and `key = value` lines; blank lines and lines
// starting with '#' or ';' are ignored. Unknown sections or keys and
// malformed values are hard errors citing file:line.
void apply_config_file(RunConfig& cfg, const std::string& path);

// Applies one "section.key" override; unknown keys are hard errors.
void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

// Effective configuration as a parseable document: apply_config_file on the
// output reproduces `cfg` exactly (write-only keys excluded).
std::string serialize_config(const RunConfig& cfg);

}  // namespace dpt
