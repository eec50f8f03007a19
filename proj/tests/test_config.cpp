// Config tests: schema coverage, file parsing diagnostics, override
// precedence, preset keys, and exact serialize -> parse round trips
// (including the full network section).
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "dpt/config.hpp"

using namespace dpt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("dpt_cfg_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  return p.string();
}

}  // namespace

TEST_CASE("schema: every serializable key appears exactly once in its section") {
  RunConfig cfg;
  std::string doc = serialize_config(cfg);

  // section -> key -> occurrences, parsed back out of the dump
  std::map<std::string, std::map<std::string, size_t>> seen;
  std::string section;
  std::istringstream is(doc);
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    size_t eq = line.find(" = ");
    REQUIRE(eq != std::string::npos);
    ++seen[section][line.substr(0, eq)];
  }

  std::set<std::string> sections;
  for (const SchemaEntry& e : config_schema()) {
    sections.insert(e.section);
    size_t count = seen[e.section][e.key];
    if (e.serialize)
      CHECK_MESSAGE(count == 1, e.section << "." << e.key << " appeared " << count << " times");
    else
      CHECK_MESSAGE(count == 0, "write-only key " << e.key << " leaked into the dump");
  }
  for (const std::string& s : sections) CHECK(doc.find("[" + s + "]") != std::string::npos);
}

TEST_CASE("round trip: defaults survive serialize -> parse -> serialize") {
  TempDir tmp("roundtrip_default");
  RunConfig a;
  std::string doc = serialize_config(a);
  RunConfig b;
  apply_config_file(b, write_file(tmp.path / "c.cfg", doc));
  CHECK(serialize_config(b) == doc);
}

TEST_CASE("round trip: heavily customized config survives exactly") {
  TempDir tmp("roundtrip_custom");
  RunConfig a;
  apply_override(a, "network.preset", "part_segmentation");
  apply_override(a, "network.knn", "true");
  apply_override(a, "network.rho", "avg");
  apply_override(a, "network.order", "pre");
  apply_override(a, "network.conv_dropout", "0.15");
  apply_override(a, "network.one_hot_dim", "16");
  apply_override(a, "train.epochs", "7");
  apply_override(a, "train.lr", "0.00271828");
  apply_override(a, "train.augment", "false");
  apply_override(a, "data.source", "dir");
  apply_override(a, "data.dir", "/tmp/clouds");
  apply_override(a, "data.families", "sphere,torus");
  apply_override(a, "eval.votes", "3");
  apply_override(a, "eval.dump", "dump.tsv");
  apply_override(a, "bench.reps", "25");
  apply_override(a, "run.out_dir", "results/exp1");

  std::string doc = serialize_config(a);
  RunConfig b;
  apply_config_file(b, write_file(tmp.path / "c.cfg", doc));
  CHECK(serialize_config(b) == doc);

  CHECK(b.network.task == Task::PartSegmentation);
  CHECK(b.network.knn);
  CHECK(b.network.rho == Rho::Avg);
  CHECK(b.network.order == Order::PreNorm);
  CHECK(b.network.fp_dims.size() == b.network.stages.size());
  CHECK(b.train.adam.lr == 0.00271828);
  CHECK_FALSE(b.train.augment_enabled);
  CHECK(b.data.families == std::vector<std::string>{"sphere", "torus"});
  CHECK(b.eval.votes == 3);
  CHECK(b.bench.reps == 25);
  CHECK(b.out_dir == "results/exp1");
}

TEST_CASE("network section round-trips into an identical build") {
  TempDir tmp("roundtrip_network");
  for (const char* preset : {"classification", "part_segmentation", "normal_estimation"}) {
    CAPTURE(preset);
    RunConfig a;
    apply_override(a, "network.preset", preset);
    RunConfig b;
    apply_config_file(b, write_file(tmp.path / "c.cfg", serialize_config(a)));

    auto na = build_network(a.network, 5);
    auto nb = build_network(b.network, 5);
    REQUIRE(na->store.params.size() == nb->store.params.size());
    for (size_t i = 0; i < na->store.params.size(); ++i) {
      CHECK(na->store.params[i].name == nb->store.params[i].name);
      const Tensor& ta = na->store.params[i].tensor;
      const Tensor& tb = nb->store.params[i].tensor;
      REQUIRE(ta.numel() == tb.numel());
      for (size_t j = 0; j < ta.numel(); ++j) CHECK(ta.data()[j] == tb.data()[j]);
    }
  }
}

TEST_CASE("presets consume the current growth/groups/classes") {
  RunConfig c;
  apply_override(c, "network.growth", "12");
  apply_override(c, "network.groups", "4");
  apply_override(c, "network.classes", "10");
  apply_override(c, "network.preset", "classification");
  CHECK(c.network.k == 12);
  CHECK(c.network.groups == 4);
  CHECK(c.network.classes == 10);
  CHECK(c.network.expansion == 48);  // 4x growth
  CHECK(c.network.stages.size() == 3);

  apply_override(c, "network.depth", "6");
  size_t total_layers = 0;
  for (const StageSpec& s : c.network.stages) total_layers += 1 + size_t(s.layers);
  CHECK(total_layers == 6);
  CHECK(c.network.k == 12);
}

TEST_CASE("connectivity accepts the short aliases") {
  RunConfig c;
  apply_override(c, "network.connectivity", "layer");
  CHECK(c.network.connectivity == Connectivity::LayerByLayer);
  apply_override(c, "network.connectivity", "concat_end");
  CHECK(c.network.connectivity == Connectivity::ConcatAtEnd);
  CHECK_THROWS_WITH_AS(apply_override(c, "network.connectivity", "ladder"),
                       doctest::Contains("ladder"), std::runtime_error);
}

TEST_CASE("file parser: comments, blanks, and whitespace are tolerated") {
  TempDir tmp("parse_ok");
  RunConfig c;
  apply_config_file(c, write_file(tmp.path / "c.cfg",
                                  "# a comment\n"
                                  "\n"
                                  "[network]\n"
                                  "  growth =   32 \n"
                                  "; another comment style\n"
                                  "[train]\n"
                                  "lr = 0.5\n"));
  CHECK(c.network.k == 32);
  CHECK(c.train.adam.lr == 0.5);
}

TEST_CASE("file parser diagnostics cite file and line") {
  TempDir tmp("parse_bad");
  RunConfig c;

  SUBCASE("unknown key") {
    std::string p = write_file(tmp.path / "a.cfg", "[network]\nwidth = 5\n");
    CHECK_THROWS_WITH_AS(apply_config_file(c, p), doctest::Contains("a.cfg:2"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(apply_config_file(c, p), doctest::Contains("width"),
                         std::runtime_error);
  }
  SUBCASE("unknown section") {
    std::string p = write_file(tmp.path / "b.cfg", "[model]\n");
    CHECK_THROWS_WITH_AS(apply_config_file(c, p), doctest::Contains("b.cfg:1"),
                         std::runtime_error);
  }
  SUBCASE("key before any section") {
    std::string p = write_file(tmp.path / "c.cfg", "growth = 3\n");
    CHECK_THROWS_WITH_AS(apply_config_file(c, p), doctest::Contains("before any"),
                         std::runtime_error);
  }
  SUBCASE("missing equals") {
    std::string p = write_file(tmp.path / "d.cfg", "[train]\nepochs 4\n");
    CHECK_THROWS_WITH_AS(apply_config_file(c, p), doctest::Contains("d.cfg:2"),
                         std::runtime_error);
  }
  SUBCASE("malformed value") {
    std::string p = write_file(tmp.path / "e.cfg", "[train]\nepochs = banana\n");
    CHECK_THROWS_WITH_AS(apply_config_file(c, p), doctest::Contains("banana"),
                         std::runtime_error);
  }
  SUBCASE("unknown stage field") {
    std::string p = write_file(tmp.path / "f.cfg", "[network]\nstages = ratio=0.5,depth=3\n");
    CHECK_THROWS_WITH_AS(apply_config_file(c, p), doctest::Contains("stage field"),
                         std::runtime_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(apply_config_file(c, (tmp.path / "nope.cfg").string()),
                         doctest::Contains("nope.cfg"), std::runtime_error);
  }
}

TEST_CASE("overrides: later wins, unknown keys rejected") {
  TempDir tmp("precedence");
  RunConfig c;
  apply_config_file(c, write_file(tmp.path / "c.cfg", "[train]\nlr = 0.5\n"));
  apply_override(c, "train.lr", "0.25");
  CHECK(c.train.adam.lr == 0.25);

  CHECK_THROWS_WITH_AS(apply_override(c, "train.decay", "1"), doctest::Contains("train.decay"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(apply_override(c, "lr", "1"), doctest::Contains("section.key"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(apply_override(c, "train.lr", "fast"), doctest::Contains("train.lr"),
                       std::runtime_error);
}

TEST_CASE("stage list syntax round-trips and accepts sparse records") {
  RunConfig c;
  apply_override(c, "network.stages",
                 "ratio=0.5,out=32,layers=2 ; global=true,out=64");
  REQUIRE(c.network.stages.size() == 2);
  CHECK(c.network.stages[0].pool_ratio == 0.5);
  CHECK(c.network.stages[0].pool_out == 32);
  CHECK(c.network.stages[0].layers == 2);
  CHECK_FALSE(c.network.stages[0].global_pool);
  CHECK(c.network.stages[1].global_pool);
  CHECK(c.network.stages[1].pool_out == 64);
  // unspecified fields keep their defaults
  CHECK(c.network.stages[0].pool_neighbors == StageSpec{}.pool_neighbors);

  // canonical form parses back to the same canonical form
  const SchemaEntry* stages = nullptr;
  for (const SchemaEntry& e : config_schema())
    if (e.section == "network" && e.key == "stages") stages = &e;
  REQUIRE(stages != nullptr);
  std::string canon = stages->get(c);
  RunConfig d;
  stages->set(d, canon);
  CHECK(stages->get(d) == canon);
}
