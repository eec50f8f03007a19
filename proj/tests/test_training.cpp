// Training-loop tests: metric oracles (hand-computed mIoU tables, normal-angle
// statistics), loop determinism and the lr=0 fixed point, NaN diagnostics,
// and voting semantics.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dpt/checkpoint.hpp"
#include "dpt/ops.hpp"
#include "dpt/training.hpp"

using namespace dpt;

namespace {

// Two-class, 64-point synthetic set small enough for fast loop tests.
Dataset tiny_dataset(uint64_t seed = 3) {
  SyntheticShapeSpec spec;
  spec.families = {"sphere", "box"};
  spec.points = 64;
  spec.jitter = 0.01;
  spec.train_per_class = 4;
  spec.test_per_class = 2;
  spec.seed = seed;
  return make_synthetic(spec);
}

NetworkConfig tiny_classifier() {
  NetworkConfig cfg;
  cfg.task = Task::Classification;
  cfg.points = 64;
  cfg.classes = 2;
  cfg.k = 4;
  cfg.groups = 2;
  cfg.expansion = 8;
  StageSpec s1;
  s1.pool_ratio = 0.5;
  s1.pool_radius = 0.4;
  s1.pool_neighbors = 8;
  s1.pool_out = 8;
  s1.layers = 1;
  s1.conv_radius = 0.5;
  s1.conv_neighbors = 6;
  StageSpec s2;
  s2.global_pool = true;
  s2.pool_neighbors = 0;
  s2.pool_out = 12;
  cfg.stages = {s1, s2};
  cfg.fc_dims = {8};
  return cfg;
}

TrainConfig tiny_train(size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.adam.lr = 1e-3;
  cfg.seed = 11;
  return cfg;
}

bool params_bitwise_equal(const ParamStore& a, const ParamStore& b) {
  if (a.params.size() != b.params.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    const Tensor& ta = a.params[i].tensor;
    const Tensor& tb = b.params[i].tensor;
    if (a.params[i].name != b.params[i].name || ta.numel() != tb.numel()) return false;
    for (size_t j = 0; j < ta.numel(); ++j)
      if (ta.data()[j] != tb.data()[j]) return false;
  }
  return true;
}

std::vector<Tensor> snapshot_params(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const Parameter& p : store.params) out.push_back(p.tensor.clone());
  return out;
}

}  // namespace

TEST_CASE("mIoU: perfect prediction scores 1 on both conventions") {
  std::vector<std::vector<int>> gt = {{0, 0, 1, 1}, {2, 3, 4}};
  std::vector<int> cls = {0, 1};
  std::vector<std::pair<int, int>> ranges = {{0, 2}, {2, 5}};
  auto [cm, im] = compute_miou(gt, gt, cls, ranges);
  CHECK(cm == 1.0);
  CHECK(im == 1.0);
}

TEST_CASE("mIoU: all-wrong single-part instance scores 0") {
  std::vector<std::vector<int>> pred = {{1, 1, 1}};
  std::vector<std::vector<int>> gt = {{0, 0, 0}};
  std::vector<int> cls = {0};
  std::vector<std::pair<int, int>> ranges = {{0, 1}};  // class 0 has the single part 0
  auto [cm, im] = compute_miou(pred, gt, cls, ranges);
  CHECK(cm == 0.0);
  CHECK(im == 0.0);
}

TEST_CASE("mIoU: crafted instances match the hand-computed table") {
  // A (class 0, parts {0,1}):  gt 0011, pred 0111
  //   part0 1/2, part1 2/3 -> IoU 7/12
  // B (class 1, parts {2,3,4}): gt 223, pred 233
  //   part2 1/2, part3 1/2, part4 absent -> 1 -> IoU 2/3
  // C (class 0): perfect -> IoU 1
  std::vector<std::vector<int>> pred = {{0, 1, 1, 1}, {2, 3, 3}, {0, 1}};
  std::vector<std::vector<int>> gt = {{0, 0, 1, 1}, {2, 2, 3}, {0, 1}};
  std::vector<int> cls = {0, 1, 0};
  std::vector<std::pair<int, int>> ranges = {{0, 2}, {2, 5}};
  auto [cm, im] = compute_miou(pred, gt, cls, ranges);
  CHECK(im == doctest::Approx((7.0 / 12 + 2.0 / 3 + 1.0) / 3).epsilon(1e-12));
  CHECK(cm == doctest::Approx(((7.0 / 12 + 1.0) / 2 + 2.0 / 3) / 2).epsilon(1e-12));

  CHECK_THROWS(compute_miou({}, {}, {}, ranges));                    // empty set
  CHECK_THROWS(compute_miou(pred, {{0}, {2}, {0}}, cls, ranges));    // size mismatch
  CHECK_THROWS(compute_miou({{0}}, {{0}}, {5}, ranges));             // bad class
}

TEST_CASE("normal-angle statistics: aligned, orthogonal, opposite, scaled") {
  auto pack = [](std::vector<double> v) {
    size_t n = v.size() / 3;
    Tensor t({1, 3, n});
    std::copy(v.begin(), v.end(), t.data());
    return t;
  };
  Tensor gt = pack({0, 1, 0,   /*x of 3 pts*/
                    0, 0, 0,   /*y*/
                    1, 0, 1}); /*z*/
  SUBCASE("identical normals") {
    NormalErrors e = normal_errors(gt, gt);
    CHECK(e.mean_angle_deg == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(e.mean_one_minus_cos == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(e.within_30deg == 1.0);
  }
  SUBCASE("scaling the prediction changes nothing") {
    Tensor scaled = gt.clone();
    for (size_t i = 0; i < scaled.numel(); ++i) scaled.data()[i] *= 2.5;
    NormalErrors e = normal_errors(scaled, gt);
    CHECK(e.mean_angle_deg == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(e.within_30deg == 1.0);
  }
  SUBCASE("orthogonal and opposite") {
    Tensor pred = pack({1, -1, 0,
                        0, 0, 0,
                        0, 0, 1});  // pt0 orthogonal, pt1 opposite, pt2 aligned
    NormalErrors e = normal_errors(pred, gt);
    CHECK(e.mean_angle_deg == doctest::Approx((90.0 + 180.0 + 0.0) / 3).epsilon(1e-9));
    CHECK(e.mean_one_minus_cos == doctest::Approx((1.0 + 2.0 + 0.0) / 3).epsilon(1e-12));
    CHECK(e.within_30deg == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
}

TEST_CASE("epoch log line format") {
  EpochLog e;
  e.epoch = 3;
  e.train_loss = 0.1234567;
  e.train_acc = 0.5;
  e.test_acc = 0.75;
  e.wall_seconds = 1.25;
  CHECK(format_epoch(e) == "3\t0.123457\t0.5000\t0.7500\t1.250");
}

TEST_CASE("lr=0 training leaves parameters bit-identical but updates statistics") {
  Dataset ds = tiny_dataset();
  auto net = build_network(tiny_classifier(), 21);
  std::vector<Tensor> before = snapshot_params(net->store);
  std::vector<double> stats_before;
  for (const Parameter& b : net->store.buffers)
    stats_before.insert(stats_before.end(), b.tensor.data(),
                        b.tensor.data() + b.tensor.numel());

  TrainConfig cfg = tiny_train(2);
  cfg.adam.lr = 0.0;
  train(*net, ds, cfg);

  for (size_t i = 0; i < before.size(); ++i)
    for (size_t j = 0; j < before[i].numel(); ++j)
      CHECK(net->store.params[i].tensor.data()[j] == before[i].data()[j]);

  std::vector<double> stats_after;
  for (const Parameter& b : net->store.buffers)
    stats_after.insert(stats_after.end(), b.tensor.data(), b.tensor.data() + b.tensor.numel());
  CHECK(stats_after != stats_before);  // training still ran forward passes
}

TEST_CASE("training is reproducible: identical runs, identical checkpoints") {
  Dataset ds = tiny_dataset();
  auto a = build_network(tiny_classifier(), 33);
  auto b = build_network(tiny_classifier(), 33);
  TrainConfig cfg = tiny_train(2);
  TrainResult ra = train(*a, ds, cfg);
  TrainResult rb = train(*b, ds, cfg);

  CHECK(params_bitwise_equal(a->store, b->store));
  REQUIRE(ra.log.size() == rb.log.size());
  for (size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].train_loss == rb.log[i].train_loss);
    CHECK(ra.log[i].train_acc == rb.log[i].train_acc);
    CHECK(ra.log[i].test_acc == rb.log[i].test_acc);
  }

  auto ckpt = [](Network& n, const std::string& path) {
    auto records = n.store.all_records();
    save_checkpoint(path, records);
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  std::string pa = "/tmp/dpt_train_repro_a.ckpt", pb = "/tmp/dpt_train_repro_b.ckpt";
  CHECK(ckpt(*a, pa) == ckpt(*b, pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("one optimizer step changes the loss") {
  Dataset ds = tiny_dataset();
  auto net = build_network(tiny_classifier(), 5);

  auto eval_loss = [&]() {
    std::vector<PointCloud> clouds;
    std::vector<int> labels;
    for (size_t i : ds.test_indices()) {
      clouds.push_back(ds.samples[i]);
      labels.push_back(ds.samples[i].label);
    }
    ForwardOptions opts;
    opts.all_neighbors = true;
    return softmax_cross_entropy(net->forward(clouds, opts), labels).item();
  };

  double before = eval_loss();
  TrainConfig cfg = tiny_train(1);
  train(*net, ds, cfg);
  double after = eval_loss();
  CHECK(before != after);
}

TEST_CASE("train emits one well-formed log line per epoch") {
  Dataset ds = tiny_dataset();
  auto net = build_network(tiny_classifier(), 8);
  TrainConfig cfg = tiny_train(3);
  std::ostringstream log;
  TrainResult r = train(*net, ds, cfg, &log);

  REQUIRE(r.log.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(r.log[i].epoch == i + 1);
    CHECK(std::isfinite(r.log[i].train_loss));
    CHECK(r.log[i].train_acc >= 0.0);
    CHECK(r.log[i].train_acc <= 1.0);
    CHECK(r.log[i].test_acc >= 0.0);
    CHECK(r.log[i].test_acc <= 1.0);
    CHECK(r.log[i].wall_seconds >= 0.0);
  }
  std::istringstream lines(log.str());
  std::string line;
  size_t count = 0;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    size_t epoch;
    double a, b, c, d;
    CHECK((ls >> epoch >> a >> b >> c >> d));
    ++count;
  }
  CHECK(count == 3);
  CHECK(r.final_test.per_class_accuracy.size() == 2);
}

TEST_CASE("non-finite loss aborts with the offending layer named") {
  Dataset ds = tiny_dataset();
  auto net = build_network(tiny_classifier(), 8);
  // Poison the terminal classifier layer: earlier layers are followed by
  // normalization + ReLU, which clamp the resulting NaNs back to finite
  // values, so only the last layer reliably propagates to the loss.
  net->fcs.back().lin.weight.data()[0] = std::numeric_limits<double>::infinity();
  TrainConfig cfg = tiny_train(1);
  CHECK_THROWS_WITH_AS(train(*net, ds, cfg), doctest::Contains("fc2"),
                       std::runtime_error);
}

TEST_CASE("voting with one identity-scale vote equals plain evaluation") {
  Dataset ds = tiny_dataset();
  auto net = build_network(tiny_classifier(), 13);
  TrainConfig cfg = tiny_train(1);
  train(*net, ds, cfg);

  Metrics plain = evaluate(*net, ds, 1);
  AugmentSpec identity;
  identity.scale_lo = identity.scale_hi = 1.0;
  identity.translate = 0.0;
  VotingResult vote = evaluate_voting(*net, ds, 1, Rng(99), identity);
  CHECK(vote.metrics.accuracy == plain.accuracy);
  for (size_t c = 0; c < 2; ++c)
    CHECK(vote.metrics.per_class_accuracy[c] == plain.per_class_accuracy[c]);
}

TEST_CASE("voting probabilities are convex and order-invariant") {
  Dataset ds = tiny_dataset();
  auto net = build_network(tiny_classifier(), 13);

  AugmentSpec scales;
  scales.scale_lo = 0.8;
  scales.scale_hi = 1.25;
  size_t n_test = ds.test_indices().size();
  VotingResult v = evaluate_voting(*net, ds, 5, Rng(7), scales, n_test);
  REQUIRE(v.probabilities.shape() == Shape{n_test, 2});
  for (size_t i = 0; i < n_test; ++i) {
    double sum = 0.0;
    for (size_t k = 0; k < 2; ++k) sum += v.probabilities.data()[i * 2 + k];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  // reverse the sample list (splits travel with their samples)
  Dataset rev = ds;
  std::reverse(rev.samples.begin(), rev.samples.end());
  std::reverse(rev.splits.begin(), rev.splits.end());
  VotingResult vr = evaluate_voting(*net, rev, 5, Rng(7), scales, n_test);
  CHECK(vr.metrics.accuracy == v.metrics.accuracy);
  for (size_t i = 0; i < n_test; ++i)
    for (size_t k = 0; k < 2; ++k)
      CHECK(vr.probabilities.data()[(n_test - 1 - i) * 2 + k] ==
            v.probabilities.data()[i * 2 + k]);
}

TEST_CASE("segmentation toy loop: point accuracy and mIoU are well-formed") {
  SyntheticShapeSpec spec;
  spec.families = {"box", "plane"};
  spec.points = 64;
  spec.jitter = 0.0;
  spec.train_per_class = 3;
  spec.test_per_class = 2;
  spec.seed = 5;
  Dataset ds = make_synthetic(spec);
  REQUIRE(ds.num_parts() == 10);  // 6 faces + 4 quadrants

  NetworkConfig cfg;
  cfg.task = Task::PartSegmentation;
  cfg.points = 64;
  cfg.classes = 10;
  cfg.k = 4;
  cfg.groups = 2;
  cfg.expansion = 8;
  StageSpec s1;
  s1.pool_ratio = 0.5;
  s1.pool_radius = 0.4;
  s1.pool_neighbors = 8;
  s1.pool_out = 8;
  s1.layers = 1;
  s1.conv_radius = 0.5;
  s1.conv_neighbors = 6;
  StageSpec s2 = s1;
  s2.pool_out = 12;
  cfg.stages = {s1, s2};
  cfg.fp_dims = {{12}, {10}};
  cfg.head_dims = {12};
  cfg.one_hot_dim = 2;
  auto net = build_network(cfg, 17);

  TrainConfig tc = tiny_train(1);
  TrainResult r = train(*net, ds, tc);
  CHECK(std::isfinite(r.log[0].train_loss));
  Metrics m = evaluate(*net, ds, 1);
  CHECK(m.accuracy >= 0.0);
  CHECK(m.accuracy <= 1.0);
  CHECK(m.class_miou >= 0.0);
  CHECK(m.class_miou <= 1.0);
  CHECK(m.instance_miou >= 0.0);
  CHECK(m.instance_miou <= 1.0);
}

TEST_CASE("normal-estimation toy loop: angle metrics are well-formed") {
  SyntheticShapeSpec spec;
  spec.families = {"sphere", "plane"};
  spec.points = 64;
  spec.jitter = 0.0;
  spec.train_per_class = 3;
  spec.test_per_class = 2;
  spec.seed = 9;
  Dataset ds = make_synthetic(spec);

  NetworkConfig cfg;
  cfg.task = Task::NormalEstimation;
  cfg.points = 64;
  cfg.classes = 2;
  cfg.k = 4;
  cfg.groups = 2;
  cfg.expansion = 8;
  StageSpec s1;
  s1.pool_ratio = 0.5;
  s1.pool_radius = 0.4;
  s1.pool_neighbors = 8;
  s1.pool_out = 8;
  s1.layers = 1;
  s1.conv_radius = 0.5;
  s1.conv_neighbors = 6;
  StageSpec s2 = s1;
  s2.pool_out = 12;
  cfg.stages = {s1, s2};
  cfg.fp_dims = {{12}, {10}};
  cfg.head_dims = {12};
  cfg.one_hot_dim = 2;
  auto net = build_network(cfg, 19);

  TrainConfig tc = tiny_train(1);
  TrainResult r = train(*net, ds, tc);
  CHECK(std::isfinite(r.log[0].train_loss));
  Metrics m = evaluate(*net, ds, 1);
  CHECK(m.mean_angle_deg >= 0.0);
  CHECK(m.mean_angle_deg <= 180.0);
  CHECK(m.mean_one_minus_cos >= 0.0);
  CHECK(m.mean_one_minus_cos <= 2.0);
  CHECK(m.accuracy >= 0.0);
  CHECK(m.accuracy <= 1.0);
}
