#pragma once
// Training loop, evaluation metrics (accuracy, mIoU, normal-angle error), and
// test-time voting.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dpt/data.hpp"
#include "dpt/networks.hpp"
#include "dpt/optim.hpp"

namespace dpt {

struct TrainConfig {
  size_t epochs = 30;
  size_t batch_size = 16;
  AdamConfig adam;      // constant learning rate
  AugmentSpec augment;  // per-sample train-time augmentation
  bool augment_enabled = true;
  uint64_t seed = 1;
  size_t votes = 10;  // >= 1; test-time voting passes (used by eval paths)
};

// Task-dependent quality summary. `accuracy` is top-1 for classification,
// per-point for segmentation, and the fraction of points within 30 degrees
// for normal estimation; the remaining fields are filled per task.
struct Metrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;                 // classification
  double class_miou = 0.0, instance_miou = 0.0;           // segmentation
  double mean_angle_deg = 0.0, mean_one_minus_cos = 0.0;  // normals
};

struct EpochLog {
  size_t epoch = 0;
  double train_loss = 0.0, train_acc = 0.0, test_acc = 0.0, wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  Metrics final_test;  // evaluation after the last epoch
};

// One log line: epoch \t train_loss \t train_acc \t test_acc \t wall_seconds.
std::string format_epoch(const EpochLog& e);

// Fixed-budget loop: per epoch shuffle, augment, forward, task loss, backward,
// Adam step, then a deterministic test-split evaluation. Identical (network,
// dataset, config) produce identical final parameters and running statistics.
// A non-finite loss aborts by replaying the offending batch with activation
// scanning enabled, so the error names the first non-finite layer. `log_to`,
// when set, receives each epoch line as it completes.
TrainResult train(Network& net, const Dataset& ds, const TrainConfig& cfg,
                  std::ostream* log_to = nullptr);

// Deterministic evaluation of one split (0 = train, 1 = test): dropout inert,
// running statistics, full sorted neighborhoods.
Metrics evaluate(Network& net, const Dataset& ds, int split, size_t batch_size = 16);

// Test-time voting (classification): vote v applies one random anisotropic
// scale — drawn from rng.fork(v), shared by every test cloud — then a
// deterministic evaluation pass; softmax probabilities accumulate across
// votes and predictions take the averaged-probability argmax. Because the
// scale depends only on the vote index, results are invariant to sample
// order and batching. Only the scale range of `scale_range` is used
// (translation is never applied), matching train-time scaling by default.
struct VotingResult {
  Metrics metrics;
  Tensor probabilities;          // (num_test, classes); rows sum to 1
  std::vector<int> predictions;  // argmax of averaged probabilities
};
VotingResult evaluate_voting(Network& net, const Dataset& ds, size_t votes, Rng rng,
                             const AugmentSpec& scale_range = {}, size_t batch_size = 16);

// Part-segmentation mIoU under the standard protocol. pred/gt hold one part id
// per point per instance; instance_class names each instance's object class;
// part_ranges gives each class's [begin, end) in the global part space. A part
// absent from both prediction and ground truth scores IoU 1. Returns
// (class mIoU, instance mIoU): instance mIoU averages over instances; class
// mIoU averages each represented class's instance mean, then across classes.
std::pair<double, double> compute_miou(const std::vector<std::vector<int>>& pred,
                                       const std::vector<std::vector<int>>& gt,
                                       const std::vector<int>& instance_class,
                                       const std::vector<std::pair<int, int>>& part_ranges);

// Angular statistics between predicted and unit ground-truth normals (B,3,N),
// using the signed cosine of the normalized prediction.
struct NormalErrors {
  double mean_angle_deg = 0.0;
  double mean_one_minus_cos = 0.0;
  double within_30deg = 0.0;  // fraction of points
};
NormalErrors normal_errors(const Tensor& pred, const Tensor& gt);

}  // namespace dpt
