#include "dpt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "dpt/common.hpp"
#include "dpt/ops.hpp"

namespace dpt {
namespace {

constexpr double kRadToDeg = 57.295779513082320877;

// Distinguishes flat-logit tasks from per-point ones for loss/metric routing.
bool per_point_task(const Network& net) { return !net.config.fp_dims.empty(); }

struct BatchData {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;      // class ids (flat tasks) or per-point part ids
  Tensor gt_normals;            // (B, 3, N) for normal estimation
};

BatchData assemble(const Network& net, const Dataset& ds, const std::vector<size_t>& order,
                   size_t begin, size_t end, const AugmentSpec* aug, Rng* rng) {
  BatchData b;
  bool per_point = per_point_task(net);
  bool normals = net.config.task == Task::NormalEstimation;
  size_t n = net.config.points;
  if (normals) b.gt_normals = Tensor({end - begin, 3, n});
  for (size_t i = begin; i < end; ++i) {
    PointCloud s = ds.samples[order[i]];
    if (aug) s = augment(s, *aug, *rng);
    if (normals) {
      DPT_CHECK(s.normals.defined(), "normal-estimation training needs per-point normals");
      std::copy_n(s.normals.data(), 3 * n, b.gt_normals.data() + (i - begin) * 3 * n);
    } else if (per_point) {
      DPT_CHECK(s.part_labels.size() == s.num_points(),
                "segmentation training needs per-point part labels");
      b.labels.insert(b.labels.end(), s.part_labels.begin(), s.part_labels.end());
    } else {
      b.labels.push_back(s.label);
    }
    b.clouds.push_back(std::move(s));
  }
  return b;
}

Tensor batch_loss(const Network& net, const Tensor& logits, const BatchData& b) {
  if (net.config.task == Task::NormalEstimation) return cosine_normal_loss(logits, b.gt_normals);
  return softmax_cross_entropy(logits, b.labels);
}

// Fraction of correct argmax predictions (flat or per-point).
double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  std::vector<int> pred = argmax_channels(logits);
  DPT_CHECK(pred.size() == labels.size(), "prediction/label count mismatch");
  size_t ok = 0;
  for (size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
  return double(ok) / double(pred.size());
}

}  // namespace

std::string format_epoch(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu\t%.6f\t%.4f\t%.4f\t%.3f", e.epoch, e.train_loss,
                e.train_acc, e.test_acc, e.wall_seconds);
  return buf;
}

NormalErrors normal_errors(const Tensor& pred, const Tensor& gt) {
  DPT_CHECK(pred.shape() == gt.shape() && pred.dim() == 3 && pred.size(1) == 3,
            "normal_errors expects matching (B, 3, N) tensors");
  size_t bsz = pred.size(0), n = pred.size(2);
  NormalErrors out;
  size_t count = 0;
  for (size_t b = 0; b < bsz; ++b)
    for (size_t i = 0; i < n; ++i) {
      double p[3], g[3];
      for (size_t c = 0; c < 3; ++c) {
        p[c] = pred.data()[(b * 3 + c) * n + i];
        g[c] = gt.data()[(b * 3 + c) * n + i];
      }
      double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      if (norm < 1e-12) norm = 1e-12;
      double cosv = (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]) / norm;
      cosv = std::clamp(cosv, -1.0, 1.0);
      double angle = std::acos(cosv) * kRadToDeg;
      out.mean_angle_deg += angle;
      out.mean_one_minus_cos += 1.0 - cosv;
      out.within_30deg += angle <= 30.0 ? 1.0 : 0.0;
      ++count;
    }
  out.mean_angle_deg /= double(count);
  out.mean_one_minus_cos /= double(count);
  out.within_30deg /= double(count);
  return out;
}

std::pair<double, double> compute_miou(const std::vector<std::vector<int>>& pred,
                                       const std::vector<std::vector<int>>& gt,
                                       const std::vector<int>& instance_class,
                                       const std::vector<std::pair<int, int>>& part_ranges) {
  DPT_CHECK(!pred.empty(), "mIoU: empty prediction set");
  DPT_CHECK(pred.size() == gt.size() && pred.size() == instance_class.size(),
            "mIoU: prediction/label/class counts differ");
  double inst_sum = 0.0;
  std::map<int, std::pair<double, size_t>> per_class;  // class -> (iou sum, count)
  for (size_t i = 0; i < pred.size(); ++i) {
    DPT_CHECK(pred[i].size() == gt[i].size() && !pred[i].empty(),
              "mIoU: instance " << i << " point counts differ or are zero");
    int cls = instance_class[i];
    DPT_CHECK(cls >= 0 && size_t(cls) < part_ranges.size(),
              "mIoU: instance " << i << " has invalid class " << cls);
    auto [pb, pe] = part_ranges[size_t(cls)];
    double iou_sum = 0.0;
    for (int part = pb; part < pe; ++part) {
      size_t inter = 0, uni = 0;
      for (size_t j = 0; j < pred[i].size(); ++j) {
        bool in_pred = pred[i][j] == part, in_gt = gt[i][j] == part;
        inter += in_pred && in_gt;
        uni += in_pred || in_gt;
      }
      iou_sum += uni == 0 ? 1.0 : double(inter) / double(uni);  // absent part: perfect
    }
    double iou = iou_sum / double(pe - pb);
    inst_sum += iou;
    auto& slot = per_class[cls];
    slot.first += iou;
    slot.second += 1;
  }
  double class_sum = 0.0;
  for (auto& [cls, slot] : per_class) class_sum += slot.first / double(slot.second);
  return {class_sum / double(per_class.size()), inst_sum / double(pred.size())};
}

Metrics evaluate(Network& net, const Dataset& ds, int split, size_t batch_size) {
  DPT_CHECK(batch_size >= 1, "evaluate: batch size must be positive");
  std::vector<size_t> idx = split == 0 ? ds.train_indices() : ds.test_indices();
  DPT_CHECK(!idx.empty(), "evaluate: split " << split << " is empty");

  Metrics m;
  bool per_point = per_point_task(net);
  bool normals = net.config.task == Task::NormalEstimation;
  ForwardOptions opts;
  opts.all_neighbors = true;

  size_t correct = 0, total = 0;
  std::vector<size_t> class_hits(ds.num_classes(), 0), class_counts(ds.num_classes(), 0);
  std::vector<std::vector<int>> seg_pred, seg_gt;
  std::vector<int> seg_class;
  double angle_sum = 0.0, omc_sum = 0.0, within_sum = 0.0;
  size_t normal_batches_points = 0;

  for (size_t at = 0; at < idx.size(); at += batch_size) {
    size_t hi = std::min(idx.size(), at + batch_size);
    BatchData b = assemble(net, ds, idx, at, hi, nullptr, nullptr);
    Tensor logits = net.forward(b.clouds, opts);
    if (normals) {
      NormalErrors e = normal_errors(logits, b.gt_normals);
      size_t pts = (hi - at) * net.config.points;
      angle_sum += e.mean_angle_deg * double(pts);
      omc_sum += e.mean_one_minus_cos * double(pts);
      within_sum += e.within_30deg * double(pts);
      normal_batches_points += pts;
      continue;
    }
    std::vector<int> pred = argmax_channels(logits);
    for (size_t i = 0; i < pred.size(); ++i) {
      correct += pred[i] == b.labels[i];
      ++total;
    }
    if (per_point) {
      size_t n = net.config.points;
      for (size_t s = 0; s < hi - at; ++s) {
        seg_pred.emplace_back(pred.begin() + long(s * n), pred.begin() + long((s + 1) * n));
        seg_gt.emplace_back(b.labels.begin() + long(s * n), b.labels.begin() + long((s + 1) * n));
        seg_class.push_back(b.clouds[s].label);
      }
    } else {
      for (size_t i = 0; i < pred.size(); ++i) {
        size_t cls = size_t(b.labels[i]);
        ++class_counts[cls];
        class_hits[cls] += pred[i] == b.labels[i];
      }
    }
  }

  if (normals) {
    m.mean_angle_deg = angle_sum / double(normal_batches_points);
    m.mean_one_minus_cos = omc_sum / double(normal_batches_points);
    m.accuracy = within_sum / double(normal_batches_points);
    return m;
  }
  m.accuracy = double(correct) / double(total);
  if (per_point) {
    std::vector<std::pair<int, int>> ranges = ds.part_ranges;
    if (ranges.empty())  // no class structure: one global range per class
      ranges.assign(ds.num_classes(), {0, int(ds.num_parts())});
    auto [cm, im] = compute_miou(seg_pred, seg_gt, seg_class, ranges);
    m.class_miou = cm;
    m.instance_miou = im;
  } else {
    m.per_class_accuracy.resize(ds.num_classes(), 0.0);
    for (size_t c = 0; c < ds.num_classes(); ++c)
      if (class_counts[c] > 0)
        m.per_class_accuracy[c] = double(class_hits[c]) / double(class_counts[c]);
  }
  return m;
}

TrainResult train(Network& net, const Dataset& ds, const TrainConfig& cfg, std::ostream* log_to) {
  DPT_CHECK(cfg.votes >= 1, "vote count must be >= 1");
  DPT_CHECK(cfg.epochs >= 1, "epoch count must be >= 1");
  DPT_CHECK(cfg.batch_size >= 1, "batch size must be >= 1");
  std::vector<size_t> order = ds.train_indices();
  DPT_CHECK(!order.empty(), "training split is empty");
  DPT_CHECK(!ds.test_indices().empty(), "test split is empty");

  Adam adam(net.store.params, cfg.adam);
  Rng rng(cfg.seed);
  TrainResult result;

  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0, acc_sum = 0.0;
    size_t seen = 0;

    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      size_t hi = std::min(order.size(), at + cfg.batch_size);
      BatchData b = assemble(net, ds, order, at, hi,
                             cfg.augment_enabled ? &cfg.augment : nullptr, &rng);
      Rng replay = rng;  // covers the fps draw and all in-forward randomness
      ForwardOptions opts;
      opts.training = true;
      opts.fps_seed = int(rng.uniform_int(int64_t(net.config.points)));
      opts.rng = &rng;

      Tensor logits = net.forward(b.clouds, opts);
      Tensor loss = batch_loss(net, logits, b);
      double lval = loss.item();
      if (!std::isfinite(lval)) {
        // replay the identical batch with scanning on: the throw names the layer
        ForwardOptions scan = opts;
        scan.nan_check = true;
        scan.fps_seed = int(replay.uniform_int(int64_t(net.config.points)));
        scan.rng = &replay;
        net.forward(b.clouds, scan);
        DPT_CHECK(false, "non-finite loss (" << lval << ") not reproduced by activation scan");
      }

      adam.zero_grad();
      backward(loss);
      adam.step();

      size_t bsz = hi - at;
      loss_sum += lval * double(bsz);
      if (net.config.task == Task::NormalEstimation)
        acc_sum += normal_errors(logits, b.gt_normals).within_30deg * double(bsz);
      else
        acc_sum += batch_accuracy(logits, b.labels) * double(bsz);
      seen += bsz;
    }

    Metrics test = evaluate(net, ds, 1, cfg.batch_size);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / double(seen);
    log.train_acc = acc_sum / double(seen);
    log.test_acc = test.accuracy;
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    result.final_test = test;
    if (log_to) *log_to << format_epoch(log) << std::endl;
  }
  return result;
}

VotingResult evaluate_voting(Network& net, const Dataset& ds, size_t votes, Rng rng,
                             const AugmentSpec& scale_range, size_t batch_size) {
  DPT_CHECK(votes >= 1, "vote count must be >= 1");
  DPT_CHECK(net.config.task == Task::Classification || !per_point_task(net),
            "voting applies to whole-cloud classification");
  std::vector<size_t> idx = ds.test_indices();
  DPT_CHECK(!idx.empty(), "evaluate_voting: test split is empty");
  size_t K = net.config.out_channels();

  VotingResult out;
  out.probabilities = Tensor::zeros({idx.size(), K});
  ForwardOptions opts;
  opts.all_neighbors = true;

  AugmentSpec scale_only = scale_range;
  scale_only.translate = 0.0;
  for (size_t v = 0; v < votes; ++v) {
    Rng vote_rng = rng.fork(v);
    for (size_t at = 0; at < idx.size(); at += batch_size) {
      size_t hi = std::min(idx.size(), at + batch_size);
      std::vector<PointCloud> clouds;
      for (size_t i = at; i < hi; ++i) {
        Rng sample_rng = vote_rng;  // same transform for every cloud in this vote
        clouds.push_back(augment(ds.samples[idx[i]], scale_only, sample_rng));
      }
      Tensor probs = softmax_channels(net.forward(clouds, opts));
      for (size_t i = at; i < hi; ++i)
        for (size_t k = 0; k < K; ++k)
          out.probabilities.data()[i * K + k] += probs.data()[(i - at) * K + k];
    }
  }
  for (size_t i = 0; i < out.probabilities.numel(); ++i)
    out.probabilities.data()[i] /= double(votes);

  out.predictions.resize(idx.size());
  size_t correct = 0;
  std::vector<size_t> class_hits(ds.num_classes(), 0), class_counts(ds.num_classes(), 0);
  for (size_t i = 0; i < idx.size(); ++i) {
    size_t best = 0;
    for (size_t k = 1; k < K; ++k)
      if (out.probabilities.data()[i * K + k] > out.probabilities.data()[i * K + best]) best = k;
    out.predictions[i] = int(best);
    int label = ds.samples[idx[i]].label;
    correct += int(best) == label;
    ++class_counts[size_t(label)];
    class_hits[size_t(label)] += int(best) == label;
  }
  out.metrics.accuracy = double(correct) / double(idx.size());
  out.metrics.per_class_accuracy.resize(ds.num_classes(), 0.0);
  for (size_t c = 0; c < ds.num_classes(); ++c)
    if (class_counts[c] > 0)
      out.metrics.per_class_accuracy[c] = double(class_hits[c]) / double(class_counts[c]);
  return out;
}

}  // namespace dpt
