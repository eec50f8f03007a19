#pragma once

#include <vector>

#include "dpt/neighborhood.hpp"
#include "dpt/rng.hpp"
#include "dpt/tensor.hpp"

namespace dpt {

// Feature tensors are channels-first: (B, C) for flat vectors and (B, C, spatial...)
// for per-point maps. All ops record tape nodes when any input tracks gradients.

// --- elementwise --------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);

// --- linear algebra -----------------------------------------------------------
// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);

// Shared-weight 1x1 transform over every position: x (B, Ci, spatial...) with
// weight (Co, Ci) and bias (Co) -> (B, Co, spatial...). dim-2 inputs (B, Ci)
// are treated as a single position.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Grouped variant: weight (groups, Co/groups, Ci/groups); channel block g of the
// output sees only channel block g of the input. Weight count = Ci*Co/groups.
Tensor grouped_linear(const Tensor& x, const Tensor& w, const Tensor& b, int groups);

// --- shape --------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_channels(const std::vector<Tensor>& xs);  // concatenates axis 1
Tensor expand_spatial(const Tensor& x, size_t n);  // (B, C) -> (B, C, n); grad sums back

// --- reductions (axis removed from the output shape) ---------------------------
Tensor reduce_max(const Tensor& x, size_t axis);   // ties route grad to lowest index
Tensor reduce_mean(const Tensor& x, size_t axis);
Tensor reduce_sum(const Tensor& x, size_t axis);
Tensor sum_all(const Tensor& x);  // scalar

// --- neural-net primitives ------------------------------------------------------
struct BatchNormStats {
  Tensor running_mean, running_var;  // (C); shared-handle so checkpoints see updates
  double momentum = 0.1;
  double eps = 1e-5;
  BatchNormStats() = default;
  explicit BatchNormStats(size_t channels)
      : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, 1.0)) {}
};

// Normalizes over every non-channel axis (channel = axis 1). Training mode uses
// batch statistics (population variance) and updates the running estimates;
// evaluation mode uses the running estimates.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, bool training);

// Inverted dropout: keep probability (1-ratio), survivors scaled by 1/(1-ratio).
// Identity when not training or ratio == 0.
Tensor dropout(const Tensor& x, double ratio, bool training, Rng& rng);

// --- structured gathers ---------------------------------------------------------
// x (B, C, P) + per-sample neighborhoods -> (B, C, centers, width). The first
// `normalize_channels` channels have the centroid's value subtracted (used for
// coordinate channels); gradients scatter-add back (including the centroid term).
Tensor gather_and_normalize(const Tensor& x, const std::vector<Neighborhood>& nb,
                            int normalize_channels);

// coarse (B, C, Nc) -> fine (B, C, Nf) using fixed per-sample interpolation plans.
Tensor idw_interpolate(const Tensor& coarse, const std::vector<InterpPlan>& plans);

// --- losses ----------------------------------------------------------------------
// logits (B, K) with labels[B], or (B, K, spatial...) with labels[B*spatial]
// (row-major). Returns mean negative log-likelihood (scalar).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// pred and gt (B, 3, N); mean over points of 1 - <pred/||pred||, gt>, with an
// epsilon floor on ||pred||. gt rows are assumed unit length.
Tensor cosine_normal_loss(const Tensor& pred, const Tensor& gt);

// --- non-tape helpers ---------------------------------------------------------
// argmax over the channel axis; returns B (dim 2) or B*spatial (dim >2) entries.
std::vector<int> argmax_channels(const Tensor& logits);
// softmax over the channel axis, detached from the tape.
Tensor softmax_channels(const Tensor& logits);

}  // namespace dpt
