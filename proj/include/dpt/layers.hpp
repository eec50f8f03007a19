#pragma once
// Composite layers: shared-weight point convolutions over gathered
// neighborhoods, pooling transitions, feature propagation for decoders,
// and fully connected heads. Builders register parameters (and persistent
// normalizer state) into a ParamStore under hierarchical dotted names.

#include <string>
#include <vector>

#include "dpt/neighborhood.hpp"
#include "dpt/ops.hpp"
#include "dpt/optim.hpp"
#include "dpt/rng.hpp"

namespace dpt {

// Learnable parameters plus persistent non-learnable state of a model.
// `params` is what the optimizer visits; `buffers` holds running statistics
// that must survive a save/load round trip but receive no gradients.
struct ParamStore {
  std::vector<Parameter> params;
  std::vector<Parameter> buffers;

  Tensor add_param(const std::string& name, Tensor t);
  Tensor add_buffer(const std::string& name, Tensor t);
  // Checkpoint payload: params then buffers, each in registration order.
  std::vector<Parameter> all_records() const;
  size_t param_count() const;  // learnable scalars only
};

// Permutation-invariant aggregation over the trailing neighbor axis.
enum class Rho { Max, Avg, Sum };

// Composite ordering: PostNorm = transform -> normalize -> ReLU (default);
// PreNorm = normalize -> ReLU -> transform.
enum class Order { PostNorm, PreNorm };

Rho rho_from_string(const std::string& s);
std::string to_string(Rho rho);
Order order_from_string(const std::string& s);
std::string to_string(Order order);

// Reduce (B, C, N, M) -> (B, C, N) over the neighbor axis.
Tensor aggregate(const Tensor& x, Rho rho);

struct Linear {
  Tensor weight;  // (Co, Ci)
  Tensor bias;    // (Co)
  size_t in_channels = 0, out_channels = 0;
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

struct GroupedLinear {
  Tensor weight;  // (G, Co/G, Ci/G)
  Tensor bias;    // (Co)
  size_t in_channels = 0, out_channels = 0;
  int groups = 1;
  Tensor forward(const Tensor& x) const { return grouped_linear(x, weight, bias, groups); }
};

struct BatchNorm {
  Tensor gamma, beta;  // (C)
  BatchNormStats stats;
  size_t channels = 0;
  Tensor forward(const Tensor& x, bool training) {
    return batch_norm(x, gamma, beta, stats, training);
  }
};

Linear make_linear(size_t ci, size_t co, const std::string& name, ParamStore& store, Rng& rng);
GroupedLinear make_grouped_linear(size_t ci, size_t co, int groups, const std::string& name,
                                  ParamStore& store, Rng& rng);
BatchNorm make_batch_norm(size_t channels, const std::string& name, ParamStore& store);

// Single-layer point convolution: one shared SLP applied at every
// (center, neighbor) position, normalization, ReLU, then aggregation.
// Consumes gathered neighborhoods (B, Ci, N, M); produces (B, Co, N).
struct PConv {
  Linear slp;
  BatchNorm bn;
  Rho rho = Rho::Max;
  Order order = Order::PostNorm;
  Tensor forward(const Tensor& gathered, bool training);
};

// Enhanced point convolution: a grouped expansion SLP widens each position,
// aggregation collapses the neighbor axis, and a plain integration SLP fuses
// the groups back down; dropout regularizes the output.
struct EPConv {
  GroupedLinear phi;  // expansion, grouped
  BatchNorm phi_bn;
  Linear psi;  // integration, fuses groups
  BatchNorm psi_bn;
  Rho rho = Rho::Max;
  Order order = Order::PostNorm;
  double dropout_ratio = 0.2;
  Tensor forward(const Tensor& gathered, bool training, Rng& rng);
};

PConv make_pconv(size_t ci, size_t co, const std::string& name, ParamStore& store, Rng& rng,
                 Rho rho = Rho::Max, Order order = Order::PostNorm);
EPConv make_epconv(size_t ci, size_t expansion, size_t co, int groups, const std::string& name,
                   ParamStore& store, Rng& rng, Rho rho = Rho::Max,
                   Order order = Order::PostNorm, double dropout_ratio = 0.2);

// Feature propagation: inverse-distance interpolate coarse features onto the
// fine point set, concatenate skip features, fuse with an MLP where every
// layer is SLP + norm + ReLU. `dims` lists the per-layer output widths.
struct FPLayer {
  std::vector<Linear> slps;
  std::vector<BatchNorm> bns;
  Tensor forward(const Tensor& coarse, const std::vector<InterpPlan>& plans, const Tensor& skip,
                 bool training);
};
FPLayer make_fp_layer(size_t ci, const std::vector<size_t>& dims, const std::string& name,
                      ParamStore& store, Rng& rng);

// Fully connected block: linear, then norm + ReLU + dropout unless terminal.
// Terminal blocks emit raw scores. Works on (B, C) and (B, C, N) inputs.
struct FCLayer {
  Linear lin;
  BatchNorm bn;
  bool terminal = false;
  double dropout_ratio = 0.0;
  Tensor forward(const Tensor& x, bool training, Rng& rng);
};
FCLayer make_fc_layer(size_t ci, size_t co, bool terminal, double dropout_ratio,
                      const std::string& name, ParamStore& store, Rng& rng);

// Gather-then-convolve helpers shared by the encoder and the tests.
// `normalize_channels` recenters that many leading channels on the centroid
// (coordinate channels at ingestion; zero once features are learned).
Tensor pconv_apply(PConv& conv, const Tensor& feats, const std::vector<Neighborhood>& nbhd,
                   int normalize_channels, bool training);
Tensor epconv_apply(EPConv& conv, const Tensor& feats, const std::vector<Neighborhood>& nbhd,
                    bool training, Rng& rng);

}  // namespace dpt
