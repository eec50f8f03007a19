#pragma once
// Declarative network builders (classification / part segmentation / normal
// estimation plus ablation variants), the built network with its batched
// forward pass, and the parameter / FLOP accountant.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dpt/geometry.hpp"
#include "dpt/layers.hpp"

namespace dpt {

enum class Task { Classification, PartSegmentation, NormalEstimation, Custom };

// How layers inside a stage consume their predecessors:
//   Dense          each layer reads the concat of the stage input and every
//                  earlier layer output (growth k per layer);
//   LayerByLayer   each layer reads only the previous output (plain chain of
//                  single-SLP convolutions at the matched stage width);
//   ConcatAtEnd    chain as above, but the stage output concatenates the pool
//                  output and every layer output.
enum class Connectivity { Dense, LayerByLayer, ConcatAtEnd };

Task task_from_string(const std::string& s);
std::string to_string(Task t);
Connectivity connectivity_from_string(const std::string& s);
std::string to_string(Connectivity c);

// One encoder stage: a pooling transition followed by `layers` convolutions
// at the pooled resolution.
struct StageSpec {
  double pool_ratio = 0.25;  // fraction of incoming points kept (1.0 = keep all)
  bool global_pool = false;  // single output position convolving every point
  double pool_radius = 0.25;
  int pool_neighbors = 64;  // 0 in global stages: use every point
  size_t pool_out = 96;     // pooling convolution output width
  int layers = 0;           // convolutions after the pool
  double conv_radius = 0.2;
  int conv_neighbors = 32;
  bool dense = true;  // stage-placement ablation: false = chain inside a dense net
};

struct NetworkConfig {
  Task task = Task::Classification;
  size_t points = 1024;   // expected input points per sample
  size_t classes = 40;    // classes (classification) or parts (segmentation)
  size_t k = 24;          // per-layer growth width
  int groups = 2;         // expansion SLP group count
  size_t expansion = 96;  // expansion SLP output width (4k in the presets)
  Connectivity connectivity = Connectivity::Dense;
  Rho rho = Rho::Max;
  Order order = Order::PostNorm;
  bool knn = false;  // k-nearest-neighbor neighborhoods instead of spherical
  double conv_dropout = 0.2;
  double fc_dropout = 0.5;
  std::vector<StageSpec> stages;
  std::vector<size_t> fc_dims = {512, 256};  // classification head hidden widths
  // Decoder (per-point tasks): one entry per encoder stage, coarse-to-fine;
  // each entry lists that propagation layer's MLP widths.
  std::vector<std::vector<size_t>> fp_dims;
  std::vector<size_t> head_dims;  // per-point head hidden widths
  double head_dropout = 0.5;
  size_t one_hot_dim = 0;  // category one-hot appended before the head
  int interp_neighbors = 3;

  size_t out_channels() const { return task == Task::NormalEstimation ? 3 : classes; }
};

// Static per-layer record assembled at build time; drives cost accounting and
// the golden shape checks. `centers`/`neighbors` describe where the shared SLP
// applies for a single sample at the configured input size.
struct LayerInfo {
  std::string name;
  std::string kind;  // input|ppool|global_pool|epconv|pconv|stage_out|fp|fc
  size_t in_channels = 0, out_channels = 0;
  size_t out_points = 0;
  size_t centers = 0, neighbors = 0;
  size_t expansion = 0;
  int groups = 1;
  std::vector<size_t> mlp_dims;  // fp layers
  size_t interp_k = 0;           // fp layers
  bool terminal_fc = false;
};

struct ForwardOptions {
  bool training = false;
  bool all_neighbors = false;  // deterministic neighborhoods (sorted, unsampled)
  int fps_seed = 0;            // start index for farthest point sampling
  bool nan_check = false;      // scan every layer output, name the first offender
  Rng* rng = nullptr;          // neighbor subsampling + dropout
};

struct BuiltStage {
  StageSpec spec;
  bool dense = false;           // dense concat growth
  bool concat_at_end = false;   // chain with concatenated stage output
  bool use_epconv = true;       // chains in ablation baselines use plain convs
  PConv pool;
  std::vector<EPConv> convs;    // when use_epconv
  std::vector<PConv> chain;     // when !use_epconv
  size_t in_points = 0, out_points = 0;
  size_t in_channels = 0, out_channels = 0;
};

class Network {
 public:
  NetworkConfig config;
  ParamStore store;
  std::vector<BuiltStage> stages;
  std::vector<FPLayer> fps;
  std::vector<FCLayer> fcs;
  std::vector<LayerInfo> layers;  // accounting/golden-shape records, in order

  // Batched forward. Every cloud must hold exactly config.points points and
  // carry a label when one-hot concatenation is configured. Returns logits:
  // (B, K) classification, (B, K, N) segmentation, (B, 3, N) normals.
  Tensor forward(const std::vector<PointCloud>& batch, const ForwardOptions& opts);

  // (name, out_channels, out_points) for every layer plus stage outputs;
  // out_points == 0 marks flat (B, C) rows.
  struct ShapeRow {
    std::string name;
    size_t channels = 0, points = 0;
  };
  std::vector<ShapeRow> shape_table() const;

  size_t param_count() const { return store.param_count(); }
};

// Deterministic build: identical (config, seed) produce identical parameter
// names, shapes, and initial values.
std::unique_ptr<Network> build_network(const NetworkConfig& config, uint64_t seed);

// --- preset configurations -----------------------------------------------------

NetworkConfig classification_config(size_t k = 24, int groups = 2, size_t classes = 40,
                                    Connectivity connectivity = Connectivity::Dense);
NetworkConfig segmentation_config(size_t k = 24, int groups = 2, size_t parts = 50,
                                  size_t one_hot_dim = 16);
NetworkConfig normal_estimation_config(size_t k = 24, int groups = 2, size_t one_hot_dim = 40);

// Classification network scaled to L pooling+convolution layers (L >= 5).
// The block layer budget L-3 is split with stage 2 taking the larger share;
// L=11 reproduces classification_config exactly. The shallowest preset also
// pools more aggressively so its runtime cost drops proportionally.
NetworkConfig depth_preset(int L, size_t k = 24, int groups = 2, size_t classes = 40);

// --- cost accounting -------------------------------------------------------------

struct CostRow {
  std::string name;
  std::string kind;
  size_t params = 0;         // learnable scalars
  size_t linear_params = 0;  // weight + bias portion
  size_t bn_params = 0;      // normalizer affine portion
  double flops = 0.0;        // evaluation-mode forward, one sample
  size_t out_channels = 0, out_points = 0;
};

struct CostBreakdown {
  double expansion_slp = 0.0;    // grouped/pooling transforms at neighbor positions
  double integration_slp = 0.0;  // per-center fusion transforms
  double norm = 0.0;
  double fc = 0.0;
  double other = 0.0;  // activations, aggregation, interpolation
  double total() const { return expansion_slp + integration_slp + norm + fc + other; }
};

struct CostReport {
  std::vector<CostRow> rows;
  CostRow total;  // name "total"; params/flops are sums of rows
  CostBreakdown flop_breakdown;
};

// Exact learnable-scalar census (FLOP fields zero).
CostReport count_params(const Network& net);
// Parameter census plus a deterministic FLOP tally for one n_points sample.
// Convention (stated in reports): one multiply-accumulate = 2 FLOPs; SLPs cost
// 2*Ci*Co + Co per position and run at centers*neighbors positions (grouped:
// 2*Ci*Co/groups + Co); normalization costs 2 per element (evaluation affine),
// activations 1 per element, aggregation M-1 per output element, interpolation
// 2*k per element; dropout is free in evaluation mode.
CostReport count_flops(const Network& net, size_t n_points);

}  // namespace dpt
