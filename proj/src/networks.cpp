// Network builders, the batched forward pass, and preset configurations.
#include "dpt/networks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpt/ops.hpp"

namespace dpt {

Task task_from_string(const std::string& s) {
  if (s == "classification") return Task::Classification;
  if (s == "part_segmentation") return Task::PartSegmentation;
  if (s == "normal_estimation") return Task::NormalEstimation;
  if (s == "custom") return Task::Custom;
  fail("unknown task '" + s + "'");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::Classification: return "classification";
    case Task::PartSegmentation: return "part_segmentation";
    case Task::NormalEstimation: return "normal_estimation";
    case Task::Custom: return "custom";
  }
  fail("invalid task enum");
}

Connectivity connectivity_from_string(const std::string& s) {
  if (s == "dense") return Connectivity::Dense;
  if (s == "layer_by_layer" || s == "layer") return Connectivity::LayerByLayer;
  if (s == "concat_at_end" || s == "concat_end") return Connectivity::ConcatAtEnd;
  fail("unknown connectivity '" + s + "' (expected dense|layer|concat_end)");
}

std::string to_string(Connectivity c) {
  switch (c) {
    case Connectivity::Dense: return "dense";
    case Connectivity::LayerByLayer: return "layer_by_layer";
    case Connectivity::ConcatAtEnd: return "concat_at_end";
  }
  fail("invalid connectivity enum");
}

namespace {

size_t pooled_count(size_t pts, const StageSpec& s) {
  if (s.global_pool) return 1;
  double r = s.pool_ratio;
  DPT_CHECK(r > 0.0 && r <= 1.0, "pool_ratio must lie in (0, 1], got " << r);
  auto out = size_t(std::llround(double(pts) * r));
  DPT_CHECK(out >= 1 && out <= pts, "pooling " << pts << " points by ratio " << r
                                               << " yields invalid count " << out);
  return out;
}

}  // namespace

std::unique_ptr<Network> build_network(const NetworkConfig& config, uint64_t seed) {
  DPT_CHECK(!config.stages.empty(), "network needs at least one stage");
  DPT_CHECK(config.k > 0, "growth width k must be positive");
  DPT_CHECK(config.points > 0, "input point count must be positive");
  if (config.task == Task::Classification)
    DPT_CHECK(config.classes >= 2, "classification needs at least 2 classes");
  bool per_point = config.task == Task::PartSegmentation || config.task == Task::NormalEstimation ||
                   (config.task == Task::Custom && !config.fp_dims.empty());
  if (per_point)
    DPT_CHECK(config.fp_dims.size() == config.stages.size(),
              "per-point decoder needs one propagation layer per stage ("
                  << config.stages.size() << "), got " << config.fp_dims.size());

  auto net = std::make_unique<Network>();
  net->config = config;
  Rng rng(seed);

  std::vector<size_t> level_ch = {3};
  std::vector<size_t> level_pts = {config.points};

  net->layers.push_back(
      LayerInfo{"input", "input", 0, 3, config.points, 0, 0, 0, 1, {}, 0, false});

  size_t ch = 3, pts = config.points;
  for (size_t si = 0; si < config.stages.size(); ++si) {
    const StageSpec& s = config.stages[si];
    std::string sname = "stage" + std::to_string(si + 1);
    BuiltStage bs;
    bs.spec = s;
    bs.in_points = pts;
    bs.in_channels = ch;
    bs.dense = config.connectivity == Connectivity::Dense && s.dense;
    bs.concat_at_end = config.connectivity == Connectivity::ConcatAtEnd;
    bs.use_epconv = config.connectivity == Connectivity::Dense;

    size_t out_pts = pooled_count(pts, s);
    size_t pool_nbrs = s.global_pool ? pts : size_t(s.pool_neighbors);
    DPT_CHECK(pool_nbrs >= 1, "pool_neighbors must be positive");
    bs.pool = make_pconv(ch, s.pool_out, sname + ".pool", net->store, rng, config.rho,
                         config.order);
    net->layers.push_back(LayerInfo{sname + ".pool", s.global_pool ? "global_pool" : "ppool", ch,
                                    s.pool_out, out_pts, out_pts, pool_nbrs, 0, 1, {}, 0, false});
    pts = out_pts;
    ch = s.pool_out;

    // matched chain width: what the dense stage would emit
    size_t chain_w = s.pool_out + size_t(s.layers) * config.k;
    for (int l = 0; l < s.layers; ++l) {
      std::string cname = sname + ".conv" + std::to_string(l + 1);
      size_t ci, co;
      if (bs.dense) {
        ci = s.pool_out + size_t(l) * config.k;
        co = config.k;
      } else {
        ci = l == 0 ? s.pool_out : chain_w;
        co = chain_w;
      }
      if (bs.use_epconv) {
        bs.convs.push_back(make_epconv(ci, config.expansion, co, config.groups, cname, net->store,
                                       rng, config.rho, config.order, config.conv_dropout));
        net->layers.push_back(LayerInfo{cname, "epconv", ci, co, pts, pts,
                                        size_t(s.conv_neighbors), config.expansion, config.groups,
                                        {}, 0, false});
      } else {
        bs.chain.push_back(
            make_pconv(ci, co, cname, net->store, rng, config.rho, config.order));
        net->layers.push_back(LayerInfo{cname, "pconv", ci, co, pts, pts,
                                        size_t(s.conv_neighbors), 0, 1, {}, 0, false});
      }
    }

    if (bs.dense || bs.concat_at_end)
      ch = s.pool_out + size_t(s.layers) * (bs.dense ? config.k : chain_w);
    else if (s.layers > 0)
      ch = chain_w;
    bs.out_points = pts;
    bs.out_channels = ch;
    if (s.layers > 0)
      net->layers.push_back(
          LayerInfo{sname + ".output", "stage_out", ch, ch, pts, 0, 0, 0, 1, {}, 0, false});
    net->stages.push_back(std::move(bs));
    level_ch.push_back(ch);
    level_pts.push_back(pts);
  }

  if (per_point) {
    size_t S = config.stages.size();
    size_t cur = level_ch[S];
    for (size_t i = 1; i <= S; ++i) {
      size_t fine = S - i;
      size_t in_ch = cur + level_ch[fine];
      const auto& dims = config.fp_dims[i - 1];
      DPT_CHECK(!dims.empty(), "propagation layer " << i << " needs at least one width");
      std::string fname = "fp" + std::to_string(i);
      net->fps.push_back(make_fp_layer(in_ch, dims, fname, net->store, rng));
      LayerInfo info{fname, "fp", in_ch, dims.back(), level_pts[fine], level_pts[fine], 0, 0, 1,
                     dims, size_t(config.interp_neighbors), false};
      info.expansion = cur;  // interpolated channel count (cost accounting)
      net->layers.push_back(info);
      cur = dims.back();
    }
    size_t in = cur + config.one_hot_dim;
    size_t fci = 0;
    for (size_t hd : config.head_dims) {
      std::string fname = "fc" + std::to_string(++fci);
      net->fcs.push_back(
          make_fc_layer(in, hd, false, config.head_dropout, fname, net->store, rng));
      net->layers.push_back(
          LayerInfo{fname, "fc", in, hd, level_pts[0], level_pts[0], 0, 0, 1, {}, 0, false});
      in = hd;
    }
    std::string fname = "fc" + std::to_string(++fci);
    size_t out = config.out_channels();
    net->fcs.push_back(make_fc_layer(in, out, true, 0.0, fname, net->store, rng));
    net->layers.push_back(
        LayerInfo{fname, "fc", in, out, level_pts[0], level_pts[0], 0, 0, 1, {}, 0, true});
  } else {
    DPT_CHECK(config.stages.back().global_pool,
              "classification networks must end in a global pooling stage");
    size_t in = ch;
    size_t fci = 0;
    for (size_t hd : config.fc_dims) {
      std::string fname = "fc" + std::to_string(++fci);
      net->fcs.push_back(make_fc_layer(in, hd, false, config.fc_dropout, fname, net->store, rng));
      net->layers.push_back(LayerInfo{fname, "fc", in, hd, 0, 1, 0, 0, 1, {}, 0, false});
      in = hd;
    }
    std::string fname = "fc" + std::to_string(++fci);
    net->fcs.push_back(make_fc_layer(in, config.classes, true, 0.0, fname, net->store, rng));
    net->layers.push_back(
        LayerInfo{fname, "fc", in, config.classes, 0, 1, 0, 0, 1, {}, 0, true});
  }
  return net;
}

// --- forward pass ----------------------------------------------------------------

namespace {

// Pads every table to the batch-wide maximum width by repeating the row's
// centroid, mirroring how underfull balls are padded within one sample.
void equalize_widths(std::vector<Neighborhood>& nbs) {
  int w = 0;
  for (const Neighborhood& n : nbs) w = std::max(w, n.width);
  for (Neighborhood& n : nbs) {
    if (n.width == w) continue;
    std::vector<int32_t> idx(size_t(n.centers) * size_t(w));
    for (int i = 0; i < n.centers; ++i) {
      const int32_t* src = n.idx.data() + size_t(i) * size_t(n.width);
      int32_t* dst = idx.data() + size_t(i) * size_t(w);
      std::copy(src, src + n.width, dst);
      std::fill(dst + n.width, dst + w, n.centroid[size_t(i)]);
    }
    n.idx = std::move(idx);
    n.width = w;
  }
}

void scan_finite(const Tensor& t, const std::string& name, bool enabled) {
  if (!enabled) return;
  const double* d = t.data();
  for (size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(d[i]))
      fail("non-finite activation first produced by layer '" + name + "'");
}

Tensor gather_coords(const Tensor& coords, const std::vector<int32_t>& centers) {
  Tensor out({3, centers.size()});
  const double* src = coords.data();
  double* dst = out.data();
  size_t n = coords.size(1);
  for (size_t c = 0; c < 3; ++c)
    for (size_t i = 0; i < centers.size(); ++i) dst[c * centers.size() + i] = src[c * n + size_t(centers[i])];
  return out;
}

}  // namespace

Tensor Network::forward(const std::vector<PointCloud>& batch, const ForwardOptions& opts) {
  size_t B = batch.size();
  DPT_CHECK(B > 0, "forward: empty batch");
  size_t N = config.points;
  for (const PointCloud& pc : batch)
    DPT_CHECK(pc.num_points() == N,
              "forward: expected " << N << " points per cloud, got " << pc.num_points());
  if (opts.training)
    DPT_CHECK(opts.rng != nullptr, "forward: training mode needs an rng (dropout)");
  Rng scratch(0);  // never consulted: only dropout uses it and only in training
  Rng& drop_rng = opts.rng ? *opts.rng : scratch;

  // level 0: coordinates are the features
  std::vector<Tensor> coords(B);
  Tensor feats({B, 3, N});
  for (size_t b = 0; b < B; ++b) {
    DPT_CHECK(batch[b].coords.dim() == 2 && batch[b].coords.size(0) == 3,
              "forward: cloud coords must be (3, N)");
    coords[b] = batch[b].coords;
    std::copy_n(batch[b].coords.data(), 3 * N, feats.data() + b * 3 * N);
  }
  int norm_ch = 3;

  std::vector<Tensor> level_feats = {feats};
  std::vector<std::vector<Tensor>> level_coords = {coords};

  size_t pts = N;
  for (size_t si = 0; si < stages.size(); ++si) {
    BuiltStage& bs = stages[si];
    std::string sname = "stage" + std::to_string(si + 1);
    const StageSpec& s = bs.spec;

    // pooling geometry
    std::vector<Neighborhood> nbs(B);
    std::vector<Tensor> new_coords(B);
    size_t out_pts = bs.out_points;
    for (size_t b = 0; b < B; ++b) {
      if (s.global_pool) {
        Neighborhood n;
        n.centers = 1;
        n.width = int(pts);
        n.centroid = {0};
        n.idx.resize(pts);
        std::iota(n.idx.begin(), n.idx.end(), 0);
        nbs[b] = std::move(n);
        new_coords[b] = gather_coords(coords[b], {0});
      } else {
        int seed = si == 0 ? opts.fps_seed : 0;
        std::vector<int32_t> centers = farthest_point_sample(coords[b], int(out_pts), seed);
        if (config.knn)
          nbs[b] = knn_query(coords[b], centers, s.pool_neighbors);
        else
          nbs[b] = ball_query(coords[b], centers,
                              BallQuerySpec{s.pool_radius, s.pool_neighbors, opts.all_neighbors},
                              opts.rng);
        new_coords[b] = gather_coords(coords[b], centers);
      }
    }
    equalize_widths(nbs);
    Tensor h = pconv_apply(bs.pool, feats, nbs, norm_ch, opts.training);
    scan_finite(h, sname + ".pool", opts.nan_check);
    norm_ch = 0;
    coords = std::move(new_coords);
    pts = out_pts;

    // convolutions at the pooled resolution
    std::vector<Tensor> outs = {h};
    Tensor cur = h;
    std::vector<int32_t> all_centers(pts);
    std::iota(all_centers.begin(), all_centers.end(), 0);
    size_t n_layers = bs.use_epconv ? bs.convs.size() : bs.chain.size();
    for (size_t l = 0; l < n_layers; ++l) {
      std::vector<Neighborhood> cnbs(B);
      for (size_t b = 0; b < B; ++b) {
        if (config.knn)
          cnbs[b] = knn_query(coords[b], all_centers, s.conv_neighbors);
        else
          cnbs[b] = ball_query(coords[b], all_centers,
                               BallQuerySpec{s.conv_radius, s.conv_neighbors, opts.all_neighbors},
                               opts.rng);
      }
      equalize_widths(cnbs);
      Tensor input = bs.dense ? (outs.size() == 1 ? outs[0] : concat_channels(outs)) : cur;
      Tensor out;
      std::string cname = sname + ".conv" + std::to_string(l + 1);
      if (bs.use_epconv)
        out = epconv_apply(bs.convs[l], input, cnbs, opts.training, drop_rng);
      else
        out = pconv_apply(bs.chain[l], input, cnbs, 0, opts.training);
      scan_finite(out, cname, opts.nan_check);
      outs.push_back(out);
      cur = out;
    }

    if (bs.dense || bs.concat_at_end)
      feats = outs.size() == 1 ? outs[0] : concat_channels(outs);
    else
      feats = cur;
    level_feats.push_back(feats);
    level_coords.push_back(coords);
  }

  if (fps.empty()) {
    // classification head on the flat global feature
    Tensor h = reshape(feats, {B, feats.size(1)});
    for (size_t i = 0; i < fcs.size(); ++i) {
      h = fcs[i].forward(h, opts.training, drop_rng);
      scan_finite(h, "fc" + std::to_string(i + 1), opts.nan_check);
    }
    return h;
  }

  // decoder: propagate coarse-to-fine with long-range skips
  size_t S = stages.size();
  Tensor cur = feats;
  for (size_t i = 1; i <= S; ++i) {
    size_t fine = S - i;
    std::vector<InterpPlan> plans(B);
    for (size_t b = 0; b < B; ++b)
      plans[b] = make_interp_plan(level_coords[fine + 1][b], level_coords[fine][b],
                                  config.interp_neighbors);
    cur = fps[i - 1].forward(cur, plans, level_feats[fine], opts.training);
    scan_finite(cur, "fp" + std::to_string(i), opts.nan_check);
  }

  if (config.one_hot_dim > 0) {
    Tensor oh = Tensor::zeros({B, config.one_hot_dim});
    for (size_t b = 0; b < B; ++b) {
      int lbl = batch[b].label;
      DPT_CHECK(lbl >= 0 && size_t(lbl) < config.one_hot_dim,
                "forward: cloud label " << lbl << " outside one-hot range "
                                        << config.one_hot_dim);
      oh.data()[b * config.one_hot_dim + size_t(lbl)] = 1.0;
    }
    cur = concat_channels({cur, expand_spatial(oh, N)});
  }
  for (size_t i = 0; i < fcs.size(); ++i) {
    cur = fcs[i].forward(cur, opts.training, drop_rng);
    scan_finite(cur, "fc" + std::to_string(i + 1), opts.nan_check);
  }
  return cur;
}

std::vector<Network::ShapeRow> Network::shape_table() const {
  std::vector<ShapeRow> rows;
  for (const LayerInfo& li : layers)
    rows.push_back(ShapeRow{li.name, li.out_channels, li.out_points});
  return rows;
}

// --- presets ---------------------------------------------------------------------

NetworkConfig classification_config(size_t k, int groups, size_t classes,
                                    Connectivity connectivity) {
  NetworkConfig cfg;
  cfg.task = Task::Classification;
  cfg.points = 1024;
  cfg.classes = classes;
  cfg.k = k;
  cfg.groups = groups;
  cfg.expansion = 4 * k;
  cfg.connectivity = connectivity;
  StageSpec s1;
  s1.pool_ratio = 0.5;
  s1.pool_radius = 0.25;
  s1.pool_neighbors = 64;
  s1.pool_out = 96;
  s1.layers = 3;
  s1.conv_radius = 0.2;
  s1.conv_neighbors = 32;
  StageSpec s2;
  s2.pool_ratio = 0.25;
  s2.pool_radius = 0.3;
  s2.pool_neighbors = 64;
  s2.pool_out = 144;
  s2.layers = 5;
  s2.conv_radius = 0.4;
  s2.conv_neighbors = 16;
  StageSpec s3;
  s3.global_pool = true;
  s3.pool_neighbors = 0;
  s3.pool_out = 512;
  s3.layers = 0;
  cfg.stages = {s1, s2, s3};
  cfg.fc_dims = {512, 256};
  return cfg;
}

NetworkConfig segmentation_config(size_t k, int groups, size_t parts, size_t one_hot_dim) {
  NetworkConfig cfg;
  cfg.task = Task::PartSegmentation;
  cfg.points = 2048;
  cfg.classes = parts;
  cfg.k = k;
  cfg.groups = groups;
  cfg.expansion = 4 * k;
  StageSpec s1;
  s1.pool_ratio = 0.5;
  s1.pool_radius = 0.1;
  s1.pool_neighbors = 32;
  s1.pool_out = 64;
  s1.layers = 0;
  StageSpec s2;
  s2.pool_ratio = 0.25;
  s2.pool_radius = 0.2;
  s2.pool_neighbors = 64;
  s2.pool_out = 128;
  s2.layers = 4;
  s2.conv_radius = 0.3;
  s2.conv_neighbors = 32;
  StageSpec s3;
  s3.pool_ratio = 0.25;
  s3.pool_radius = 0.3;
  s3.pool_neighbors = 32;
  s3.pool_out = 192;
  s3.layers = 6;
  s3.conv_radius = 0.5;
  s3.conv_neighbors = 16;
  StageSpec s4;
  s4.pool_ratio = 0.25;
  s4.pool_radius = 0.8;
  s4.pool_neighbors = 32;
  s4.pool_out = 360;
  s4.layers = 3;
  s4.conv_radius = 0.8;
  s4.conv_neighbors = 8;
  cfg.stages = {s1, s2, s3, s4};
  cfg.fp_dims = {{512, 512}, {384, 384}, {256, 256}, {128, 128}};
  cfg.head_dims = {128};
  cfg.head_dropout = 0.5;
  cfg.one_hot_dim = one_hot_dim;
  return cfg;
}

NetworkConfig normal_estimation_config(size_t k, int groups, size_t one_hot_dim) {
  NetworkConfig cfg = segmentation_config(k, groups, 3, one_hot_dim);
  cfg.task = Task::NormalEstimation;
  cfg.points = 1024;
  cfg.stages[0].pool_ratio = 1.0;  // stage 1 keeps every point
  cfg.stages[0].pool_radius = 0.2;
  cfg.stages[0].pool_neighbors = 32;
  cfg.stages[1].pool_neighbors = 32;
  return cfg;
}

NetworkConfig depth_preset(int L, size_t k, int groups, size_t classes) {
  DPT_CHECK(L >= 5, "depth preset needs at least 5 layers (3 pools + 2 convolutions)");
  int d = L - 3;  // convolution budget across the two dense blocks
  int d1 = (3 * d) / 8;
  if (d1 < 1) d1 = 1;
  int d2 = d - d1;
  DPT_CHECK(d2 >= 1, "depth preset: stage 2 needs at least one convolution");
  NetworkConfig cfg = classification_config(k, groups, classes);
  cfg.stages[0].layers = d1;
  cfg.stages[1].layers = d2;
  if (L <= 6) {
    // shallowest preset also pools harder so cost shrinks with depth
    cfg.stages[0].pool_ratio = 0.25;
    cfg.stages[1].pool_ratio = 0.25;
  }
  return cfg;
}

}  // namespace dpt
