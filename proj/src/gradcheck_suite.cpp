// Finite-difference coverage: every tape op kind exactly once, every composite
// layer, and a miniature end-to-end classification network.
#include <cmath>

#include "dpt/geometry.hpp"
#include "dpt/gradcheck.hpp"
#include "dpt/layers.hpp"
#include "dpt/networks.hpp"

namespace dpt {

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                   double hi = 1.0) {
  Tensor t(shape, requires_grad);
  for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Pushes values away from zero so the finite-difference probe (step ~1e-5)
// never straddles the ReLU / max kinks of the op under test.
void keep_off_kinks(Tensor& t, double margin = 5e-3) {
  for (size_t i = 0; i < t.numel(); ++i) {
    double& v = t.data()[i];
    if (std::fabs(v) < margin) v = (v < 0 ? v - margin : v + margin);
  }
}

// Scalarizes a graph output against a fixed random projection so every output
// element influences the loss with a distinct weight.
Tensor project(const Tensor& y, const Tensor& r) { return sum_all(mul(y, r)); }

std::vector<Tensor> param_tensors(const ParamStore& store, std::vector<Tensor> extra = {}) {
  for (const Parameter& p : store.params) extra.push_back(p.tensor);
  return extra;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed, double tol) {
  std::vector<GradCheckCase> report;
  Rng root(seed);
  auto run = [&](const char* name, const std::function<Tensor()>& f,
                 const std::vector<Tensor>& params, double h = 1e-5) {
    FdReport r = finite_diff_check(f, params, h);
    report.push_back({name, r.max_rel_err, r.max_rel_err <= tol});
  };

  {  // add
    Rng rng = root.fork(1);
    Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
    Tensor r = rand_tensor({2, 3}, rng, false);
    run("add", [=] { return project(add(a, b), r); }, {a, b});
  }
  {  // sub
    Rng rng = root.fork(2);
    Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
    Tensor r = rand_tensor({2, 3}, rng, false);
    run("sub", [=] { return project(sub(a, b), r); }, {a, b});
  }
  {  // mul
    Rng rng = root.fork(3);
    Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
    Tensor r = rand_tensor({2, 3}, rng, false);
    run("mul", [=] { return project(mul(a, b), r); }, {a, b});
  }
  {  // scale
    Rng rng = root.fork(4);
    Tensor a = rand_tensor({3, 2}, rng);
    Tensor r = rand_tensor({3, 2}, rng, false);
    run("scale", [=] { return project(scale(a, 1.7), r); }, {a});
  }
  {  // relu
    Rng rng = root.fork(5);
    Tensor a = rand_tensor({3, 4}, rng);
    keep_off_kinks(a);
    Tensor r = rand_tensor({3, 4}, rng, false);
    run("relu", [=] { return project(relu(a), r); }, {a});
  }
  {  // matmul
    Rng rng = root.fork(6);
    Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
    Tensor r = rand_tensor({3, 2}, rng, false);
    run("matmul", [=] { return project(matmul(a, b), r); }, {a, b});
  }
  {  // linear (spatial path; the flat path is exercised by fc_layer/network)
    Rng rng = root.fork(7);
    Tensor x = rand_tensor({2, 3, 4}, rng);
    Tensor w = rand_tensor({5, 3}, rng), b = rand_tensor({5}, rng);
    Tensor r = rand_tensor({2, 5, 4}, rng, false);
    run("linear", [=] { return project(linear(x, w, b), r); }, {x, w, b});
  }
  {  // grouped_linear
    Rng rng = root.fork(8);
    Tensor x = rand_tensor({2, 6, 3}, rng);
    Tensor w = rand_tensor({2, 4, 3}, rng), b = rand_tensor({8}, rng);
    Tensor r = rand_tensor({2, 8, 3}, rng, false);
    run("grouped_linear", [=] { return project(grouped_linear(x, w, b, 2), r); }, {x, w, b});
  }
  {  // reshape
    Rng rng = root.fork(9);
    Tensor x = rand_tensor({2, 6}, rng);
    Tensor r = rand_tensor({3, 4}, rng, false);
    run("reshape", [=] { return project(reshape(x, {3, 4}), r); }, {x});
  }
  {  // concat_channels
    Rng rng = root.fork(10);
    Tensor a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({2, 2, 4}, rng);
    Tensor r = rand_tensor({2, 5, 4}, rng, false);
    run("concat_channels", [=] { return project(concat_channels({a, b}), r); }, {a, b});
  }
  {  // expand_spatial
    Rng rng = root.fork(11);
    Tensor x = rand_tensor({2, 3}, rng);
    Tensor r = rand_tensor({2, 3, 5}, rng, false);
    run("expand_spatial", [=] { return project(expand_spatial(x, 5), r); }, {x});
  }
  {  // reduce_max (random values: ties have measure zero)
    Rng rng = root.fork(12);
    Tensor x = rand_tensor({2, 3, 4}, rng);
    Tensor r = rand_tensor({2, 3}, rng, false);
    run("reduce_max", [=] { return project(reduce_max(x, 2), r); }, {x});
  }
  {  // reduce_mean
    Rng rng = root.fork(13);
    Tensor x = rand_tensor({2, 3, 4}, rng);
    Tensor r = rand_tensor({2, 4}, rng, false);
    run("reduce_mean", [=] { return project(reduce_mean(x, 1), r); }, {x});
  }
  {  // reduce_sum
    Rng rng = root.fork(14);
    Tensor x = rand_tensor({2, 3, 4}, rng);
    Tensor r = rand_tensor({3, 4}, rng, false);
    run("reduce_sum", [=] { return project(reduce_sum(x, 0), r); }, {x});
  }
  {  // sum_all
    Rng rng = root.fork(15);
    Tensor x = rand_tensor({3, 4}, rng);
    run("sum_all", [=] { return sum_all(x); }, {x});
  }
  {  // batch_norm (training mode: batch statistics, the nonlinear path)
    Rng rng = root.fork(16);
    Tensor x = rand_tensor({4, 3, 5}, rng);
    Tensor gamma = rand_tensor({3}, rng, true, 0.5, 1.5);
    Tensor beta = rand_tensor({3}, rng);
    Tensor r = rand_tensor({4, 3, 5}, rng, false);
    auto stats = std::make_shared<BatchNormStats>(3);
    run("batch_norm",
        [=] { return project(batch_norm(x, gamma, beta, *stats, true), r); },
        {x, gamma, beta});
  }
  {  // dropout (fixed-seed mask, linear in the survivors)
    Rng rng = root.fork(17);
    Tensor x = rand_tensor({3, 4}, rng);
    Tensor r = rand_tensor({3, 4}, rng, false);
    uint64_t mask_seed = seed ^ 0x5eedull;
    run("dropout",
        [=] {
          Rng mask(mask_seed);
          return project(dropout(x, 0.3, true, mask), r);
        },
        {x});
  }
  {  // gather_and_normalize (duplicate indices exercise scatter accumulation)
    Rng rng = root.fork(18);
    Tensor x = rand_tensor({2, 4, 6}, rng);
    std::vector<Neighborhood> nb(2);
    for (auto& n : nb) {
      n.centers = 3;
      n.width = 2;
      n.centroid = {0, 2, 4};
      n.idx = {0, 1, 2, 2, 4, 0};
    }
    nb[1].centroid = {1, 3, 5};
    nb[1].idx = {1, 5, 3, 0, 5, 5};
    Tensor r = rand_tensor({2, 4, 3, 2}, rng, false);
    run("gather_and_normalize",
        [=] { return project(gather_and_normalize(x, nb, 2), r); }, {x});
  }
  {  // idw_interpolate (plans from real coordinates)
    Rng rng = root.fork(19);
    Tensor coarse = rand_tensor({2, 3, 4}, rng);
    std::vector<InterpPlan> plans(2);
    for (auto& p : plans) {
      Tensor cc = rand_tensor({3, 4}, rng, false);
      Tensor fc = rand_tensor({3, 5}, rng, false);
      p = make_interp_plan(cc, fc, 2);
    }
    Tensor r = rand_tensor({2, 3, 5}, rng, false);
    run("idw_interpolate", [=] { return project(idw_interpolate(coarse, plans), r); }, {coarse});
  }
  {  // softmax_cross_entropy
    Rng rng = root.fork(20);
    Tensor logits = rand_tensor({3, 4}, rng);
    std::vector<int> labels = {0, 3, 1};
    run("softmax_cross_entropy", [=] { return softmax_cross_entropy(logits, labels); }, {logits});
  }
  {  // cosine_normal_loss (prediction norms bounded away from the epsilon floor)
    Rng rng = root.fork(21);
    Tensor pred = rand_tensor({2, 3, 4}, rng, true, 0.2, 1.0);
    Tensor gt({2, 3, 4});
    for (size_t b = 0; b < 2; ++b)
      for (size_t j = 0; j < 4; ++j) {
        double v[3], norm = 0.0;
        for (double& vi : v) {
          vi = rng.uniform(-1.0, 1.0);
          norm += vi * vi;
        }
        norm = std::sqrt(std::max(norm, 1e-9));
        for (size_t c = 0; c < 3; ++c) gt.data()[b * 12 + c * 4 + j] = v[c] / norm;
      }
    run("cosine_normal_loss", [=] { return cosine_normal_loss(pred, gt); }, {pred});
  }

  // --- composite layers ---------------------------------------------------------
  {  // pconv: SLP + norm + ReLU + aggregation over gathered neighborhoods
    Rng rng = root.fork(22);
    auto store = std::make_shared<ParamStore>();
    auto conv = std::make_shared<PConv>(make_pconv(4, 5, "pconv", *store, rng));
    Tensor gathered = rand_tensor({2, 4, 3, 2}, rng);
    Tensor r = rand_tensor({2, 5, 3}, rng, false);
    run("pconv", [=] { return project(conv->forward(gathered, true), r); },
        param_tensors(*store, {gathered}));
  }
  {  // epconv: grouped expansion + aggregation + integration + dropout
    Rng rng = root.fork(23);
    auto store = std::make_shared<ParamStore>();
    auto conv = std::make_shared<EPConv>(
        make_epconv(6, 8, 4, 2, "epconv", *store, rng, Rho::Max, Order::PostNorm, 0.25));
    Tensor gathered = rand_tensor({2, 6, 3, 2}, rng);
    Tensor r = rand_tensor({2, 4, 3}, rng, false);
    uint64_t mask_seed = seed ^ 0xe9c0ull;
    run("epconv",
        [=] {
          Rng mask(mask_seed);
          return project(conv->forward(gathered, true, mask), r);
        },
        param_tensors(*store, {gathered}));
  }
  {  // fp_layer: interpolation + skip concat + MLP
    Rng rng = root.fork(24);
    auto store = std::make_shared<ParamStore>();
    auto fp = std::make_shared<FPLayer>(make_fp_layer(6, {6, 5}, "fp", *store, rng));
    Tensor coarse = rand_tensor({2, 4, 3}, rng);
    Tensor skip = rand_tensor({2, 2, 5}, rng);
    std::vector<InterpPlan> plans(2);
    for (auto& p : plans) {
      Tensor cc = rand_tensor({3, 3}, rng, false);
      Tensor fc = rand_tensor({3, 5}, rng, false);
      p = make_interp_plan(cc, fc, 2);
    }
    Tensor r = rand_tensor({2, 5, 5}, rng, false);
    run("fp_layer", [=] { return project(fp->forward(coarse, plans, skip, true), r); },
        param_tensors(*store, {coarse, skip}));
  }
  {  // fc_layer: linear + norm + ReLU + dropout
    Rng rng = root.fork(25);
    auto store = std::make_shared<ParamStore>();
    auto fc = std::make_shared<FCLayer>(make_fc_layer(5, 4, false, 0.3, "fc", *store, rng));
    Tensor x = rand_tensor({3, 5}, rng);
    Tensor r = rand_tensor({3, 4}, rng, false);
    uint64_t mask_seed = seed ^ 0xfc1ull;
    run("fc_layer",
        [=] {
          Rng mask(mask_seed);
          return project(fc->forward(x, true, mask), r);
        },
        param_tensors(*store, {x}));
  }
  {  // network: miniature two-stage classifier, loss through the whole graph
    Rng rng = root.fork(26);
    NetworkConfig cfg;
    cfg.task = Task::Classification;
    cfg.points = 16;
    cfg.classes = 2;
    cfg.k = 4;
    cfg.groups = 2;
    cfg.expansion = 8;
    cfg.conv_dropout = 0.2;
    cfg.fc_dropout = 0.3;
    StageSpec s1;
    s1.pool_ratio = 0.5;
    s1.pool_radius = 0.6;
    s1.pool_neighbors = 4;
    s1.pool_out = 6;
    s1.layers = 1;
    s1.conv_radius = 0.8;
    s1.conv_neighbors = 4;
    StageSpec s2;
    s2.global_pool = true;
    s2.pool_out = 10;
    cfg.stages = {s1, s2};
    cfg.fc_dims = {6};
    auto net = std::shared_ptr<Network>(build_network(cfg, seed ^ 0x9e7ull));

    auto batch = std::make_shared<std::vector<PointCloud>>();
    for (int b = 0; b < 2; ++b) {
      Tensor coords = rand_tensor({3, 16}, rng, false);
      PointCloud pc = PointCloud::from_coords(coords);
      pc.label = b;
      batch->push_back(std::move(pc));
    }
    std::vector<int> labels = {0, 1};
    uint64_t mask_seed = seed ^ 0x4e7ull;
    run("network",
        [=] {
          Rng mask(mask_seed);
          ForwardOptions opts;
          opts.training = true;
          opts.fps_seed = 3;
          opts.rng = &mask;
          return softmax_cross_entropy(net->forward(*batch, opts), labels);
        },
        param_tensors(net->store));
  }

  return report;
}

}  // namespace dpt
