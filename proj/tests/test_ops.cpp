// Semantics and gradients of the op library.
#include <cmath>

#include "doctest.h"
#include "dpt/geometry.hpp"
#include "dpt/gradcheck.hpp"
#include "dpt/ops.hpp"
#include "dpt/rng.hpp"

using namespace dpt;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  Tensor t(std::move(shape), requires_grad);
  for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("relu clamps and routes gradient through positives only") {
  Tensor x = Tensor::from_data({1, 4}, {-2, -0.5, 0.0, 3.0}, true);
  Tensor y = relu(x);
  CHECK(y.at({0, 0}) == 0.0);
  CHECK(y.at({0, 2}) == 0.0);
  CHECK(y.at({0, 3}) == 3.0);
  backward(sum_all(y));
  CHECK(x.grad().data()[0] == 0.0);
  CHECK(x.grad().data()[2] == 0.0);  // boundary: zero input gets no gradient
  CHECK(x.grad().data()[3] == 1.0);
}

TEST_CASE("concat_channels stacks and splits gradients") {
  Tensor a = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from_data({1, 1, 2}, {5, 6}, true);
  Tensor y = concat_channels({a, b});
  REQUIRE(y.shape() == Shape{1, 3, 2});
  CHECK(y.at({0, 0, 0}) == 1.0);
  CHECK(y.at({0, 2, 1}) == 6.0);

  // weight the output so each slot has a distinct gradient
  Tensor w = Tensor::from_data({1, 3, 2}, {10, 20, 30, 40, 50, 60});
  backward(sum_all(mul(y, w)));
  CHECK(a.grad().data()[0] == 10.0);
  CHECK(a.grad().data()[3] == 40.0);
  CHECK(b.grad().data()[0] == 50.0);
  CHECK(b.grad().data()[1] == 60.0);
}

TEST_CASE("reductions: max picks lowest index on ties, mean/sum spread") {
  Tensor x = Tensor::from_data({1, 2, 3}, {1, 5, 5, 2, 2, 0}, true);
  Tensor m = reduce_max(x, 2);
  REQUIRE(m.shape() == Shape{1, 2});
  CHECK(m.at({0, 0}) == 5.0);
  CHECK(m.at({0, 1}) == 2.0);
  backward(sum_all(m));
  // ties -> gradient lands at the first maximal entry
  CHECK(x.grad().data()[0] == 0.0);
  CHECK(x.grad().data()[1] == 1.0);
  CHECK(x.grad().data()[2] == 0.0);
  CHECK(x.grad().data()[3] == 1.0);
  CHECK(x.grad().data()[4] == 0.0);

  Tensor s = reduce_sum(x, 2);
  CHECK(s.at({0, 0}) == 11.0);
  Tensor mean = reduce_mean(x, 1);
  REQUIRE(mean.shape() == Shape{1, 3});
  CHECK(mean.at({0, 0}) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("reduce over middle axis handles strides") {
  // shape (2,3,2), reduce axis 1
  Tensor x = Tensor::from_data({2, 3, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  Tensor m = reduce_max(x, 1);
  REQUIRE(m.shape() == Shape{2, 2});
  CHECK(m.at({0, 0}) == 4.0);
  CHECK(m.at({0, 1}) == 5.0);
  CHECK(m.at({1, 0}) == 10.0);
  CHECK(m.at({1, 1}) == 11.0);
}

TEST_CASE("permuting entries along the reduced axis leaves reduce outputs unchanged") {
  // dyadic values so sum reassociation is exact
  Tensor x = Tensor::from_data({1, 1, 4}, {0.25, 1.5, -0.75, 2.0});
  Tensor xp = Tensor::from_data({1, 1, 4}, {2.0, -0.75, 1.5, 0.25});
  for (auto* red : {&reduce_max, &reduce_sum, &reduce_mean})
    CHECK((*red)(x, 2).item() == (*red)(xp, 2).item());
}

TEST_CASE("linear matches matmul composition") {
  Rng rng(21);
  Tensor x = random_tensor({2, 5, 3}, rng);   // (B, Ci, Q)
  Tensor w = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor y = linear(x, w, b);
  REQUIRE(y.shape() == Shape{2, 4, 3});
  for (size_t bb = 0; bb < 2; ++bb)
    for (size_t o = 0; o < 4; ++o)
      for (size_t q = 0; q < 3; ++q) {
        double acc = b.data()[o];
        for (size_t i = 0; i < 5; ++i) acc += w.at({o, i}) * x.at({bb, i, q});
        CHECK(y.at({bb, o, q}) == doctest::Approx(acc).epsilon(1e-12));
      }

  // flat (B, Ci) path
  Tensor xf = random_tensor({3, 5}, rng);
  Tensor yf = linear(xf, w, b);
  REQUIRE(yf.shape() == Shape{3, 4});
  for (size_t bb = 0; bb < 3; ++bb)
    for (size_t o = 0; o < 4; ++o) {
      double acc = b.data()[o];
      for (size_t i = 0; i < 5; ++i) acc += w.at({o, i}) * xf.at({bb, i});
      CHECK(yf.at({bb, o}) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("grouped_linear with one group equals linear") {
  Rng rng(31);
  Tensor x = random_tensor({2, 6, 4}, rng);
  Tensor w = random_tensor({8, 6}, rng);
  Tensor b = random_tensor({8}, rng);
  Tensor wg = Tensor::from_data({1, 8, 6}, {w.vec().begin(), w.vec().end()});
  Tensor y1 = linear(x, w, b);
  Tensor y2 = grouped_linear(x, wg, b, 1);
  for (size_t i = 0; i < y1.numel(); ++i)
    CHECK(std::fabs(y1.data()[i] - y2.data()[i]) <= 1e-12);
}

TEST_CASE("grouped_linear equals block-diagonal dense weight") {
  Rng rng(32);
  const int groups = 3;
  size_t ci = 6, co = 9, q = 5;
  Tensor x = random_tensor({2, ci, q}, rng);
  Tensor wg = random_tensor({size_t(groups), co / groups, ci / groups}, rng);
  Tensor b = random_tensor({co}, rng);

  // embed the group blocks into a dense (Co, Ci) block-diagonal matrix
  Tensor wd({co, ci});
  for (size_t g = 0; g < size_t(groups); ++g)
    for (size_t o = 0; o < co / groups; ++o)
      for (size_t i = 0; i < ci / groups; ++i)
        wd.data()[(g * (co / groups) + o) * ci + g * (ci / groups) + i] = wg.at({g, o, i});

  Tensor y1 = grouped_linear(x, wg, b, groups);
  Tensor y2 = linear(x, wd, b);
  for (size_t i = 0; i < y1.numel(); ++i)
    CHECK(std::fabs(y1.data()[i] - y2.data()[i]) <= 1e-12);
}

TEST_CASE("grouped weight count is Ci*Co/groups") {
  for (auto [ci, co, ng] : {std::tuple{6, 9, 3}, std::tuple{96, 96, 2}, std::tuple{24, 48, 12}}) {
    Tensor w({size_t(ng), size_t(co / ng), size_t(ci / ng)});
    CHECK(w.numel() == size_t(ci) * size_t(co) / size_t(ng));
  }
}

TEST_CASE("batch_norm: constant input maps to shift") {
  Tensor x = Tensor::full({2, 3, 4}, 5.0);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  BatchNormStats stats(3);
  Tensor y = batch_norm(x, gamma, beta, stats, true);
  for (size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);  // epsilon-guarded, no NaN
  // running stats moved toward the batch
  CHECK(stats.running_mean.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(stats.running_var.data()[0] == doctest::Approx(0.9).epsilon(1e-12));  // 0.9*1 + 0.1*0
}

TEST_CASE("batch_norm: two-point batch closed form") {
  // per channel {-1, +1}: mean 0, population var 1 -> +/- 1/sqrt(1+eps)
  Tensor x = Tensor::from_data({2, 1, 1}, {-1.0, 1.0});
  Tensor gamma = Tensor::full({1}, 1.0);
  Tensor beta = Tensor::zeros({1});
  BatchNormStats stats(1);
  Tensor y = batch_norm(x, gamma, beta, stats, true);
  double expect = 1.0 / std::sqrt(1.0 + stats.eps);
  CHECK(y.at({0, 0, 0}) == doctest::Approx(-expect).epsilon(1e-14));
  CHECK(y.at({1, 0, 0}) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("batch_norm: evaluation uses running statistics") {
  Tensor gamma = Tensor::from_data({2}, {2.0, 1.0});
  Tensor beta = Tensor::from_data({2}, {0.5, -1.0});
  BatchNormStats stats(2);
  stats.running_mean = Tensor::from_data({2}, {1.0, -1.0});
  stats.running_var = Tensor::from_data({2}, {4.0, 0.25});
  Tensor x = Tensor::from_data({1, 2, 2}, {3.0, 1.0, 0.0, -2.0});
  Tensor y = batch_norm(x, gamma, beta, stats, false);
  CHECK(y.at({0, 0, 0}) == doctest::Approx(2.0 * (3.0 - 1.0) / std::sqrt(4.0 + stats.eps) + 0.5)
                               .epsilon(1e-12));
  CHECK(y.at({0, 1, 1}) == doctest::Approx((-2.0 + 1.0) / std::sqrt(0.25 + stats.eps) - 1.0)
                               .epsilon(1e-12));
  // eval mode must not move the running stats
  CHECK(stats.running_mean.data()[0] == 1.0);
  CHECK(stats.running_var.data()[1] == 0.25);
}

TEST_CASE("dropout: survivor fraction and mean preservation") {
  Rng rng(77);
  const size_t n = 1000000;
  Tensor x = Tensor::full({1, 1, n}, 1.0);
  Tensor y = dropout(x, 0.2, true, rng);
  size_t survivors = 0;
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (y.data()[i] != 0.0) {
      ++survivors;
      CHECK(y.data()[i] == doctest::Approx(1.25).epsilon(1e-12));  // 1/(1-0.2)
    }
    sum += y.data()[i];
  }
  CHECK(std::fabs(double(survivors) / double(n) - 0.8) < 0.002);
  CHECK(std::fabs(sum / double(n) - 1.0) < 0.005);
}

TEST_CASE("dropout: identity when disabled") {
  Rng rng(1);
  Tensor x = Tensor::from_data({1, 2}, {1, 2});
  Tensor y = dropout(x, 0.5, false, rng);
  CHECK(y.impl() == x.impl());
  Tensor z = dropout(x, 0.0, true, rng);
  CHECK(z.impl() == x.impl());
  CHECK_THROWS(dropout(x, 1.0, true, rng));
}

TEST_CASE("gather_and_normalize: centroid rows are zero, translation cancels") {
  // dyadic coordinates so translation cancellation is exact
  Tensor x = Tensor::from_data({1, 3, 4}, {0.0, 0.25, 0.5,  0.75,    // x
                                           1.0, 1.25, 1.5,  1.75,    // y
                                           -1.0, -0.75, -0.5, -0.25});  // z
  Neighborhood nb;
  nb.centers = 2;
  nb.width = 3;
  nb.centroid = {1, 2};
  nb.idx = {1, 0, 3, 2, 2, 1};
  Tensor g = gather_and_normalize(x, {nb}, 3);
  REQUIRE(g.shape() == Shape{1, 3, 2, 3});
  // neighbor == centroid -> exactly zero in every coordinate channel
  for (size_t c = 0; c < 3; ++c) {
    CHECK(g.at({0, c, 0, 0}) == 0.0);
    CHECK(g.at({0, c, 1, 0}) == 0.0);
    CHECK(g.at({0, c, 1, 1}) == 0.0);
  }
  CHECK(g.at({0, 0, 0, 1}) == -0.25);
  CHECK(g.at({0, 0, 0, 2}) == 0.5);

  Tensor xt = x.clone();
  for (size_t i = 0; i < 4; ++i) {
    xt.data()[i] += 0.5;
    xt.data()[4 + i] += -2.0;
    xt.data()[8 + i] += 1.5;
  }
  Tensor gt = gather_and_normalize(xt, {nb}, 3);
  for (size_t i = 0; i < g.numel(); ++i) CHECK(gt.data()[i] == g.data()[i]);
}

TEST_CASE("gather_and_normalize: non-coordinate channels untouched") {
  Tensor x = Tensor::from_data({1, 2, 3}, {1, 2, 3, 10, 20, 30});
  Neighborhood nb;
  nb.centers = 1;
  nb.width = 2;
  nb.centroid = {0};
  nb.idx = {1, 2};
  Tensor g = gather_and_normalize(x, {nb}, 0);
  CHECK(g.at({0, 0, 0, 0}) == 2.0);
  CHECK(g.at({0, 1, 0, 1}) == 30.0);
}

TEST_CASE("gather_and_normalize: gradient scatter-adds (incl. centroid term)") {
  Rng rng(17);
  Tensor x = random_tensor({2, 4, 5}, rng, true);
  Neighborhood nb;
  nb.centers = 2;
  nb.width = 3;
  nb.centroid = {0, 3};
  nb.idx = {0, 1, 1, 3, 4, 0};  // repeated indices exercise accumulation
  std::vector<Neighborhood> tables{nb, nb};
  Rng wr(18);
  Tensor w = random_tensor({2, 4, 2, 3}, wr);
  FdReport r = finite_diff_check(
      [&] { return sum_all(mul(gather_and_normalize(x, tables, 3), w)); }, {x});
  CHECK(r.max_rel_err <= 1e-9);
}

TEST_CASE("idw_interpolate: identity, single point, equidistant mean") {
  // identity when coarse == fine
  Tensor cc = Tensor::from_data({3, 3}, {0, 1, 2, 0, 0, 0, 0, 0, 0});
  InterpPlan self = make_interp_plan(cc, cc, 3);
  Tensor f = Tensor::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = idw_interpolate(f, {self});
  for (size_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(f.data()[i]).epsilon(1e-9));

  // one coarse point: every fine point receives its feature exactly
  Tensor c1 = Tensor::from_data({3, 1}, {0.3, -0.2, 0.9});
  Tensor fine = Tensor::from_data({3, 2}, {0, 1, 0, 1, 0, 1});
  InterpPlan p1 = make_interp_plan(c1, fine, 3);
  Tensor f1 = Tensor::from_data({1, 2, 1}, {7.0, -3.0});
  Tensor y1 = idw_interpolate(f1, {p1});
  CHECK(y1.at({0, 0, 0}) == 7.0);
  CHECK(y1.at({0, 0, 1}) == 7.0);
  CHECK(y1.at({0, 1, 1}) == -3.0);

  // two equidistant coarse points: arithmetic mean
  Tensor c2 = Tensor::from_data({3, 2}, {-1, 1, 0, 0, 0, 0});
  Tensor mid = Tensor::from_data({3, 1}, {0, 0, 0});
  InterpPlan p2 = make_interp_plan(c2, mid, 2);
  Tensor f2 = Tensor::from_data({1, 1, 2}, {3.0, 5.0});
  Tensor y2 = idw_interpolate(f2, {p2});
  CHECK(y2.item() == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("idw_interpolate: gradient is the transposed scatter") {
  Rng rng(19);
  Tensor cc = random_tensor({3, 6}, rng);
  Tensor fc = random_tensor({3, 9}, rng);
  InterpPlan plan = make_interp_plan(cc, fc, 3);
  Tensor f = random_tensor({1, 4, 6}, rng, true);
  Tensor w = random_tensor({1, 4, 9}, rng);
  FdReport r =
      finite_diff_check([&] { return sum_all(mul(idw_interpolate(f, {plan}), w)); }, {f});
  CHECK(r.max_rel_err <= 1e-9);
}

TEST_CASE("softmax_cross_entropy: closed forms") {
  // uniform logits over K classes -> ln K
  Tensor z = Tensor::zeros({2, 4});
  Tensor loss = softmax_cross_entropy(z, {1, 3});
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // huge correct margin -> ~0
  Tensor confident = Tensor::from_data({1, 2}, {100.0, 0.0});
  CHECK(softmax_cross_entropy(confident, {0}).item() < 1e-40);

  // per-point variant (B, K, N)
  Tensor zp = Tensor::zeros({1, 3, 2});
  CHECK(softmax_cross_entropy(zp, {0, 2}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  CHECK_THROWS(softmax_cross_entropy(z, {1}));        // label count mismatch
  CHECK_THROWS(softmax_cross_entropy(z, {1, 4}));     // label out of range
}

TEST_CASE("softmax_cross_entropy: gradient is softmax minus one-hot") {
  Tensor z = Tensor::from_data({1, 3}, {0.2, -0.1, 0.5}, true);
  backward(softmax_cross_entropy(z, {2}));
  Tensor p = softmax_channels(z);
  CHECK(z.grad().data()[0] == doctest::Approx(p.data()[0]).epsilon(1e-12));
  CHECK(z.grad().data()[1] == doctest::Approx(p.data()[1]).epsilon(1e-12));
  CHECK(z.grad().data()[2] == doctest::Approx(p.data()[2] - 1.0).epsilon(1e-12));

  Rng rng(23);
  Tensor zz = random_tensor({2, 5, 3}, rng, true);
  FdReport r = finite_diff_check(
      [&] { return softmax_cross_entropy(zz, {0, 1, 2, 3, 4, 0}); }, {zz});
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("cosine_normal_loss: aligned is 0, opposed is 2, gradient checks") {
  Tensor gt = Tensor::from_data({1, 3, 2}, {1, 0, 0, 1, 0, 0});
  Tensor aligned = Tensor::from_data({1, 3, 2}, {2, 0, 0, 3, 0, 0});  // scaled copies
  CHECK(cosine_normal_loss(aligned, gt).item() == doctest::Approx(0.0).epsilon(1e-12));
  Tensor opposed = Tensor::from_data({1, 3, 2}, {-1, 0, 0, -1, 0, 0});
  CHECK(cosine_normal_loss(opposed, gt).item() == doctest::Approx(2.0).epsilon(1e-12));

  // zero prediction: epsilon floor keeps the loss finite
  Tensor zero = Tensor::zeros({1, 3, 1});
  Tensor g1 = Tensor::from_data({1, 3, 1}, {0, 0, 1});
  CHECK(std::isfinite(cosine_normal_loss(zero, g1).item()));

  Rng rng(29);
  Tensor pred(Shape{2, 3, 4}, true);
  for (size_t i = 0; i < pred.numel(); ++i) pred.data()[i] = rng.uniform(-1, 1);
  Tensor gts({2, 3, 4});
  for (size_t b = 0; b < 2; ++b)
    for (size_t n = 0; n < 4; ++n) {
      double v[3], len = 0;
      for (int c = 0; c < 3; ++c) {
        v[c] = rng.uniform(-1, 1);
        len += v[c] * v[c];
      }
      len = std::sqrt(len);
      for (size_t c = 0; c < 3; ++c) gts.data()[(b * 3 + c) * 4 + n] = v[c] / len;
    }
  FdReport r = finite_diff_check([&] { return cosine_normal_loss(pred, gts); }, {pred});
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("reshape round-trips values and gradients") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor y = reshape(x, {3, 2});
  CHECK(y.at({2, 1}) == 6.0);
  CHECK_THROWS(reshape(x, {4, 2}));
  backward(sum_all(y));
  for (size_t i = 0; i < 6; ++i) CHECK(x.grad().data()[i] == 1.0);
}

TEST_CASE("per-op finite difference sweep") {
  Rng rng(41);
  Tensor a = random_tensor({2, 3, 4}, rng, true);
  Tensor b = random_tensor({2, 3, 4}, rng, true);
  Tensor w = random_tensor({5, 3}, rng, true);
  Tensor bias = random_tensor({5}, rng, true);
  Tensor wg = random_tensor({2, 3, 3}, rng, true);   // groups=2: (6->6)/2
  Tensor biasg = random_tensor({6}, rng, true);
  Tensor x6 = random_tensor({2, 6, 3}, rng, true);
  Tensor gamma = random_tensor({3}, rng, true);
  Tensor beta = random_tensor({3}, rng, true);

  auto check = [&](const char* name, std::function<Tensor()> f, std::vector<Tensor> ps) {
    FdReport r = finite_diff_check(f, ps);
    INFO("op: " << name);
    CHECK(r.max_rel_err <= 1e-6);
  };

  check("add", [&] { return sum_all(mul(add(a, b), b)); }, {a, b});
  check("sub", [&] { return sum_all(mul(sub(a, b), a)); }, {a, b});
  check("scale", [&] { return sum_all(scale(a, -1.7)); }, {a});
  check("linear", [&] { return sum_all(relu(linear(a, w, bias))); }, {a, w, bias});
  check("grouped_linear", [&] { return sum_all(relu(grouped_linear(x6, wg, biasg, 2))); },
        {x6, wg, biasg});
  check("concat", [&] { return sum_all(mul(concat_channels({a, b}), concat_channels({b, a}))); },
        {a, b});
  check("reduce_max", [&] { return sum_all(mul(reduce_max(a, 2), reduce_max(b, 2))); }, {a, b});
  check("reduce_mean", [&] { return sum_all(mul(reduce_mean(a, 1), reduce_mean(b, 1))); }, {a, b});
  check("reduce_sum", [&] { return sum_all(mul(reduce_sum(a, 0), reduce_sum(b, 0))); }, {a, b});
  check("batch_norm_train",
        [&] {
          BatchNormStats st(3);  // fresh stats per call: forward must be repeatable
          return sum_all(mul(batch_norm(a, gamma, beta, st, true), b));
        },
        {a, gamma, beta});
  check("batch_norm_eval",
        [&] {
          BatchNormStats st(3);
          st.running_mean = Tensor::from_data({3}, {0.1, -0.2, 0.3});
          st.running_var = Tensor::from_data({3}, {1.1, 0.9, 1.4});
          return sum_all(mul(batch_norm(a, gamma, beta, st, false), b));
        },
        {a, gamma, beta});
  check("dropout",
        [&] {
          Rng drop_rng(99);  // fixed seed: same mask on every probe
          return sum_all(dropout(a, 0.4, true, drop_rng));
        },
        {a});
}

TEST_CASE("finite_diff_check catches a corrupted backward (negative control)") {
  // An op wired with a deliberately wrong gradient must fail the FD oracle.
  auto broken_square = [](const Tensor& x) {
    Tensor y(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) y.data()[i] = x.data()[i] * x.data()[i];
    if (detail::tape_needed({&x})) {
      auto xi = x.impl();
      detail::attach_node(y, "broken_square", {xi}, [xi](const TensorImpl& out) {
        auto& g = detail::ensure_grad(*xi);
        for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * xi->data[i];  // missing *2
      });
    }
    return y;
  };
  Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  FdReport r = finite_diff_check([&] { return sum_all(broken_square(x)); }, {x});
  CHECK(r.max_rel_err > 1e-2);
}
