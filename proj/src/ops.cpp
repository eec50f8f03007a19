// Elementwise, linear-algebra, shape, and reduction ops with tape recording.
#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "dpt/ops.hpp"

namespace dpt {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

bool wants_grad(const TensorImpl& t) { return t.requires_grad || t.node != nullptr; }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  DPT_CHECK(a.shape() == b.shape(),
            op << ": shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
}

// Splits a shape at `axis` into (outer, n, inner) extents.
void axis_split(const Shape& s, size_t axis, size_t& outer, size_t& n, size_t& inner) {
  DPT_CHECK(axis < s.size(), "axis " << axis << " out of range for " << shape_str(s));
  outer = 1;
  inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

// --- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor y(a.shape());
  const double* ad = a.data();
  const double* bd = b.data();
  double* yd = y.data();
  for (size_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] + bd[i];
  if (detail::tape_needed({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    detail::attach_node(y, "add", {ai, bi}, [ai, bi](const TensorImpl& out) {
      for (auto& t : {ai, bi}) {
        if (!wants_grad(*t)) continue;
        auto& g = detail::ensure_grad(*t);
        for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor y(a.shape());
  const double* ad = a.data();
  const double* bd = b.data();
  double* yd = y.data();
  for (size_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] - bd[i];
  if (detail::tape_needed({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    detail::attach_node(y, "sub", {ai, bi}, [ai, bi](const TensorImpl& out) {
      if (wants_grad(*ai)) {
        auto& g = detail::ensure_grad(*ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
      }
      if (wants_grad(*bi)) {
        auto& g = detail::ensure_grad(*bi);
        for (size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor y(a.shape());
  const double* ad = a.data();
  const double* bd = b.data();
  double* yd = y.data();
  for (size_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] * bd[i];
  if (detail::tape_needed({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    detail::attach_node(y, "mul", {ai, bi}, [ai, bi](const TensorImpl& out) {
      if (wants_grad(*ai)) {
        auto& g = detail::ensure_grad(*ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bi->data[i];
      }
      if (wants_grad(*bi)) {
        auto& g = detail::ensure_grad(*bi);
        for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * ai->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double c) {
  Tensor y(a.shape());
  const double* ad = a.data();
  double* yd = y.data();
  for (size_t i = 0; i < y.numel(); ++i) yd[i] = ad[i] * c;
  if (detail::tape_needed({&a})) {
    auto ai = a.impl();
    detail::attach_node(y, "scale", {ai}, [ai, c](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * c;
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  const double* xd = x.data();
  double* yd = y.data();
  for (size_t i = 0; i < y.numel(); ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    detail::attach_node(y, "relu", {xi}, [xi](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t i = 0; i < g.size(); ++i)
        if (xi->data[i] > 0.0) g[i] += out.grad[i];
    });
  }
  return y;
}

// --- linear algebra --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  DPT_CHECK(a.dim() == 2 && b.dim() == 2, "matmul: expects rank-2 operands, got "
                                              << shape_str(a.shape()) << " x "
                                              << shape_str(b.shape()));
  size_t m = a.size(0), k = a.size(1), k2 = b.size(0), n = b.size(1);
  DPT_CHECK(k == k2, "matmul: inner dimensions differ, " << shape_str(a.shape()) << " x "
                                                         << shape_str(b.shape()));
  Tensor y({m, n});
  MapM(y.data(), m, n).noalias() = MapCM(a.data(), m, k) * MapCM(b.data(), k, n);
  if (detail::tape_needed({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    detail::attach_node(y, "matmul", {ai, bi}, [ai, bi, m, k, n](const TensorImpl& out) {
      MapCM dy(out.grad.data(), m, n);
      if (wants_grad(*ai)) {
        MapM da(detail::ensure_grad(*ai).data(), m, k);
        da.noalias() += dy * MapCM(bi->data.data(), k, n).transpose();
      }
      if (wants_grad(*bi)) {
        MapM db(detail::ensure_grad(*bi).data(), k, n);
        db.noalias() += MapCM(ai->data.data(), m, k).transpose() * dy;
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  DPT_CHECK(x.dim() >= 2, "linear: input must have (B, Ci, ...) layout");
  DPT_CHECK(w.dim() == 2, "linear: weight must be (Co, Ci)");
  size_t B = x.size(0), ci = x.size(1), co = w.size(0);
  DPT_CHECK(w.size(1) == ci,
            "linear: weight " << shape_str(w.shape()) << " does not accept input channels " << ci);
  DPT_CHECK(b.dim() == 1 && b.size(0) == co, "linear: bias must be (Co)");
  size_t q = x.numel() / (B * ci);  // spatial positions per sample

  Shape out_shape = x.shape();
  out_shape[1] = co;
  Tensor y(out_shape);

  MapCM wm(w.data(), co, ci);
  if (x.dim() == 2) {
    MapM ym(y.data(), B, co);
    ym.noalias() = MapCM(x.data(), B, ci) * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), co);
  } else {
    for (size_t i = 0; i < B; ++i) {
      MapM yb(y.data() + i * co * q, co, q);
      yb.noalias() = wm * MapCM(x.data() + i * ci * q, ci, q);
      yb.colwise() += Eigen::Map<const Eigen::VectorXd>(b.data(), co);
    }
  }

  if (detail::tape_needed({&x, &w, &b})) {
    auto xi = x.impl(), wi = w.impl(), bi = b.impl();
    bool flat = x.dim() == 2;
    detail::attach_node(y, "linear", {xi, wi, bi},
                        [xi, wi, bi, B, ci, co, q, flat](const TensorImpl& out) {
      MapCM wm(wi->data.data(), co, ci);
      if (flat) {
        MapCM dy(out.grad.data(), B, co);
        MapCM xm(xi->data.data(), B, ci);
        if (wants_grad(*xi)) {
          MapM dx(detail::ensure_grad(*xi).data(), B, ci);
          dx.noalias() += dy * wm;
        }
        if (wants_grad(*wi)) {
          MapM dw(detail::ensure_grad(*wi).data(), co, ci);
          dw.noalias() += dy.transpose() * xm;
        }
        if (wants_grad(*bi)) {
          // Fixed-order accumulation keeps the summation order independent of
          // SIMD peeling so repeated runs are bitwise identical.
          double* db = detail::ensure_grad(*bi).data();
          const double* gy = out.grad.data();
          for (size_t r = 0; r < B; ++r)
            for (size_t c = 0; c < co; ++c) db[c] += gy[r * co + c];
        }
        return;
      }
      for (size_t i = 0; i < B; ++i) {
        MapCM dy(out.grad.data() + i * co * q, co, q);
        MapCM xb(xi->data.data() + i * ci * q, ci, q);
        if (wants_grad(*xi)) {
          MapM dx(detail::ensure_grad(*xi).data() + i * ci * q, ci, q);
          dx.noalias() += wm.transpose() * dy;
        }
        if (wants_grad(*wi)) {
          MapM dw(detail::ensure_grad(*wi).data(), co, ci);
          dw.noalias() += dy * xb.transpose();
        }
        if (wants_grad(*bi)) {
          double* db = detail::ensure_grad(*bi).data();
          const double* gy = out.grad.data() + i * co * q;
          for (size_t c = 0; c < co; ++c) {
            double acc = 0.0;
            for (size_t s = 0; s < q; ++s) acc += gy[c * q + s];
            db[c] += acc;
          }
        }
      }
    });
  }
  return y;
}

Tensor grouped_linear(const Tensor& x, const Tensor& w, const Tensor& b, int groups) {
  DPT_CHECK(groups >= 1, "grouped_linear: groups must be >= 1");
  DPT_CHECK(x.dim() >= 3, "grouped_linear: input must have (B, Ci, positions...) layout");
  DPT_CHECK(w.dim() == 3 && w.size(0) == size_t(groups),
            "grouped_linear: weight must be (groups, Co/groups, Ci/groups)");
  size_t B = x.size(0), ci = x.size(1);
  size_t cog = w.size(1), cig = w.size(2);
  size_t co = cog * groups;
  DPT_CHECK(ci == cig * groups, "grouped_linear: input channels " << ci << " not divisible into "
                                                                  << groups << " groups of " << cig);
  DPT_CHECK(b.dim() == 1 && b.size(0) == co, "grouped_linear: bias must be (Co)");
  size_t q = x.numel() / (B * ci);

  Shape out_shape = x.shape();
  out_shape[1] = co;
  Tensor y(out_shape);

  for (size_t i = 0; i < B; ++i) {
    for (size_t g = 0; g < size_t(groups); ++g) {
      MapCM wg(w.data() + g * cog * cig, cog, cig);
      MapCM xg(x.data() + i * ci * q + g * cig * q, cig, q);
      MapM yg(y.data() + i * co * q + g * cog * q, cog, q);
      yg.noalias() = wg * xg;
      yg.colwise() += Eigen::Map<const Eigen::VectorXd>(b.data() + g * cog, cog);
    }
  }

  if (detail::tape_needed({&x, &w, &b})) {
    auto xi = x.impl(), wi = w.impl(), bi = b.impl();
    size_t ng = size_t(groups);
    detail::attach_node(y, "grouped_linear", {xi, wi, bi},
                        [xi, wi, bi, B, ci, co, cog, cig, q, ng](const TensorImpl& out) {
      for (size_t i = 0; i < B; ++i) {
        for (size_t g = 0; g < ng; ++g) {
          MapCM dy(out.grad.data() + i * co * q + g * cog * q, cog, q);
          MapCM wg(wi->data.data() + g * cog * cig, cog, cig);
          MapCM xg(xi->data.data() + i * ci * q + g * cig * q, cig, q);
          if (wants_grad(*xi)) {
            MapM dx(detail::ensure_grad(*xi).data() + i * ci * q + g * cig * q, cig, q);
            dx.noalias() += wg.transpose() * dy;
          }
          if (wants_grad(*wi)) {
            MapM dw(detail::ensure_grad(*wi).data() + g * cog * cig, cog, cig);
            dw.noalias() += dy * xg.transpose();
          }
          if (wants_grad(*bi)) {
            double* db = detail::ensure_grad(*bi).data() + g * cog;
            const double* gy = out.grad.data() + i * co * q + g * cog * q;
            for (size_t c = 0; c < cog; ++c) {
              double acc = 0.0;
              for (size_t s = 0; s < q; ++s) acc += gy[c * q + s];
              db[c] += acc;
            }
          }
        }
      }
    });
  }
  return y;
}

// --- shape ------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  DPT_CHECK(shape_numel(shape) == x.numel(), "reshape: " << shape_str(x.shape()) << " -> "
                                                         << shape_str(shape) << " changes numel");
  Tensor y(std::move(shape));
  y.vec() = x.vec();
  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    detail::attach_node(y, "reshape", {xi}, [xi](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    });
  }
  return y;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  DPT_CHECK(!xs.empty(), "concat_channels: empty input list");
  const Shape& s0 = xs[0].shape();
  DPT_CHECK(s0.size() >= 2, "concat_channels: inputs must have (B, C, ...) layout");
  size_t B = s0[0];
  size_t total_c = 0;
  size_t q = xs[0].numel() / (B * s0[1]);
  for (const Tensor& x : xs) {
    const Shape& s = x.shape();
    DPT_CHECK(s.size() == s0.size() && s[0] == B, "concat_channels: rank/batch mismatch");
    for (size_t i = 2; i < s.size(); ++i)
      DPT_CHECK(s[i] == s0[i], "concat_channels: spatial extents differ");
    total_c += s[1];
  }
  Shape out_shape = s0;
  out_shape[1] = total_c;
  Tensor y(out_shape);

  double* yd = y.data();
  for (size_t i = 0; i < B; ++i) {
    size_t c_off = 0;
    for (const Tensor& x : xs) {
      size_t c = x.size(1);
      std::copy_n(x.data() + i * c * q, c * q, yd + (i * total_c + c_off) * q);
      c_off += c;
    }
  }

  bool tape = false;
  std::vector<const Tensor*> ptrs;
  for (const Tensor& x : xs) ptrs.push_back(&x);
  for (const Tensor* p : ptrs)
    if (detail::tape_needed({p})) tape = true;
  if (tape) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<size_t> chans;
    for (const Tensor& x : xs) {
      impls.push_back(x.impl());
      chans.push_back(x.size(1));
    }
    detail::attach_node(y, "concat_channels", impls,
                        [impls, chans, B, q, total_c](const TensorImpl& out) {
      for (size_t i = 0; i < B; ++i) {
        size_t c_off = 0;
        for (size_t t = 0; t < impls.size(); ++t) {
          size_t c = chans[t];
          if (wants_grad(*impls[t])) {
            auto& g = detail::ensure_grad(*impls[t]);
            const double* src = out.grad.data() + (i * total_c + c_off) * q;
            double* dst = g.data() + i * c * q;
            for (size_t j = 0; j < c * q; ++j) dst[j] += src[j];
          }
          c_off += c;
        }
      }
    });
  }
  return y;
}

Tensor expand_spatial(const Tensor& x, size_t n) {
  DPT_CHECK(x.dim() == 2, "expand_spatial expects (B, C), got " << shape_str(x.shape()));
  DPT_CHECK(n > 0, "expand_spatial: n must be positive");
  size_t B = x.size(0), C = x.size(1);
  Tensor y({B, C, n});
  const double* xd = x.data();
  double* yd = y.data();
  for (size_t r = 0; r < B * C; ++r)
    for (size_t j = 0; j < n; ++j) yd[r * n + j] = xd[r];
  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    detail::attach_node(y, "expand_spatial", {xi}, [xi, n](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t r = 0; r < g.size(); ++r) {
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) s += out.grad[r * n + j];
        g[r] += s;
      }
    });
  }
  return y;
}

// --- reductions ---------------------------------------------------------------------

Tensor reduce_max(const Tensor& x, size_t axis) {
  size_t outer, n, inner;
  axis_split(x.shape(), axis, outer, n, inner);
  DPT_CHECK(n > 0, "reduce_max over empty axis");
  Shape out_shape;
  for (size_t i = 0; i < x.dim(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);

  auto argmax = std::make_shared<std::vector<int32_t>>(outer * inner);
  const double* xd = x.data();
  double* yd = y.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const double* base = xd + o * n * inner + in;
      double best = base[0];
      int32_t best_j = 0;
      for (size_t j = 1; j < n; ++j) {
        double v = base[j * inner];
        if (v > best) {  // strict: ties keep the lowest index
          best = v;
          best_j = int32_t(j);
        }
      }
      yd[o * inner + in] = best;
      (*argmax)[o * inner + in] = best_j;
    }
  }

  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    detail::attach_node(y, "reduce_max", {xi}, [xi, argmax, outer, n, inner](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t o = 0; o < outer; ++o)
        for (size_t in = 0; in < inner; ++in) {
          size_t flat = o * inner + in;
          g[o * n * inner + size_t((*argmax)[flat]) * inner + in] += out.grad[flat];
        }
    });
  }
  return y;
}

namespace {
Tensor reduce_linear(const Tensor& x, size_t axis, bool mean, const char* name) {
  size_t outer, n, inner;
  axis_split(x.shape(), axis, outer, n, inner);
  DPT_CHECK(n > 0, name << " over empty axis");
  Shape out_shape;
  for (size_t i = 0; i < x.dim(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);

  const double* xd = x.data();
  double* yd = y.data();
  double w = mean ? 1.0 / double(n) : 1.0;
  for (size_t o = 0; o < outer; ++o)
    for (size_t in = 0; in < inner; ++in) {
      const double* base = xd + o * n * inner + in;
      double acc = 0.0;
      for (size_t j = 0; j < n; ++j) acc += base[j * inner];
      yd[o * inner + in] = acc * w;
    }

  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    detail::attach_node(y, name, {xi}, [xi, outer, n, inner, w](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t o = 0; o < outer; ++o)
        for (size_t in = 0; in < inner; ++in) {
          double gv = out.grad[o * inner + in] * w;
          double* base = g.data() + o * n * inner + in;
          for (size_t j = 0; j < n; ++j) base[j * inner] += gv;
        }
    });
  }
  return y;
}
}  // namespace

Tensor reduce_mean(const Tensor& x, size_t axis) { return reduce_linear(x, axis, true, "reduce_mean"); }
Tensor reduce_sum(const Tensor& x, size_t axis) { return reduce_linear(x, axis, false, "reduce_sum"); }

Tensor sum_all(const Tensor& x) {
  Tensor y({1});
  const double* xd = x.data();
  double acc = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) acc += xd[i];
  y.data()[0] = acc;
  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    detail::attach_node(y, "sum_all", {xi}, [xi](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[0];
    });
  }
  return y;
}

}  // namespace dpt
