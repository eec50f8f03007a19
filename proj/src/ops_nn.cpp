// Network primitives: batch norm, dropout, structured gathers, losses.
#include <algorithm>
#include <cmath>
#include <memory>

#include "dpt/ops.hpp"

namespace dpt {

namespace {

bool wants_grad(const TensorImpl& t) { return t.requires_grad || t.node != nullptr; }

// (B, C, spatial...) decomposition around the channel axis.
void channel_split(const Tensor& x, size_t& B, size_t& C, size_t& Q) {
  DPT_CHECK(x.dim() >= 2, "expected (B, C, ...) layout, got " << shape_str(x.shape()));
  B = x.size(0);
  C = x.size(1);
  Q = x.numel() / (B * C);
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, bool training) {
  size_t B, C, Q;
  channel_split(x, B, C, Q);
  DPT_CHECK(gamma.dim() == 1 && gamma.size(0) == C, "batch_norm: gamma must be (C)");
  DPT_CHECK(beta.dim() == 1 && beta.size(0) == C, "batch_norm: beta must be (C)");
  DPT_CHECK(stats.running_mean.numel() == C && stats.running_var.numel() == C,
            "batch_norm: running stats sized " << stats.running_mean.numel() << ", expected " << C);
  double* rm = stats.running_mean.data();
  double* rv = stats.running_var.data();

  Tensor y(x.shape());
  const double* xd = x.data();
  double* yd = y.data();
  const double* gd = gamma.data();
  const double* bd = beta.data();

  auto mean = std::make_shared<std::vector<double>>(C);
  auto invstd = std::make_shared<std::vector<double>>(C);
  size_t pop = B * Q;  // statistics population per channel

  if (training) {
    for (size_t c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (size_t b = 0; b < B; ++b) {
        const double* base = xd + (b * C + c) * Q;
        for (size_t q = 0; q < Q; ++q) {
          s += base[q];
          s2 += base[q] * base[q];
        }
      }
      double m = s / double(pop);
      double var = s2 / double(pop) - m * m;  // population variance
      if (var < 0.0) var = 0.0;
      (*mean)[c] = m;
      (*invstd)[c] = 1.0 / std::sqrt(var + stats.eps);
      rm[c] = (1.0 - stats.momentum) * rm[c] + stats.momentum * m;
      rv[c] = (1.0 - stats.momentum) * rv[c] + stats.momentum * var;
    }
  } else {
    for (size_t c = 0; c < C; ++c) {
      (*mean)[c] = rm[c];
      (*invstd)[c] = 1.0 / std::sqrt(rv[c] + stats.eps);
    }
  }

  for (size_t b = 0; b < B; ++b)
    for (size_t c = 0; c < C; ++c) {
      const double* src = xd + (b * C + c) * Q;
      double* dst = yd + (b * C + c) * Q;
      double m = (*mean)[c], is = (*invstd)[c];
      double g = gd[c], bt = bd[c];
      for (size_t q = 0; q < Q; ++q) dst[q] = (src[q] - m) * is * g + bt;
    }

  if (detail::tape_needed({&x, &gamma, &beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    detail::attach_node(y, "batch_norm", {xi, gi, bi},
                        [xi, gi, bi, mean, invstd, B, C, Q, pop, training](const TensorImpl& out) {
      for (size_t c = 0; c < C; ++c) {
        double m = (*mean)[c], is = (*invstd)[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (size_t b = 0; b < B; ++b) {
          const double* dy = out.grad.data() + (b * C + c) * Q;
          const double* xv = xi->data.data() + (b * C + c) * Q;
          for (size_t q = 0; q < Q; ++q) {
            sum_dy += dy[q];
            sum_dy_xhat += dy[q] * (xv[q] - m) * is;
          }
        }
        if (wants_grad(*gi)) detail::ensure_grad(*gi)[c] += sum_dy_xhat;
        if (wants_grad(*bi)) detail::ensure_grad(*bi)[c] += sum_dy;
        if (wants_grad(*xi)) {
          auto& gx = detail::ensure_grad(*xi);
          double g = gi->data[c];
          if (training) {
            double inv_pop = 1.0 / double(pop);
            for (size_t b = 0; b < B; ++b) {
              const double* dy = out.grad.data() + (b * C + c) * Q;
              const double* xv = xi->data.data() + (b * C + c) * Q;
              double* dst = gx.data() + (b * C + c) * Q;
              for (size_t q = 0; q < Q; ++q) {
                double xhat = (xv[q] - m) * is;
                dst[q] += g * is * (dy[q] - inv_pop * (sum_dy + xhat * sum_dy_xhat));
              }
            }
          } else {  // running stats are constants
            for (size_t b = 0; b < B; ++b) {
              const double* dy = out.grad.data() + (b * C + c) * Q;
              double* dst = gx.data() + (b * C + c) * Q;
              for (size_t q = 0; q < Q; ++q) dst[q] += g * is * dy[q];
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double ratio, bool training, Rng& rng) {
  DPT_CHECK(ratio >= 0.0 && ratio < 1.0, "dropout: ratio must be in [0, 1), got " << ratio);
  if (!training || ratio == 0.0) return x;

  double keep = 1.0 - ratio;
  double inv_keep = 1.0 / keep;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (size_t i = 0; i < x.numel(); ++i)
    (*mask)[i] = rng.uniform() < keep ? inv_keep : 0.0;

  Tensor y(x.shape());
  const double* xd = x.data();
  double* yd = y.data();
  for (size_t i = 0; i < y.numel(); ++i) yd[i] = xd[i] * (*mask)[i];

  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    detail::attach_node(y, "dropout", {xi}, [xi, mask](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * (*mask)[i];
    });
  }
  return y;
}

Tensor gather_and_normalize(const Tensor& x, const std::vector<Neighborhood>& nb,
                            int normalize_channels) {
  size_t B, C, P;
  channel_split(x, B, C, P);
  DPT_CHECK(x.dim() == 3, "gather_and_normalize: input must be (B, C, P)");
  DPT_CHECK(nb.size() == B, "gather_and_normalize: " << nb.size() << " neighborhoods for batch " << B);
  DPT_CHECK(normalize_channels >= 0 && size_t(normalize_channels) <= C,
            "gather_and_normalize: normalize_channels out of range");
  size_t no = size_t(nb[0].centers), m = size_t(nb[0].width);
  for (const Neighborhood& n : nb) {
    DPT_CHECK(size_t(n.centers) == no && size_t(n.width) == m,
              "gather_and_normalize: ragged neighborhood batch");
    DPT_CHECK(n.idx.size() == no * m && n.centroid.size() == no,
              "gather_and_normalize: malformed neighborhood table");
  }

  Tensor y({B, C, no, m});
  const double* xd = x.data();
  double* yd = y.data();
  for (size_t b = 0; b < B; ++b) {
    const Neighborhood& n = nb[b];
    for (size_t c = 0; c < C; ++c) {
      const double* src = xd + (b * C + c) * P;
      double* dst = yd + ((b * C + c) * no) * m;
      bool norm = c < size_t(normalize_channels);
      for (size_t i = 0; i < no; ++i) {
        double center = norm ? src[size_t(n.centroid[i])] : 0.0;
        const int32_t* row = n.idx.data() + i * m;
        for (size_t j = 0; j < m; ++j) dst[i * m + j] = src[size_t(row[j])] - center;
      }
    }
  }

  if (detail::tape_needed({&x})) {
    auto xi = x.impl();
    auto tables = std::make_shared<std::vector<Neighborhood>>(nb);
    size_t nc = size_t(normalize_channels);
    detail::attach_node(y, "gather_and_normalize", {xi},
                        [xi, tables, B, C, P, no, m, nc](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t b = 0; b < B; ++b) {
        const Neighborhood& n = (*tables)[b];
        for (size_t c = 0; c < C; ++c) {
          double* dst = g.data() + (b * C + c) * P;
          const double* dy = out.grad.data() + ((b * C + c) * no) * m;
          bool norm = c < nc;
          for (size_t i = 0; i < no; ++i) {
            const int32_t* row = n.idx.data() + i * m;
            for (size_t j = 0; j < m; ++j) {
              double gv = dy[i * m + j];
              dst[size_t(row[j])] += gv;
              if (norm) dst[size_t(n.centroid[i])] -= gv;
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor idw_interpolate(const Tensor& coarse, const std::vector<InterpPlan>& plans) {
  size_t B, C, nc;
  channel_split(coarse, B, C, nc);
  DPT_CHECK(coarse.dim() == 3, "idw_interpolate: input must be (B, C, Nc)");
  DPT_CHECK(plans.size() == B, "idw_interpolate: " << plans.size() << " plans for batch " << B);
  size_t nf = size_t(plans[0].fine), k = size_t(plans[0].k);
  for (const InterpPlan& p : plans)
    DPT_CHECK(size_t(p.fine) == nf && size_t(p.k) == k && p.idx.size() == nf * k &&
                  p.w.size() == nf * k,
              "idw_interpolate: ragged or malformed plan batch");

  Tensor y({B, C, nf});
  const double* xd = coarse.data();
  double* yd = y.data();
  for (size_t b = 0; b < B; ++b) {
    const InterpPlan& p = plans[b];
    for (size_t c = 0; c < C; ++c) {
      const double* src = xd + (b * C + c) * nc;
      double* dst = yd + (b * C + c) * nf;
      for (size_t f = 0; f < nf; ++f) {
        double acc = 0.0;
        for (size_t j = 0; j < k; ++j)
          acc += p.w[f * k + j] * src[size_t(p.idx[f * k + j])];
        dst[f] = acc;
      }
    }
  }

  if (detail::tape_needed({&coarse})) {
    auto xi = coarse.impl();
    auto saved = std::make_shared<std::vector<InterpPlan>>(plans);
    detail::attach_node(y, "idw_interpolate", {xi},
                        [xi, saved, B, C, nc, nf, k](const TensorImpl& out) {
      auto& g = detail::ensure_grad(*xi);
      for (size_t b = 0; b < B; ++b) {
        const InterpPlan& p = (*saved)[b];
        for (size_t c = 0; c < C; ++c) {
          double* dst = g.data() + (b * C + c) * nc;
          const double* dy = out.grad.data() + (b * C + c) * nf;
          for (size_t f = 0; f < nf; ++f)
            for (size_t j = 0; j < k; ++j)
              dst[size_t(p.idx[f * k + j])] += p.w[f * k + j] * dy[f];
        }
      }
    });
  }
  return y;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  size_t B, K, Q;
  channel_split(logits, B, K, Q);
  DPT_CHECK(labels.size() == B * Q, "softmax_cross_entropy: " << labels.size() << " labels for "
                                                              << B * Q << " predictions");
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  const double* zd = logits.data();
  double loss = 0.0;
  for (size_t b = 0; b < B; ++b)
    for (size_t q = 0; q < Q; ++q) {
      int y = labels[b * Q + q];
      DPT_CHECK(y >= 0 && size_t(y) < K, "softmax_cross_entropy: label " << y << " out of range");
      // column (b, :, q)
      double zmax = -1e308;
      for (size_t k = 0; k < K; ++k) zmax = std::max(zmax, zd[(b * K + k) * Q + q]);
      double denom = 0.0;
      for (size_t k = 0; k < K; ++k) denom += std::exp(zd[(b * K + k) * Q + q] - zmax);
      double log_denom = std::log(denom);
      for (size_t k = 0; k < K; ++k) {
        size_t at = (b * K + k) * Q + q;
        (*probs)[at] = std::exp(zd[at] - zmax) / denom;
      }
      loss += log_denom - (zd[(b * K + size_t(y)) * Q + q] - zmax);
    }
  double inv_n = 1.0 / double(B * Q);
  Tensor out = Tensor::scalar(loss * inv_n);

  if (detail::tape_needed({&logits})) {
    auto zi = logits.impl();
    auto saved_labels = std::make_shared<std::vector<int>>(labels);
    detail::attach_node(out, "softmax_cross_entropy", {zi},
                        [zi, probs, saved_labels, B, K, Q, inv_n](const TensorImpl& o) {
      auto& g = detail::ensure_grad(*zi);
      double go = o.grad[0] * inv_n;
      for (size_t b = 0; b < B; ++b)
        for (size_t q = 0; q < Q; ++q) {
          int y = (*saved_labels)[b * Q + q];
          for (size_t k = 0; k < K; ++k) {
            size_t at = (b * K + k) * Q + q;
            g[at] += go * ((*probs)[at] - (size_t(y) == k ? 1.0 : 0.0));
          }
        }
    });
  }
  return out;
}

Tensor cosine_normal_loss(const Tensor& pred, const Tensor& gt) {
  DPT_CHECK(pred.dim() == 3 && pred.size(1) == 3, "cosine_normal_loss: pred must be (B, 3, N)");
  DPT_CHECK(pred.shape() == gt.shape(), "cosine_normal_loss: pred/gt shape mismatch");
  size_t B = pred.size(0), N = pred.size(2);
  const double eps = 1e-12;

  const double* pd = pred.data();
  const double* gd = gt.data();
  double loss = 0.0;
  for (size_t b = 0; b < B; ++b)
    for (size_t n = 0; n < N; ++n) {
      double p[3], g[3];
      for (size_t c = 0; c < 3; ++c) {
        p[c] = pd[(b * 3 + c) * N + n];
        g[c] = gd[(b * 3 + c) * N + n];
      }
      double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      double re = std::max(r, eps);
      double s = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
      loss += 1.0 - s / re;
    }
  double inv_n = 1.0 / double(B * N);
  Tensor out = Tensor::scalar(loss * inv_n);

  if (detail::tape_needed({&pred})) {
    auto pi = pred.impl(), gi = gt.impl();
    detail::attach_node(out, "cosine_normal_loss", {pi, gi},
                        [pi, gi, B, N, inv_n, eps](const TensorImpl& o) {
      auto& grad = detail::ensure_grad(*pi);
      double go = o.grad[0] * inv_n;
      for (size_t b = 0; b < B; ++b)
        for (size_t n = 0; n < N; ++n) {
          double p[3], g[3];
          for (size_t c = 0; c < 3; ++c) {
            p[c] = pi->data[(b * 3 + c) * N + n];
            g[c] = gi->data[(b * 3 + c) * N + n];
          }
          double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
          double re = std::max(r, eps);
          double s = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
          for (size_t c = 0; c < 3; ++c) {
            double d = g[c] / re;
            if (r > eps) d -= s * p[c] / (re * re * re);
            grad[(b * 3 + c) * N + n] -= go * d;  // d(1 - cos)/dp
          }
        }
    });
  }
  return out;
}

std::vector<int> argmax_channels(const Tensor& logits) {
  size_t B, K, Q;
  channel_split(logits, B, K, Q);
  std::vector<int> out(B * Q);
  const double* zd = logits.data();
  for (size_t b = 0; b < B; ++b)
    for (size_t q = 0; q < Q; ++q) {
      double best = zd[(b * K) * Q + q];
      int best_k = 0;
      for (size_t k = 1; k < K; ++k) {
        double v = zd[(b * K + k) * Q + q];
        if (v > best) {
          best = v;
          best_k = int(k);
        }
      }
      out[b * Q + q] = best_k;
    }
  return out;
}

Tensor softmax_channels(const Tensor& logits) {
  size_t B, K, Q;
  channel_split(logits, B, K, Q);
  Tensor y(logits.shape());
  const double* zd = logits.data();
  double* yd = y.data();
  for (size_t b = 0; b < B; ++b)
    for (size_t q = 0; q < Q; ++q) {
      double zmax = -1e308;
      for (size_t k = 0; k < K; ++k) zmax = std::max(zmax, zd[(b * K + k) * Q + q]);
      double denom = 0.0;
      for (size_t k = 0; k < K; ++k) denom += std::exp(zd[(b * K + k) * Q + q] - zmax);
      for (size_t k = 0; k < K; ++k) {
        size_t at = (b * K + k) * Q + q;
        yd[at] = std::exp(zd[at] - zmax) / denom;
      }
    }
  return y;
}

}  // namespace dpt
