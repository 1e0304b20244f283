#include "rccm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rccm/threadpool.hpp"

namespace rccm::nn {

namespace {

void check4(const NodePtr& x, const char* op) {
  if (!x || x->value.rank() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected a [N,C,H,W] input");
  }
}

double init_bound(int64_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

// ---------------------------------------------------------------------------
// GEMM kernels. Parallel split is over output columns (disjoint writes) with a
// fixed k-order per element, so results do not depend on the worker count.
// ---------------------------------------------------------------------------

void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
  // 4-row register blocking over n-tiles sized to keep the C tile and B rows
  // in L1; each output element is produced by exactly one thread with a fixed
  // k-order, so results are independent of the worker count.
  constexpr int64_t kTile = 512;
  parallel_for(n, [&](int64_t nb, int64_t ne) {
    for (int64_t tb = nb; tb < ne; tb += kTile) {
      const int64_t width = std::min(kTile, ne - tb);
      int64_t i = 0;
      for (; i + 4 <= m; i += 4) {
        double* c0 = c + (i + 0) * n + tb;
        double* c1 = c + (i + 1) * n + tb;
        double* c2 = c + (i + 2) * n + tb;
        double* c3 = c + (i + 3) * n + tb;
        if (!accumulate) {
          std::memset(c0, 0, sizeof(double) * static_cast<size_t>(width));
          std::memset(c1, 0, sizeof(double) * static_cast<size_t>(width));
          std::memset(c2, 0, sizeof(double) * static_cast<size_t>(width));
          std::memset(c3, 0, sizeof(double) * static_cast<size_t>(width));
        }
        const double* a0 = a + (i + 0) * k;
        const double* a1 = a + (i + 1) * k;
        const double* a2 = a + (i + 2) * k;
        const double* a3 = a + (i + 3) * k;
        for (int64_t p = 0; p < k; ++p) {
          const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
          const double* br = b + p * n + tb;
          for (int64_t j = 0; j < width; ++j) {
            const double bj = br[j];
            c0[j] += v0 * bj;
            c1[j] += v1 * bj;
            c2[j] += v2 * bj;
            c3[j] += v3 * bj;
          }
        }
      }
      for (; i < m; ++i) {
        double* cr = c + i * n + tb;
        if (!accumulate) std::memset(cr, 0, sizeof(double) * static_cast<size_t>(width));
        const double* ar = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
          const double av = ar[p];
          const double* br = b + p * n + tb;
          for (int64_t j = 0; j < width; ++j) cr[j] += av * br[j];
        }
      }
    }
  });
}

namespace {

// C[M,N] += A^T * B with A stored as [K,M].
void gemm_tn_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  parallel_for(n, [&](int64_t nb, int64_t ne) {
    const int64_t width = ne - nb;
    for (int64_t p = 0; p < k; ++p) {
      const double* ar = a + p * m;
      const double* br = b + p * n + nb;
      for (int64_t i = 0; i < m; ++i) {
        const double av = ar[i];
        double* cr = c + i * n + nb;
        for (int64_t j = 0; j < width; ++j) cr[j] += av * br[j];
      }
    }
  });
}

// C[M,K] += A * B^T with A [M,N], B [K,N]: rows-of-A dot rows-of-B.
void gemm_nt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  parallel_for(m, [&](int64_t mb, int64_t me) {
    for (int64_t i = mb; i < me; ++i) {
      const double* ar = a + i * n;
      double* cr = c + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const double* br = b + p * n;
        double acc = 0.0;
        for (int64_t j = 0; j < n; ++j) acc += ar[j] * br[j];
        cr[p] += acc;
      }
    }
  });
}

void im2col(const double* x, int64_t ch, int64_t h, int64_t w, int64_t ksize, double* col) {
  const int64_t pad = (ksize - 1) / 2;
  const int64_t hw = h * w;
  for (int64_t c = 0; c < ch; ++c) {
    for (int64_t dy = 0; dy < ksize; ++dy) {
      for (int64_t dx = 0; dx < ksize; ++dx) {
        double* dst = col + ((c * ksize + dy) * ksize + dx) * hw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= h) {
            std::memset(dst + y * w, 0, sizeof(double) * static_cast<size_t>(w));
            continue;
          }
          const double* src = x + c * hw + sy * w;
          for (int64_t xx = 0; xx < w; ++xx) {
            const int64_t sx = xx + dx - pad;
            dst[y * w + xx] = (sx < 0 || sx >= w) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

// Gather form of col2im: each input pixel sums its contributions, so the loop
// parallelizes with disjoint writes.
void col2im_acc(const double* col, int64_t ch, int64_t h, int64_t w, int64_t ksize, double* dx) {
  const int64_t pad = (ksize - 1) / 2;
  const int64_t hw = h * w;
  parallel_for(ch, [&](int64_t cb, int64_t ce) {
    for (int64_t c = cb; c < ce; ++c) {
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t xx = 0; xx < w; ++xx) {
          double acc = 0.0;
          for (int64_t dy = 0; dy < ksize; ++dy) {
            const int64_t oy = y - dy + pad;
            if (oy < 0 || oy >= h) continue;
            for (int64_t dx2 = 0; dx2 < ksize; ++dx2) {
              const int64_t ox = xx - dx2 + pad;
              if (ox < 0 || ox >= w) continue;
              acc += col[((c * ksize + dy) * ksize + dx2) * hw + oy * w + ox];
            }
          }
          dx[c * hw + y * w + xx] += acc;
        }
      }
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int64_t in, int64_t out, int64_t k, Rng& rng) : in_ch(in), out_ch(out), ksize(k) {
  if (k != 1 && k != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
  Tensor w({out, in, k, k});
  Tensor b({out});
  const double bound = init_bound(in * k * k);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  for (int64_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-bound, bound);
  weight = make_leaf(std::move(w), true);
  bias = make_leaf(std::move(b), true);
}

NodePtr Conv2d::forward(const NodePtr& x) const {
  check4(x, "conv2d");
  const int64_t n = x->value.dim(0), ci = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  if (ci != in_ch) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(ci) + " channels, layer expects " +
                                std::to_string(in_ch));
  }
  const int64_t hw = h * w;
  const int64_t kk = in_ch * ksize * ksize;
  Tensor y({n, out_ch, h, w});

  // im2col scratch is recomputed in backward rather than captured: holding it
  // per-node would pin hundreds of MB across a deep graph.
  const bool direct = (ksize == 1);
  Tensor col;
  if (!direct) col = Tensor({kk, hw});

  for (int64_t b = 0; b < n; ++b) {
    const double* xb = x->value.data() + b * ci * hw;
    const double* src = xb;
    if (!direct) {
      im2col(xb, ci, h, w, ksize, col.data());
      src = col.data();
    }
    gemm_nn(weight->value.data(), src, y.data() + b * out_ch * hw, out_ch, kk, hw, false);
  }
  // bias
  {
    double* yd = y.data();
    const double* bd = bias->value.data();
    parallel_for(n * out_ch, [&](int64_t ib, int64_t ie) {
      for (int64_t i = ib; i < ie; ++i) {
        const double bv = bd[i % out_ch];
        double* row = yd + i * hw;
        for (int64_t j = 0; j < hw; ++j) row[j] += bv;
      }
    });
  }

  auto wnode = weight;
  auto bnode = bias;
  auto xnode = x;
  const int64_t k = ksize;
  return make_node(
      std::move(y), {x, weight, bias},
      [xnode, wnode, bnode, n, ci, h, w, hw, kk, k, direct](Node& self) {
        const int64_t co = self.value.dim(1);
        const double* dy = self.grad.data();
        if (bnode->requires_grad) {
          Tensor& db = bnode->grad_buf();
          for (int64_t b = 0; b < n; ++b) {
            for (int64_t c = 0; c < co; ++c) {
              const double* row = dy + (b * co + c) * hw;
              double acc = 0.0;
              for (int64_t j = 0; j < hw; ++j) acc += row[j];
              db[c] += acc;
            }
          }
        }
        Tensor col;
        if (!direct && wnode->requires_grad) col = Tensor({kk, hw});
        if (wnode->requires_grad) {
          Tensor& dw = wnode->grad_buf();
          for (int64_t b = 0; b < n; ++b) {
            const double* src = xnode->value.data() + b * ci * hw;
            if (!direct) {
              im2col(src, ci, h, w, k, col.data());
              src = col.data();
            }
            gemm_nt_acc(dy + b * co * hw, src, dw.data(), co, kk, hw);
          }
        }
        if (xnode->requires_grad) {
          Tensor& dx = xnode->grad_buf();
          if (direct) {
            for (int64_t b = 0; b < n; ++b) {
              gemm_tn_acc(wnode->value.data(), dy + b * co * hw, dx.data() + b * ci * hw, kk, co,
                          hw);
            }
          } else {
            Tensor dcol({kk, hw});
            for (int64_t b = 0; b < n; ++b) {
              dcol.zero();
              gemm_tn_acc(wnode->value.data(), dy + b * co * hw, dcol.data(), kk, co, hw);
              col2im_acc(dcol.data(), ci, h, w, k, dx.data() + b * ci * hw);
            }
          }
        }
      },
      "conv2d");
}

void Conv2d::visit_params(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".weight", weight);
  v(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int64_t channels) : ch(channels) {
  gamma = make_leaf(Tensor::full({channels}, 1.0), true);
  beta = make_leaf(Tensor({channels}), true);
  running_mean = Tensor({channels});
  running_var = Tensor::full({channels}, 1.0);
}

NodePtr BatchNorm2d::forward(const NodePtr& x, bool training) {
  check4(x, "batchnorm2d");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  if (c != ch) throw std::invalid_argument("batchnorm2d: channel mismatch");
  const int64_t hw = h * w;
  const int64_t m = n * hw;

  Tensor y({n, c, h, w});
  Tensor mean({c}), inv_std({c});

  const double* xd = x->value.data();
  double* yd = y.data();
  const double* gd = gamma->value.data();
  const double* bd = beta->value.data();

  if (training) {
    parallel_for(c, [&](int64_t cb, int64_t ce) {
      for (int64_t cc = cb; cc < ce; ++cc) {
        double s = 0.0;
        for (int64_t b = 0; b < n; ++b) {
          const double* row = xd + (b * c + cc) * hw;
          for (int64_t j = 0; j < hw; ++j) s += row[j];
        }
        const double mu = s / static_cast<double>(m);
        double v = 0.0;
        for (int64_t b = 0; b < n; ++b) {
          const double* row = xd + (b * c + cc) * hw;
          for (int64_t j = 0; j < hw; ++j) {
            const double d = row[j] - mu;
            v += d * d;
          }
        }
        const double var = v / static_cast<double>(m);
        mean[cc] = mu;
        inv_std[cc] = 1.0 / std::sqrt(var + eps);
        // running stats use the unbiased variance
        const double var_u = m > 1 ? v / static_cast<double>(m - 1) : var;
        running_mean[cc] = (1.0 - momentum) * running_mean[cc] + momentum * mu;
        running_var[cc] = (1.0 - momentum) * running_var[cc] + momentum * var_u;
      }
    });
  } else {
    for (int64_t cc = 0; cc < c; ++cc) {
      mean[cc] = running_mean[cc];
      inv_std[cc] = 1.0 / std::sqrt(running_var[cc] + eps);
    }
  }

  parallel_for(n * c, [&](int64_t ib, int64_t ie) {
    for (int64_t i = ib; i < ie; ++i) {
      const int64_t cc = i % c;
      const double mu = mean[cc], is = inv_std[cc], g = gd[cc], b2 = bd[cc];
      const double* row = xd + i * hw;
      double* out = yd + i * hw;
      for (int64_t j = 0; j < hw; ++j) out[j] = g * (row[j] - mu) * is + b2;
    }
  });

  auto xnode = x;
  auto gnode = gamma;
  auto bnode = beta;
  auto mean_h = std::make_shared<Tensor>(std::move(mean));
  auto istd_h = std::make_shared<Tensor>(std::move(inv_std));
  return make_node(
      std::move(y), {x, gamma, beta},
      [xnode, gnode, bnode, mean_h, istd_h, n, c, hw, m, training](Node& self) {
        const double* dy = self.grad.data();
        const double* xd2 = xnode->value.data();
        const double* gd2 = gnode->value.data();
        const bool need_dx = xnode->requires_grad;
        const bool need_dg = gnode->requires_grad;
        const bool need_db = bnode->requires_grad;
        double* dxp = need_dx ? xnode->grad_buf().data() : nullptr;
        double* dgp = need_dg ? gnode->grad_buf().data() : nullptr;
        double* dbp = need_db ? bnode->grad_buf().data() : nullptr;
        parallel_for(c, [&](int64_t cb, int64_t ce) {
          for (int64_t cc = cb; cc < ce; ++cc) {
            const double mu = (*mean_h)[cc], is = (*istd_h)[cc];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int64_t b = 0; b < n; ++b) {
              const double* dyr = dy + (b * c + cc) * hw;
              const double* xr = xd2 + (b * c + cc) * hw;
              for (int64_t j = 0; j < hw; ++j) {
                sum_dy += dyr[j];
                sum_dy_xhat += dyr[j] * (xr[j] - mu) * is;
              }
            }
            if (dgp) dgp[cc] += sum_dy_xhat;
            if (dbp) dbp[cc] += sum_dy;
            if (dxp) {
              const double g = gd2[cc];
              if (training) {
                const double inv_m = 1.0 / static_cast<double>(m);
                for (int64_t b = 0; b < n; ++b) {
                  const double* dyr = dy + (b * c + cc) * hw;
                  const double* xr = xd2 + (b * c + cc) * hw;
                  double* dxr = dxp + (b * c + cc) * hw;
                  for (int64_t j = 0; j < hw; ++j) {
                    const double xhat = (xr[j] - mu) * is;
                    dxr[j] += g * is * (dyr[j] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
                  }
                }
              } else {
                for (int64_t b = 0; b < n; ++b) {
                  const double* dyr = dy + (b * c + cc) * hw;
                  double* dxr = dxp + (b * c + cc) * hw;
                  for (int64_t j = 0; j < hw; ++j) dxr[j] += g * is * dyr[j];
                }
              }
            }
          }
        });
      },
      "batchnorm2d");
}

void BatchNorm2d::visit_params(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".gamma", gamma);
  v(prefix + ".beta", beta);
}

void BatchNorm2d::visit_buffers(const std::string& prefix, const BufferVisitor& v) {
  v(prefix + ".running_mean", running_mean);
  v(prefix + ".running_var", running_var);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int64_t in, int64_t out, Rng& rng) : in_f(in), out_f(out) {
  Tensor w({out, in});
  Tensor b({out});
  const double bound = init_bound(in);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  for (int64_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-bound, bound);
  weight = make_leaf(std::move(w), true);
  bias = make_leaf(std::move(b), true);
}

NodePtr Linear::forward(const NodePtr& x) const {
  if (x->value.rank() != 2 || x->value.dim(1) != in_f) {
    throw std::invalid_argument("linear: expected [N," + std::to_string(in_f) + "] input");
  }
  const int64_t n = x->value.dim(0);
  Tensor y({n, out_f});
  for (int64_t b = 0; b < n; ++b) {
    const double* xr = x->value.data() + b * in_f;
    double* yr = y.data() + b * out_f;
    for (int64_t o = 0; o < out_f; ++o) {
      const double* wr = weight->value.data() + o * in_f;
      double acc = bias->value[o];
      for (int64_t i = 0; i < in_f; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
  auto xnode = x;
  auto wnode = weight;
  auto bnode = bias;
  const int64_t in_f2 = in_f, out_f2 = out_f;
  return make_node(
      std::move(y), {x, weight, bias},
      [xnode, wnode, bnode, n, in_f2, out_f2](Node& self) {
        const double* dy = self.grad.data();
        if (bnode->requires_grad) {
          Tensor& db = bnode->grad_buf();
          for (int64_t b = 0; b < n; ++b)
            for (int64_t o = 0; o < out_f2; ++o) db[o] += dy[b * out_f2 + o];
        }
        if (wnode->requires_grad) {
          Tensor& dw = wnode->grad_buf();
          for (int64_t b = 0; b < n; ++b) {
            const double* xr = xnode->value.data() + b * in_f2;
            for (int64_t o = 0; o < out_f2; ++o) {
              const double g = dy[b * out_f2 + o];
              double* dwr = dw.data() + o * in_f2;
              for (int64_t i = 0; i < in_f2; ++i) dwr[i] += g * xr[i];
            }
          }
        }
        if (xnode->requires_grad) {
          Tensor& dx = xnode->grad_buf();
          for (int64_t b = 0; b < n; ++b) {
            double* dxr = dx.data() + b * in_f2;
            for (int64_t o = 0; o < out_f2; ++o) {
              const double g = dy[b * out_f2 + o];
              const double* wr = wnode->value.data() + o * in_f2;
              for (int64_t i = 0; i < in_f2; ++i) dxr[i] += g * wr[i];
            }
          }
        }
      },
      "linear");
}

void Linear::visit_params(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".weight", weight);
  v(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

NodePtr relu(const NodePtr& x) {
  Tensor y(x->value.shape());
  const double* xd = x->value.data();
  double* yd = y.data();
  const int64_t n = y.numel();
  parallel_for(n, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  });
  auto xnode = x;
  return make_node(
      std::move(y), {x},
      [xnode](Node& self) {
        if (!xnode->requires_grad) return;
        Tensor& dx = xnode->grad_buf();
        const double* dy = self.grad.data();
        const double* xd2 = xnode->value.data();
        double* dxp = dx.data();
        const int64_t n2 = self.value.numel();
        parallel_for(n2, [&](int64_t b, int64_t e) {
          for (int64_t i = b; i < e; ++i) {
            if (xd2[i] > 0.0) dxp[i] += dy[i];
          }
        });
      },
      "relu");
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor y(a->value.shape());
  const double* ad = a->value.data();
  const double* bd = b->value.data();
  double* yd = y.data();
  const int64_t n = y.numel();
  parallel_for(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) yd[i] = ad[i] + bd[i];
  });
  auto an = a, bn = b;
  return make_node(
      std::move(y), {a, b},
      [an, bn](Node& self) {
        const double* dy = self.grad.data();
        const int64_t n2 = self.value.numel();
        for (const auto& p : {an, bn}) {
          if (!p->requires_grad) continue;
          double* dp = p->grad_buf().data();
          for (int64_t i = 0; i < n2; ++i) dp[i] += dy[i];
        }
      },
      "add");
}

NodePtr scale(const NodePtr& x, double s) {
  Tensor y(x->value.shape());
  const double* xd = x->value.data();
  double* yd = y.data();
  for (int64_t i = 0; i < y.numel(); ++i) yd[i] = s * xd[i];
  auto xnode = x;
  return make_node(
      std::move(y), {x},
      [xnode, s](Node& self) {
        if (!xnode->requires_grad) return;
        double* dx = xnode->grad_buf().data();
        const double* dy = self.grad.data();
        for (int64_t i = 0; i < self.value.numel(); ++i) dx[i] += s * dy[i];
      },
      "scale");
}

NodePtr max_pool2(const NodePtr& x) {
  check4(x, "max_pool2");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("max_pool2: H and W must be even");
  const int64_t oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c * oh * ow));
  const double* xd = x->value.data();
  double* yd = y.data();
  int64_t* am = argmax->data();
  parallel_for(n * c, [&](int64_t ib, int64_t ie) {
    for (int64_t i = ib; i < ie; ++i) {
      const double* plane = xd + i * h * w;
      double* out = yd + i * oh * ow;
      int64_t* ap = am + i * oh * ow;
      for (int64_t y2 = 0; y2 < oh; ++y2) {
        for (int64_t x2 = 0; x2 < ow; ++x2) {
          const int64_t base = (2 * y2) * w + 2 * x2;
          int64_t best = base;
          double bv = plane[base];
          const int64_t cand[3] = {base + 1, base + w, base + w + 1};
          for (int64_t idx : cand) {
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
          out[y2 * ow + x2] = bv;
          ap[y2 * ow + x2] = best;
        }
      }
    }
  });
  auto xnode = x;
  return make_node(
      std::move(y), {x},
      [xnode, argmax, n, c, h, w, oh, ow](Node& self) {
        if (!xnode->requires_grad) return;
        double* dx = xnode->grad_buf().data();
        const double* dy = self.grad.data();
        const int64_t* am2 = argmax->data();
        parallel_for(n * c, [&](int64_t ib, int64_t ie) {
          for (int64_t i = ib; i < ie; ++i) {
            double* dplane = dx + i * h * w;
            const double* dout = dy + i * oh * ow;
            const int64_t* ap = am2 + i * oh * ow;
            for (int64_t j = 0; j < oh * ow; ++j) dplane[ap[j]] += dout[j];
          }
        });
      },
      "max_pool2");
}

NodePtr concat_channels(const std::vector<NodePtr>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const int64_t n = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
  int64_t ctot = 0;
  for (const auto& x : xs) {
    check4(x, "concat_channels");
    if (x->value.dim(0) != n || x->value.dim(2) != h || x->value.dim(3) != w) {
      throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    }
    ctot += x->value.dim(1);
  }
  Tensor y({n, ctot, h, w});
  const int64_t hw = h * w;
  double* yd = y.data();
  int64_t coff = 0;
  for (const auto& x : xs) {
    const int64_t ci = x->value.dim(1);
    const double* xd = x->value.data();
    for (int64_t b = 0; b < n; ++b) {
      std::memcpy(yd + (b * ctot + coff) * hw, xd + b * ci * hw,
                  sizeof(double) * static_cast<size_t>(ci * hw));
    }
    coff += ci;
  }
  auto parts = xs;
  return make_node(
      std::move(y), xs,
      [parts, n, ctot, hw](Node& self) {
        const double* dy = self.grad.data();
        int64_t coff2 = 0;
        for (const auto& x : parts) {
          const int64_t ci = x->value.dim(1);
          if (x->requires_grad) {
            double* dx = x->grad_buf().data();
            for (int64_t b = 0; b < n; ++b) {
              const double* src = dy + (b * ctot + coff2) * hw;
              double* dst = dx + b * ci * hw;
              for (int64_t i = 0; i < ci * hw; ++i) dst[i] += src[i];
            }
          }
          coff2 += ci;
        }
      },
      "concat_channels");
}

NodePtr select_channel(const NodePtr& x, int64_t c) {
  check4(x, "select_channel");
  const int64_t n = x->value.dim(0), ci = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  if (c < 0 || c >= ci) throw std::invalid_argument("select_channel: channel out of range");
  const int64_t hw = h * w;
  Tensor y({n, 1, h, w});
  for (int64_t b = 0; b < n; ++b) {
    std::memcpy(y.data() + b * hw, x->value.data() + (b * ci + c) * hw,
                sizeof(double) * static_cast<size_t>(hw));
  }
  auto xnode = x;
  return make_node(
      std::move(y), {x},
      [xnode, c, n, ci, hw](Node& self) {
        if (!xnode->requires_grad) return;
        double* dx = xnode->grad_buf().data();
        const double* dy = self.grad.data();
        for (int64_t b = 0; b < n; ++b) {
          double* dst = dx + (b * ci + c) * hw;
          const double* src = dy + b * hw;
          for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
      },
      "select_channel");
}

namespace {

struct ResizeAxis {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is (1 - w1)
};

// Half-pixel-center sampling; reduces to the identity when sizes match.
ResizeAxis resize_axis(int64_t src, int64_t dst) {
  ResizeAxis a;
  a.i0.resize(static_cast<size_t>(dst));
  a.i1.resize(static_cast<size_t>(dst));
  a.w1.resize(static_cast<size_t>(dst));
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (int64_t i = 0; i < dst; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (pos < 0.0) pos = 0.0;
    const double cap = static_cast<double>(src - 1);
    if (pos > cap) pos = cap;
    const int64_t lo = static_cast<int64_t>(pos);
    a.i0[i] = lo;
    a.i1[i] = std::min(lo + 1, src - 1);
    a.w1[i] = pos - static_cast<double>(lo);
  }
  return a;
}

}  // namespace

NodePtr bilinear_resize(const NodePtr& x, int64_t th, int64_t tw) {
  check4(x, "bilinear_resize");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  if (th < 1 || tw < 1) throw std::invalid_argument("bilinear_resize: bad target size");
  auto ay = std::make_shared<ResizeAxis>(resize_axis(h, th));
  auto ax = std::make_shared<ResizeAxis>(resize_axis(w, tw));
  Tensor y({n, c, th, tw});
  const double* xd = x->value.data();
  double* yd = y.data();
  parallel_for(n * c, [&](int64_t ib, int64_t ie) {
    for (int64_t i = ib; i < ie; ++i) {
      const double* plane = xd + i * h * w;
      double* out = yd + i * th * tw;
      for (int64_t oy = 0; oy < th; ++oy) {
        const int64_t y0 = ay->i0[oy], y1 = ay->i1[oy];
        const double fy = ay->w1[oy];
        for (int64_t ox = 0; ox < tw; ++ox) {
          const int64_t x0 = ax->i0[ox], x1 = ax->i1[ox];
          const double fx = ax->w1[ox];
          const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
          const double bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
          out[oy * tw + ox] = top * (1.0 - fy) + bot * fy;
        }
      }
    }
  });
  auto xnode = x;
  return make_node(
      std::move(y), {x},
      [xnode, ay, ax, n, c, h, w, th, tw](Node& self) {
        if (!xnode->requires_grad) return;
        // scatter-add; kept serial per plane to avoid write races
        double* dx = xnode->grad_buf().data();
        const double* dy = self.grad.data();
        for (int64_t i = 0; i < n * c; ++i) {
          double* dplane = dx + i * h * w;
          const double* dout = dy + i * th * tw;
          for (int64_t oy = 0; oy < th; ++oy) {
            const int64_t y0 = ay->i0[oy], y1 = ay->i1[oy];
            const double fy = ay->w1[oy];
            for (int64_t ox = 0; ox < tw; ++ox) {
              const int64_t x0 = ax->i0[ox], x1 = ax->i1[ox];
              const double fx = ax->w1[ox];
              const double g = dout[oy * tw + ox];
              dplane[y0 * w + x0] += g * (1.0 - fx) * (1.0 - fy);
              dplane[y0 * w + x1] += g * fx * (1.0 - fy);
              dplane[y1 * w + x0] += g * (1.0 - fx) * fy;
              dplane[y1 * w + x1] += g * fx * fy;
            }
          }
        }
      },
      "bilinear_resize");
}

NodePtr softmax_channels(const NodePtr& x) {
  check4(x, "softmax_channels");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  if (!x->value.all_finite()) throw std::invalid_argument("softmax_channels: non-finite logits");
  const int64_t hw = h * w;
  Tensor y({n, c, h, w});
  const double* xd = x->value.data();
  double* yd = y.data();
  parallel_for(n * hw, [&](int64_t pb, int64_t pe) {
    for (int64_t p = pb; p < pe; ++p) {
      const int64_t b = p / hw, px = p % hw;
      const double* base = xd + b * c * hw + px;
      double* out = yd + b * c * hw + px;
      double mx = base[0];
      for (int64_t k = 1; k < c; ++k) mx = std::max(mx, base[k * hw]);
      double z = 0.0;
      for (int64_t k = 0; k < c; ++k) z += std::exp(base[k * hw] - mx);
      for (int64_t k = 0; k < c; ++k) out[k * hw] = std::exp(base[k * hw] - mx) / z;
    }
  });
  auto xnode = x;
  return make_node(
      std::move(y), {x},
      [xnode, n, c, hw](Node& self) {
        if (!xnode->requires_grad) return;
        double* dx = xnode->grad_buf().data();
        const double* dy = self.grad.data();
        const double* q = self.value.data();
        parallel_for(n * hw, [&](int64_t pb, int64_t pe) {
          for (int64_t p = pb; p < pe; ++p) {
            const int64_t b = p / hw, px = p % hw;
            const double* qp = q + b * c * hw + px;
            const double* dyp = dy + b * c * hw + px;
            double* dxp = dx + b * c * hw + px;
            double dot = 0.0;
            for (int64_t k = 0; k < c; ++k) dot += qp[k * hw] * dyp[k * hw];
            for (int64_t k = 0; k < c; ++k) dxp[k * hw] += qp[k * hw] * (dyp[k * hw] - dot);
          }
        });
      },
      "softmax_channels");
}

NodePtr global_avg_pool(const NodePtr& x) {
  check4(x, "global_avg_pool");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  const int64_t hw = h * w;
  Tensor y({n, c});
  const double* xd = x->value.data();
  for (int64_t i = 0; i < n * c; ++i) {
    const double* row = xd + i * hw;
    double acc = 0.0;
    for (int64_t j = 0; j < hw; ++j) acc += row[j];
    y[i] = acc / static_cast<double>(hw);
  }
  auto xnode = x;
  return make_node(
      std::move(y), {x},
      [xnode, n, c, hw](Node& self) {
        if (!xnode->requires_grad) return;
        double* dx = xnode->grad_buf().data();
        const double* dy = self.grad.data();
        const double inv = 1.0 / static_cast<double>(hw);
        for (int64_t i = 0; i < n * c; ++i) {
          const double g = dy[i] * inv;
          double* row = dx + i * hw;
          for (int64_t j = 0; j < hw; ++j) row[j] += g;
        }
      },
      "global_avg_pool");
}

NodePtr affine_scalars(const std::vector<NodePtr>& xs, const std::vector<double>& coeffs) {
  if (xs.size() != coeffs.size() || xs.empty()) {
    throw std::invalid_argument("affine_scalars: mismatched term lists");
  }
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->value.numel() != 1) throw std::invalid_argument("affine_scalars: non-scalar term");
    acc += coeffs[i] * xs[i]->value[0];
  }
  Tensor y({1});
  y[0] = acc;
  auto parts = xs;
  auto cs = coeffs;
  return make_node(
      std::move(y), xs,
      [parts, cs](Node& self) {
        const double g = self.grad[0];
        for (size_t i = 0; i < parts.size(); ++i) {
          if (parts[i]->requires_grad) parts[i]->grad_buf()[0] += cs[i] * g;
        }
      },
      "affine_scalars");
}

}  // namespace rccm::nn
