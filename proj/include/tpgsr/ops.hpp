#pragma once
// Differentiable primitives. Each op validates shapes, computes forward with
// plain loops + GEMM, and registers a backward closure on the tape.
//
// Batch loops shard across worker threads; any cross-sample accumulation
// (e.g. weight gradients) goes through per-chunk buffers merged in ascending
// chunk order, so results are bitwise-stable for a fixed thread setting.

#include <cmath>
#include <optional>

#include "tpgsr/blas.hpp"
#include "tpgsr/tensor.hpp"

namespace tpgsr {

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

// Writes patch row k of sample-local column n at cols[k * rstride + n]; a
// row stride larger than Ho*Wo lets whole-batch matrices share one layout
// (pass cols + b*N as the base for sample b with rstride = B*N).
template <class T>
void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t kh,
            int64_t kw, int64_t sh, int64_t sw, int64_t ph, int64_t pw,
            int64_t Ho, int64_t Wo, T* cols, int64_t rstride = -1) {
  const int64_t N = Ho * Wo;
  if (rstride < 0) rstride = N;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        T* row = cols + ((c * kh + i) * kw + j) * rstride;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t h = ho * sh - ph + i;
          T* dst = row + ho * Wo;
          if (h < 0 || h >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = img + (c * H + h) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            int64_t w = wo * sw - pw + j;
            dst[wo] = (w >= 0 && w < W) ? src[w] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, int64_t C, int64_t H, int64_t W, int64_t kh,
                int64_t kw, int64_t sh, int64_t sw, int64_t ph, int64_t pw,
                int64_t Ho, int64_t Wo, T* img, int64_t rstride = -1) {
  const int64_t N = Ho * Wo;
  if (rstride < 0) rstride = N;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        const T* row = cols + ((c * kh + i) * kw + j) * rstride;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t h = ho * sh - ph + i;
          if (h < 0 || h >= H) continue;
          T* dst = img + (c * H + h) * W;
          const T* src = row + ho * Wo;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            int64_t w = wo * sw - pw + j;
            if (w >= 0 && w < W) dst[w] += src[wo];
          }
        }
      }
}

// Scratch buffers for the whole-batch conv matrices, reused across calls so
// the ~100 MB transients are allocated once per thread instead of per step.
template <class T>
std::vector<T>& conv_scratch(int which, size_t n) {
  static thread_local std::vector<T> bufs[4];
  auto& b = bufs[which];
  if (b.size() < n) b.resize(n);
  return b;
}

// ---------------------------------------------------------------------------
// conv2d: input [B,Cin,H,W], weight [Cout,Cin,kh,kw], optional bias [Cout]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::optional<Tensor<T>>& bias, int64_t sh, int64_t sw,
                 int64_t ph, int64_t pw) {
  check(x.rank() == 4 && w.rank() == 4, "conv2d expects 4-D input and weight");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(1) == Cin, "conv2d channel mismatch: input ",
        shape_str(x.shape()), " vs weight ", shape_str(w.shape()));
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d kernel dims must be odd");
  check(sh >= 1 && sw >= 1 && ph >= 0 && pw >= 0,
        "conv2d stride must be >=1 and padding >=0");
  if (bias) check(bias->numel() == Cout, "conv2d bias length != Cout");
  const int64_t Ho = (H + 2 * ph - kh) / sh + 1;
  const int64_t Wo = (W + 2 * pw - kw) / sw + 1;
  check(Ho >= 1 && Wo >= 1, "conv2d output collapsed to zero size");
  const int64_t K = Cin * kh * kw, N = Ho * Wo;

  std::vector<Tensor<T>> parents = {x, w};
  if (bias) parents.push_back(*bias);
  auto xi = x.impl();
  auto wi = w.impl();
  std::shared_ptr<TensorImpl<T>> bi = bias ? bias->impl() : nullptr;

  // The batch is lowered into one [K, B*N] patch matrix so each conv costs a
  // single large GEMM instead of B small ones.
  const int64_t BN = B * N;
  Tensor<T> out = make_node<T>(
      {B, Cout, Ho, Wo}, parents,
      [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        std::vector<T>* gx = xi->needs_grad ? &xi->ensure_grad() : nullptr;
        std::vector<T>* gw = wi->needs_grad ? &wi->ensure_grad() : nullptr;
        std::vector<T>* gb =
            (bi && bi->needs_grad) ? &bi->ensure_grad() : nullptr;
        // go_perm[c][b*N+n] = gout[b][c][n]
        T* go_perm = conv_scratch<T>(1, size_t(Cout * BN)).data();
        parallel_chunks(B, [&](int64_t b0, int64_t b1, int) {
          for (int64_t b = b0; b < b1; ++b)
            for (int64_t c = 0; c < Cout; ++c)
              std::copy(gout + (b * Cout + c) * N, gout + (b * Cout + c + 1) * N,
                        go_perm + c * BN + b * N);
        });
        if (gb) {
          for (int64_t c = 0; c < Cout; ++c) {
            T s = 0;
            const T* g = go_perm + c * BN;
            for (int64_t n = 0; n < BN; ++n) s += g[n];
            (*gb)[size_t(c)] += s;
          }
        }
        if (gw) {
          T* cols = conv_scratch<T>(0, size_t(K * BN)).data();
          parallel_chunks(B, [&](int64_t b0, int64_t b1, int) {
            for (int64_t b = b0; b < b1; ++b)
              im2col(xi->data.data() + b * Cin * H * W, Cin, H, W, kh, kw, sh,
                     sw, ph, pw, Ho, Wo, cols + b * N, BN);
          });
          // dW += go_perm [Cout,BN] x cols^T [BN,K]
          gemm(false, true, int(Cout), int(K), int(BN), T(1), go_perm, int(BN),
               cols, int(BN), T(1), gw->data(), int(K));
        }
        if (gx) {  // dcols = W^T [K,Cout] x go_perm [Cout,BN], then scatter
          T* dcols = conv_scratch<T>(2, size_t(K * BN)).data();
          gemm(true, false, int(K), int(BN), int(Cout), T(1), wi->data.data(),
               int(K), go_perm, int(BN), T(0), dcols, int(BN));
          parallel_chunks(B, [&](int64_t b0, int64_t b1, int) {
            for (int64_t b = b0; b < b1; ++b)
              col2im_add(dcols + b * N, Cin, H, W, kh, kw, sh, sw, ph, pw, Ho,
                         Wo, gx->data() + b * Cin * H * W, BN);
          });
        }
      });

  {
    T* cols = conv_scratch<T>(0, size_t(K * BN)).data();
    T* prod = conv_scratch<T>(1, size_t(Cout * BN)).data();
    parallel_chunks(B, [&](int64_t b0, int64_t b1, int) {
      for (int64_t b = b0; b < b1; ++b)
        im2col(x.data().data() + b * Cin * H * W, Cin, H, W, kh, kw, sh, sw,
               ph, pw, Ho, Wo, cols + b * N, BN);
    });
    gemm(false, false, int(Cout), int(BN), int(K), T(1), w.data().data(),
         int(K), cols, int(BN), T(0), prod, int(BN));
    T* o = out.data().data();
    const T* bv = bias ? bias->data().data() : nullptr;
    parallel_chunks(B, [&](int64_t b0, int64_t b1, int) {
      for (int64_t b = b0; b < b1; ++b)
        for (int64_t c = 0; c < Cout; ++c) {
          const T* src = prod + c * BN + b * N;
          T* dst = o + (b * Cout + c) * N;
          if (bv) {
            T bc = bv[c];
            for (int64_t n = 0; n < N; ++n) dst[n] = src[n] + bc;
          } else {
            std::copy(src, src + N, dst);
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// deconv2d (transposed conv): input [B,Cin,H,W], weight [Cin,Cout,3,3]
// out = (in-1)*s - 2p + k + op per axis; output_padding < stride
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t sh,
                   int64_t sw, int64_t ph, int64_t pw, int64_t oph,
                   int64_t opw,
                   const std::optional<Tensor<T>>& bias = std::nullopt) {
  check(x.rank() == 4 && w.rank() == 4, "deconv2d expects 4-D input and weight");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(0) == Cin, "deconv2d channel mismatch: input ",
        shape_str(x.shape()), " vs weight ", shape_str(w.shape()));
  check(kh == 3 && kw == 3, "deconv2d kernel must be 3x3");
  check(oph < sh && opw < sw, "deconv2d output_padding (", oph, ",", opw,
        ") must be < stride (", sh, ",", sw, ")");
  if (bias) check(bias->numel() == Cout, "deconv2d bias length != Cout");
  const int64_t Ho = (H - 1) * sh - 2 * ph + kh + oph;
  const int64_t Wo = (W - 1) * sw - 2 * pw + kw + opw;
  check(Ho >= 1 && Wo >= 1, "deconv2d output collapsed to zero size");
  const int64_t M = Cout * kh * kw, N = H * W;

  auto xi = x.impl();
  auto wi = w.impl();
  std::vector<Tensor<T>> parents = {x, w};
  if (bias) parents.push_back(*bias);
  std::shared_ptr<TensorImpl<T>> bi = bias ? bias->impl() : nullptr;

  Tensor<T> out = make_node<T>(
      {B, Cout, Ho, Wo}, parents,
      [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        std::vector<T>* gx = xi->needs_grad ? &xi->ensure_grad() : nullptr;
        std::vector<T>* gw = wi->needs_grad ? &wi->ensure_grad() : nullptr;
        std::vector<T>* gb =
            (bi && bi->needs_grad) ? &bi->ensure_grad() : nullptr;
        int chunks = plan_chunks(B, max_threads());
        std::vector<std::vector<T>> wparts, bparts;
        if (gw) wparts.assign(size_t(chunks), std::vector<T>(size_t(Cin * M), T(0)));
        if (gb) bparts.assign(size_t(chunks), std::vector<T>(size_t(Cout), T(0)));
        parallel_chunks(B, [&](int64_t b0, int64_t b1, int ci) {
          std::vector<T> gcols(size_t(M * N));
          for (int64_t b = b0; b < b1; ++b) {
            const T* go = gout + b * Cout * Ho * Wo;
            // gcols = gather of gout at the scatter positions = im2col of
            // gout with the same geometry (output plays the "image" role).
            im2col(go, Cout, Ho, Wo, kh, kw, sh, sw, ph, pw, H, W,
                   gcols.data());
            if (gx)  // dX = W [Cin,M] x gcols [M,N]
              gemm(false, false, int(Cin), int(N), int(M), T(1),
                   wi->data.data(), int(M), gcols.data(), int(N), T(1),
                   gx->data() + b * Cin * N, int(N));
            if (gw)  // dW += X [Cin,N] x gcols^T [N,M]
              gemm(false, true, int(Cin), int(M), int(N), T(1),
                   xi->data.data() + b * Cin * N, int(N), gcols.data(), int(N),
                   T(1), wparts[size_t(ci)].data(), int(M));
            if (gb) {
              T* bp = bparts[size_t(ci)].data();
              for (int64_t c = 0; c < Cout; ++c) {
                T s = 0;
                const T* g = go + c * Ho * Wo;
                for (int64_t n = 0; n < Ho * Wo; ++n) s += g[n];
                bp[c] += s;
              }
            }
          }
        });
        for (int ci = 0; ci < chunks; ++ci) {
          if (gw)
            for (int64_t i = 0; i < Cin * M; ++i)
              (*gw)[size_t(i)] += wparts[size_t(ci)][size_t(i)];
          if (gb)
            for (int64_t c = 0; c < Cout; ++c)
              (*gb)[size_t(c)] += bparts[size_t(ci)][size_t(c)];
        }
      });

  parallel_chunks(B, [&](int64_t b0, int64_t b1, int) {
    std::vector<T> cols(size_t(M * N));
    for (int64_t b = b0; b < b1; ++b) {
      // cols = W^T [M,Cin] x X [Cin,N]
      gemm(true, false, int(M), int(N), int(Cin), T(1), w.data().data(),
           int(M), x.data().data() + b * Cin * N, int(N), T(0), cols.data(),
           int(N));
      T* o = out.data().data() + b * Cout * Ho * Wo;
      std::fill(o, o + Cout * Ho * Wo, T(0));
      col2im_add(cols.data(), Cout, Ho, Wo, kh, kw, sh, sw, ph, pw, H, W, o);
      if (bias)
        for (int64_t c = 0; c < Cout; ++c) {
          T bv = bias->data()[size_t(c)];
          T* oc = o + c * Ho * Wo;
          for (int64_t n = 0; n < Ho * Wo; ++n) oc[n] += bv;
        }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, std::vector<T>& run_mean,
                      std::vector<T>& run_var, bool training,
                      T momentum = T(0.1), T eps = T(1e-5)) {
  check(x.rank() == 4, "batchnorm2d expects 4-D input");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(gamma.numel() == C && beta.numel() == C,
        "batchnorm2d gamma/beta length must equal C=", C);
  check(int64_t(run_mean.size()) == C && int64_t(run_var.size()) == C,
        "batchnorm2d running stats length must equal C=", C);
  const int64_t n = B * H * W;
  check(!training || n > 1,
        "batchnorm2d: train mode needs >1 value per channel (got batch 1 with "
        "1x1 spatial)");

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  const int64_t plane = H * W, sample = C * plane;

  auto mean = std::make_shared<std::vector<T>>(size_t(C));
  auto var = std::make_shared<std::vector<T>>(size_t(C));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (int64_t b = 0; b < B; ++b) {
        const T* p = x.data().data() + b * sample + c * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      T mu = T(s / double(n));
      double v = 0;
      for (int64_t b = 0; b < B; ++b) {
        const T* p = x.data().data() + b * sample + c * plane;
        for (int64_t i = 0; i < plane; ++i) {
          double d = double(p[i]) - double(mu);
          v += d * d;
        }
      }
      (*mean)[size_t(c)] = mu;
      (*var)[size_t(c)] = T(v / double(n));  // biased, used for normalization
      // running update uses the unbiased estimate
      T unbiased = T(v / double(n - 1));
      run_mean[size_t(c)] =
          (T(1) - momentum) * run_mean[size_t(c)] + momentum * mu;
      run_var[size_t(c)] =
          (T(1) - momentum) * run_var[size_t(c)] + momentum * unbiased;
    }
  } else {
    *mean = run_mean;
    *var = run_var;
  }

  Tensor<T> out = make_node<T>(
      {B, C, H, W}, {x, gamma, beta},
      [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        std::vector<T>* gx = xi->needs_grad ? &xi->ensure_grad() : nullptr;
        std::vector<T>* gg = gi->needs_grad ? &gi->ensure_grad() : nullptr;
        std::vector<T>* gb = bi->needs_grad ? &bi->ensure_grad() : nullptr;
        for (int64_t c = 0; c < C; ++c) {
          const T mu = (*mean)[size_t(c)], vr = (*var)[size_t(c)];
          const T inv = T(1) / std::sqrt(vr + eps);
          const T gam = gi->data[size_t(c)];
          double sum_dy = 0, sum_dy_xhat = 0;
          for (int64_t b = 0; b < B; ++b) {
            const T* xp = xi->data.data() + b * sample + c * plane;
            const T* gp = gout + b * sample + c * plane;
            for (int64_t i = 0; i < plane; ++i) {
              double xhat = double(xp[i] - mu) * double(inv);
              sum_dy += double(gp[i]);
              sum_dy_xhat += double(gp[i]) * xhat;
            }
          }
          if (gg) (*gg)[size_t(c)] += T(sum_dy_xhat);
          if (gb) (*gb)[size_t(c)] += T(sum_dy);
          if (!gx) continue;
          if (training) {
            const T k1 = T(sum_dy / double(n));
            const T k2 = T(sum_dy_xhat / double(n));
            for (int64_t b = 0; b < B; ++b) {
              const T* xp = xi->data.data() + b * sample + c * plane;
              const T* gp = gout + b * sample + c * plane;
              T* dp = gx->data() + b * sample + c * plane;
              for (int64_t i = 0; i < plane; ++i) {
                T xhat = (xp[i] - mu) * inv;
                dp[i] += gam * inv * (gp[i] - k1 - xhat * k2);
              }
            }
          } else {
            for (int64_t b = 0; b < B; ++b) {
              const T* gp = gout + b * sample + c * plane;
              T* dp = gx->data() + b * sample + c * plane;
              for (int64_t i = 0; i < plane; ++i) dp[i] += gam * inv * gp[i];
            }
          }
        }
      });

  for (int64_t c = 0; c < C; ++c) {
    const T mu = (*mean)[size_t(c)];
    const T inv = T(1) / std::sqrt((*var)[size_t(c)] + eps);
    const T gam = gamma.data()[size_t(c)], bet = beta.data()[size_t(c)];
    for (int64_t b = 0; b < B; ++b) {
      const T* xp = x.data().data() + b * sample + c * plane;
      T* op = out.data().data() + b * sample + c * plane;
      for (int64_t i = 0; i < plane; ++i)
        op[i] = gam * (xp[i] - mu) * inv + bet;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d: non-overlapping windows, kernel == stride
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, int64_t kh, int64_t kw) {
  check(x.rank() == 4, "maxpool2d expects 4-D input");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(kh >= 1 && kw >= 1 && H % kh == 0 && W % kw == 0,
        "maxpool2d window (", kh, ",", kw, ") must divide spatial dims (", H,
        ",", W, ")");
  const int64_t Ho = H / kh, Wo = W / kw;
  auto xi = x.impl();
  auto argmax = std::make_shared<std::vector<int64_t>>(size_t(B * C * Ho * Wo));

  Tensor<T> out = make_node<T>(
      {B, C, Ho, Wo}, {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& gx = xi->ensure_grad();
        const T* gout = self.grad.data();
        for (size_t i = 0; i < argmax->size(); ++i)
          gx[size_t((*argmax)[i])] += gout[i];
      });

  const T* xp = x.data().data();
  T* op = out.data().data();
  int64_t oi = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const int64_t base = (b * C + c) * H * W;
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo, ++oi) {
          int64_t best = base + (ho * kh) * W + wo * kw;
          T bv = xp[best];
          for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
              int64_t idx = base + (ho * kh + i) * W + (wo * kw + j);
              if (xp[idx] > bv) {
                bv = xp[idx];
                best = idx;
              }
            }
          op[oi] = bv;
          (*argmax)[size_t(oi)] = best;
        }
    }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise / reduction family
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  auto xi = x.impl();
  Tensor<T> out = make_node<T>(
      x.shape(), {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& gx = xi->ensure_grad();
        const T* gout = self.grad.data();
        for (size_t i = 0; i < gx.size(); ++i)
          if (xi->data[i] > T(0)) gx[i] += gout[i];
      });
  const auto& xd = x.data();
  auto& od = out.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add shape mismatch: ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
  auto ai = a.impl();
  auto bi = b.impl();
  Tensor<T> out = make_node<T>(
      a.shape(), {a, b},
      [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        if (ai->needs_grad) {
          auto& g = ai->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
        if (bi->needs_grad) {
          auto& g = bi->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
      });
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mul shape mismatch: ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
  auto ai = a.impl();
  auto bi = b.impl();
  Tensor<T> out = make_node<T>(
      a.shape(), {a, b},
      [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        if (ai->needs_grad) {
          auto& g = ai->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * bi->data[i];
        }
        if (bi->needs_grad) {
          auto& g = bi->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * ai->data[i];
        }
      });
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  return out;
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  auto xi = x.impl();
  Tensor<T> out = make_node<T>(
      x.shape(), {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& g = xi->ensure_grad();
        const T* gout = self.grad.data();
        for (size_t i = 0; i < g.size(); ++i) g[i] += s * gout[i];
      });
  const auto& xd = x.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = s * xd[i];
  return out;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto xi = x.impl();
  Tensor<T> out = make_node<T>(
      Shape{}, {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& g = xi->ensure_grad();
        const T gout = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += gout;
      });
  double s = 0;
  for (T v : x.data()) s += double(v);
  out.data()[0] = T(s);
  return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() == 4 && b.rank() == 4, "concat_channels expects 4-D inputs");
  check(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
        "concat_channels batch/spatial mismatch: ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
  const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2),
                W = a.dim(3);
  const int64_t plane = H * W;
  auto ai = a.impl();
  auto bi = b.impl();
  Tensor<T> out = make_node<T>(
      {B, Ca + Cb, H, W}, {a, b},
      [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        for (int64_t bb = 0; bb < B; ++bb) {
          const T* g = gout + bb * (Ca + Cb) * plane;
          if (ai->needs_grad) {
            T* ga = ai->ensure_grad().data() + bb * Ca * plane;
            for (int64_t i = 0; i < Ca * plane; ++i) ga[i] += g[i];
          }
          if (bi->needs_grad) {
            T* gb = bi->ensure_grad().data() + bb * Cb * plane;
            for (int64_t i = 0; i < Cb * plane; ++i)
              gb[i] += g[Ca * plane + i];
          }
        }
      });
  for (int64_t bb = 0; bb < B; ++bb) {
    T* o = out.data().data() + bb * (Ca + Cb) * plane;
    const T* pa = a.data().data() + bb * Ca * plane;
    const T* pb = b.data().data() + bb * Cb * plane;
    std::copy(pa, pa + Ca * plane, o);
    std::copy(pb, pb + Cb * plane, o + Ca * plane);
  }
  return out;
}

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  check(x.rank() >= 1, "softmax_lastdim expects rank >= 1");
  const int64_t A = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / A;
  auto xi = x.impl();
  Tensor<T> out = make_node<T>(
      x.shape(), {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& gx = xi->ensure_grad();
        const T* gout = self.grad.data();
        const T* y = self.data.data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* yr = y + r * A;
          const T* gr = gout + r * A;
          T* gxr = gx.data() + r * A;
          double dot = 0;
          for (int64_t j = 0; j < A; ++j) dot += double(gr[j]) * double(yr[j]);
          for (int64_t j = 0; j < A; ++j)
            gxr[j] += yr[j] * (gr[j] - T(dot));
        }
      });
  const T* xd = x.data().data();
  T* od = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xd + r * A;
    T* orow = od + r * A;
    T m = xr[0];
    for (int64_t j = 1; j < A; ++j) m = std::max(m, xr[j]);
    double s = 0;
    for (int64_t j = 0; j < A; ++j) {
      orow[j] = std::exp(xr[j] - m);
      s += double(orow[j]);
    }
    T inv = T(1.0 / s);
    for (int64_t j = 0; j < A; ++j) orow[j] *= inv;
  }
  return out;
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "l1_loss shape mismatch: ",
        shape_str(a.shape()), " vs ", shape_str(b.shape()));
  const int64_t n = a.numel();
  auto ai = a.impl();
  auto bi = b.impl();
  Tensor<T> out = make_node<T>(
      Shape{}, {a, b},
      [=](TensorImpl<T>& self) {
        const T g = self.grad[0] / T(n);
        std::vector<T>* ga = ai->needs_grad ? &ai->ensure_grad() : nullptr;
        std::vector<T>* gb = bi->needs_grad ? &bi->ensure_grad() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
          T d = ai->data[size_t(i)] - bi->data[size_t(i)];
          T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
          if (ga) (*ga)[size_t(i)] += s;
          if (gb) (*gb)[size_t(i)] -= s;
        }
      });
  double s = 0;
  for (int64_t i = 0; i < n; ++i)
    s += std::abs(double(a.data()[size_t(i)]) - double(b.data()[size_t(i)]));
  out.data()[0] = T(s / double(n));
  return out;
}

// Differentiable weighted sum of scalar tensors: sum_i w_i * s_i.
template <class T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& scalars,
                       const std::vector<T>& weights) {
  check(scalars.size() == weights.size() && !scalars.empty(),
        "weighted_sum needs matching nonempty lists");
  for (const auto& s : scalars)
    check(s.numel() == 1, "weighted_sum expects scalars");
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& s : scalars) impls.push_back(s.impl());
  auto w = weights;
  Tensor<T> out = make_node<T>(
      Shape{}, scalars,
      [=](TensorImpl<T>& self) {
        const T g = self.grad[0];
        for (size_t i = 0; i < impls.size(); ++i)
          if (impls[i]->needs_grad) impls[i]->ensure_grad()[0] += w[i] * g;
      });
  double acc = 0;
  for (size_t i = 0; i < scalars.size(); ++i)
    acc += double(weights[i]) * double(scalars[i].item());
  out.data()[0] = T(acc);
  return out;
}

// ---------------------------------------------------------------------------
// bicubic_resize: Keys kernel a=-0.5, edge clamp, align-corners=false
// ---------------------------------------------------------------------------

inline double cubic_keys(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

struct ResizeTaps {
  std::vector<int64_t> idx;  // 4 per output position
  std::vector<double> w;
};

inline ResizeTaps bicubic_taps(int64_t in, int64_t out) {
  ResizeTaps taps;
  taps.idx.resize(size_t(out * 4));
  taps.w.resize(size_t(out * 4));
  const double scale = double(in) / double(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    int64_t k = int64_t(std::floor(src));
    for (int64_t j = 0; j < 4; ++j) {
      int64_t pos = k - 1 + j;
      taps.w[size_t(o * 4 + j)] = cubic_keys(src - double(pos));
      taps.idx[size_t(o * 4 + j)] = std::clamp<int64_t>(pos, 0, in - 1);
    }
  }
  return taps;
}

template <class T>
Tensor<T> bicubic_resize(const Tensor<T>& x, int64_t oh, int64_t ow) {
  check(x.rank() == 4, "bicubic_resize expects 4-D input");
  check(oh >= 1 && ow >= 1, "bicubic_resize target must be >= 1x1");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto xi = x.impl();

  if (oh == H && ow == W) {  // identity resample: exact passthrough
    Tensor<T> out = make_node<T>(
        x.shape(), {x},
        [=](TensorImpl<T>& self) {
          if (!xi->needs_grad) return;
          auto& g = xi->ensure_grad();
          const T* gout = self.grad.data();
          for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        });
    out.data() = x.data();
    return out;
  }

  auto th = std::make_shared<ResizeTaps>(bicubic_taps(H, oh));
  auto tw = std::make_shared<ResizeTaps>(bicubic_taps(W, ow));

  Tensor<T> out = make_node<T>(
      {B, C, oh, ow}, {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& gx = xi->ensure_grad();
        const T* gout = self.grad.data();
        std::vector<double> gtmp(size_t(H * ow));
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const T* go = gout + bc * oh * ow;
          T* gi = gx.data() + bc * H * W;
          std::fill(gtmp.begin(), gtmp.end(), 0.0);
          for (int64_t o = 0; o < oh; ++o)
            for (int64_t j = 0; j < 4; ++j) {
              const double wgt = th->w[size_t(o * 4 + j)];
              const int64_t i = th->idx[size_t(o * 4 + j)];
              for (int64_t c2 = 0; c2 < ow; ++c2)
                gtmp[size_t(i * ow + c2)] += wgt * double(go[o * ow + c2]);
            }
          for (int64_t h = 0; h < H; ++h)
            for (int64_t o = 0; o < ow; ++o) {
              const double gv = gtmp[size_t(h * ow + o)];
              for (int64_t j = 0; j < 4; ++j)
                gi[h * W + tw->idx[size_t(o * 4 + j)]] +=
                    T(tw->w[size_t(o * 4 + j)] * gv);
            }
        }
      });

  const T* xd = x.data().data();
  T* od = out.data().data();
  std::vector<double> tmp(size_t(H * ow));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xin = xd + bc * H * W;
    // width pass
    for (int64_t h = 0; h < H; ++h)
      for (int64_t o = 0; o < ow; ++o) {
        double acc = 0;
        for (int64_t j = 0; j < 4; ++j)
          acc += tw->w[size_t(o * 4 + j)] *
                 double(xin[h * W + tw->idx[size_t(o * 4 + j)]]);
        tmp[size_t(h * ow + o)] = acc;
      }
    // height pass
    T* o2 = od + bc * oh * ow;
    for (int64_t o = 0; o < oh; ++o)
      for (int64_t c2 = 0; c2 < ow; ++c2) {
        double acc = 0;
        for (int64_t j = 0; j < 4; ++j)
          acc += th->w[size_t(o * 4 + j)] *
                 tmp[size_t(th->idx[size_t(o * 4 + j)] * ow + c2)];
        o2[o * ow + c2] = T(acc);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// pixel_shuffle (depth-to-space): [B, C*r^2, H, W] -> [B, C, rH, rW]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int64_t r) {
  check(x.rank() == 4, "pixel_shuffle expects 4-D input");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(Cin % (r * r) == 0, "pixel_shuffle channels ", Cin,
        " not divisible by r^2=", r * r);
  const int64_t C = Cin / (r * r);
  auto xi = x.impl();
  auto src_of = [=](int64_t b, int64_t c, int64_t ho, int64_t wo) {
    int64_t h = ho / r, i = ho % r, w = wo / r, j = wo % r;
    int64_t ci = c * r * r + i * r + j;
    return ((b * Cin + ci) * H + h) * W + w;
  };
  Tensor<T> out = make_node<T>(
      {B, C, H * r, W * r}, {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& gx = xi->ensure_grad();
        const T* gout = self.grad.data();
        int64_t oi = 0;
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ho = 0; ho < H * r; ++ho)
              for (int64_t wo = 0; wo < W * r; ++wo, ++oi)
                gx[size_t(src_of(b, c, ho, wo))] += gout[oi];
      });
  const T* xd = x.data().data();
  T* od = out.data().data();
  int64_t oi = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t ho = 0; ho < H * r; ++ho)
        for (int64_t wo = 0; wo < W * r; ++wo, ++oi)
          od[oi] = xd[src_of(b, c, ho, wo)];
  return out;
}

// ---------------------------------------------------------------------------
// per-frame linear: x [B,L,F] x weight [O,F] + bias [O] -> [B,L,O]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> linear_frames(const Tensor<T>& x, const Tensor<T>& w,
                        const Tensor<T>& bias) {
  check(x.rank() == 3 && w.rank() == 2, "linear_frames expects [B,L,F] and [O,F]");
  const int64_t B = x.dim(0), L = x.dim(1), F = x.dim(2), O = w.dim(0);
  check(w.dim(1) == F, "linear_frames feature mismatch: input ",
        shape_str(x.shape()), " vs weight ", shape_str(w.shape()));
  check(bias.numel() == O, "linear_frames bias length != O");
  const int64_t R = B * L;
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias.impl();
  Tensor<T> out = make_node<T>(
      {B, L, O}, {x, w, bias},
      [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        if (xi->needs_grad)  // dX = gout [R,O] x W [O,F]
          gemm(false, false, int(R), int(F), int(O), T(1), gout, int(O),
               wi->data.data(), int(F), T(1), xi->ensure_grad().data(),
               int(F));
        if (wi->needs_grad)  // dW = gout^T [O,R] x X [R,F]
          gemm(true, false, int(O), int(F), int(R), T(1), gout, int(O),
               xi->data.data(), int(F), T(1), wi->ensure_grad().data(),
               int(F));
        if (bi->needs_grad) {
          auto& gb = bi->ensure_grad();
          for (int64_t rr = 0; rr < R; ++rr)
            for (int64_t o = 0; o < O; ++o) gb[size_t(o)] += gout[rr * O + o];
        }
      });
  // out = X [R,F] x W^T [F,O]
  gemm(false, true, int(R), int(O), int(F), T(1), x.data().data(), int(F),
       w.data().data(), int(F), T(0), out.data().data(), int(O));
  T* od = out.data().data();
  for (int64_t rr = 0; rr < R; ++rr)
    for (int64_t o = 0; o < O; ++o) od[rr * O + o] += bias.data()[size_t(o)];
  return out;
}

// ---------------------------------------------------------------------------
// layout permutes between frame sequences [B,L,C] and 4-D maps [B,C,1,L]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> frames_from_map(const Tensor<T>& x) {
  check(x.rank() == 4 && x.dim(2) == 1, "frames_from_map expects [B,C,1,L]");
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(3);
  auto xi = x.impl();
  Tensor<T> out = make_node<T>(
      {B, L, C}, {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& gx = xi->ensure_grad();
        const T* gout = self.grad.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t l = 0; l < L; ++l)
            for (int64_t c = 0; c < C; ++c)
              gx[size_t((b * C + c) * L + l)] += gout[(b * L + l) * C + c];
      });
  const T* xd = x.data().data();
  T* od = out.data().data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l)
      for (int64_t c = 0; c < C; ++c)
        od[(b * L + l) * C + c] = xd[(b * C + c) * L + l];
  return out;
}

template <class T>
Tensor<T> map_from_frames(const Tensor<T>& x) {
  check(x.rank() == 3, "map_from_frames expects [B,L,C]");
  const int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
  auto xi = x.impl();
  Tensor<T> out = make_node<T>(
      {B, C, 1, L}, {x},
      [=](TensorImpl<T>& self) {
        if (!xi->needs_grad) return;
        auto& gx = xi->ensure_grad();
        const T* gout = self.grad.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t l = 0; l < L; ++l)
              gx[size_t((b * L + l) * C + c)] += gout[(b * C + c) * L + l];
      });
  const T* xd = x.data().data();
  T* od = out.data().data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t l = 0; l < L; ++l)
        od[(b * C + c) * L + l] = xd[(b * L + l) * C + c];
  return out;
}

// ---------------------------------------------------------------------------
// per-frame softmax cross-entropy: logits [B,L,A], labels length B*L
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_xent_frames(const Tensor<T>& logits,
                              const std::vector<int>& labels) {
  check(logits.rank() == 3, "softmax_xent_frames expects [B,L,A]");
  const int64_t B = logits.dim(0), L = logits.dim(1), A = logits.dim(2);
  const int64_t R = B * L;
  check(int64_t(labels.size()) == R, "softmax_xent_frames labels length ",
        labels.size(), " != B*L=", R);
  for (int y : labels) check(y >= 0 && y < A, "label out of range: ", y);
  auto li = logits.impl();
  auto probs = std::make_shared<std::vector<T>>(size_t(R * A));
  auto lab = std::make_shared<std::vector<int>>(labels);

  Tensor<T> out = make_node<T>(
      Shape{}, {logits},
      [=](TensorImpl<T>& self) {
        if (!li->needs_grad) return;
        auto& g = li->ensure_grad();
        const T gout = self.grad[0] / T(R);
        for (int64_t r = 0; r < R; ++r) {
          const T* p = probs->data() + r * A;
          T* gr = g.data() + r * A;
          const int y = (*lab)[size_t(r)];
          for (int64_t j = 0; j < A; ++j)
            gr[j] += gout * (p[j] - (j == y ? T(1) : T(0)));
        }
      });

  const T* ld = logits.data().data();
  double loss = 0;
  for (int64_t r = 0; r < R; ++r) {
    const T* z = ld + r * A;
    T* p = probs->data() + r * A;
    T m = z[0];
    for (int64_t j = 1; j < A; ++j) m = std::max(m, z[j]);
    double s = 0;
    for (int64_t j = 0; j < A; ++j) {
      p[j] = std::exp(z[j] - m);
      s += double(p[j]);
    }
    T inv = T(1.0 / s);
    for (int64_t j = 0; j < A; ++j) p[j] *= inv;
    loss += std::log(s) + double(m) - double(z[labels[size_t(r)]]);
  }
  out.data()[0] = T(loss / double(R));
  return out;
}

// ---------------------------------------------------------------------------
// TP KL divergence: sum over all L*|A| cells of t_H * ln((t_H+e)/(t_L+e)),
// averaged over the batch. Exactly zero when t_L == t_H cell-for-cell.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> kl_tp(const Tensor<T>& t_l, const Tensor<T>& t_h, T eps) {
  check(t_l.shape() == t_h.shape(), "kl_tp shape mismatch: ",
        shape_str(t_l.shape()), " vs ", shape_str(t_h.shape()));
  check(eps > T(0), "kl_tp epsilon must be positive");
  check(t_l.rank() >= 2, "kl_tp expects [..,L,A]");
  const int64_t B = t_l.rank() == 2 ? 1 : t_l.dim(0);
  const int64_t per = t_l.numel() / B;
  auto li = t_l.impl();
  auto hi = t_h.impl();

  Tensor<T> out = make_node<T>(
      Shape{}, {t_l, t_h},
      [=](TensorImpl<T>& self) {
        const T g = self.grad[0] / T(B);
        std::vector<T>* gl = li->needs_grad ? &li->ensure_grad() : nullptr;
        std::vector<T>* gh = hi->needs_grad ? &hi->ensure_grad() : nullptr;
        for (size_t i = 0; i < li->data.size(); ++i) {
          const T tl = li->data[i], th = hi->data[i];
          if (gl) (*gl)[i] += -g * th / (tl + eps);
          if (gh)
            (*gh)[i] += g * (std::log((th + eps) / (tl + eps)) +
                             th / (th + eps));
        }
      });
  double total = 0;
  for (size_t i = 0; i < t_l.data().size(); ++i) {
    const T tl = t_l.data()[i], th = t_h.data()[i];
    const T ratio = (th + eps) / (tl + eps);
    total += double(th) * std::log(double(ratio));
  }
  (void)per;
  out.data()[0] = T(total / double(B));
  return out;
}

}  // namespace tpgsr
