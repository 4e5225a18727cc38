// Copyright 2026 the ppaudit authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ppaudit/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ppaudit::nn {

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void im2col(const float* src, int batch, int h, int w, int c, int ksize, int stride, float* cols) {
  const int pad = ksize / 2;
  const int ho = conv_out_dim(h, ksize, stride);
  const int wo = conv_out_dim(w, ksize, stride);
  const std::size_t row_len = static_cast<std::size_t>(ksize) * ksize * c;
  const std::size_t cbytes = static_cast<std::size_t>(c) * sizeof(float);

  for (int b = 0; b < batch; ++b) {
    const float* img = src + static_cast<std::size_t>(b) * h * w * c;
    for (int yo = 0; yo < ho; ++yo) {
      for (int xo = 0; xo < wo; ++xo) {
        float* row = cols + (static_cast<std::size_t>(b) * ho * wo + static_cast<std::size_t>(yo) * wo + xo) * row_len;
        for (int ky = 0; ky < ksize; ++ky) {
          const int yi = yo * stride + ky - pad;
          float* dst = row + static_cast<std::size_t>(ky) * ksize * c;
          if (yi < 0 || yi >= h) {
            std::memset(dst, 0, static_cast<std::size_t>(ksize) * cbytes);
            continue;
          }
          const int xi0 = xo * stride - pad;
          // Contiguous span of valid kx taps for this row.
          int kx_lo = std::max(0, -xi0);
          int kx_hi = std::min(ksize, w - xi0);
          if (kx_lo > 0) std::memset(dst, 0, static_cast<std::size_t>(kx_lo) * cbytes);
          if (kx_hi < ksize)
            std::memset(dst + static_cast<std::size_t>(kx_hi) * c, 0,
                        static_cast<std::size_t>(ksize - kx_hi) * cbytes);
          if (kx_hi > kx_lo)
            std::memcpy(dst + static_cast<std::size_t>(kx_lo) * c,
                        img + (static_cast<std::size_t>(yi) * w + xi0 + kx_lo) * c,
                        static_cast<std::size_t>(kx_hi - kx_lo) * cbytes);
        }
      }
    }
  }
}

void col2im(const float* cols, int batch, int h, int w, int c, int ksize, int stride, float* dst) {
  const int pad = ksize / 2;
  const int ho = conv_out_dim(h, ksize, stride);
  const int wo = conv_out_dim(w, ksize, stride);
  const std::size_t row_len = static_cast<std::size_t>(ksize) * ksize * c;

  for (int b = 0; b < batch; ++b) {
    float* img = dst + static_cast<std::size_t>(b) * h * w * c;
    for (int yo = 0; yo < ho; ++yo) {
      for (int xo = 0; xo < wo; ++xo) {
        const float* row =
            cols + (static_cast<std::size_t>(b) * ho * wo + static_cast<std::size_t>(yo) * wo + xo) * row_len;
        for (int ky = 0; ky < ksize; ++ky) {
          const int yi = yo * stride + ky - pad;
          if (yi < 0 || yi >= h) continue;
          const int xi0 = xo * stride - pad;
          int kx_lo = std::max(0, -xi0);
          int kx_hi = std::min(ksize, w - xi0);
          const float* s = row + static_cast<std::size_t>(ky) * ksize * c + static_cast<std::size_t>(kx_lo) * c;
          float* d = img + (static_cast<std::size_t>(yi) * w + xi0 + kx_lo) * c;
          const int span = (kx_hi - kx_lo) * c;
          for (int i = 0; i < span; ++i) d[i] += s[i];
        }
      }
    }
  }
}

BnStats bn_forward_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& run_mean,
                         Tensor& run_var, float momentum, float eps, Tensor& y) {
  const int c = static_cast<int>(gamma.numel());
  const int64_t rows = x.numel() / c;
  BnStats st;
  st.mean.assign(c, 0.0f);
  st.invstd.assign(c, 0.0f);

  std::vector<double> sum(c, 0.0), sumsq(c, 0.0);
  const float* xp = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = xp + r * c;
    for (int j = 0; j < c; ++j) {
      sum[j] += px[j];
      sumsq[j] += static_cast<double>(px[j]) * px[j];
    }
  }
  const double n = static_cast<double>(rows);
  std::vector<float> scale(c), shift(c);
  for (int j = 0; j < c; ++j) {
    double mean = sum[j] / n;
    double var = sumsq[j] / n - mean * mean;
    if (var < 0) var = 0;
    st.mean[j] = static_cast<float>(mean);
    st.invstd[j] = static_cast<float>(1.0 / std::sqrt(var + eps));
    double unbiased = rows > 1 ? var * n / (n - 1.0) : var;
    run_mean[j] = (1.0f - momentum) * run_mean[j] + momentum * static_cast<float>(mean);
    run_var[j] = (1.0f - momentum) * run_var[j] + momentum * static_cast<float>(unbiased);
    scale[j] = gamma[j] * st.invstd[j];
    shift[j] = beta[j] - scale[j] * st.mean[j];
  }
  float* yp = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = xp + r * c;
    float* py = yp + r * c;
    for (int j = 0; j < c; ++j) py[j] = px[j] * scale[j] + shift[j];
  }
  return st;
}

void bn_forward_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     const Tensor& run_mean, const Tensor& run_var, float eps, Tensor& y) {
  const int c = static_cast<int>(gamma.numel());
  const int64_t rows = x.numel() / c;
  std::vector<float> scale(c), shift(c);
  for (int j = 0; j < c; ++j) {
    float invstd = 1.0f / std::sqrt(run_var[j] + eps);
    scale[j] = gamma[j] * invstd;
    shift[j] = beta[j] - scale[j] * run_mean[j];
  }
  const float* xp = x.data();
  float* yp = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = xp + r * c;
    float* py = yp + r * c;
    for (int j = 0; j < c; ++j) py[j] = px[j] * scale[j] + shift[j];
  }
}

void bn_backward_train(const Tensor& x, const Tensor& dy, const Tensor& gamma, const BnStats& st,
                       Tensor& dx, Tensor& dgamma, Tensor& dbeta, bool want_dx,
                       bool want_dparams) {
  const int c = static_cast<int>(gamma.numel());
  const int64_t rows = x.numel() / c;
  const float* xp = x.data();
  const float* dyp = dy.data();

  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = xp + r * c;
    const float* pd = dyp + r * c;
    for (int j = 0; j < c; ++j) {
      float xhat = (px[j] - st.mean[j]) * st.invstd[j];
      sum_dy[j] += pd[j];
      sum_dy_xhat[j] += static_cast<double>(pd[j]) * xhat;
    }
  }
  if (want_dparams) {
    for (int j = 0; j < c; ++j) {
      dgamma[j] += static_cast<float>(sum_dy_xhat[j]);
      dbeta[j] += static_cast<float>(sum_dy[j]);
    }
  }
  if (!want_dx) return;
  const double n = static_cast<double>(rows);
  std::vector<float> k1(c), k2(c), k3(c);
  for (int j = 0; j < c; ++j) {
    k1[j] = gamma[j] * st.invstd[j];
    k2[j] = static_cast<float>(sum_dy[j] / n);
    k3[j] = static_cast<float>(sum_dy_xhat[j] / n);
  }
  float* dxp = dx.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = xp + r * c;
    const float* pd = dyp + r * c;
    float* pdx = dxp + r * c;
    for (int j = 0; j < c; ++j) {
      float xhat = (px[j] - st.mean[j]) * st.invstd[j];
      pdx[j] = k1[j] * (pd[j] - k2[j] - xhat * k3[j]);
    }
  }
}

void bn_backward_frozen(const Tensor& dy, const Tensor& gamma, const Tensor& run_mean,
                        const Tensor& run_var, float eps, const Tensor& x, Tensor& dx,
                        Tensor& dgamma, Tensor& dbeta, bool want_dx, bool want_dparams) {
  const int c = static_cast<int>(gamma.numel());
  const int64_t rows = dy.numel() / c;
  std::vector<float> invstd(c);
  for (int j = 0; j < c; ++j) invstd[j] = 1.0f / std::sqrt(run_var[j] + eps);

  if (want_dparams) {
    const float* xp = x.data();
    const float* dyp = dy.data();
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (int64_t r = 0; r < rows; ++r) {
      const float* px = xp + r * c;
      const float* pd = dyp + r * c;
      for (int j = 0; j < c; ++j) {
        float xhat = (px[j] - run_mean[j]) * invstd[j];
        sum_dy[j] += pd[j];
        sum_dy_xhat[j] += static_cast<double>(pd[j]) * xhat;
      }
    }
    for (int j = 0; j < c; ++j) {
      dgamma[j] += static_cast<float>(sum_dy_xhat[j]);
      dbeta[j] += static_cast<float>(sum_dy[j]);
    }
  }
  if (!want_dx) return;
  std::vector<float> k(c);
  for (int j = 0; j < c; ++j) k[j] = gamma[j] * invstd[j];
  const float* dyp = dy.data();
  float* dxp = dx.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* pd = dyp + r * c;
    float* pdx = dxp + r * c;
    for (int j = 0; j < c; ++j) pdx[j] = pd[j] * k[j];
  }
}

void relu_forward(const Tensor& x, Tensor& y) {
  const float* xp = x.data();
  float* yp = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] = xp[i] > 0.0f ? xp[i] : 0.0f;
}

void relu_backward(const Tensor& y, const Tensor& dy, Tensor& dx) {
  const float* yp = y.data();
  const float* dyp = dy.data();
  float* dxp = dx.data();
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) dxp[i] = yp[i] > 0.0f ? dyp[i] : 0.0f;
}

void add_forward(const Tensor& a, const Tensor& b, Tensor& y) {
  const float* ap = a.data();
  const float* bp = b.data();
  float* yp = y.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] = ap[i] + bp[i];
}

void global_avg_pool_forward(const Tensor& x, Tensor& y) {
  const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const float inv = 1.0f / static_cast<float>(h * w);
  const float* xp = x.data();
  float* yp = y.data();
  for (int64_t i = 0; i < b; ++i) {
    float* out = yp + i * c;
    std::fill(out, out + c, 0.0f);
    const float* img = xp + i * h * w * c;
    for (int64_t r = 0; r < h * w; ++r) {
      const float* px = img + r * c;
      for (int64_t j = 0; j < c; ++j) out[j] += px[j];
    }
    for (int64_t j = 0; j < c; ++j) out[j] *= inv;
  }
}

void global_avg_pool_backward(const Tensor& dy, int h, int w, Tensor& dx) {
  const int64_t b = dy.dim(0), c = dy.dim(1);
  const float inv = 1.0f / static_cast<float>(h * w);
  const float* dyp = dy.data();
  float* dxp = dx.data();
  for (int64_t i = 0; i < b; ++i) {
    const float* g = dyp + i * c;
    float* img = dxp + i * static_cast<int64_t>(h) * w * c;
    for (int64_t r = 0; r < static_cast<int64_t>(h) * w; ++r) {
      float* px = img + r * c;
      for (int64_t j = 0; j < c; ++j) px[j] = g[j] * inv;
    }
  }
}

void avg_pool2_forward(const Tensor& x, Tensor& y) {
  const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int64_t ho = h / 2, wo = w / 2;
  const float* xp = x.data();
  float* yp = y.data();
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t yo = 0; yo < ho; ++yo) {
      for (int64_t xo = 0; xo < wo; ++xo) {
        const float* p00 = xp + ((i * h + 2 * yo) * w + 2 * xo) * c;
        const float* p01 = p00 + c;
        const float* p10 = p00 + w * c;
        const float* p11 = p10 + c;
        float* out = yp + ((i * ho + yo) * wo + xo) * c;
        for (int64_t j = 0; j < c; ++j) out[j] = 0.25f * (p00[j] + p01[j] + p10[j] + p11[j]);
      }
    }
  }
}

void avg_pool2_backward(const Tensor& dy, Tensor& dx) {
  const int64_t b = dx.dim(0), h = dx.dim(1), w = dx.dim(2), c = dx.dim(3);
  const int64_t ho = h / 2, wo = w / 2;
  dx.zero();
  const float* dyp = dy.data();
  float* dxp = dx.data();
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t yo = 0; yo < ho; ++yo) {
      for (int64_t xo = 0; xo < wo; ++xo) {
        const float* g = dyp + ((i * ho + yo) * wo + xo) * c;
        float* p00 = dxp + ((i * h + 2 * yo) * w + 2 * xo) * c;
        float* p01 = p00 + c;
        float* p10 = p00 + w * c;
        float* p11 = p10 + c;
        for (int64_t j = 0; j < c; ++j) {
          float v = 0.25f * g[j];
          p00[j] += v;
          p01[j] += v;
          p10[j] += v;
          p11[j] += v;
        }
      }
    }
  }
}

void linear_forward(const Tensor& x, const Tensor& w, const Tensor& bias, Tensor& y) {
  const int b = static_cast<int>(x.dim(0));
  const int cin = static_cast<int>(x.dim(1));
  const int cout = static_cast<int>(w.dim(1));
  sgemm(false, false, b, cout, cin, 1.0f, x.data(), cin, w.data(), cout, 0.0f, y.data(), cout);
  float* yp = y.data();
  const float* bp = bias.data();
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < cout; ++j) yp[static_cast<std::size_t>(i) * cout + j] += bp[j];
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx, Tensor& dw,
                     Tensor& dbias, bool want_dx, bool want_dparams) {
  const int b = static_cast<int>(x.dim(0));
  const int cin = static_cast<int>(x.dim(1));
  const int cout = static_cast<int>(w.dim(1));
  if (want_dparams) {
    sgemm(true, false, cin, cout, b, 1.0f, x.data(), cin, dy.data(), cout, 1.0f, dw.data(), cout);
    const float* dyp = dy.data();
    float* dbp = dbias.data();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < cout; ++j) dbp[j] += dyp[static_cast<std::size_t>(i) * cout + j];
  }
  if (want_dx)
    sgemm(false, true, b, cin, cout, 1.0f, dy.data(), cout, w.data(), cout, 0.0f, dx.data(), cin);
}

void softmax_rows(const Tensor& logits, std::vector<double>& probs) {
  const int64_t b = logits.dim(0), c = logits.dim(1);
  probs.resize(static_cast<std::size_t>(b * c));
  const float* lp = logits.data();
  for (int64_t i = 0; i < b; ++i) {
    const float* row = lp + i * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      double e = std::exp(static_cast<double>(row[j]) - mx);
      probs[static_cast<std::size_t>(i * c + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < c; ++j) probs[static_cast<std::size_t>(i * c + j)] /= denom;
  }
}

double softmax_ce_loss_grad(const Tensor& logits, const std::vector<int>& labels, Tensor& dlogits) {
  const int64_t b = logits.dim(0), c = logits.dim(1);
  std::vector<double> probs;
  softmax_rows(logits, probs);
  double loss = 0.0;
  float* dp = dlogits.data();
  const double invb = 1.0 / static_cast<double>(b);
  for (int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    double py = probs[static_cast<std::size_t>(i * c + y)];
    loss -= std::log(std::max(py, 1e-300));
    for (int64_t j = 0; j < c; ++j) {
      double g = probs[static_cast<std::size_t>(i * c + j)] - (j == y ? 1.0 : 0.0);
      dp[i * c + j] = static_cast<float>(g * invb);
    }
  }
  return loss * invb;
}

double softmax_ce_target_loss_grad(const Tensor& logits, const std::vector<double>& targets,
                                   Tensor& dlogits) {
  const int64_t b = logits.dim(0), c = logits.dim(1);
  std::vector<double> probs;
  softmax_rows(logits, probs);
  double loss = 0.0;
  float* dp = dlogits.data();
  const double invb = 1.0 / static_cast<double>(b);
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      const std::size_t k = static_cast<std::size_t>(i * c + j);
      double t = targets[k];
      if (t > 0) loss -= t * std::log(std::max(probs[k], 1e-300));
      dp[i * c + j] = static_cast<float>((probs[k] - t) * invb);
    }
  }
  return loss * invb;
}

}  // namespace ppaudit::nn
