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

#ifndef PPAUDIT_NN_HPP_
#define PPAUDIT_NN_HPP_

#include <cstdint>
#include <vector>

#include "ppaudit/tensor.hpp"

// Single-threaded CPU kernels. Activations are NHWC; convolutions lower to
// im2col + sgemm. All kernels are deterministic: identical inputs give
// bit-identical outputs.

namespace ppaudit::nn {

/// C = alpha * op(A) * op(B) + beta * C, row-major.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc);

/// Gathers kxk patches (pad = k/2 zeros, square input) into rows of `cols`:
/// one row per output position (b, yo, xo), row length k*k*c.
void im2col(const float* src, int batch, int h, int w, int c, int ksize, int stride, float* cols);

/// Transpose of im2col: scatter-adds rows of `cols` back into `dst`.
/// `dst` must be zeroed by the caller.
void col2im(const float* cols, int batch, int h, int w, int c, int ksize, int stride, float* dst);

inline int conv_out_dim(int in, int ksize, int stride) {
  int pad = ksize / 2;
  return (in + 2 * pad - ksize) / stride + 1;
}

struct BnStats {
  std::vector<float> mean;
  std::vector<float> invstd;
};

/// y = gamma * (x - mean) / sqrt(var + eps) + beta over NHWC rows.
/// Batch statistics; updates running stats with `momentum` (unbiased var).
BnStats bn_forward_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& run_mean,
                         Tensor& run_var, float momentum, float eps, Tensor& y);

/// Normalizes with the provided (running) statistics.
void bn_forward_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     const Tensor& run_mean, const Tensor& run_var, float eps, Tensor& y);

/// Backward for batch-statistics normalization.
void bn_backward_train(const Tensor& x, const Tensor& dy, const Tensor& gamma, const BnStats& st,
                       Tensor& dx, Tensor& dgamma, Tensor& dbeta, bool want_dx,
                       bool want_dparams);

/// Backward when the forward used fixed statistics (frozen normalization).
/// The statistics are constants, so dx = dy * gamma * invstd.
void bn_backward_frozen(const Tensor& dy, const Tensor& gamma, const Tensor& run_mean,
                        const Tensor& run_var, float eps, const Tensor& x, Tensor& dx,
                        Tensor& dgamma, Tensor& dbeta, bool want_dx, bool want_dparams);

void relu_forward(const Tensor& x, Tensor& y);
void relu_backward(const Tensor& y, const Tensor& dy, Tensor& dx);

void add_forward(const Tensor& a, const Tensor& b, Tensor& y);

/// [B,H,W,C] -> [B,C] spatial mean.
void global_avg_pool_forward(const Tensor& x, Tensor& y);
void global_avg_pool_backward(const Tensor& dy, int h, int w, Tensor& dx);

/// 2x2 average pool, stride 2 (used to realize feature_map_scale = 1/2).
void avg_pool2_forward(const Tensor& x, Tensor& y);
void avg_pool2_backward(const Tensor& dy, Tensor& dx);

/// y = x * w + bias; x [B,Cin], w [Cin,Cout], bias [Cout].
void linear_forward(const Tensor& x, const Tensor& w, const Tensor& bias, Tensor& y);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx, Tensor& dw,
                     Tensor& dbias, bool want_dx, bool want_dparams);

/// Row-wise softmax in double precision; returns probabilities as doubles.
void softmax_rows(const Tensor& logits, std::vector<double>& probs);

/// Mean cross-entropy over the batch plus dlogits = (p - onehot)/B.
double softmax_ce_loss_grad(const Tensor& logits, const std::vector<int>& labels, Tensor& dlogits);

/// Mean cross-entropy against arbitrary target rows plus dlogits = (p - t)/B.
double softmax_ce_target_loss_grad(const Tensor& logits, const std::vector<double>& targets,
                                   Tensor& dlogits);

}  // namespace ppaudit::nn

#endif  // PPAUDIT_NN_HPP_
