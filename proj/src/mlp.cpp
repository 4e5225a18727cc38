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

#include "ppaudit/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ppaudit/nn.hpp"
#include "ppaudit/rng.hpp"

namespace ppaudit {

Mlp::Mlp(std::vector<int> dims, uint64_t seed) : dims_(std::move(dims)) {
  if (dims_.size() < 2 || dims_.back() != 1)
    throw std::invalid_argument("attack net needs dims {in, hidden..., 1}");
  Rng rng(derive_seed(seed, "mlp"));
  const std::size_t layers = dims_.size() - 1;
  w_.resize(layers);
  b_.resize(layers);
  gw_.resize(layers);
  gb_.resize(layers);
  mw_.resize(layers);
  mb_.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const int cin = dims_[l], cout = dims_[l + 1];
    w_[l].resize({cin, cout});
    b_[l].resize({cout});
    gw_[l].resize({cin, cout});
    gb_[l].resize({cout});
    mw_[l].resize({cin, cout});
    mb_[l].resize({cout});
    if (l + 1 < layers) {
      const float sd = std::sqrt(2.0f / static_cast<float>(cin));
      for (int64_t i = 0; i < w_[l].numel(); ++i)
        w_[l][i] = static_cast<float>(rng.normal(0.0, sd));
    }
    // Final layer stays zero: constant 0.5 score until trained.
  }
  act_.resize(layers + 1);
  dact_.resize(layers + 1);
}

const Tensor& Mlp::forward(const Tensor& x) {
  if (x.dim(1) != dims_.front()) throw std::invalid_argument("attack net input width mismatch");
  act_[0] = x;
  const std::size_t layers = w_.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor& out = act_[l + 1];
    out.ensure({x.dim(0), dims_[l + 1]});
    nn::linear_forward(act_[l], w_[l], b_[l], out);
    if (l + 1 < layers) {
      // relu in place
      float* p = out.data();
      for (int64_t i = 0; i < out.numel(); ++i) p[i] = p[i] > 0.0f ? p[i] : 0.0f;
    }
  }
  return act_.back();
}

void Mlp::backward(const Tensor& dscore, Tensor* dx) {
  const std::size_t layers = w_.size();
  dact_[layers] = dscore;
  for (std::size_t l = layers; l-- > 0;) {
    const bool want_dx = l > 0 || dx != nullptr;
    Tensor& din = dact_[l];
    if (want_dx) din.ensure(act_[l].shape());
    nn::linear_backward(act_[l], w_[l], dact_[l + 1], din, gw_[l], gb_[l], want_dx, true);
    if (l > 0) {
      // gradient through the relu applied to act_[l]
      const float* a = act_[l].data();
      float* d = din.data();
      for (int64_t i = 0; i < din.numel(); ++i)
        if (a[i] <= 0.0f) d[i] = 0.0f;
    }
  }
  if (dx != nullptr) *dx = dact_[0];
}

void Mlp::zero_grads() {
  for (std::size_t l = 0; l < gw_.size(); ++l) {
    gw_[l].zero();
    gb_[l].zero();
  }
}

void Mlp::sgd_step(float lr, float momentum) {
  for (std::size_t l = 0; l < w_.size(); ++l) {
    for (int64_t i = 0; i < w_[l].numel(); ++i) {
      mw_[l][i] = momentum * mw_[l][i] + gw_[l][i];
      w_[l][i] -= lr * mw_[l][i];
    }
    for (int64_t i = 0; i < b_[l].numel(); ++i) {
      mb_[l][i] = momentum * mb_[l][i] + gb_[l][i];
      b_[l][i] -= lr * mb_[l][i];
    }
  }
  ++update_count_;
}

double Mlp::sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double Mlp::bce_loss_grad(const Tensor& scores, const std::vector<float>& targets,
                          Tensor& dscore) {
  const int64_t b = scores.dim(0);
  dscore.ensure(scores.shape());
  double loss = 0.0;
  const double invb = 1.0 / static_cast<double>(b);
  for (int64_t i = 0; i < b; ++i) {
    const double t = targets[static_cast<std::size_t>(i)];
    const double s = sigmoid(scores[i]);
    loss -= t * std::log(std::max(s, 1e-12)) + (1.0 - t) * std::log(std::max(1.0 - s, 1e-12));
    dscore[i] = static_cast<float>((s - t) * invb);
  }
  return loss * invb;
}

void attack_input_features(const double* probs, int num_classes, int label, float* out,
                           std::vector<int>* unsort) {
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [probs](int a, int b) { return probs[a] > probs[b]; });
  for (int i = 0; i < num_classes; ++i) {
    out[i] = static_cast<float>(probs[order[static_cast<std::size_t>(i)]]);
    out[num_classes + i] = 0.0f;
  }
  out[num_classes + label] = 1.0f;
  if (unsort != nullptr) *unsort = order;
}

}  // namespace ppaudit
