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

#ifndef PPAUDIT_MLP_HPP_
#define PPAUDIT_MLP_HPP_

#include <cstdint>
#include <vector>

#include "ppaudit/tensor.hpp"

namespace ppaudit {

/// Fully connected scorer used as the membership attack network: relu hidden
/// layers, single pre-sigmoid output. The output layer starts at zero, so a
/// fresh net scores every input exactly 0.5 and passes no gradient to its
/// input.
class Mlp {
 public:
  Mlp(std::vector<int> dims, uint64_t seed);  // dims = {in, hidden..., 1}

  /// Pre-sigmoid scores, shape [B, 1]. Caches activations for backward().
  const Tensor& forward(const Tensor& x);

  /// dscore is d(loss)/d(pre-sigmoid output). Accumulates parameter grads;
  /// optionally returns the gradient w.r.t. the input batch.
  void backward(const Tensor& dscore, Tensor* dx);

  void zero_grads();
  void sgd_step(float lr, float momentum);

  int update_count() const { return update_count_; }

  /// BCE on sigmoid(score): returns mean loss and fills dscore = sigma - t.
  static double bce_loss_grad(const Tensor& scores, const std::vector<float>& targets,
                              Tensor& dscore);

  static double sigmoid(double z);

 private:
  std::vector<int> dims_;
  std::vector<Tensor> w_, b_, gw_, gb_, mw_, mb_;
  std::vector<Tensor> act_;  // act_[0] is a copy of the input
  std::vector<Tensor> dact_;
  int update_count_ = 0;
};

/// Attacker input for one sample: softmax sorted descending concatenated with
/// the one-hot true label. `unsort` (when given) receives the permutation so
/// gradients can be routed back to the unsorted probabilities.
void attack_input_features(const double* probs, int num_classes, int label, float* out,
                           std::vector<int>* unsort);

}  // namespace ppaudit

#endif  // PPAUDIT_MLP_HPP_
