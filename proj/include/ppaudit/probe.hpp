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

#ifndef PPAUDIT_PROBE_HPP_
#define PPAUDIT_PROBE_HPP_

#include <string>
#include <vector>

#include "ppaudit/data.hpp"
#include "ppaudit/model.hpp"
#include "ppaudit/train.hpp"

namespace ppaudit {

/// Pooled feature rows for one stage: global average pool over spatial dims,
/// one row of length stage-channels per sample.
struct ProbeFeatures {
  int stage = 0;
  std::vector<int> sample_indices;
  Tensor rows;  // [n, channels]
};

struct ProbeConfig {
  uint64_t seed = 0;
  int iterations = 300;
  double lr = 0.5;
  double l2 = 1e-3;  // regularization constant
};

/// One-vs-rest linear hinge classifier fit by deterministic full-batch
/// gradient descent on standardized features.
struct LinearProbe {
  Tensor w;  // [dim, classes]
  Tensor b;  // [classes]
  std::vector<float> feat_mean, feat_scale;
  int predict(const float* row) const;
};

struct ProbeReport {
  std::vector<int> stages;
  std::vector<double> test_accuracy;  // aligned with stages
};

ProbeFeatures extract_pooled_features(Model& model, const Dataset& ds, Pool pool,
                                      const std::vector<int>& indices, int stage,
                                      int batch_size = 250);

LinearProbe fit_linear_probe(const ProbeFeatures& features, const std::vector<int>& labels,
                             int num_classes, const ProbeConfig& cfg);

double probe_accuracy(const LinearProbe& probe, const ProbeFeatures& features,
                      const std::vector<int>& labels);

/// Fits a probe per stage on the training-side features and reports held-out
/// accuracy per stage, stages in order.
ProbeReport probe_curve(Model& model, const Dataset& ds, const SplitPlan& split,
                        const ProbeConfig& cfg = {});

/// Columnar (stage, accuracy) file for the report renderer.
void write_probe_report(const ProbeReport& report, const std::string& path);
ProbeReport read_probe_report(const std::string& path);

}  // namespace ppaudit

#endif  // PPAUDIT_PROBE_HPP_
