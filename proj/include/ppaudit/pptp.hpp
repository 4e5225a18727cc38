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

#ifndef PPAUDIT_PPTP_HPP_
#define PPAUDIT_PPTP_HPP_

#include <vector>

#include "ppaudit/model.hpp"
#include "ppaudit/train.hpp"

namespace ppaudit {

/// Retraining configuration: the defense objective and epoch budget live in
/// `retrain` (retrain.objective is the privacy-preserving approach f,
/// retrain.epochs is E').
struct PPTPConfig {
  TrainConfig retrain;
};

/// Excludes the privacy-safe parameters from all future updates. Values are
/// untouched; running normalization statistics in the safe region stop
/// updating as well. Idempotent.
void freeze(Model& model, const ParameterPartition& partition);

/// Resets the privacy-risky parameters to their snapshot values bitwise and
/// returns the risky region's normalization statistics to their construction
/// state. Safe parameters are untouched. Idempotent.
void rewind(Model& model, const ParameterPartition& partition, const InitSnapshot& snapshot);

/// Algorithm: freeze theta_ps, rewind theta_pr, retrain the risky region
/// under the configured defense for E' epochs. The input model is the
/// ordinarily pre-trained one; the result keeps its safe parameters
/// bit-identical.
Model pptp_retrain(const Model& pretrained, const InitSnapshot& snapshot,
                   const ParameterPartition& partition, const PPTPConfig& cfg, const Dataset& ds,
                   const std::vector<int>& indices, const std::vector<int>& test_indices = {},
                   TrainReport* report = nullptr);

enum class AblationVariant {
  kLastLayerFinetune,  // freeze everything but the head, keep head values
  kLastLayerRewind,    // freeze everything but the head, rewind the head
  kRiskyRewind,        // freeze safe stages, rewind risky stages (the default)
  kFullScratch         // rewind everything, retrain from scratch
};

const char* ablation_variant_name(AblationVariant v);

/// Builds one of the four comparison models, all starting from the same
/// pretrained checkpoint.
Model ablation_variant(const Model& pretrained, const InitSnapshot& snapshot, int onset_stage,
                       AblationVariant variant, const PPTPConfig& cfg, const Dataset& ds,
                       const std::vector<int>& indices, const std::vector<int>& test_indices = {},
                       TrainReport* report = nullptr);

}  // namespace ppaudit

#endif  // PPAUDIT_PPTP_HPP_
