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

#include "ppaudit/pptp.hpp"

#include <stdexcept>

namespace ppaudit {

namespace {
void validate_partition(const Model& model, const ParameterPartition& p) {
  std::set<std::string> all;
  for (const std::string& n : model.trainable_names()) all.insert(n);
  for (const std::string& n : p.safe_names) {
    if (!all.count(n)) throw std::invalid_argument("partition names unknown parameter '" + n + "'");
    if (p.risky_names.count(n))
      throw std::invalid_argument("parameter '" + n + "' is in both partition sides");
  }
  for (const std::string& n : p.risky_names)
    if (!all.count(n)) throw std::invalid_argument("partition names unknown parameter '" + n + "'");
  if (p.safe_names.size() + p.risky_names.size() != all.size())
    throw std::invalid_argument("partition does not cover every trainable parameter");
}
}  // namespace

void freeze(Model& model, const ParameterPartition& partition) {
  validate_partition(model, partition);
  model.set_frozen(partition.safe_names, true);
}

void rewind(Model& model, const ParameterPartition& partition, const InitSnapshot& snapshot) {
  validate_partition(model, partition);
  ParamStore& store = model.params();
  for (const std::string& name : partition.risky_names) {
    auto it = snapshot.values.find(name);
    if (it == snapshot.values.end())
      throw std::invalid_argument("snapshot is missing risky parameter '" + name + "'");
    const int h = store.handle(name);
    if (!store.value(h).same_shape(it->second))
      throw std::invalid_argument("snapshot shape mismatch for '" + name + "'");
    store.value(h) = it->second;
  }
  model.reset_buffers_for(partition.risky_names);
}

Model pptp_retrain(const Model& pretrained, const InitSnapshot& snapshot,
                   const ParameterPartition& partition, const PPTPConfig& cfg, const Dataset& ds,
                   const std::vector<int>& indices, const std::vector<int>& test_indices,
                   TrainReport* report) {
  Model m = pretrained;
  freeze(m, partition);
  rewind(m, partition, snapshot);
  TrainReport r = train(m, ds, indices, cfg.retrain, test_indices, &snapshot);
  if (report != nullptr) *report = r;
  if (!r.ok && report == nullptr)
    throw std::runtime_error("pptp retraining failed: " + r.error);
  return m;
}

const char* ablation_variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::kLastLayerFinetune:
      return "last-layer-finetune";
    case AblationVariant::kLastLayerRewind:
      return "last-layer-rewind";
    case AblationVariant::kRiskyRewind:
      return "risky-layers-rewind";
    case AblationVariant::kFullScratch:
      return "full-scratch";
  }
  return "unknown";
}

Model ablation_variant(const Model& pretrained, const InitSnapshot& snapshot, int onset_stage,
                       AblationVariant variant, const PPTPConfig& cfg, const Dataset& ds,
                       const std::vector<int>& indices, const std::vector<int>& test_indices,
                       TrainReport* report) {
  const int k = pretrained.arch().num_stages();
  switch (variant) {
    case AblationVariant::kLastLayerFinetune: {
      ParameterPartition head_only = partition_parameters(pretrained, k + 1);
      Model m = pretrained;
      freeze(m, head_only);  // no rewind: fine-tune the head in place
      TrainReport r = train(m, ds, indices, cfg.retrain, test_indices, &snapshot);
      if (report != nullptr) *report = r;
      return m;
    }
    case AblationVariant::kLastLayerRewind:
      return pptp_retrain(pretrained, snapshot, partition_parameters(pretrained, k + 1), cfg, ds,
                          indices, test_indices, report);
    case AblationVariant::kRiskyRewind:
      return pptp_retrain(pretrained, snapshot, partition_parameters(pretrained, onset_stage), cfg,
                          ds, indices, test_indices, report);
    case AblationVariant::kFullScratch:
      return pptp_retrain(pretrained, snapshot, partition_parameters(pretrained, 1), cfg, ds,
                          indices, test_indices, report);
  }
  throw std::invalid_argument("unknown ablation variant");
}

}  // namespace ppaudit
