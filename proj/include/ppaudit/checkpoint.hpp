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

#ifndef PPAUDIT_CHECKPOINT_HPP_
#define PPAUDIT_CHECKPOINT_HPP_

#include <string>

#include "ppaudit/model.hpp"

namespace ppaudit {

struct CheckpointMeta {
  uint64_t train_seed = 0;
  int epoch = 0;
  std::string objective = "ce";
  std::string split_ref;
};

/// A checkpoint is a directory holding manifest.json (architecture, seeds,
/// epoch, objective, split reference) and params.bin (tensors keyed by name,
/// with the initialization snapshot under the reserved "init/" prefix).
void save_checkpoint(const std::string& dir, const Model& model, const InitSnapshot& snapshot,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  InitSnapshot snapshot;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

bool checkpoint_exists(const std::string& dir);

}  // namespace ppaudit

#endif  // PPAUDIT_CHECKPOINT_HPP_
