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

#ifndef PPAUDIT_DATA_HPP_
#define PPAUDIT_DATA_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ppaudit/rng.hpp"
#include "ppaudit/tensor.hpp"

namespace ppaudit {

struct DatasetSpec {
  std::string name;
  std::array<int, 3> input_shape{3, 32, 32};  // (channels, height, width)
  int num_classes = 10;
  /// "builtin:<generator>[:n_train[:n_test[:seed[:key=value...]]]]" or a file path.
  std::string source;
};

/// Indexed (image, label) pools with a fixed canonical ordering. Read-only
/// after construction; safe for concurrent readers. Images are NHWC float32.
struct Dataset {
  DatasetSpec spec;
  Tensor train_images;
  std::vector<int> train_labels;
  Tensor test_images;
  std::vector<int> test_labels;

  int n_train() const { return static_cast<int>(train_labels.size()); }
  int n_test() const { return static_cast<int>(test_labels.size()); }
  int64_t sample_size() const {
    return static_cast<int64_t>(spec.input_shape[0]) * spec.input_shape[1] * spec.input_shape[2];
  }
};

/// Deterministic partition of the training pool into halves plus held-out
/// test indices. h1 and h2 are disjoint, cover [0, n_train), and differ in
/// size by at most one (h1 takes the extra element).
struct SplitPlan {
  uint64_t seed = 0;
  std::vector<int> h1_indices;
  std::vector<int> h2_indices;
  std::vector<int> test_indices;
};

struct AugmentationPolicy {
  double flip_probability = 0.5;
  int crop_padding = 4;
  bool enabled = true;
};

/// Returns the dataset described by `spec`. Builtin sources are generated
/// deterministically (and cached under `cache_dir` when given); anything else
/// is treated as a file in the dataset container format (see save_dataset).
Dataset load_dataset(const DatasetSpec& spec, const std::string& cache_dir = "");

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset_file(const DatasetSpec& spec, const std::string& path);

/// The desk-scale default spec: builtin synth10, 10k train / 5k test,
/// 3x32x32, 10 classes.
DatasetSpec default_dataset_spec();

SplitPlan make_split(int n_train, uint64_t seed);
SplitPlan make_split(int n_train, int n_test, uint64_t seed);

/// Plain-text record {seed, h1, h2, test} so external tools can replay it.
void write_split(const SplitPlan& plan, const std::string& path);
SplitPlan read_split(const std::string& path);

/// Random horizontal flip + zero-pad-and-crop. Identity when disabled or when
/// the policy is degenerate. Consumes randomness only from `rng`.
Tensor augment_batch(const Tensor& batch, const AugmentationPolicy& policy, Rng& rng);

/// Gathers dataset rows into an NHWC batch tensor.
Tensor gather_images(const Tensor& pool, const std::vector<int>& indices, int64_t offset,
                     int64_t count);

}  // namespace ppaudit

#endif  // PPAUDIT_DATA_HPP_
