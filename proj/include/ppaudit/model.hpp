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

#ifndef PPAUDIT_MODEL_HPP_
#define PPAUDIT_MODEL_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ppaudit/nn.hpp"
#include "ppaudit/tensor.hpp"

namespace ppaudit {

enum class Family { kPlain, kResidual };

struct StageSpec {
  int index = 1;  // 1-based
  int num_blocks = 2;
  int channels = 32;
  bool downsample = false;  // halves spatial dims at the stage head
  bool residual = true;
};

struct StemSpec {
  int out_channels = 32;
  int stride = 2;
};

struct HeadSpec {
  int num_classes = 10;
};

struct ArchitectureSpec {
  Family family = Family::kResidual;
  std::vector<StageSpec> stages;
  StemSpec stem;
  HeadSpec head;
  std::array<int, 3> input_shape{3, 32, 32};  // (channels, height, width)
  /// Multiplies the final stage's spatial side. 2 and 4 are realized by
  /// keeping the last one / two downsampling stage heads at stride 1; 1/2 by
  /// an extra 2x2 average pool ahead of the final stage.
  double feature_map_scale = 1.0;
  uint64_t seed = 0;

  int num_stages() const { return static_cast<int>(stages.size()); }
};

/// Desk-scale default: residual family, 4 stages, blocks (2,2,2,2), channels
/// (32,64,128,256), stride-2 stem on 3x32x32 inputs.
ArchitectureSpec default_architecture(uint64_t seed = 0);

/// Identifies an observation point. block == 0 means "stage-end".
struct TapId {
  int stage = 0;
  int block = 0;
  bool operator==(const TapId&) const = default;
  bool operator<(const TapId& o) const { return stage != o.stage ? stage < o.stage : block < o.block; }
};
std::string tap_name(const TapId& id);

struct FeatureMap {
  TapId tap;
  Tensor values;  // [B, H, W, C]
  int64_t d = 0;  // flattened per-sample dimensionality C*H*W
};

/// Snapshot of every trainable parameter, keyed by name.
struct InitSnapshot {
  uint64_t seed = 0;
  std::map<std::string, Tensor> values;
};

/// Exact partition of the trainable parameter names into privacy-safe and
/// privacy-risky sets.
struct ParameterPartition {
  std::set<std::string> safe_names;
  std::set<std::string> risky_names;
};

enum class Mode { kTrain, kEval };

/// Name-addressed parameter/buffer storage with stable ordering. Units hold
/// integer handles so models copy cleanly.
class ParamStore {
 public:
  int add(const std::string& name, std::vector<int64_t> shape, bool trainable);
  int handle(const std::string& name) const;  // -1 when absent
  int size() const { return static_cast<int>(names_.size()); }

  const std::string& name(int h) const { return names_[static_cast<std::size_t>(h)]; }
  Tensor& value(int h) { return values_[static_cast<std::size_t>(h)]; }
  const Tensor& value(int h) const { return values_[static_cast<std::size_t>(h)]; }
  Tensor& grad(int h) { return grads_[static_cast<std::size_t>(h)]; }
  bool trainable(int h) const { return trainable_[static_cast<std::size_t>(h)] != 0; }
  bool frozen(int h) const { return frozen_[static_cast<std::size_t>(h)] != 0; }
  void set_frozen(int h, bool f) { frozen_[static_cast<std::size_t>(h)] = f ? 1 : 0; }

  void zero_grads();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<uint8_t> trainable_;
  std::vector<uint8_t> frozen_;
  std::unordered_map<std::string, int> index_;
};

class Model {
 public:
  explicit Model(const ArchitectureSpec& arch);

  const ArchitectureSpec& arch() const { return arch_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Logits for an NHWC batch. Train mode uses batch normalization statistics
  /// (except where frozen) and caches activations for backward().
  Tensor forward(const Tensor& batch, Mode mode);

  /// Same as forward() but records the requested taps. Taps are pure
  /// observations; logits are identical with and without them.
  Tensor forward_with_taps(const Tensor& batch, Mode mode, const std::vector<TapId>& taps,
                           std::vector<FeatureMap>& feature_maps);

  /// Backpropagates dlogits through the activations cached by the last
  /// train-mode forward. Gradients accumulate into the store; frozen
  /// parameters receive none and subgraphs that cannot reach a trainable
  /// parameter are skipped.
  void backward(const Tensor& dlogits);

  /// Stage-end taps in order, optionally per-block taps as well.
  std::vector<TapId> tap_ids(bool per_block = false) const;

  std::vector<std::string> trainable_names() const;
  std::vector<std::string> buffer_names() const;

  /// 0 = stem, 1..K = stage index, K+1 = head.
  int stage_of(const std::string& param_name) const;

  void set_frozen(const std::set<std::string>& names, bool frozen);
  std::set<std::string> frozen_names() const;
  /// Normalization running statistics follow their layer's gamma: frozen
  /// gamma means the stats are neither updated nor re-estimated.
  void sync_frozen_stats();

  /// Resets the running statistics owned by the given normalization prefixes
  /// to their construction values (mean 0, var 1).
  void reset_buffers_for(const std::set<std::string>& risky_param_names);

  InitSnapshot snapshot() const;

  int64_t parameter_count(const std::string& prefix = "") const;

 private:
  struct ConvUnit {
    int w_h = -1;
    int cin = 0, cout = 0, ksize = 3, stride = 1;
    const Tensor* in = nullptr;
    Tensor out;
  };
  struct BnUnit {
    int gamma_h = -1, beta_h = -1, rm_h = -1, rv_h = -1;
    int c = 0;
    bool stats_frozen = false;
    bool used_batch_stats = false;
    nn::BnStats cached;
    const Tensor* in = nullptr;
    Tensor out;
  };
  struct BlockUnit {
    bool residual = false;
    bool has_shortcut = false;
    ConvUnit conv1, conv2, sc_conv;
    BnUnit bn1, bn2, sc_bn;
    Tensor a_relu1;  // post-relu between conv1 and conv2 (residual only)
    Tensor sum;      // pre-activation sum (residual only)
    Tensor out;      // block output (post relu)
    const Tensor* in = nullptr;
    // gradient scratch
    Tensor d_in, d_relu1, d_bn_in, d_sum, d_bn2_in, d_sc;
  };
  struct StageUnit {
    int index = 1;
    bool pre_pool = false;  // extra 2x2 average pool ahead of the stage
    Tensor pooled;
    Tensor d_pool_in;
    std::vector<BlockUnit> blocks;
  };

  void conv_forward(ConvUnit& u, const Tensor& x);
  void conv_backward(ConvUnit& u, const Tensor& dy, Tensor* dx, bool want_dx);
  void bn_forward(BnUnit& u, const Tensor& x, Mode mode);
  void bn_backward(BnUnit& u, const Tensor& dy, Tensor* dx, bool want_dx);
  void block_forward(BlockUnit& b, const Tensor& x, Mode mode);
  // Returns the gradient w.r.t. the block input in b.d_in when want_dx.
  void block_backward(BlockUnit& b, const Tensor& dy, bool want_dx);
  bool unit_trainable(const ConvUnit& u) const;
  bool unit_trainable(const BnUnit& u) const;
  int lowest_trainable_position() const;

  ArchitectureSpec arch_;
  ParamStore store_;
  ConvUnit stem_conv_;
  BnUnit stem_bn_;
  Tensor stem_relu_;
  std::vector<StageUnit> stages_;
  Tensor pooled_;  // [B, C] global average pool
  int fc_w_h = -1, fc_b_h = -1;
  Tensor logits_;
  const Tensor* input_ = nullptr;
  // backward scratch
  Tensor d_pooled_, d_gap_in_, d_stem_relu_, d_stem_bn_in_, d_stem_conv_in_;
  std::vector<float> col_scratch_;
  std::vector<float> dcol_scratch_;
  Mode last_mode_ = Mode::kEval;
};

/// Builds the model and its initialization snapshot. Construction is
/// deterministic in arch.seed: the snapshot equals the fresh parameters.
std::pair<Model, InitSnapshot> build_model(const ArchitectureSpec& arch);

/// Splits parameter names at `onset_stage`: stages below it plus the stem are
/// privacy-safe, everything from it on plus the head is privacy-risky.
/// onset_stage == K+1 marks only the head risky; onset_stage == 1 marks
/// everything risky (the stem has nothing safe to precede).
ParameterPartition partition_parameters(const Model& model, int onset_stage);

ArchitectureSpec parse_architecture(const std::string& json_text);
std::string architecture_to_json(const ArchitectureSpec& arch);

}  // namespace ppaudit

#endif  // PPAUDIT_MODEL_HPP_
