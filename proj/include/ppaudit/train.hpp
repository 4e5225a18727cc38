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

#ifndef PPAUDIT_TRAIN_HPP_
#define PPAUDIT_TRAIN_HPP_

#include <functional>
#include <string>
#include <vector>

#include "ppaudit/data.hpp"
#include "ppaudit/mlp.hpp"
#include "ppaudit/model.hpp"

namespace ppaudit {

enum class Pool { kTrain, kTest };

enum class ObjectiveKind { kCe, kRelaxLoss, kAdvReg };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kCe;
  /// Defense strength: the loss floor for relaxloss (search range [1, 3]),
  /// the regularizer weight for advreg (search range [1, 5]).
  double alpha = 1.0;
  /// Attack-net updates per classifier step (advreg only).
  int k = 3;
};

std::string objective_id(const ObjectiveSpec& spec);

enum class LrScheduleKind { kConstant, kCosine, kStep };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::kCosine;
  double base_lr = 0.1;
  double end_lr = 0.0;
  int warmup_epochs = 0;
  std::vector<double> step_milestones{0.5, 0.75};  // fractions of total epochs
  double step_gamma = 0.1;
};

double lr_at(const LrSchedule& s, int epoch, int total_epochs);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 125;
  std::string optimizer = "sgd-momentum";
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  ObjectiveSpec objective;
  AugmentationPolicy augmentation;
  /// Per-epoch test metrics are computed on a fixed, seeded subset of this
  /// fraction of the provided test indices (the subset is identical across
  /// epochs; 1.0 evaluates everything).
  double eval_fraction = 1.0;
  int checkpoint_every = 0;           // epochs between checkpoints, 0 disables
  std::string checkpoint_dir;
  std::string report_path;            // JSONL per-epoch records when nonempty
  /// Nonmember reference indices into the test pool, required by advreg.
  std::vector<int> advreg_reference;
  double advreg_attack_lr = 0.05;
  /// Test hook: observes every training index as the loader consumes it.
  std::function<void(int)> index_observer;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean plain CE over the epoch's training passes
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  bool ok = true;
  std::string error;  // set on divergence (non-finite loss) or other failure
  double wall_seconds_total = 0.0;
  uint64_t peak_memory_bytes = 0;
  // relaxloss branch counters
  int64_t descent_batches = 0;
  int64_t ascent_batches = 0;
  int64_t flatten_batches = 0;
  std::string final_checkpoint;
};

std::string train_report_to_json(const TrainReport& r);
TrainReport train_report_from_json(const std::string& text);

enum class UpdateKind { kDescent, kAscent, kFlattenDescent };

struct UpdateDirective {
  UpdateKind kind = UpdateKind::kDescent;
  double loss = 0.0;     // objective value for the taken branch
  double ce_loss = 0.0;  // plain CE on the batch, always populated
  Tensor dlogits;
};

/// RelaxLoss branch rule: descend on CE while the batch mean CE exceeds
/// alpha; below it, even-numbered epochs take a gradient-ascent step and
/// odd-numbered epochs descend toward flattened posteriors (true-class
/// probability kept, remaining mass spread evenly over the other classes).
UpdateDirective relaxloss_step(int epoch_index, const Tensor& logits,
                               const std::vector<int>& labels, double alpha);

struct AdvRegRound {
  int attack_steps = 0;
  double attack_loss = 0.0;
  double member_gain = 0.0;  // mean log h on the member batch
  UpdateDirective classifier;
};

/// One adversarial-regularization round: the attack net takes `k` update
/// steps separating (softmax, one-hot label) pairs of the two batches, then
/// the classifier directive minimizes CE + alpha * (attack gain on members).
AdvRegRound advreg_round(const Tensor& member_logits, const std::vector<int>& member_labels,
                         const Tensor& nonmember_logits, const std::vector<int>& nonmember_labels,
                         Mlp& attack_net, double alpha, int k, float attack_lr);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

EvalResult evaluate(Model& model, const Dataset& ds, Pool pool, const std::vector<int>& indices,
                    int batch_size = 250);

/// Runs the optimization loop. E = 0 returns immediately with the model
/// untouched; frozen parameters are never updated under any objective;
/// a non-finite loss aborts with ok = false rather than crashing.
TrainReport train(Model& model, const Dataset& ds, const std::vector<int>& train_indices,
                  const TrainConfig& cfg, const std::vector<int>& test_indices = {},
                  const InitSnapshot* snapshot_for_checkpoints = nullptr);

}  // namespace ppaudit

#endif  // PPAUDIT_TRAIN_HPP_
