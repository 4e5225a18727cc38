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

#ifndef PPAUDIT_MIA_HPP_
#define PPAUDIT_MIA_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ppaudit/data.hpp"
#include "ppaudit/model.hpp"
#include "ppaudit/train.hpp"

namespace ppaudit {

struct ScoreVector {
  int sample_index = 0;  // global id: train-pool index, or n_train + test index
  std::vector<double> probs;
  int true_label = 0;
  bool is_member = false;  // ground truth, used for evaluation only
};

enum class AttackKind { kCorrectness, kConfidence, kEntropy, kMentropy, kNn };
const char* attack_kind_name(AttackKind k);
AttackKind attack_kind_from_name(const std::string& name);

struct ThresholdPolicy {
  enum class Scope { kGlobal, kPerClass };
  Scope scope = Scope::kGlobal;
  double calibration = 0.5;  // fraction of each (class, membership) group
  uint64_t seed = 0;
};

struct AttackResult {
  std::string kind;
  double balanced_accuracy = 0.0;
  double auc = 0.0;
  std::vector<std::pair<double, double>> roc;  // (FPR, TPR), (0,0) .. (1,1)
  std::map<double, double> tpr_at_fpr;         // keys 0.1 and 0.01
};

struct PoolIndices {
  Pool pool = Pool::kTrain;
  std::vector<int> indices;
};

/// Softmax vectors for the given members and nonmembers, evaluation mode, no
/// augmentation. Index sets drawing on the same pool must be disjoint.
std::vector<ScoreVector> collect_scores(Model& model, const Dataset& ds,
                                        const PoolIndices& members,
                                        const PoolIndices& nonmembers, int batch_size = 250);

/// -sum p_i ln p_i, probabilities clamped to [1e-12, 1 - 1e-12].
double entropy(const std::vector<double>& probs);
double entropy(const double* probs, int n);

/// -(1 - p_y) ln p_y - sum_{i != y} p_i ln(1 - p_i), same clamping (this caps
/// the p_y -> 0 singularity).
double modified_entropy(const std::vector<double>& probs, int y);
double modified_entropy(const double* probs, int n, int y);

/// Membership statistic with the "higher = more member-like" convention.
double attack_statistic(AttackKind kind, const ScoreVector& s);

struct RocCurve {
  double auc = 0.0;
  std::vector<std::pair<double, double>> points;
};

/// Threshold-sweep ROC with tied statistics grouped; the trapezoid AUC then
/// equals the pairwise definition (ties count 1/2).
RocCurve roc_auc(const std::vector<double>& statistics, const std::vector<uint8_t>& is_member);

AttackResult threshold_attack(const std::vector<ScoreVector>& scores, AttackKind kind,
                              const ThresholdPolicy& policy);

struct NnAttackConfig {
  uint64_t seed = 0;
  int epochs = 80;
  int batch_size = 128;
  double lr = 0.05;
  std::vector<int> hidden{64, 64};
};

/// Small classifier on (sorted softmax, one-hot label) pairs trained on the
/// calibration scores; metrics from the evaluation scores.
AttackResult nn_attack(const std::vector<ScoreVector>& calibration,
                       const std::vector<ScoreVector>& evaluation, const NnAttackConfig& cfg);

/// Seeded per-(class, membership) split into calibration and evaluation.
std::pair<std::vector<ScoreVector>, std::vector<ScoreVector>> split_scores(
    const std::vector<ScoreVector>& scores, const ThresholdPolicy& policy);

/// Columnar dump: index, C probabilities, label, membership.
void write_scores(const std::vector<ScoreVector>& scores, const std::string& path);
std::vector<ScoreVector> read_scores(const std::string& path);

void write_attack_result(const AttackResult& result, const std::string& path);
AttackResult read_attack_result(const std::string& path);

}  // namespace ppaudit

#endif  // PPAUDIT_MIA_HPP_
