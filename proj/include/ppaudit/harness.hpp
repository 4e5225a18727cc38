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

#ifndef PPAUDIT_HARNESS_HPP_
#define PPAUDIT_HARNESS_HPP_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ppaudit/checkpoint.hpp"
#include "ppaudit/data.hpp"
#include "ppaudit/jsonutil.hpp"
#include "ppaudit/mia.hpp"
#include "ppaudit/model.hpp"
#include "ppaudit/pptp.hpp"
#include "ppaudit/probe.hpp"
#include "ppaudit/profiler.hpp"
#include "ppaudit/train.hpp"

namespace ppaudit {

struct AttackEvalSpec {
  int members = 2500;
  int nonmembers = 2500;
  ThresholdPolicy policy;
  NnAttackConfig nn;
};

struct ExperimentManifest {
  DatasetSpec dataset;
  ArchitectureSpec arch;
  uint64_t split_seed = 0;
  TrainConfig pretrain;
  DisparityRule profiler_rule;
  bool per_block_taps = false;
  int profile_batch = 250;
  ProbeConfig probe;
  PPTPConfig pptp;
  int pptp_onset = 0;  // 0 = take the profiler's risk onset
  std::vector<AttackKind> attacks;
  AttackEvalSpec attack_eval;
  int repetitions = 3;
  std::string output_dir = "runs";
};

ExperimentManifest manifest_from_json(const json& j);
ExperimentManifest parse_manifest_file(const std::string& path);
json manifest_to_json(const ExperimentManifest& m);
/// Hash of the normalized manifest (key order and default-filling do not
/// matter). 16 hex characters.
std::string manifest_hash(const ExperimentManifest& m);
json default_manifest_json();

struct CostRecord {
  double wall_time_total = 0.0;
  std::vector<double> per_epoch_seconds;
  uint64_t peak_device_memory = 0;
  int epochs_to_converge = 0;
};

/// Runs a training invocation under the memory meter and derives cost
/// numbers from its report. epochs_to_converge is the first epoch whose
/// train loss is within 1% of the final-epoch plateau.
CostRecord measure_cost(const std::function<TrainReport()>& invocation);
CostRecord cost_from_report(const TrainReport& report);
json cost_to_json(const CostRecord& c);
CostRecord cost_from_json(const json& j);

/// Pipeline phases in execution order.
extern const std::vector<std::string> kPhases;  // pretrain profile probe pptp attack report

struct RunRecord {
  std::string manifest_hash;
  std::string rep_dir;
  int repetition = 0;
  SplitPlan split;
  TrainReport pretrain_all;
  TrainReport pretrain_h1;
  DisparityReport disparity;
  ProbeReport probe;
  TrainReport pptp_report;
  CostRecord cost_pretrain;
  CostRecord cost_pptp;
  // model tag ("baseline", "pptp") -> attack kind -> result
  std::map<std::string, std::map<std::string, AttackResult>> attacks;
  std::vector<std::string> completed_phases;
};

struct RunOptions {
  int workers = 1;
  int seed_offset = 0;
  bool resume = true;
  std::string max_phase = "report";  // run phases up to and including this
};

/// Executes pretrain -> profile -> probe -> pptp -> attack -> report for one
/// repetition, caching each phase on disk and skipping completed phases when
/// resuming.
RunRecord run_experiment(const ExperimentManifest& m, int repetition, const RunOptions& opts);

struct ExperimentResult {
  std::vector<RunRecord> reps;
  json aggregate;  // mean and sample standard deviation of key metrics
};

ExperimentResult run_manifest(const ExperimentManifest& m, const RunOptions& opts);

json aggregate_runs(const std::vector<RunRecord>& reps);

enum class SweepFactor { kAugmentation, kFeatureMapSize, kChannelSize, kDepth };
SweepFactor sweep_factor_from_name(const std::string& name);

struct SweepPoint {
  std::string value;
  int onset_stage = 0;
  double final_test_acc = 0.0;
  double final_train_acc = 0.0;
  std::string rep_dir;
};

struct SweepReport {
  std::string factor;
  std::vector<SweepPoint> points;
};

/// Profiles one run per factor value (pretrain + profile phases) and collects
/// onsets, accuracies and distance histograms.
SweepReport factor_sweep(const ExperimentManifest& base, SweepFactor factor,
                         const RunOptions& opts);
void write_sweep_report(const SweepReport& r, const std::string& path);

/// Renders plots and the machine-readable summary for a completed rep dir:
/// cohort-overlaid distance histograms (raw and max-normalized), the probe
/// curve, ROC curves (linear and log-log), cost bars and summary.csv.
/// Byte-stable for identical records.
void render_report(const std::string& rep_dir);

/// Side-by-side feature-distance comparison of two model pairings against a
/// common reference (reference vs a, reference vs b) per stage, written into
/// out_dir. Used to contrast objectives: e.g. reference = CE on the full
/// set, a = CE on half the set, b = a defense on the full set.
void render_pair_comparison(const std::string& reference_ckpt, const std::string& a_ckpt,
                            const std::string& b_ckpt, const DatasetSpec& dataset,
                            const std::string& label_a, const std::string& label_b,
                            const std::string& out_dir, int batch_size = 250);

}  // namespace ppaudit

#endif  // PPAUDIT_HARNESS_HPP_
