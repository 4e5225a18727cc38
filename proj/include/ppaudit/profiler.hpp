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

#ifndef PPAUDIT_PROFILER_HPP_
#define PPAUDIT_PROFILER_HPP_

#include <string>
#include <vector>

#include "ppaudit/model.hpp"
#include "ppaudit/train.hpp"

namespace ppaudit {

enum class Cohort { kSeenBoth, kSeenOnlyAll };

struct DistanceSample {
  int sample_index = 0;
  TapId tap;
  double distance = 0.0;
  Cohort cohort = Cohort::kSeenBoth;
};

struct DisparityRule {
  double p_threshold = 0.01;
  /// Effect-size guard: with thousands of samples the KS test flags trivial
  /// differences, so require the statistic itself to be material.
  double d_min = 0.1;
};

struct DisparityVerdict {
  TapId tap;
  double ks_statistic = 0.0;
  double p_value = 1.0;
  bool flagged = false;
};

struct RiskPartition {
  int onset_stage = 0;  // in [1, K+1]; K+1 means only the head is retrained
  std::vector<int> frozen_stages;
  std::vector<int> retrained_stages;  // the classifier head is always retrained
};

struct DisparityReport {
  DisparityRule rule;
  std::vector<DisparityVerdict> verdicts;
  RiskPartition risk;
};

struct PairTrainResult {
  Model m_all;
  Model m_h1;
  InitSnapshot snapshot;  // shared initialization of both models
  TrainReport report_all;
  TrainReport report_h1;
};

/// Trains M_all on h1 u h2 and M_h1 on h1 with identical architecture,
/// configuration and initialization seed. With workers >= 2 the two runs
/// execute on parallel threads.
PairTrainResult train_pair(const ArchitectureSpec& arch, const Dataset& ds, const SplitPlan& split,
                           const TrainConfig& cfg, int workers = 1);

/// sqrt( sum_i (p_i - q_i)^2 / d ): dimension-normalized Euclidean distance.
double feature_distance(const float* p, const float* q, int64_t d);
double feature_distance(const Tensor& p, const Tensor& q);

/// Per-sample, per-tap distances between the two models' feature maps over
/// h1 u h2, cohort-labelled by membership in h1. Models run in evaluation
/// mode on canonical (un-augmented) inputs.
std::vector<DistanceSample> distance_distributions(Model& m_all, Model& m_h1, const Dataset& ds,
                                                   const SplitPlan& split,
                                                   const std::vector<TapId>& taps,
                                                   int batch_size = 250);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov: D = sup |ECDF_a - ECDF_b| with the
/// asymptotic p-value.
KsResult ks_statistic(std::vector<double> a, std::vector<double> b);

/// Survival function of the limiting Kolmogorov distribution.
double kolmogorov_survival(double x);

std::vector<DisparityVerdict> disparity_verdicts(const std::vector<DistanceSample>& samples,
                                                 const DisparityRule& rule);

/// Earliest flagged stage-end verdict wins; everything later is treated
/// risky (monotone closure). No flags puts the onset past the last stage.
RiskPartition locate_risk_onset(const std::vector<DisparityVerdict>& verdicts, int k_stages);

/// Columnar dump: sample_index, tap, cohort, distance.
void write_distance_samples(const std::vector<DistanceSample>& samples, const std::string& path);
std::vector<DistanceSample> read_distance_samples(const std::string& path);

void write_disparity_report(const DisparityReport& report, const std::string& path);
DisparityReport read_disparity_report(const std::string& path);

}  // namespace ppaudit

#endif  // PPAUDIT_PROFILER_HPP_
