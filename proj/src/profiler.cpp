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

#include "ppaudit/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "ppaudit/jsonutil.hpp"

namespace ppaudit {

PairTrainResult train_pair(const ArchitectureSpec& arch, const Dataset& ds, const SplitPlan& split,
                           const TrainConfig& cfg, int workers) {
  std::vector<int> all_indices;
  all_indices.reserve(split.h1_indices.size() + split.h2_indices.size());
  all_indices.insert(all_indices.end(), split.h1_indices.begin(), split.h1_indices.end());
  all_indices.insert(all_indices.end(), split.h2_indices.begin(), split.h2_indices.end());
  std::sort(all_indices.begin(), all_indices.end());

  auto [m_all, snapshot] = build_model(arch);
  Model m_h1(arch);  // same arch.seed, parameter-wise identical initialization

  PairTrainResult out{std::move(m_all), std::move(m_h1), std::move(snapshot), {}, {}};
  if (workers >= 2) {
    std::thread t_all([&] {
      out.report_all = train(out.m_all, ds, all_indices, cfg, split.test_indices);
    });
    out.report_h1 = train(out.m_h1, ds, split.h1_indices, cfg, split.test_indices);
    t_all.join();
  } else {
    out.report_all = train(out.m_all, ds, all_indices, cfg, split.test_indices);
    out.report_h1 = train(out.m_h1, ds, split.h1_indices, cfg, split.test_indices);
  }
  return out;
}

double feature_distance(const float* p, const float* q, int64_t d) {
  if (d < 1) throw std::invalid_argument("feature_distance needs d >= 1");
  double acc = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(p[i]) - static_cast<double>(q[i]);
    acc += diff * diff;
  }
  return std::sqrt(acc / static_cast<double>(d));
}

double feature_distance(const Tensor& p, const Tensor& q) {
  if (!p.same_shape(q)) throw std::invalid_argument("feature_distance dimension mismatch");
  return feature_distance(p.data(), q.data(), p.numel());
}

std::vector<DistanceSample> distance_distributions(Model& m_all, Model& m_h1, const Dataset& ds,
                                                   const SplitPlan& split,
                                                   const std::vector<TapId>& taps,
                                                   int batch_size) {
  if (m_all.arch().num_stages() != m_h1.arch().num_stages())
    throw std::invalid_argument("models expose different taps");
  std::vector<DistanceSample> samples;
  std::vector<FeatureMap> fm_a, fm_b;

  auto run_cohort = [&](const std::vector<int>& indices, Cohort cohort) {
    const int64_t n = static_cast<int64_t>(indices.size());
    for (int64_t off = 0; off < n; off += batch_size) {
      const int64_t bsz = std::min<int64_t>(batch_size, n - off);
      Tensor batch = gather_images(ds.train_images, indices, off, bsz);
      m_all.forward_with_taps(batch, Mode::kEval, taps, fm_a);
      m_h1.forward_with_taps(batch, Mode::kEval, taps, fm_b);
      if (fm_a.size() != fm_b.size()) throw std::invalid_argument("models expose different taps");
      for (std::size_t t = 0; t < fm_a.size(); ++t) {
        const FeatureMap& a = fm_a[t];
        const FeatureMap& b = fm_b[t];
        if (!(a.tap == b.tap) || a.d != b.d)
          throw std::invalid_argument("tap mismatch between the two models");
        for (int64_t i = 0; i < bsz; ++i) {
          DistanceSample s;
          s.sample_index = indices[static_cast<std::size_t>(off + i)];
          s.tap = a.tap;
          s.cohort = cohort;
          s.distance =
              feature_distance(a.values.data() + i * a.d, b.values.data() + i * b.d, a.d);
          samples.push_back(s);
        }
      }
    }
  };

  run_cohort(split.h1_indices, Cohort::kSeenBoth);
  run_cohort(split.h2_indices, Cohort::kSeenOnlyAll);
  return samples;
}

double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 1.18) {
    // Small-x expansion of the CDF; survival = 1 - CDF.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    const double t = std::exp(-pi2 / (8.0 * x * x));
    const double cdf = std::sqrt(2.0 * std::numbers::pi) / x *
                       (t + std::pow(t, 9.0) + std::pow(t, 25.0) + std::pow(t, 49.0));
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * x * x);
    sum += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  // Once one sample is exhausted the gap can only shrink toward both ECDFs
  // reaching 1, so the merge above already saw the supremum.
  KsResult r;
  r.statistic = d;
  const double ne = na * nb / (na + nb);
  r.p_value = kolmogorov_survival(std::sqrt(ne) * d);
  return r;
}

std::vector<DisparityVerdict> disparity_verdicts(const std::vector<DistanceSample>& samples,
                                                 const DisparityRule& rule) {
  std::map<TapId, std::pair<std::vector<double>, std::vector<double>>> by_tap;
  for (const DistanceSample& s : samples) {
    auto& bucket = by_tap[s.tap];
    (s.cohort == Cohort::kSeenBoth ? bucket.first : bucket.second).push_back(s.distance);
  }
  std::vector<DisparityVerdict> verdicts;
  for (auto& [tap, bucket] : by_tap) {
    if (bucket.first.empty() || bucket.second.empty())
      throw std::invalid_argument("tap " + tap_name(tap) + " is missing a cohort");
    KsResult ks = ks_statistic(bucket.first, bucket.second);
    DisparityVerdict v;
    v.tap = tap;
    v.ks_statistic = ks.statistic;
    v.p_value = ks.p_value;
    v.flagged = ks.p_value < rule.p_threshold && ks.statistic >= rule.d_min;
    verdicts.push_back(v);
  }
  return verdicts;
}

RiskPartition locate_risk_onset(const std::vector<DisparityVerdict>& verdicts, int k_stages) {
  std::map<int, bool> stage_end_flag;
  for (const DisparityVerdict& v : verdicts)
    if (v.tap.block == 0) stage_end_flag[v.tap.stage] = v.flagged;
  for (int s = 1; s <= k_stages; ++s)
    if (!stage_end_flag.count(s))
      throw std::invalid_argument("missing stage-end verdict for stage " + std::to_string(s));

  int onset = k_stages + 1;
  for (int s = 1; s <= k_stages; ++s) {
    if (stage_end_flag[s]) {
      onset = s;
      break;
    }
  }
  RiskPartition rp;
  rp.onset_stage = onset;
  for (int s = 1; s < onset; ++s) rp.frozen_stages.push_back(s);
  for (int s = onset; s <= k_stages; ++s) rp.retrained_stages.push_back(s);
  return rp;
}

void write_distance_samples(const std::vector<DistanceSample>& samples, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write distance samples to " + path);
  f << "sample_index,tap,cohort,distance\n";
  char buf[64];
  for (const DistanceSample& s : samples) {
    std::snprintf(buf, sizeof(buf), "%.17g", s.distance);
    f << s.sample_index << ',' << tap_name(s.tap) << ','
      << (s.cohort == Cohort::kSeenBoth ? "seen_both" : "seen_only_all") << ',' << buf << "\n";
  }
}

namespace {
TapId parse_tap_name(const std::string& name) {
  // "stageS.end" or "stageS.blockB"
  TapId tap;
  const std::size_t dot = name.find('.');
  if (name.rfind("stage", 0) != 0 || dot == std::string::npos)
    throw std::runtime_error("bad tap name '" + name + "'");
  tap.stage = std::stoi(name.substr(5, dot - 5));
  const std::string rest = name.substr(dot + 1);
  tap.block = rest == "end" ? 0 : std::stoi(rest.substr(5));
  return tap;
}
}  // namespace

std::vector<DistanceSample> read_distance_samples(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read distance samples from " + path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<DistanceSample> samples;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string idx, tap, cohort, dist;
    std::getline(ss, idx, ',');
    std::getline(ss, tap, ',');
    std::getline(ss, cohort, ',');
    std::getline(ss, dist, ',');
    DistanceSample s;
    s.sample_index = std::stoi(idx);
    s.tap = parse_tap_name(tap);
    s.cohort = cohort == "seen_both" ? Cohort::kSeenBoth : Cohort::kSeenOnlyAll;
    s.distance = std::stod(dist);
    samples.push_back(s);
  }
  return samples;
}

void write_disparity_report(const DisparityReport& report, const std::string& path) {
  json j;
  j["rule"] = {{"p_threshold", report.rule.p_threshold}, {"d_min", report.rule.d_min}};
  json verdicts = json::array();
  for (const DisparityVerdict& v : report.verdicts)
    verdicts.push_back({{"tap", tap_name(v.tap)},
                        {"ks_statistic", v.ks_statistic},
                        {"p_value", v.p_value},
                        {"flagged", v.flagged}});
  j["verdicts"] = verdicts;
  j["risk"] = {{"onset_stage", report.risk.onset_stage},
               {"frozen_stages", report.risk.frozen_stages},
               {"retrained_stages", report.risk.retrained_stages}};
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write disparity report to " + path);
  f << j.dump(2) << "\n";
}

DisparityReport read_disparity_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read disparity report from " + path);
  json j = json::parse(f);
  DisparityReport r;
  r.rule.p_threshold = j.at("rule").value("p_threshold", 0.01);
  r.rule.d_min = j.at("rule").value("d_min", 0.1);
  for (const json& v : j.at("verdicts")) {
    DisparityVerdict dv;
    dv.tap = parse_tap_name(v.at("tap").get<std::string>());
    dv.ks_statistic = v.value("ks_statistic", 0.0);
    dv.p_value = v.value("p_value", 1.0);
    dv.flagged = v.value("flagged", false);
    r.verdicts.push_back(dv);
  }
  r.risk.onset_stage = j.at("risk").value("onset_stage", 0);
  r.risk.frozen_stages = j.at("risk").value("frozen_stages", std::vector<int>{});
  r.risk.retrained_stages = j.at("risk").value("retrained_stages", std::vector<int>{});
  return r;
}

}  // namespace ppaudit
