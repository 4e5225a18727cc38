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

#include "ppaudit/mia.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ppaudit/jsonutil.hpp"
#include "ppaudit/mlp.hpp"
#include "ppaudit/nn.hpp"

namespace ppaudit {

namespace {
constexpr double kProbFloor = 1e-12;

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}
}  // namespace

const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::kCorrectness:
      return "correctness";
    case AttackKind::kConfidence:
      return "confidence";
    case AttackKind::kEntropy:
      return "entropy";
    case AttackKind::kMentropy:
      return "mentropy";
    case AttackKind::kNn:
      return "nn";
  }
  return "unknown";
}

AttackKind attack_kind_from_name(const std::string& name) {
  if (name == "correctness") return AttackKind::kCorrectness;
  if (name == "confidence") return AttackKind::kConfidence;
  if (name == "entropy") return AttackKind::kEntropy;
  if (name == "mentropy") return AttackKind::kMentropy;
  if (name == "nn") return AttackKind::kNn;
  throw std::invalid_argument("unknown attack kind '" + name + "'");
}

std::vector<ScoreVector> collect_scores(Model& model, const Dataset& ds,
                                        const PoolIndices& members, const PoolIndices& nonmembers,
                                        int batch_size) {
  if (members.pool == nonmembers.pool) {
    std::set<int> m(members.indices.begin(), members.indices.end());
    for (int i : nonmembers.indices)
      if (m.count(i))
        throw std::invalid_argument("member and nonmember index sets intersect at " +
                                    std::to_string(i));
  }
  std::vector<ScoreVector> out;
  out.reserve(members.indices.size() + nonmembers.indices.size());
  const int c = model.arch().head.num_classes;

  auto run = [&](const PoolIndices& pi, bool is_member) {
    const Tensor& images = pi.pool == Pool::kTrain ? ds.train_images : ds.test_images;
    const std::vector<int>& labels =
        pi.pool == Pool::kTrain ? ds.train_labels : ds.test_labels;
    const int id_offset = pi.pool == Pool::kTrain ? 0 : ds.n_train();
    const int64_t n = static_cast<int64_t>(pi.indices.size());
    std::vector<double> probs;
    for (int64_t off = 0; off < n; off += batch_size) {
      const int64_t bsz = std::min<int64_t>(batch_size, n - off);
      Tensor batch = gather_images(images, pi.indices, off, bsz);
      const Tensor& logits = model.forward(batch, Mode::kEval);
      nn::softmax_rows(logits, probs);
      for (int64_t i = 0; i < bsz; ++i) {
        const int idx = pi.indices[static_cast<std::size_t>(off + i)];
        ScoreVector s;
        s.sample_index = id_offset + idx;
        s.probs.assign(probs.begin() + i * c, probs.begin() + (i + 1) * c);
        s.true_label = labels[static_cast<std::size_t>(idx)];
        s.is_member = is_member;
        out.push_back(std::move(s));
      }
    }
  };
  run(members, true);
  run(nonmembers, false);
  return out;
}

double entropy(const double* probs, int n) {
  double h = 0.0;
  for (int i = 0; i < n; ++i) {
    const double p = clamp_prob(probs[i]);
    h -= p * std::log(p);
  }
  return h;
}
double entropy(const std::vector<double>& probs) {
  return entropy(probs.data(), static_cast<int>(probs.size()));
}

double modified_entropy(const double* probs, int n, int y) {
  if (y < 0 || y >= n) throw std::invalid_argument("modified_entropy label out of range");
  const double py = clamp_prob(probs[y]);
  double m = -(1.0 - probs[y]) * std::log(py);
  for (int i = 0; i < n; ++i) {
    if (i == y) continue;
    m -= probs[i] * std::log(clamp_prob(1.0 - probs[i]));
  }
  return m;
}
double modified_entropy(const std::vector<double>& probs, int y) {
  return modified_entropy(probs.data(), static_cast<int>(probs.size()), y);
}

double attack_statistic(AttackKind kind, const ScoreVector& s) {
  switch (kind) {
    case AttackKind::kCorrectness:
      return argmax(s.probs) == s.true_label ? 1.0 : 0.0;
    case AttackKind::kConfidence:
      return s.probs[static_cast<std::size_t>(s.true_label)];
    case AttackKind::kEntropy:
      return -entropy(s.probs);
    case AttackKind::kMentropy:
      return -modified_entropy(s.probs, s.true_label);
    case AttackKind::kNn:
      throw std::invalid_argument("nn attack has no closed-form statistic");
  }
  return 0.0;
}

RocCurve roc_auc(const std::vector<double>& statistics, const std::vector<uint8_t>& is_member) {
  if (statistics.size() != is_member.size() || statistics.empty())
    throw std::invalid_argument("roc_auc needs matching non-empty inputs");
  int64_t pos = 0, neg = 0;
  for (uint8_t m : is_member) (m ? pos : neg)++;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc needs both classes present");

  std::vector<int> order(statistics.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&statistics](int a, int b) {
    return statistics[static_cast<std::size_t>(a)] > statistics[static_cast<std::size_t>(b)];
  });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  int64_t tp = 0, fp = 0;
  double auc = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double v = statistics[static_cast<std::size_t>(order[i])];
    int64_t gp = 0, gn = 0;
    while (i < order.size() && statistics[static_cast<std::size_t>(order[i])] == v) {
      (is_member[static_cast<std::size_t>(order[i])] ? gp : gn)++;
      ++i;
    }
    const double fpr0 = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr0 = static_cast<double>(tp) / static_cast<double>(pos);
    tp += gp;
    fp += gn;
    const double fpr1 = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr1 = static_cast<double>(tp) / static_cast<double>(pos);
    auc += 0.5 * (fpr1 - fpr0) * (tpr0 + tpr1);
    curve.points.emplace_back(fpr1, tpr1);
  }
  curve.auc = auc;
  return curve;
}

std::pair<std::vector<ScoreVector>, std::vector<ScoreVector>> split_scores(
    const std::vector<ScoreVector>& scores, const ThresholdPolicy& policy) {
  if (policy.calibration <= 0.0 || policy.calibration >= 1.0)
    throw std::invalid_argument("calibration fraction must lie in (0, 1)");
  std::map<std::pair<int, bool>, std::vector<int>> groups;
  for (std::size_t i = 0; i < scores.size(); ++i)
    groups[{scores[i].true_label, scores[i].is_member}].push_back(static_cast<int>(i));

  std::vector<ScoreVector> cal, eval;
  for (auto& [key, idx] : groups) {
    Rng rng(derive_seed(policy.seed, "attack-split",
                        static_cast<uint64_t>(key.first * 2 + (key.second ? 1 : 0))));
    rng.shuffle(idx);
    const std::size_t ncal = static_cast<std::size_t>(
        std::round(policy.calibration * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < ncal ? cal : eval).push_back(scores[static_cast<std::size_t>(idx[i])]);
  }
  return {std::move(cal), std::move(eval)};
}

namespace {

struct LabeledStats {
  std::vector<double> stats;
  std::vector<uint8_t> member;
  std::vector<int> label;
};

LabeledStats labeled_stats(const std::vector<ScoreVector>& scores, AttackKind kind) {
  LabeledStats out;
  out.stats.reserve(scores.size());
  for (const ScoreVector& s : scores) {
    out.stats.push_back(attack_statistic(kind, s));
    out.member.push_back(s.is_member ? 1 : 0);
    out.label.push_back(s.true_label);
  }
  return out;
}

void require_both_classes(const std::vector<ScoreVector>& scores, const char* which) {
  bool has_m = false, has_n = false;
  for (const ScoreVector& s : scores) (s.is_member ? has_m : has_n) = true;
  if (!has_m || !has_n)
    throw std::invalid_argument(std::string(which) + " scores need both membership classes");
}

/// Threshold maximizing balanced accuracy for "member iff stat >= tau".
double best_threshold(std::vector<std::pair<double, uint8_t>> sorted_desc, int64_t pos,
                      int64_t neg) {
  // Sweep thresholds at each distinct value; start with tau = +inf
  // (nothing predicted member): balanced accuracy 0.5 by convention.
  double best_tau = std::numeric_limits<double>::infinity();
  double best_ba = 0.5;
  int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < sorted_desc.size()) {
    const double v = sorted_desc[i].first;
    while (i < sorted_desc.size() && sorted_desc[i].first == v) {
      (sorted_desc[i].second ? tp : fp)++;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    const double tnr = 1.0 - static_cast<double>(fp) / static_cast<double>(neg);
    const double ba = 0.5 * (tpr + tnr);
    if (ba > best_ba) {
      best_ba = ba;
      best_tau = v;
    }
  }
  return best_tau;
}

std::map<double, double> tpr_at_fpr_targets(const RocCurve& curve) {
  std::map<double, double> out;
  for (double target : {0.1, 0.01}) {
    double best = 0.0;
    for (const auto& [fpr, tpr] : curve.points)
      if (fpr <= target) best = std::max(best, tpr);
    out[target] = best;
  }
  return out;
}

}  // namespace

AttackResult threshold_attack(const std::vector<ScoreVector>& scores, AttackKind kind,
                              const ThresholdPolicy& policy) {
  if (kind == AttackKind::kNn)
    throw std::invalid_argument("use nn_attack for the neural network attack");
  auto [cal, eval] = split_scores(scores, policy);
  require_both_classes(cal, "calibration");
  require_both_classes(eval, "evaluation");

  LabeledStats cal_s = labeled_stats(cal, kind);
  LabeledStats eval_s = labeled_stats(eval, kind);

  AttackResult result;
  result.kind = attack_kind_name(kind);

  std::vector<uint8_t> predicted(eval.size(), 0);
  if (kind == AttackKind::kCorrectness) {
    // Member iff the prediction is correct; no threshold involved.
    for (std::size_t i = 0; i < eval.size(); ++i)
      predicted[i] = eval_s.stats[i] >= 1.0 ? 1 : 0;
  } else if (policy.scope == ThresholdPolicy::Scope::kGlobal) {
    std::vector<std::pair<double, uint8_t>> rows;
    int64_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < cal.size(); ++i) {
      rows.emplace_back(cal_s.stats[i], cal_s.member[i]);
      (cal_s.member[i] ? pos : neg)++;
    }
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    const double tau = best_threshold(std::move(rows), pos, neg);
    for (std::size_t i = 0; i < eval.size(); ++i)
      predicted[i] = eval_s.stats[i] >= tau ? 1 : 0;
  } else {
    std::map<int, std::vector<std::pair<double, uint8_t>>> by_class;
    std::map<int, std::pair<int64_t, int64_t>> counts;
    for (std::size_t i = 0; i < cal.size(); ++i) {
      by_class[cal_s.label[i]].emplace_back(cal_s.stats[i], cal_s.member[i]);
      auto& [p, n] = counts[cal_s.label[i]];
      (cal_s.member[i] ? p : n)++;
    }
    std::map<int, double> taus;
    for (auto& [cls, rows] : by_class) {
      auto [p, n] = counts[cls];
      if (p == 0 || n == 0)
        throw std::invalid_argument("class " + std::to_string(cls) +
                                    " lacks a membership class in calibration");
      std::sort(rows.begin(), rows.end(),
                [](const auto& a, const auto& b) { return a.first > b.first; });
      taus[cls] = best_threshold(std::move(rows), p, n);
    }
    for (std::size_t i = 0; i < eval.size(); ++i) {
      auto it = taus.find(eval_s.label[i]);
      if (it == taus.end())
        throw std::invalid_argument("class " + std::to_string(eval_s.label[i]) +
                                    " absent from calibration");
      predicted[i] = eval_s.stats[i] >= it->second ? 1 : 0;
    }
  }

  int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (eval_s.member[i])
      (predicted[i] ? tp : fn)++;
    else
      (predicted[i] ? fp : tn)++;
  }
  result.balanced_accuracy = 0.5 * (static_cast<double>(tp) / static_cast<double>(tp + fn) +
                                    static_cast<double>(tn) / static_cast<double>(tn + fp));
  RocCurve curve = roc_auc(eval_s.stats, eval_s.member);
  result.auc = curve.auc;
  result.roc = std::move(curve.points);
  result.tpr_at_fpr = tpr_at_fpr_targets({result.auc, result.roc});
  return result;
}

AttackResult nn_attack(const std::vector<ScoreVector>& calibration,
                       const std::vector<ScoreVector>& evaluation, const NnAttackConfig& cfg) {
  require_both_classes(calibration, "calibration");
  require_both_classes(evaluation, "evaluation");
  const int c = static_cast<int>(calibration.front().probs.size());

  std::vector<int> dims{2 * c};
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(1);
  Mlp net(dims, cfg.seed);

  auto featurize = [c](const std::vector<ScoreVector>& scores, Tensor& x,
                       std::vector<float>& t) {
    const int64_t n = static_cast<int64_t>(scores.size());
    x.resize({n, 2 * c});
    t.resize(static_cast<std::size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      attack_input_features(scores[static_cast<std::size_t>(i)].probs.data(), c,
                            scores[static_cast<std::size_t>(i)].true_label,
                            x.data() + i * 2 * c, nullptr);
      t[static_cast<std::size_t>(i)] = scores[static_cast<std::size_t>(i)].is_member ? 1.0f : 0.0f;
    }
  };

  Tensor cal_x;
  std::vector<float> cal_t;
  featurize(calibration, cal_x, cal_t);
  const int64_t n = cal_x.dim(0);

  Rng order_rng(derive_seed(cfg.seed, "nn-attack-order"));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Tensor batch_x, dscore;
  std::vector<float> batch_t;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (int64_t off = 0; off < n; off += cfg.batch_size) {
      const int64_t bsz = std::min<int64_t>(cfg.batch_size, n - off);
      batch_x.ensure({bsz, 2 * c});
      batch_t.resize(static_cast<std::size_t>(bsz));
      for (int64_t i = 0; i < bsz; ++i) {
        const int src = order[static_cast<std::size_t>(off + i)];
        std::memcpy(batch_x.data() + i * 2 * c, cal_x.data() + static_cast<int64_t>(src) * 2 * c,
                    static_cast<std::size_t>(2 * c) * sizeof(float));
        batch_t[static_cast<std::size_t>(i)] = cal_t[static_cast<std::size_t>(src)];
      }
      const Tensor& s = net.forward(batch_x);
      net.zero_grads();
      Mlp::bce_loss_grad(s, batch_t, dscore);
      net.backward(dscore, nullptr);
      net.sgd_step(static_cast<float>(cfg.lr), 0.9f);
    }
  }

  Tensor eval_x;
  std::vector<float> eval_t;
  featurize(evaluation, eval_x, eval_t);
  const Tensor& s = net.forward(eval_x);
  std::vector<double> stats(static_cast<std::size_t>(s.dim(0)));
  std::vector<uint8_t> member(static_cast<std::size_t>(s.dim(0)));
  int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (int64_t i = 0; i < s.dim(0); ++i) {
    const double h = Mlp::sigmoid(s[i]);
    stats[static_cast<std::size_t>(i)] = h;
    const bool is_m = eval_t[static_cast<std::size_t>(i)] > 0.5f;
    member[static_cast<std::size_t>(i)] = is_m ? 1 : 0;
    const bool pred = h >= 0.5;
    if (is_m)
      (pred ? tp : fn)++;
    else
      (pred ? fp : tn)++;
  }
  AttackResult result;
  result.kind = attack_kind_name(AttackKind::kNn);
  // Ties at exactly 0.5 (an untrained net) predict "member", which the
  // balanced average washes out to 0.5.
  result.balanced_accuracy = 0.5 * (static_cast<double>(tp) / static_cast<double>(tp + fn) +
                                    static_cast<double>(tn) / static_cast<double>(tn + fp));
  RocCurve curve = roc_auc(stats, member);
  result.auc = curve.auc;
  result.roc = std::move(curve.points);
  result.tpr_at_fpr = tpr_at_fpr_targets({result.auc, result.roc});
  return result;
}

void write_scores(const std::vector<ScoreVector>& scores, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write scores to " + path);
  const int c = scores.empty() ? 0 : static_cast<int>(scores.front().probs.size());
  f << "index";
  for (int j = 0; j < c; ++j) f << ",p" << j;
  f << ",label,member\n";
  char buf[64];
  for (const ScoreVector& s : scores) {
    f << s.sample_index;
    for (double p : s.probs) {
      std::snprintf(buf, sizeof(buf), "%.17g", p);
      f << ',' << buf;
    }
    f << ',' << s.true_label << ',' << (s.is_member ? 1 : 0) << "\n";
  }
}

std::vector<ScoreVector> read_scores(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read scores from " + path);
  std::string line;
  std::getline(f, line);
  std::vector<ScoreVector> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4) continue;
    ScoreVector s;
    s.sample_index = std::stoi(cells.front());
    for (std::size_t i = 1; i + 2 < cells.size(); ++i) s.probs.push_back(std::stod(cells[i]));
    s.true_label = std::stoi(cells[cells.size() - 2]);
    s.is_member = cells.back() == "1";
    out.push_back(std::move(s));
  }
  return out;
}

void write_attack_result(const AttackResult& result, const std::string& path) {
  json j;
  j["kind"] = result.kind;
  j["balanced_accuracy"] = result.balanced_accuracy;
  j["auc"] = result.auc;
  json roc = json::array();
  for (const auto& [fpr, tpr] : result.roc) roc.push_back({fpr, tpr});
  j["roc"] = roc;
  json tprs;
  for (const auto& [fpr, tpr] : result.tpr_at_fpr) tprs[std::to_string(fpr)] = tpr;
  j["tpr_at_fpr"] = tprs;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write attack result to " + path);
  f << j.dump(2) << "\n";
}

AttackResult read_attack_result(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read attack result from " + path);
  json j = json::parse(f);
  AttackResult r;
  r.kind = j.value("kind", "");
  r.balanced_accuracy = j.value("balanced_accuracy", 0.0);
  r.auc = j.value("auc", 0.0);
  for (const json& p : j.value("roc", json::array()))
    r.roc.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  if (j.contains("tpr_at_fpr"))
    for (auto it = j["tpr_at_fpr"].begin(); it != j["tpr_at_fpr"].end(); ++it)
      r.tpr_at_fpr[std::stod(it.key())] = it.value().get<double>();
  return r;
}

}  // namespace ppaudit
