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

#include "ppaudit/probe.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ppaudit/nn.hpp"

namespace ppaudit {

ProbeFeatures extract_pooled_features(Model& model, const Dataset& ds, Pool pool,
                                      const std::vector<int>& indices, int stage,
                                      int batch_size) {
  if (stage < 1 || stage > model.arch().num_stages())
    throw std::invalid_argument("probe stage out of range");
  const Tensor& images = pool == Pool::kTrain ? ds.train_images : ds.test_images;
  const int channels =
      model.arch().stages[static_cast<std::size_t>(stage - 1)].channels;

  ProbeFeatures out;
  out.stage = stage;
  out.sample_indices = indices;
  out.rows.resize({static_cast<int64_t>(indices.size()), channels});

  const std::vector<TapId> taps{{stage, 0}};
  std::vector<FeatureMap> fms;
  Tensor pooled;
  const int64_t n = static_cast<int64_t>(indices.size());
  for (int64_t off = 0; off < n; off += batch_size) {
    const int64_t bsz = std::min<int64_t>(batch_size, n - off);
    Tensor batch = gather_images(images, indices, off, bsz);
    model.forward_with_taps(batch, Mode::kEval, taps, fms);
    const Tensor& act = fms.front().values;
    pooled.ensure({bsz, channels});
    nn::global_avg_pool_forward(act, pooled);
    std::memcpy(out.rows.data() + off * channels, pooled.data(),
                static_cast<std::size_t>(bsz * channels) * sizeof(float));
  }
  return out;
}

LinearProbe fit_linear_probe(const ProbeFeatures& features, const std::vector<int>& labels,
                             int num_classes, const ProbeConfig& cfg) {
  const int64_t n = features.rows.dim(0);
  const int dim = static_cast<int>(features.rows.dim(1));
  if (static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("probe features and labels disagree on sample count");
  {
    std::set<int> present(labels.begin(), labels.end());
    if (present.size() < 2) throw std::invalid_argument("probe needs at least 2 classes present");
  }

  LinearProbe probe;
  probe.feat_mean.assign(static_cast<std::size_t>(dim), 0.0f);
  probe.feat_scale.assign(static_cast<std::size_t>(dim), 1.0f);
  {
    std::vector<double> sum(static_cast<std::size_t>(dim), 0.0),
        sumsq(static_cast<std::size_t>(dim), 0.0);
    const float* rp = features.rows.data();
    for (int64_t i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j) {
        const double v = rp[i * dim + j];
        sum[static_cast<std::size_t>(j)] += v;
        sumsq[static_cast<std::size_t>(j)] += v * v;
      }
    for (int j = 0; j < dim; ++j) {
      const double mean = sum[static_cast<std::size_t>(j)] / static_cast<double>(n);
      const double var = sumsq[static_cast<std::size_t>(j)] / static_cast<double>(n) - mean * mean;
      probe.feat_mean[static_cast<std::size_t>(j)] = static_cast<float>(mean);
      probe.feat_scale[static_cast<std::size_t>(j)] =
          static_cast<float>(1.0 / std::sqrt(std::max(var, 1e-8)));
    }
  }
  Tensor x({n, dim});
  {
    const float* rp = features.rows.data();
    float* xp = x.data();
    for (int64_t i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j)
        xp[i * dim + j] = (rp[i * dim + j] - probe.feat_mean[static_cast<std::size_t>(j)]) *
                          probe.feat_scale[static_cast<std::size_t>(j)];
  }

  probe.w.resize({dim, num_classes});
  probe.b.resize({num_classes});
  // Deterministic tiny random start so ties break reproducibly.
  {
    Rng rng(derive_seed(cfg.seed, "probe"));
    for (int64_t i = 0; i < probe.w.numel(); ++i)
      probe.w[i] = static_cast<float>(rng.normal(0.0, 0.01));
  }

  Tensor scores({n, num_classes});
  Tensor gscore({n, num_classes});
  Tensor gw({dim, num_classes});
  Tensor gb({num_classes});
  const float invn = 1.0f / static_cast<float>(n);
  for (int it = 0; it < cfg.iterations; ++it) {
    nn::linear_forward(x, probe.w, probe.b, scores);
    // One-vs-rest hinge: class y wants score >= 1, others <= -1.
    gscore.zero();
    float* gp = gscore.data();
    const float* sp = scores.data();
    for (int64_t i = 0; i < n; ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      for (int j = 0; j < num_classes; ++j) {
        const float target = j == y ? 1.0f : -1.0f;
        if (sp[i * num_classes + j] * target < 1.0f) gp[i * num_classes + j] = -target * invn;
      }
    }
    gw.zero();
    gb.zero();
    Tensor unused;
    nn::linear_backward(x, probe.w, gscore, unused, gw, gb, false, true);
    const float lr = static_cast<float>(cfg.lr);
    const float l2 = static_cast<float>(cfg.l2);
    for (int64_t i = 0; i < probe.w.numel(); ++i)
      probe.w[i] -= lr * (gw[i] + l2 * probe.w[i]);
    for (int64_t i = 0; i < probe.b.numel(); ++i) probe.b[i] -= lr * gb[i];
  }
  return probe;
}

int LinearProbe::predict(const float* row) const {
  const int dim = static_cast<int>(w.dim(0));
  const int classes = static_cast<int>(w.dim(1));
  int best = 0;
  double best_score = -1e300;
  for (int j = 0; j < classes; ++j) {
    double s = b[j];
    for (int i = 0; i < dim; ++i)
      s += static_cast<double>((row[i] - feat_mean[static_cast<std::size_t>(i)]) *
                               feat_scale[static_cast<std::size_t>(i)]) *
           w[static_cast<int64_t>(i) * classes + j];
    if (s > best_score) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

double probe_accuracy(const LinearProbe& probe, const ProbeFeatures& features,
                      const std::vector<int>& labels) {
  const int64_t n = features.rows.dim(0);
  const int dim = static_cast<int>(features.rows.dim(1));
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i)
    if (probe.predict(features.rows.data() + i * dim) == labels[static_cast<std::size_t>(i)])
      ++correct;
  return static_cast<double>(correct) / static_cast<double>(n);
}

ProbeReport probe_curve(Model& model, const Dataset& ds, const SplitPlan& split,
                        const ProbeConfig& cfg) {
  // Fit on the model's training half(s), report on the held-out pool.
  std::vector<int> train_idx;
  train_idx.reserve(split.h1_indices.size() + split.h2_indices.size());
  train_idx.insert(train_idx.end(), split.h1_indices.begin(), split.h1_indices.end());
  train_idx.insert(train_idx.end(), split.h2_indices.begin(), split.h2_indices.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::vector<int> test_idx = split.test_indices;
  if (test_idx.empty()) throw std::invalid_argument("probe_curve needs test indices in the split");

  std::vector<int> train_labels(train_idx.size()), test_labels(test_idx.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i)
    train_labels[i] = ds.train_labels[static_cast<std::size_t>(train_idx[i])];
  for (std::size_t i = 0; i < test_idx.size(); ++i)
    test_labels[i] = ds.test_labels[static_cast<std::size_t>(test_idx[i])];

  ProbeReport report;
  for (int stage = 1; stage <= model.arch().num_stages(); ++stage) {
    ProbeFeatures train_f = extract_pooled_features(model, ds, Pool::kTrain, train_idx, stage);
    ProbeFeatures test_f = extract_pooled_features(model, ds, Pool::kTest, test_idx, stage);
    LinearProbe probe =
        fit_linear_probe(train_f, train_labels, ds.spec.num_classes, cfg);
    report.stages.push_back(stage);
    report.test_accuracy.push_back(probe_accuracy(probe, test_f, test_labels));
  }
  return report;
}

void write_probe_report(const ProbeReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write probe report to " + path);
  f << "stage,test_accuracy\n";
  char buf[32];
  for (std::size_t i = 0; i < report.stages.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", report.test_accuracy[i]);
    f << report.stages[i] << ',' << buf << "\n";
  }
}

ProbeReport read_probe_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read probe report from " + path);
  std::string line;
  std::getline(f, line);
  ProbeReport r;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string stage, acc;
    std::getline(ss, stage, ',');
    std::getline(ss, acc, ',');
    r.stages.push_back(std::stoi(stage));
    r.test_accuracy.push_back(std::stod(acc));
  }
  return r;
}

}  // namespace ppaudit
