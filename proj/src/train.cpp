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

#include "ppaudit/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "ppaudit/checkpoint.hpp"
#include "ppaudit/jsonutil.hpp"
#include "ppaudit/rng.hpp"

namespace ppaudit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int argmax_row(const float* row, int c) {
  int best = 0;
  for (int j = 1; j < c; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

std::vector<int> fixed_eval_subset(const std::vector<int>& test_indices, double fraction,
                                   uint64_t seed) {
  if (fraction >= 1.0 || test_indices.size() < 2) return test_indices;
  std::vector<int> shuffled = test_indices;
  Rng rng(derive_seed(seed, "evalsubset"));
  rng.shuffle(shuffled);
  std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(fraction * static_cast<double>(shuffled.size())));
  shuffled.resize(keep);
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

}  // namespace

std::string objective_id(const ObjectiveSpec& spec) {
  switch (spec.kind) {
    case ObjectiveKind::kCe:
      return "ce";
    case ObjectiveKind::kRelaxLoss:
      return "relaxloss";
    case ObjectiveKind::kAdvReg:
      return "advreg";
  }
  return "ce";
}

double lr_at(const LrSchedule& s, int epoch, int total_epochs) {
  if (epoch < s.warmup_epochs)
    return s.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(s.warmup_epochs + 1);
  switch (s.kind) {
    case LrScheduleKind::kConstant:
      return s.base_lr;
    case LrScheduleKind::kCosine: {
      const int span = std::max(1, total_epochs - s.warmup_epochs);
      const double t = static_cast<double>(epoch - s.warmup_epochs) / static_cast<double>(span);
      return s.end_lr + 0.5 * (s.base_lr - s.end_lr) * (1.0 + std::cos(std::numbers::pi * t));
    }
    case LrScheduleKind::kStep: {
      double lr = s.base_lr;
      for (double frac : s.step_milestones)
        if (epoch >= frac * total_epochs) lr *= s.step_gamma;
      return lr;
    }
  }
  return s.base_lr;
}

UpdateDirective relaxloss_step(int epoch_index, const Tensor& logits,
                               const std::vector<int>& labels, double alpha) {
  if (alpha <= 0) throw std::invalid_argument("relaxloss needs alpha > 0");
  const int64_t b = logits.dim(0), c = logits.dim(1);
  UpdateDirective dir;
  dir.dlogits.ensure(logits.shape());
  dir.ce_loss = nn::softmax_ce_loss_grad(logits, labels, dir.dlogits);

  if (dir.ce_loss > alpha) {
    dir.kind = UpdateKind::kDescent;
    dir.loss = dir.ce_loss;
    return dir;
  }
  if (epoch_index % 2 == 0) {
    dir.kind = UpdateKind::kAscent;
    dir.loss = dir.ce_loss;
    float* g = dir.dlogits.data();
    for (int64_t i = 0; i < dir.dlogits.numel(); ++i) g[i] = -g[i];
    return dir;
  }
  // Flattened posterior targets: keep p_y, spread the rest evenly.
  std::vector<double> probs;
  nn::softmax_rows(logits, probs);
  std::vector<double> targets(probs.size());
  for (int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const double py = probs[static_cast<std::size_t>(i * c + y)];
    const double rest = (1.0 - py) / static_cast<double>(c - 1);
    for (int64_t j = 0; j < c; ++j)
      targets[static_cast<std::size_t>(i * c + j)] = j == y ? py : rest;
  }
  dir.kind = UpdateKind::kFlattenDescent;
  dir.loss = nn::softmax_ce_target_loss_grad(logits, targets, dir.dlogits);
  return dir;
}

AdvRegRound advreg_round(const Tensor& member_logits, const std::vector<int>& member_labels,
                         const Tensor& nonmember_logits, const std::vector<int>& nonmember_labels,
                         Mlp& attack_net, double alpha, int k, float attack_lr) {
  if (k < 1) throw std::invalid_argument("advreg needs k >= 1");
  if (member_logits.dim(0) == 0 || nonmember_logits.dim(0) == 0)
    throw std::invalid_argument("advreg needs non-empty member and nonmember batches");
  const int64_t bm = member_logits.dim(0), bn = nonmember_logits.dim(0);
  const int c = static_cast<int>(member_logits.dim(1));

  std::vector<double> probs_m, probs_n;
  nn::softmax_rows(member_logits, probs_m);
  nn::softmax_rows(nonmember_logits, probs_n);

  // Attacker inputs: members then nonmembers; remember each member row's
  // sort permutation so gradients can be routed back.
  Tensor feats({bm + bn, 2 * c});
  std::vector<std::vector<int>> member_order(static_cast<std::size_t>(bm));
  for (int64_t i = 0; i < bm; ++i)
    attack_input_features(probs_m.data() + i * c, c, member_labels[static_cast<std::size_t>(i)],
                          feats.data() + i * 2 * c, &member_order[static_cast<std::size_t>(i)]);
  for (int64_t i = 0; i < bn; ++i)
    attack_input_features(probs_n.data() + i * c, c, nonmember_labels[static_cast<std::size_t>(i)],
                          feats.data() + (bm + i) * 2 * c, nullptr);

  std::vector<float> targets(static_cast<std::size_t>(bm + bn), 0.0f);
  std::fill(targets.begin(), targets.begin() + bm, 1.0f);

  AdvRegRound round;
  Tensor dscore;
  for (int step = 0; step < k; ++step) {
    const Tensor& scores = attack_net.forward(feats);
    attack_net.zero_grads();
    round.attack_loss = Mlp::bce_loss_grad(scores, targets, dscore);
    attack_net.backward(dscore, nullptr);
    attack_net.sgd_step(attack_lr, 0.9f);
    ++round.attack_steps;
  }

  // Classifier directive: CE plus alpha * mean log h over members, taken
  // against the attacker as it stands after its k updates.
  round.classifier.kind = UpdateKind::kDescent;
  round.classifier.dlogits.ensure(member_logits.shape());
  round.classifier.ce_loss =
      nn::softmax_ce_loss_grad(member_logits, member_labels, round.classifier.dlogits);

  Tensor member_feats({bm, 2 * c});
  for (int64_t i = 0; i < bm; ++i)
    std::memcpy(member_feats.data() + i * 2 * c, feats.data() + i * 2 * c,
                static_cast<std::size_t>(2 * c) * sizeof(float));
  const Tensor& scores = attack_net.forward(member_feats);
  double gain = 0.0;
  Tensor dattack({bm, 1});
  for (int64_t i = 0; i < bm; ++i) {
    const double h = Mlp::sigmoid(scores[i]);
    gain += std::log(std::max(h, 1e-12));
    // d(alpha * mean log sigmoid(z))/dz = alpha/bm * (1 - sigmoid(z))
    dattack[i] = static_cast<float>(alpha / static_cast<double>(bm) * (1.0 - h));
  }
  round.member_gain = gain / static_cast<double>(bm);
  round.classifier.loss = round.classifier.ce_loss + alpha * round.member_gain;

  Tensor dfeats;
  attack_net.backward(dattack, &dfeats);
  // Route sorted-softmax gradients back through the permutation, then the
  // softmax Jacobian: dz_j = p_j * (dp_j - sum_k p_k dp_k).
  float* dl = round.classifier.dlogits.data();
  for (int64_t i = 0; i < bm; ++i) {
    const std::vector<int>& order = member_order[static_cast<std::size_t>(i)];
    std::vector<double> dprobs(static_cast<std::size_t>(c), 0.0);
    for (int j = 0; j < c; ++j)
      dprobs[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] =
          dfeats[i * 2 * c + j];
    const double* p = probs_m.data() + i * c;
    double dot = 0.0;
    for (int j = 0; j < c; ++j) dot += p[j] * dprobs[static_cast<std::size_t>(j)];
    for (int j = 0; j < c; ++j)
      dl[i * c + j] += static_cast<float>(p[j] * (dprobs[static_cast<std::size_t>(j)] - dot));
  }
  return round;
}

EvalResult evaluate(Model& model, const Dataset& ds, Pool pool, const std::vector<int>& indices,
                    int batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluate needs a non-empty index set");
  const Tensor& images = pool == Pool::kTrain ? ds.train_images : ds.test_images;
  const std::vector<int>& labels = pool == Pool::kTrain ? ds.train_labels : ds.test_labels;
  const int c = model.arch().head.num_classes;
  int64_t correct = 0;
  double loss_sum = 0.0;
  const int64_t n = static_cast<int64_t>(indices.size());
  for (int64_t off = 0; off < n; off += batch_size) {
    const int64_t bsz = std::min<int64_t>(batch_size, n - off);
    Tensor batch = gather_images(images, indices, off, bsz);
    const Tensor& logits = model.forward(batch, Mode::kEval);
    std::vector<double> probs;
    nn::softmax_rows(logits, probs);
    for (int64_t i = 0; i < bsz; ++i) {
      const int y = labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(off + i)])];
      if (argmax_row(logits.data() + i * c, c) == y) ++correct;
      loss_sum -= std::log(std::max(probs[static_cast<std::size_t>(i * c + y)], 1e-300));
    }
  }
  return {static_cast<double>(correct) / static_cast<double>(n), loss_sum / static_cast<double>(n)};
}

TrainReport train(Model& model, const Dataset& ds, const std::vector<int>& train_indices,
                  const TrainConfig& cfg, const std::vector<int>& test_indices,
                  const InitSnapshot* snapshot_for_checkpoints) {
  TrainReport report;
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (cfg.epochs == 0) return report;
  if (train_indices.empty())
    throw std::invalid_argument("training with E > 0 needs a non-empty index set");
  if (cfg.optimizer != "sgd-momentum")
    throw std::invalid_argument("unsupported optimizer '" + cfg.optimizer + "'");
  if (cfg.objective.kind == ObjectiveKind::kAdvReg && cfg.advreg_reference.empty())
    throw std::invalid_argument("advreg needs a nonmember reference set");

  MemoryMeter::instance().reset_peak();
  const auto t_start = Clock::now();

  ParamStore& store = model.params();
  std::vector<Tensor> velocity(static_cast<std::size_t>(store.size()));
  const int num_classes = model.arch().head.num_classes;
  const std::vector<int> eval_subset =
      fixed_eval_subset(test_indices, cfg.eval_fraction, cfg.seed);

  Mlp attack_net({2 * num_classes, 64, 64, 1}, derive_seed(cfg.seed, "advreg-attack"));

  std::ofstream report_stream;
  if (!cfg.report_path.empty()) {
    std::filesystem::path p(cfg.report_path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    report_stream.open(cfg.report_path, std::ios::app);
  }

  std::vector<int> order = train_indices;
  std::vector<int> ref_order = cfg.advreg_reference;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    const double lr = lr_at(cfg.lr, epoch, cfg.epochs);

    {
      Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
      shuffle_rng.shuffle(order);
    }
    Rng aug_rng(derive_seed(cfg.seed, "augment", static_cast<uint64_t>(epoch)));
    Rng ref_rng(derive_seed(cfg.seed, "advref", static_cast<uint64_t>(epoch)));
    if (!ref_order.empty()) ref_rng.shuffle(ref_order);

    double ce_sum = 0.0;
    int64_t seen = 0, correct = 0;
    std::size_t ref_cursor = 0;
    const int64_t n = static_cast<int64_t>(order.size());
    bool diverged = false;

    for (int64_t off = 0; off < n && !diverged; off += cfg.batch_size) {
      const int64_t bsz = std::min<int64_t>(cfg.batch_size, n - off);
      if (cfg.index_observer)
        for (int64_t i = 0; i < bsz; ++i)
          cfg.index_observer(order[static_cast<std::size_t>(off + i)]);

      Tensor batch = gather_images(ds.train_images, order, off, bsz);
      std::vector<int> labels(static_cast<std::size_t>(bsz));
      for (int64_t i = 0; i < bsz; ++i)
        labels[static_cast<std::size_t>(i)] =
            ds.train_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(off + i)])];
      if (cfg.augmentation.enabled) batch = augment_batch(batch, cfg.augmentation, aug_rng);

      // Adv-reg wants nonmember logits; compute them before the member
      // forward so the training caches stay valid for backward.
      Tensor nonmember_logits;
      std::vector<int> nonmember_labels;
      if (cfg.objective.kind == ObjectiveKind::kAdvReg) {
        const int64_t rb = std::min<int64_t>(bsz, static_cast<int64_t>(ref_order.size()));
        std::vector<int> ref_batch(static_cast<std::size_t>(rb));
        for (int64_t i = 0; i < rb; ++i) {
          ref_batch[static_cast<std::size_t>(i)] = ref_order[ref_cursor];
          ref_cursor = (ref_cursor + 1) % ref_order.size();
        }
        Tensor ref_images = gather_images(ds.test_images, ref_batch, 0, rb);
        nonmember_logits = model.forward(ref_images, Mode::kEval);
        nonmember_labels.resize(static_cast<std::size_t>(rb));
        for (int64_t i = 0; i < rb; ++i)
          nonmember_labels[static_cast<std::size_t>(i)] =
              ds.test_labels[static_cast<std::size_t>(ref_batch[static_cast<std::size_t>(i)])];
      }

      const Tensor& logits = model.forward(batch, Mode::kTrain);

      UpdateDirective dir;
      switch (cfg.objective.kind) {
        case ObjectiveKind::kCe: {
          dir.dlogits.ensure(logits.shape());
          dir.ce_loss = nn::softmax_ce_loss_grad(logits, labels, dir.dlogits);
          dir.loss = dir.ce_loss;
          dir.kind = UpdateKind::kDescent;
          break;
        }
        case ObjectiveKind::kRelaxLoss:
          dir = relaxloss_step(epoch, logits, labels, cfg.objective.alpha);
          break;
        case ObjectiveKind::kAdvReg: {
          AdvRegRound round =
              advreg_round(logits, labels, nonmember_logits, nonmember_labels, attack_net,
                           cfg.objective.alpha, cfg.objective.k, cfg.advreg_attack_lr);
          dir = std::move(round.classifier);
          break;
        }
      }
      switch (dir.kind) {
        case UpdateKind::kDescent:
          ++report.descent_batches;
          break;
        case UpdateKind::kAscent:
          ++report.ascent_batches;
          break;
        case UpdateKind::kFlattenDescent:
          ++report.flatten_batches;
          break;
      }

      if (!std::isfinite(dir.loss) || !std::isfinite(dir.ce_loss)) {
        report.ok = false;
        report.error = "non-finite loss at epoch " + std::to_string(epoch) + ", batch offset " +
                       std::to_string(off);
        diverged = true;
        break;
      }

      ce_sum += dir.ce_loss * static_cast<double>(bsz);
      for (int64_t i = 0; i < bsz; ++i)
        if (argmax_row(logits.data() + i * num_classes, num_classes) ==
            labels[static_cast<std::size_t>(i)])
          ++correct;
      seen += bsz;

      store.zero_grads();
      model.backward(dir.dlogits);

      for (int h = 0; h < store.size(); ++h) {
        if (!store.trainable(h) || store.frozen(h)) continue;
        Tensor& w = store.value(h);
        Tensor& g = store.grad(h);
        Tensor& v = velocity[static_cast<std::size_t>(h)];
        if (v.numel() != w.numel()) v.resize(w.shape());
        const float wd = static_cast<float>(cfg.weight_decay);
        const float flr = static_cast<float>(lr);
        const float mom = static_cast<float>(cfg.momentum);
        float* wp = w.data();
        float* gp = g.data();
        float* vp = v.data();
        const int64_t m = w.numel();
        for (int64_t i = 0; i < m; ++i) {
          const float grad = gp[i] + wd * wp[i];
          vp[i] = mom * vp[i] + grad;
          wp[i] -= flr * vp[i];
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = seen > 0 ? ce_sum / static_cast<double>(seen) : 0.0;
    rec.train_acc = seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    if (!eval_subset.empty() && report.ok) {
      EvalResult ev = evaluate(model, ds, Pool::kTest, eval_subset);
      rec.test_acc = ev.accuracy;
      rec.test_loss = ev.mean_loss;
    }
    rec.seconds = seconds_since(t_epoch);
    report.epochs.push_back(rec);

    if (report_stream.is_open()) {
      json j = {{"epoch", rec.epoch},         {"train_loss", rec.train_loss},
                {"train_acc", rec.train_acc}, {"test_loss", rec.test_loss},
                {"test_acc", rec.test_acc},   {"lr", rec.lr},
                {"seconds", rec.seconds}};
      report_stream << j.dump() << "\n";
    }
    if (report.ok && cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (epoch + 1) % cfg.checkpoint_every == 0) {
      CheckpointMeta meta;
      meta.train_seed = cfg.seed;
      meta.epoch = epoch + 1;
      meta.objective = objective_id(cfg.objective);
      const std::string dir = cfg.checkpoint_dir + "/epoch" + std::to_string(epoch + 1);
      save_checkpoint(dir, model, snapshot_for_checkpoints ? *snapshot_for_checkpoints
                                                           : InitSnapshot{},
                      meta);
      report.final_checkpoint = dir;
    }
    if (!report.ok) break;
  }

  report.wall_seconds_total = seconds_since(t_start);
  report.peak_memory_bytes = MemoryMeter::instance().peak_bytes();
  return report;
}

std::string train_report_to_json(const TrainReport& r) {
  json j;
  j["ok"] = r.ok;
  j["error"] = r.error;
  j["wall_seconds_total"] = r.wall_seconds_total;
  j["peak_memory_bytes"] = r.peak_memory_bytes;
  j["descent_batches"] = r.descent_batches;
  j["ascent_batches"] = r.ascent_batches;
  j["flatten_batches"] = r.flatten_batches;
  j["final_checkpoint"] = r.final_checkpoint;
  json eps = json::array();
  for (const EpochRecord& e : r.epochs)
    eps.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"train_acc", e.train_acc},
                   {"test_loss", e.test_loss},
                   {"test_acc", e.test_acc},
                   {"lr", e.lr},
                   {"seconds", e.seconds}});
  j["epochs"] = eps;
  return j.dump(2);
}

TrainReport train_report_from_json(const std::string& text) {
  json j = json::parse(text);
  TrainReport r;
  r.ok = j.value("ok", true);
  r.error = j.value("error", "");
  r.wall_seconds_total = j.value("wall_seconds_total", 0.0);
  r.peak_memory_bytes = j.value("peak_memory_bytes", uint64_t{0});
  r.descent_batches = j.value("descent_batches", int64_t{0});
  r.ascent_batches = j.value("ascent_batches", int64_t{0});
  r.flatten_batches = j.value("flatten_batches", int64_t{0});
  r.final_checkpoint = j.value("final_checkpoint", "");
  for (const json& e : j.value("epochs", json::array())) {
    EpochRecord rec;
    rec.epoch = e.value("epoch", 0);
    rec.train_loss = e.value("train_loss", 0.0);
    rec.train_acc = e.value("train_acc", 0.0);
    rec.test_loss = e.value("test_loss", 0.0);
    rec.test_acc = e.value("test_acc", 0.0);
    rec.lr = e.value("lr", 0.0);
    rec.seconds = e.value("seconds", 0.0);
    r.epochs.push_back(rec);
  }
  return r;
}

}  // namespace ppaudit
