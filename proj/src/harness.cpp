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

#include "ppaudit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ppaudit/svg.hpp"

namespace fs = std::filesystem;

namespace ppaudit {

const std::vector<std::string> kPhases = {"pretrain", "profile", "probe",
                                          "pptp",     "attack",  "report"};

namespace {

// ---- config <-> json ----

json lr_to_json(const LrSchedule& s) {
  json j;
  j["kind"] = s.kind == LrScheduleKind::kConstant ? "constant"
              : s.kind == LrScheduleKind::kCosine ? "cosine"
                                                  : "step";
  j["base_lr"] = s.base_lr;
  j["end_lr"] = s.end_lr;
  j["warmup_epochs"] = s.warmup_epochs;
  j["step_milestones"] = s.step_milestones;
  j["step_gamma"] = s.step_gamma;
  return j;
}

LrSchedule lr_from_json(const json& j) {
  require_keys_subset(j, "lr",
                      {"kind", "base_lr", "end_lr", "warmup_epochs", "step_milestones",
                       "step_gamma"});
  LrSchedule s;
  const std::string kind = j.value("kind", "cosine");
  if (kind == "constant")
    s.kind = LrScheduleKind::kConstant;
  else if (kind == "cosine")
    s.kind = LrScheduleKind::kCosine;
  else if (kind == "step")
    s.kind = LrScheduleKind::kStep;
  else
    throw std::invalid_argument("unknown lr schedule '" + kind + "'");
  s.base_lr = j.value("base_lr", 0.1);
  s.end_lr = j.value("end_lr", 0.0);
  s.warmup_epochs = j.value("warmup_epochs", 0);
  s.step_milestones = j.value("step_milestones", std::vector<double>{0.5, 0.75});
  s.step_gamma = j.value("step_gamma", 0.1);
  return s;
}

json objective_to_json(const ObjectiveSpec& o) {
  return json{{"kind", objective_id(o)}, {"alpha", o.alpha}, {"k", o.k}};
}

ObjectiveSpec objective_from_json(const json& j) {
  require_keys_subset(j, "objective", {"kind", "alpha", "k"});
  ObjectiveSpec o;
  const std::string kind = j.value("kind", "ce");
  if (kind == "ce")
    o.kind = ObjectiveKind::kCe;
  else if (kind == "relaxloss")
    o.kind = ObjectiveKind::kRelaxLoss;
  else if (kind == "advreg")
    o.kind = ObjectiveKind::kAdvReg;
  else
    throw std::invalid_argument("unknown objective '" + kind + "'");
  o.alpha = j.value("alpha", 1.0);
  o.k = j.value("k", 3);
  return o;
}

json augmentation_to_json(const AugmentationPolicy& a) {
  return json{{"enabled", a.enabled},
              {"flip_probability", a.flip_probability},
              {"crop_padding", a.crop_padding}};
}

AugmentationPolicy augmentation_from_json(const json& j) {
  require_keys_subset(j, "augmentation", {"enabled", "flip_probability", "crop_padding"});
  AugmentationPolicy a;
  a.enabled = j.value("enabled", true);
  a.flip_probability = j.value("flip_probability", 0.5);
  a.crop_padding = j.value("crop_padding", 4);
  return a;
}

json train_config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = c.optimizer;
  j["lr"] = lr_to_json(c.lr);
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["objective"] = objective_to_json(c.objective);
  j["augmentation"] = augmentation_to_json(c.augmentation);
  j["eval_fraction"] = c.eval_fraction;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

TrainConfig train_config_from_json(const json& j, const char* where) {
  require_keys_subset(j, where,
                      {"epochs", "batch_size", "optimizer", "lr", "momentum", "weight_decay",
                       "seed", "objective", "augmentation", "eval_fraction", "checkpoint_every"});
  TrainConfig c;
  c.epochs = j.value("epochs", 10);
  c.batch_size = j.value("batch_size", 125);
  c.optimizer = j.value("optimizer", "sgd-momentum");
  if (j.contains("lr")) c.lr = lr_from_json(j["lr"]);
  c.momentum = j.value("momentum", 0.9);
  c.weight_decay = j.value("weight_decay", 0.0);
  c.seed = j.value("seed", uint64_t{0});
  if (j.contains("objective")) c.objective = objective_from_json(j["objective"]);
  if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j["augmentation"]);
  c.eval_fraction = j.value("eval_fraction", 1.0);
  c.checkpoint_every = j.value("checkpoint_every", 0);
  return c;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string phase_marker(const std::string& rep_dir, const std::string& phase) {
  return rep_dir + "/.done_" + phase;
}

bool phase_done(const std::string& rep_dir, const std::string& phase) {
  return fs::exists(phase_marker(rep_dir, phase));
}

void mark_phase(const std::string& rep_dir, const std::string& phase) {
  std::ofstream f(phase_marker(rep_dir, phase));
  f << "done\n";
}

int phase_rank(const std::string& phase) {
  for (std::size_t i = 0; i < kPhases.size(); ++i)
    if (kPhases[i] == phase) return static_cast<int>(i);
  throw std::invalid_argument("unknown phase '" + phase + "'");
}

void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return json::parse(f);
}

struct AttackSets {
  PoolIndices members{Pool::kTrain, {}};
  PoolIndices nonmembers{Pool::kTest, {}};
  std::vector<int> spare_test;  // test-pool indices not used for evaluation
};

AttackSets select_attack_indices(const ExperimentManifest& m, uint64_t seed, int n_train,
                                 int n_test) {
  AttackSets out;
  // Balanced member/nonmember evaluation sets, seeded.
  const int take = std::min({m.attack_eval.members, m.attack_eval.nonmembers, n_train, n_test});
  Rng rng(derive_seed(seed, "attack-members"));
  std::vector<int> train_pool(static_cast<std::size_t>(n_train));
  std::iota(train_pool.begin(), train_pool.end(), 0);
  rng.shuffle(train_pool);
  out.members.indices.assign(train_pool.begin(), train_pool.begin() + take);
  std::sort(out.members.indices.begin(), out.members.indices.end());

  Rng rng2(derive_seed(seed, "attack-nonmembers"));
  std::vector<int> test_pool(static_cast<std::size_t>(n_test));
  std::iota(test_pool.begin(), test_pool.end(), 0);
  rng2.shuffle(test_pool);
  out.nonmembers.indices.assign(test_pool.begin(), test_pool.begin() + take);
  std::sort(out.nonmembers.indices.begin(), out.nonmembers.indices.end());
  out.spare_test.assign(test_pool.begin() + take, test_pool.end());
  std::sort(out.spare_test.begin(), out.spare_test.end());
  return out;
}

struct EffectiveSeeds {
  uint64_t split, arch, pretrain, pptp, probe, attack, nn;
};

EffectiveSeeds effective_seeds(const ExperimentManifest& m, int repetition, int seed_offset) {
  const uint64_t shift = static_cast<uint64_t>(seed_offset + repetition);
  return {m.split_seed + shift,       m.arch.seed + shift,   m.pretrain.seed + shift,
          m.pptp.retrain.seed + shift, m.probe.seed + shift, m.attack_eval.policy.seed + shift,
          m.attack_eval.nn.seed + shift};
}

}  // namespace

json default_manifest_json() {
  ExperimentManifest m;
  m.dataset = default_dataset_spec();
  m.arch = default_architecture(0);
  m.pretrain.epochs = 10;
  m.pretrain.lr.base_lr = 0.4;
  m.pretrain.augmentation.enabled = false;
  m.pretrain.eval_fraction = 0.25;
  m.pptp.retrain.epochs = 5;
  m.pptp.retrain.objective.kind = ObjectiveKind::kRelaxLoss;
  m.pptp.retrain.objective.alpha = 1.0;
  m.pptp.retrain.lr.base_lr = 0.1;
  m.pptp.retrain.augmentation.enabled = true;
  m.pptp.retrain.eval_fraction = 0.25;
  m.attacks = {AttackKind::kCorrectness, AttackKind::kConfidence, AttackKind::kEntropy,
               AttackKind::kMentropy, AttackKind::kNn};
  return manifest_to_json(m);
}

json manifest_to_json(const ExperimentManifest& m) {
  json j;
  j["dataset"] = {{"name", m.dataset.name},
                  {"input_shape", {m.dataset.input_shape[0], m.dataset.input_shape[1],
                                   m.dataset.input_shape[2]}},
                  {"num_classes", m.dataset.num_classes},
                  {"source", m.dataset.source}};
  j["arch"] = json::parse(architecture_to_json(m.arch));
  j["split_seed"] = m.split_seed;
  j["pretrain"] = train_config_to_json(m.pretrain);
  j["profiler"] = {{"p_threshold", m.profiler_rule.p_threshold},
                   {"d_min", m.profiler_rule.d_min},
                   {"per_block_taps", m.per_block_taps},
                   {"batch_size", m.profile_batch}};
  j["probe"] = {{"seed", m.probe.seed},
                {"iterations", m.probe.iterations},
                {"lr", m.probe.lr},
                {"l2", m.probe.l2}};
  j["pptp"] = {{"retrain", train_config_to_json(m.pptp.retrain)}, {"onset", m.pptp_onset}};
  json attacks = json::array();
  for (AttackKind k : m.attacks) attacks.push_back(attack_kind_name(k));
  j["attacks"] = attacks;
  j["attack_eval"] = {
      {"members", m.attack_eval.members},
      {"nonmembers", m.attack_eval.nonmembers},
      {"scope",
       m.attack_eval.policy.scope == ThresholdPolicy::Scope::kGlobal ? "global" : "per_class"},
      {"calibration", m.attack_eval.policy.calibration},
      {"seed", m.attack_eval.policy.seed},
      {"nn_epochs", m.attack_eval.nn.epochs},
      {"nn_lr", m.attack_eval.nn.lr},
      {"nn_seed", m.attack_eval.nn.seed}};
  j["repetitions"] = m.repetitions;
  j["output_dir"] = m.output_dir;
  return j;
}

ExperimentManifest manifest_from_json(const json& j) {
  require_keys_subset(j, "manifest",
                      {"dataset", "arch", "split_seed", "pretrain", "profiler", "probe", "pptp",
                       "attacks", "attack_eval", "repetitions", "output_dir"});
  ExperimentManifest m;
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    require_keys_subset(d, "dataset", {"name", "input_shape", "num_classes", "source"});
    m.dataset = default_dataset_spec();
    m.dataset.name = d.value("name", m.dataset.name);
    if (d.contains("input_shape"))
      m.dataset.input_shape = {d["input_shape"].at(0).get<int>(),
                               d["input_shape"].at(1).get<int>(),
                               d["input_shape"].at(2).get<int>()};
    m.dataset.num_classes = d.value("num_classes", m.dataset.num_classes);
    m.dataset.source = d.value("source", m.dataset.source);
  } else {
    m.dataset = default_dataset_spec();
  }
  m.arch = j.contains("arch") ? parse_architecture(j["arch"].dump()) : default_architecture(0);
  m.split_seed = j.value("split_seed", uint64_t{0});
  if (j.contains("pretrain")) m.pretrain = train_config_from_json(j["pretrain"], "pretrain");
  if (j.contains("profiler")) {
    const json& p = j["profiler"];
    require_keys_subset(p, "profiler", {"p_threshold", "d_min", "per_block_taps", "batch_size"});
    m.profiler_rule.p_threshold = p.value("p_threshold", 0.01);
    m.profiler_rule.d_min = p.value("d_min", 0.1);
    m.per_block_taps = p.value("per_block_taps", false);
    m.profile_batch = p.value("batch_size", 250);
  }
  if (j.contains("probe")) {
    const json& p = j["probe"];
    require_keys_subset(p, "probe", {"seed", "iterations", "lr", "l2"});
    m.probe.seed = p.value("seed", uint64_t{0});
    m.probe.iterations = p.value("iterations", 300);
    m.probe.lr = p.value("lr", 0.5);
    m.probe.l2 = p.value("l2", 1e-3);
  }
  if (j.contains("pptp")) {
    const json& p = j["pptp"];
    require_keys_subset(p, "pptp", {"retrain", "onset"});
    if (p.contains("retrain")) m.pptp.retrain = train_config_from_json(p["retrain"], "pptp.retrain");
    m.pptp_onset = p.value("onset", 0);
  }
  if (j.contains("attacks")) {
    m.attacks.clear();
    for (const json& a : j["attacks"]) m.attacks.push_back(attack_kind_from_name(a));
  } else {
    m.attacks = {AttackKind::kCorrectness, AttackKind::kConfidence, AttackKind::kEntropy,
                 AttackKind::kMentropy, AttackKind::kNn};
  }
  if (j.contains("attack_eval")) {
    const json& a = j["attack_eval"];
    require_keys_subset(a, "attack_eval",
                        {"members", "nonmembers", "scope", "calibration", "seed", "nn_epochs",
                         "nn_lr", "nn_seed"});
    m.attack_eval.members = a.value("members", 2500);
    m.attack_eval.nonmembers = a.value("nonmembers", 2500);
    const std::string scope = a.value("scope", "global");
    if (scope == "global")
      m.attack_eval.policy.scope = ThresholdPolicy::Scope::kGlobal;
    else if (scope == "per_class")
      m.attack_eval.policy.scope = ThresholdPolicy::Scope::kPerClass;
    else
      throw std::invalid_argument("unknown attack scope '" + scope + "'");
    m.attack_eval.policy.calibration = a.value("calibration", 0.5);
    m.attack_eval.policy.seed = a.value("seed", uint64_t{0});
    m.attack_eval.nn.epochs = a.value("nn_epochs", 80);
    m.attack_eval.nn.lr = a.value("nn_lr", 0.05);
    m.attack_eval.nn.seed = a.value("nn_seed", uint64_t{0});
  }
  if (j.value("repetitions", 3) < 1) throw std::invalid_argument("repetitions must be >= 1");
  m.repetitions = j.value("repetitions", 3);
  m.output_dir = j.value("output_dir", "runs");
  return m;
}

ExperimentManifest parse_manifest_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest '" + path + "'");
  return manifest_from_json(json::parse(f));
}

std::string manifest_hash(const ExperimentManifest& m) {
  // Everything except the output location identifies the experiment.
  json j = manifest_to_json(m);
  j.erase("output_dir");
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

CostRecord cost_from_report(const TrainReport& report) {
  CostRecord c;
  c.wall_time_total = report.wall_seconds_total;
  for (const EpochRecord& e : report.epochs) c.per_epoch_seconds.push_back(e.seconds);
  c.peak_device_memory = report.peak_memory_bytes;
  c.epochs_to_converge = static_cast<int>(report.epochs.size());
  if (!report.epochs.empty()) {
    const double plateau = report.epochs.back().train_loss;
    const double band = 0.01 * std::max(std::abs(plateau), 1e-8);
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
      if (std::abs(report.epochs[e].train_loss - plateau) <= band) {
        c.epochs_to_converge = static_cast<int>(e) + 1;
        break;
      }
    }
  } else {
    c.epochs_to_converge = 0;
  }
  return c;
}

CostRecord measure_cost(const std::function<TrainReport()>& invocation) {
  MemoryMeter::instance().reset_peak();
  TrainReport report = invocation();
  CostRecord c = cost_from_report(report);
  c.peak_device_memory = MemoryMeter::instance().peak_bytes();
  return c;
}

json cost_to_json(const CostRecord& c) {
  return json{{"wall_time_total", c.wall_time_total},
              {"per_epoch_seconds", c.per_epoch_seconds},
              {"peak_device_memory", c.peak_device_memory},
              {"epochs_to_converge", c.epochs_to_converge}};
}

CostRecord cost_from_json(const json& j) {
  CostRecord c;
  c.wall_time_total = j.value("wall_time_total", 0.0);
  c.per_epoch_seconds = j.value("per_epoch_seconds", std::vector<double>{});
  c.peak_device_memory = j.value("peak_device_memory", uint64_t{0});
  c.epochs_to_converge = j.value("epochs_to_converge", 0);
  return c;
}

RunRecord run_experiment(const ExperimentManifest& m, int repetition, const RunOptions& opts) {
  const std::string hash = manifest_hash(m);
  const EffectiveSeeds seeds = effective_seeds(m, repetition, opts.seed_offset);
  const fs::path run_root = fs::path(m.output_dir) / hash;
  const fs::path rep_dir = run_root / ("rep" + std::to_string(repetition));
  const fs::path records = rep_dir / "records";
  const fs::path checkpoints = rep_dir / "checkpoints";
  fs::create_directories(records);
  fs::create_directories(checkpoints);
  write_json_file((run_root / "manifest.json").string(), manifest_to_json(m));

  RunRecord rec;
  rec.manifest_hash = hash;
  rec.rep_dir = rep_dir.string();
  rec.repetition = repetition;

  const int max_rank = phase_rank(opts.max_phase);
  Dataset ds = load_dataset(m.dataset, (fs::path(m.output_dir) / "data_cache").string());

  ArchitectureSpec arch = m.arch;
  arch.seed = seeds.arch;
  arch.head.num_classes = ds.spec.num_classes;
  arch.input_shape = {ds.spec.input_shape[0], ds.spec.input_shape[1], ds.spec.input_shape[2]};

  auto fail_phase = [&](const std::string& phase, const std::string& message) {
    write_json_file((rep_dir / "errors.json").string(),
                    json{{"phase", phase}, {"message", message}});
    throw std::runtime_error("phase " + phase + " failed: " + message);
  };

  // ---- pretrain ----
  std::optional<Model> m_all, m_h1, m_pptp;
  InitSnapshot snapshot;
  {
    const std::string split_path = (rep_dir / "split.txt").string();
    if (opts.resume && phase_done(rec.rep_dir, "pretrain")) {
      rec.split = read_split(split_path);
      rec.pretrain_all = train_report_from_json(
          read_json_file((records / "pretrain_all.json").string()).dump());
      rec.pretrain_h1 = train_report_from_json(
          read_json_file((records / "pretrain_h1.json").string()).dump());
      rec.cost_pretrain = cost_from_json(read_json_file((records / "cost_pretrain.json").string()));
    } else {
      rec.split = make_split(ds.n_train(), ds.n_test(), seeds.split);
      write_split(rec.split, split_path);
      TrainConfig cfg = m.pretrain;
      cfg.seed = seeds.pretrain;
      MemoryMeter::instance().reset_peak();
      PairTrainResult pair = train_pair(arch, ds, rec.split, cfg, opts.workers);
      if (!pair.report_all.ok) fail_phase("pretrain", pair.report_all.error);
      if (!pair.report_h1.ok) fail_phase("pretrain", pair.report_h1.error);
      rec.pretrain_all = pair.report_all;
      rec.pretrain_h1 = pair.report_h1;
      rec.cost_pretrain = cost_from_report(pair.report_all);
      rec.cost_pretrain.peak_device_memory = MemoryMeter::instance().peak_bytes();

      CheckpointMeta meta;
      meta.train_seed = cfg.seed;
      meta.epoch = cfg.epochs;
      meta.objective = objective_id(cfg.objective);
      meta.split_ref = "../split.txt";
      save_checkpoint((checkpoints / "m_all").string(), pair.m_all, pair.snapshot, meta);
      save_checkpoint((checkpoints / "m_h1").string(), pair.m_h1, pair.snapshot, meta);

      std::vector<int> all_idx(static_cast<std::size_t>(ds.n_train()));
      std::iota(all_idx.begin(), all_idx.end(), 0);
      EvalResult all_train = evaluate(pair.m_all, ds, Pool::kTrain, all_idx);
      EvalResult all_test = evaluate(pair.m_all, ds, Pool::kTest, rec.split.test_indices);
      EvalResult h1_train = evaluate(pair.m_h1, ds, Pool::kTrain, rec.split.h1_indices);
      EvalResult h1_test = evaluate(pair.m_h1, ds, Pool::kTest, rec.split.test_indices);
      write_json_file((records / "final_eval.json").string(),
                      json{{"m_all", {{"train_acc", all_train.accuracy},
                                      {"train_loss", all_train.mean_loss},
                                      {"test_acc", all_test.accuracy},
                                      {"test_loss", all_test.mean_loss}}},
                           {"m_h1", {{"train_acc", h1_train.accuracy},
                                     {"train_loss", h1_train.mean_loss},
                                     {"test_acc", h1_test.accuracy},
                                     {"test_loss", h1_test.mean_loss}}}});

      write_text_file((records / "pretrain_all.json").string(),
                      train_report_to_json(rec.pretrain_all));
      write_text_file((records / "pretrain_h1.json").string(),
                      train_report_to_json(rec.pretrain_h1));
      write_json_file((records / "cost_pretrain.json").string(),
                      cost_to_json(rec.cost_pretrain));
      m_all = std::move(pair.m_all);
      m_h1 = std::move(pair.m_h1);
      snapshot = std::move(pair.snapshot);
      mark_phase(rec.rep_dir, "pretrain");
    }
    rec.completed_phases.push_back("pretrain");
  }
  auto ensure_models = [&](bool need_h1) {
    if (!m_all) {
      LoadedCheckpoint lc = load_checkpoint((checkpoints / "m_all").string());
      m_all = std::move(lc.model);
      snapshot = std::move(lc.snapshot);
    }
    if (need_h1 && !m_h1) m_h1 = std::move(load_checkpoint((checkpoints / "m_h1").string()).model);
  };

  if (max_rank < phase_rank("profile")) return rec;

  // ---- profile ----
  {
    const std::string disparity_path = (records / "disparity.json").string();
    if (opts.resume && phase_done(rec.rep_dir, "profile")) {
      rec.disparity = read_disparity_report(disparity_path);
    } else {
      ensure_models(true);
      std::vector<TapId> taps = m_all->tap_ids(m.per_block_taps);
      std::vector<DistanceSample> samples =
          distance_distributions(*m_all, *m_h1, ds, rec.split, taps, m.profile_batch);
      write_distance_samples(samples, (records / "distances.csv").string());
      rec.disparity.rule = m.profiler_rule;
      rec.disparity.verdicts = disparity_verdicts(samples, m.profiler_rule);
      rec.disparity.risk = locate_risk_onset(rec.disparity.verdicts, arch.num_stages());
      write_disparity_report(rec.disparity, disparity_path);
      mark_phase(rec.rep_dir, "profile");
    }
    rec.completed_phases.push_back("profile");
  }
  if (max_rank < phase_rank("probe")) return rec;

  // ---- probe ----
  {
    const std::string probe_path = (records / "probe.csv").string();
    if (opts.resume && phase_done(rec.rep_dir, "probe")) {
      rec.probe = read_probe_report(probe_path);
    } else {
      ensure_models(false);
      ProbeConfig pcfg = m.probe;
      pcfg.seed = seeds.probe;
      rec.probe = probe_curve(*m_all, ds, rec.split, pcfg);
      write_probe_report(rec.probe, probe_path);
      mark_phase(rec.rep_dir, "probe");
    }
    rec.completed_phases.push_back("probe");
  }
  if (max_rank < phase_rank("pptp")) return rec;

  // ---- pptp ----
  {
    if (opts.resume && phase_done(rec.rep_dir, "pptp")) {
      rec.pptp_report = train_report_from_json(
          read_json_file((records / "pptp_train.json").string()).dump());
      rec.cost_pptp = cost_from_json(read_json_file((records / "cost_pptp.json").string()));
    } else {
      ensure_models(false);
      const int onset = m.pptp_onset > 0 ? m.pptp_onset : rec.disparity.risk.onset_stage;
      ParameterPartition part = partition_parameters(*m_all, onset);
      TrainConfig cfg = m.pptp.retrain;
      cfg.seed = seeds.pptp;
      AttackSets sets = select_attack_indices(m, seeds.attack, ds.n_train(), ds.n_test());
      if (cfg.objective.kind == ObjectiveKind::kAdvReg) cfg.advreg_reference = sets.spare_test;
      std::vector<int> all_idx(static_cast<std::size_t>(ds.n_train()));
      std::iota(all_idx.begin(), all_idx.end(), 0);

      PPTPConfig pcfg{cfg};
      TrainReport report;
      MemoryMeter::instance().reset_peak();
      Model result = pptp_retrain(*m_all, snapshot, part, pcfg, ds, all_idx,
                                  rec.split.test_indices, &report);
      if (!report.ok) fail_phase("pptp", report.error);
      rec.pptp_report = report;
      rec.cost_pptp = cost_from_report(report);
      rec.cost_pptp.peak_device_memory = MemoryMeter::instance().peak_bytes();

      CheckpointMeta meta;
      meta.train_seed = cfg.seed;
      meta.epoch = cfg.epochs;
      meta.objective = objective_id(cfg.objective);
      meta.split_ref = "../split.txt";
      save_checkpoint((checkpoints / "pptp").string(), result, snapshot, meta);

      EvalResult tr = evaluate(result, ds, Pool::kTrain, all_idx);
      EvalResult te = evaluate(result, ds, Pool::kTest, rec.split.test_indices);
      write_json_file((records / "pptp_eval.json").string(),
                      json{{"onset_stage", onset},
                           {"train_acc", tr.accuracy},
                           {"test_acc", te.accuracy}});
      write_text_file((records / "pptp_train.json").string(), train_report_to_json(report));
      write_json_file((records / "cost_pptp.json").string(), cost_to_json(rec.cost_pptp));
      m_pptp = std::move(result);
      mark_phase(rec.rep_dir, "pptp");
    }
    rec.completed_phases.push_back("pptp");
  }
  if (max_rank < phase_rank("attack")) return rec;

  // ---- attack ----
  {
    bool loaded = opts.resume && phase_done(rec.rep_dir, "attack");
    std::vector<std::pair<std::string, Model*>> targets;
    if (!loaded) {
      ensure_models(false);
      if (!m_pptp) m_pptp = std::move(load_checkpoint((checkpoints / "pptp").string()).model);
      targets = {{"baseline", &*m_all}, {"pptp", &*m_pptp}};
    }
    AttackSets sets = select_attack_indices(m, seeds.attack, ds.n_train(), ds.n_test());
    ThresholdPolicy policy = m.attack_eval.policy;
    policy.seed = seeds.attack;
    NnAttackConfig nn_cfg = m.attack_eval.nn;
    nn_cfg.seed = seeds.nn;

    for (const char* tag : {"baseline", "pptp"}) {
      std::vector<ScoreVector> scores;
      const std::string scores_path = (records / (std::string("scores_") + tag + ".csv")).string();
      if (loaded) {
        scores = read_scores(scores_path);
      } else {
        Model* target = tag == std::string("baseline") ? &*m_all : &*m_pptp;
        scores = collect_scores(*target, ds, sets.members, sets.nonmembers);
        write_scores(scores, scores_path);
      }
      for (AttackKind kind : m.attacks) {
        const std::string path =
            (records / ("attack_" + std::string(tag) + "_" + attack_kind_name(kind) + ".json"))
                .string();
        AttackResult result;
        if (loaded) {
          result = read_attack_result(path);
        } else if (kind == AttackKind::kNn) {
          auto [cal, eval] = split_scores(scores, policy);
          result = nn_attack(cal, eval, nn_cfg);
          write_attack_result(result, path);
        } else {
          result = threshold_attack(scores, kind, policy);
          write_attack_result(result, path);
        }
        rec.attacks[tag][attack_kind_name(kind)] = result;
      }
    }
    if (!loaded) mark_phase(rec.rep_dir, "attack");
    rec.completed_phases.push_back("attack");
  }
  if (max_rank < phase_rank("report")) return rec;

  // ---- report ----
  {
    if (!(opts.resume && phase_done(rec.rep_dir, "report"))) {
      render_report(rec.rep_dir);
      mark_phase(rec.rep_dir, "report");
    }
    rec.completed_phases.push_back("report");
  }
  return rec;
}

ExperimentResult run_manifest(const ExperimentManifest& m, const RunOptions& opts) {
  ExperimentResult result;
  for (int r = 0; r < m.repetitions; ++r) result.reps.push_back(run_experiment(m, r, opts));
  result.aggregate = aggregate_runs(result.reps);
  const std::string hash = manifest_hash(m);
  write_json_file((fs::path(m.output_dir) / hash / "aggregate.json").string(), result.aggregate);
  return result;
}

namespace {
json mean_std(const std::vector<double>& values) {
  json j;
  const double n = static_cast<double>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean = values.empty() ? 0.0 : mean / n;
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double std_dev = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  j["mean"] = mean;
  j["std"] = std_dev;
  j["values"] = values;
  return j;
}
}  // namespace

json aggregate_runs(const std::vector<RunRecord>& reps) {
  json agg;
  agg["repetitions"] = reps.size();
  std::vector<double> onset;
  std::map<std::string, std::vector<double>> metrics;
  for (const RunRecord& r : reps) {
    if (r.disparity.risk.onset_stage > 0) onset.push_back(r.disparity.risk.onset_stage);
    if (!r.pretrain_all.epochs.empty()) {
      metrics["pretrain_all_final_train_acc"].push_back(r.pretrain_all.epochs.back().train_acc);
      metrics["pretrain_all_final_test_acc"].push_back(r.pretrain_all.epochs.back().test_acc);
    }
    for (const auto& [tag, kinds] : r.attacks)
      for (const auto& [kind, res] : kinds) {
        metrics["auc_" + tag + "_" + kind].push_back(res.auc);
        metrics["balanced_accuracy_" + tag + "_" + kind].push_back(res.balanced_accuracy);
      }
    if (!r.probe.test_accuracy.empty())
      for (std::size_t s = 0; s < r.probe.test_accuracy.size(); ++s)
        metrics["probe_stage" + std::to_string(r.probe.stages[s])].push_back(
            r.probe.test_accuracy[s]);
  }
  if (!onset.empty()) agg["onset_stage"] = mean_std(onset);
  for (const auto& [name, values] : metrics) agg[name] = mean_std(values);
  return agg;
}

SweepFactor sweep_factor_from_name(const std::string& name) {
  if (name == "augmentation") return SweepFactor::kAugmentation;
  if (name == "feature_map_size") return SweepFactor::kFeatureMapSize;
  if (name == "channel_size") return SweepFactor::kChannelSize;
  if (name == "depth") return SweepFactor::kDepth;
  throw std::invalid_argument("unknown sweep factor '" + name + "'");
}

SweepReport factor_sweep(const ExperimentManifest& base, SweepFactor factor,
                         const RunOptions& opts) {
  SweepReport report;
  struct Point {
    std::string label;
    ExperimentManifest manifest;
  };
  std::vector<Point> points;
  auto patched = [&base](const std::function<void(ExperimentManifest&)>& f) {
    ExperimentManifest m = base;
    m.repetitions = 1;
    f(m);
    return m;
  };
  switch (factor) {
    case SweepFactor::kAugmentation:
      report.factor = "augmentation";
      points.push_back({"off", patched([](ExperimentManifest& m) {
                          m.pretrain.augmentation.enabled = false;
                        })});
      points.push_back({"on", patched([](ExperimentManifest& m) {
                          m.pretrain.augmentation.enabled = true;
                        })});
      break;
    case SweepFactor::kFeatureMapSize:
      report.factor = "feature_map_size";
      for (double scale : {0.5, 1.0, 2.0}) {
        points.push_back({scale == 0.5 ? "1/2" : (scale == 1.0 ? "1" : "2"),
                          patched([scale](ExperimentManifest& m) {
                            m.arch.feature_map_scale = scale;
                          })});
      }
      break;
    case SweepFactor::kChannelSize:
      report.factor = "channel_size";
      for (double mult : {0.5, 1.0, 2.0, 4.0}) {
        char label[16];
        std::snprintf(label, sizeof(label), "%gx", mult);
        points.push_back({label, patched([mult](ExperimentManifest& m) {
                            StageSpec& last = m.arch.stages.back();
                            last.channels = std::max(1, static_cast<int>(last.channels * mult));
                          })});
      }
      break;
    case SweepFactor::kDepth:
      report.factor = "depth";
      for (int blocks : {1, 2, 4}) {
        points.push_back({"blocks" + std::to_string(blocks),
                          patched([blocks](ExperimentManifest& m) {
                            const std::size_t target =
                                m.arch.stages.size() >= 2 ? m.arch.stages.size() - 2 : 0;
                            m.arch.stages[target].num_blocks = blocks;
                          })});
      }
      break;
  }

  for (const Point& p : points) {
    RunOptions point_opts = opts;
    point_opts.max_phase = "profile";
    RunRecord rec = run_experiment(p.manifest, 0, point_opts);
    SweepPoint sp;
    sp.value = p.label;
    sp.onset_stage = rec.disparity.risk.onset_stage;
    sp.rep_dir = rec.rep_dir;
    json fe = read_json_file((fs::path(rec.rep_dir) / "records" / "final_eval.json").string());
    sp.final_train_acc = fe["m_all"].value("train_acc", 0.0);
    sp.final_test_acc = fe["m_all"].value("test_acc", 0.0);
    report.points.push_back(sp);
  }
  return report;
}

void write_sweep_report(const SweepReport& r, const std::string& path) {
  json j;
  j["factor"] = r.factor;
  json points = json::array();
  for (const SweepPoint& p : r.points)
    points.push_back({{"value", p.value},
                      {"onset_stage", p.onset_stage},
                      {"final_train_acc", p.final_train_acc},
                      {"final_test_acc", p.final_test_acc},
                      {"rep_dir", p.rep_dir}});
  j["points"] = points;
  write_json_file(path, j);
  // Companion CSV for spreadsheets.
  std::string csv = "value,onset_stage,final_train_acc,final_test_acc\n";
  char buf[128];
  for (const SweepPoint& p : r.points) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f\n", p.value.c_str(), p.onset_stage,
                  p.final_train_acc, p.final_test_acc);
    csv += buf;
  }
  write_text_file(path + ".csv", csv);
}

namespace {

void render_distance_histograms(const fs::path& records, const fs::path& plots) {
  const fs::path csv = records / "distances.csv";
  if (!fs::exists(csv)) return;
  std::vector<DistanceSample> samples = read_distance_samples(csv.string());
  std::map<TapId, std::pair<std::vector<double>, std::vector<double>>> by_tap;
  for (const DistanceSample& s : samples) {
    auto& b = by_tap[s.tap];
    (s.cohort == Cohort::kSeenBoth ? b.first : b.second).push_back(s.distance);
  }
  for (const auto& [tap, cohorts] : by_tap) {
    std::vector<HistSeries> series{{"seen_both (h1)", "#1f77b4", cohorts.first},
                                   {"seen_only_all (h2)", "#d62728", cohorts.second}};
    SvgOptions o;
    o.title = "Feature distance, " + tap_name(tap);
    o.x_label = "distance";
    o.y_label = "fraction";
    write_text_file((plots / ("distance_hist_" + tap_name(tap) + ".svg")).string(),
                    svg_histogram(series, 40, o, false));
    o.title = "Feature distance (max-normalized), " + tap_name(tap);
    o.x_label = "norm. distance";
    write_text_file((plots / ("distance_hist_" + tap_name(tap) + "_norm.svg")).string(),
                    svg_histogram(series, 40, o, true));
  }
}

void render_probe_curve(const fs::path& records, const fs::path& plots) {
  const fs::path csv = records / "probe.csv";
  if (!fs::exists(csv)) return;
  ProbeReport r = read_probe_report(csv.string());
  SvgSeries s{"probe accuracy", "#2ca02c", {}, {}};
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    s.x.push_back(r.stages[i]);
    s.y.push_back(r.test_accuracy[i]);
  }
  SvgOptions o;
  o.title = "Stage-wise linear probe accuracy";
  o.x_label = "stage";
  o.y_label = "test accuracy";
  write_text_file((plots / "probe_curve.svg").string(), svg_line_chart({s}, o));
}

void render_rocs(const fs::path& records, const fs::path& plots) {
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  for (const char* tag : {"baseline", "pptp"}) {
    std::vector<SvgSeries> series;
    int color = 0;
    for (const char* kind : {"correctness", "confidence", "entropy", "mentropy", "nn"}) {
      const fs::path p = records / ("attack_" + std::string(tag) + "_" + kind + ".json");
      if (!fs::exists(p)) continue;
      AttackResult r = read_attack_result(p.string());
      SvgSeries s;
      char label[64];
      std::snprintf(label, sizeof(label), "%s (auc %.3f)", kind, r.auc);
      s.label = label;
      s.color = kColors[color++ % 5];
      for (const auto& [fpr, tpr] : r.roc) {
        s.x.push_back(fpr);
        s.y.push_back(tpr);
      }
      series.push_back(std::move(s));
    }
    if (series.empty()) continue;
    SvgOptions o;
    o.title = std::string("ROC, ") + tag;
    o.x_label = "false positive rate";
    o.y_label = "true positive rate";
    write_text_file((plots / ("roc_" + std::string(tag) + ".svg")).string(),
                    svg_line_chart(series, o));
    o.log_x = true;
    o.log_y = true;
    o.title = std::string("ROC (log-log), ") + tag;
    write_text_file((plots / ("roc_" + std::string(tag) + "_log.svg")).string(),
                    svg_line_chart(series, o));
  }
}

void render_cost(const fs::path& records, const fs::path& plots) {
  const fs::path base = records / "cost_pretrain.json";
  const fs::path pptp = records / "cost_pptp.json";
  if (!fs::exists(base) || !fs::exists(pptp)) return;
  CostRecord cb = cost_from_json(read_json_file(base.string()));
  CostRecord cp = cost_from_json(read_json_file(pptp.string()));
  auto mean_epoch = [](const CostRecord& c) {
    if (c.per_epoch_seconds.empty()) return 0.0;
    double s = 0;
    for (double v : c.per_epoch_seconds) s += v;
    return s / static_cast<double>(c.per_epoch_seconds.size());
  };
  std::vector<std::string> cats{"per-epoch s", "total s", "peak MiB", "epochs-to-conv"};
  SvgSeries full{"full training", "#1f77b4", {}, {}};
  SvgSeries retrain{"pptp retrain", "#ff7f0e", {}, {}};
  full.y = {mean_epoch(cb), cb.wall_time_total,
            static_cast<double>(cb.peak_device_memory) / (1024.0 * 1024.0),
            static_cast<double>(cb.epochs_to_converge)};
  retrain.y = {mean_epoch(cp), cp.wall_time_total,
               static_cast<double>(cp.peak_device_memory) / (1024.0 * 1024.0),
               static_cast<double>(cp.epochs_to_converge)};
  SvgOptions o;
  o.title = "Training cost";
  o.y_label = "value";
  write_text_file((plots / "cost.svg").string(), svg_bar_chart(cats, {full, retrain}, o));
}

void render_summary(const fs::path& rep_dir, const fs::path& records) {
  std::string csv = "metric,value\n";
  char buf[160];
  auto add = [&csv, &buf](const std::string& name, double v) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f\n", name.c_str(), v);
    csv += buf;
  };
  if (fs::exists(records / "final_eval.json")) {
    json fe = read_json_file((records / "final_eval.json").string());
    add("m_all_train_acc", fe["m_all"].value("train_acc", 0.0));
    add("m_all_test_acc", fe["m_all"].value("test_acc", 0.0));
    add("m_h1_train_acc", fe["m_h1"].value("train_acc", 0.0));
    add("m_h1_test_acc", fe["m_h1"].value("test_acc", 0.0));
  }
  if (fs::exists(records / "disparity.json")) {
    DisparityReport d = read_disparity_report((records / "disparity.json").string());
    add("onset_stage", d.risk.onset_stage);
    for (const DisparityVerdict& v : d.verdicts) {
      add("ks_" + tap_name(v.tap), v.ks_statistic);
      add("flagged_" + tap_name(v.tap), v.flagged ? 1.0 : 0.0);
    }
  }
  if (fs::exists(records / "probe.csv")) {
    ProbeReport p = read_probe_report((records / "probe.csv").string());
    for (std::size_t i = 0; i < p.stages.size(); ++i)
      add("probe_stage" + std::to_string(p.stages[i]), p.test_accuracy[i]);
  }
  if (fs::exists(records / "pptp_eval.json")) {
    json pe = read_json_file((records / "pptp_eval.json").string());
    add("pptp_train_acc", pe.value("train_acc", 0.0));
    add("pptp_test_acc", pe.value("test_acc", 0.0));
  }
  for (const char* tag : {"baseline", "pptp"}) {
    for (const char* kind : {"correctness", "confidence", "entropy", "mentropy", "nn"}) {
      const fs::path p = records / ("attack_" + std::string(tag) + "_" + kind + ".json");
      if (!fs::exists(p)) continue;
      AttackResult r = read_attack_result(p.string());
      add(std::string("auc_") + tag + "_" + kind, r.auc);
      add(std::string("ba_") + tag + "_" + kind, r.balanced_accuracy);
    }
  }
  write_text_file((rep_dir / "summary.csv").string(), csv);
}

}  // namespace

void render_report(const std::string& rep_dir_s) {
  const fs::path rep_dir(rep_dir_s);
  const fs::path records = rep_dir / "records";
  const fs::path plots = rep_dir / "plots";
  fs::create_directories(plots);
  render_distance_histograms(records, plots);
  render_probe_curve(records, plots);
  render_rocs(records, plots);
  render_cost(records, plots);
  render_summary(rep_dir, records);
}

void render_pair_comparison(const std::string& reference_ckpt, const std::string& a_ckpt,
                            const std::string& b_ckpt, const DatasetSpec& dataset,
                            const std::string& label_a, const std::string& label_b,
                            const std::string& out_dir, int batch_size) {
  Dataset ds = load_dataset(dataset);
  LoadedCheckpoint ref = load_checkpoint(reference_ckpt);
  LoadedCheckpoint a = load_checkpoint(a_ckpt);
  LoadedCheckpoint b = load_checkpoint(b_ckpt);

  SplitPlan whole;
  whole.h1_indices.resize(static_cast<std::size_t>(ds.n_train()));
  std::iota(whole.h1_indices.begin(), whole.h1_indices.end(), 0);
  whole.test_indices.resize(static_cast<std::size_t>(ds.n_test()));
  std::iota(whole.test_indices.begin(), whole.test_indices.end(), 0);

  const std::vector<TapId> taps = ref.model.tap_ids(false);
  std::vector<DistanceSample> da =
      distance_distributions(ref.model, a.model, ds, whole, taps, batch_size);
  std::vector<DistanceSample> db =
      distance_distributions(ref.model, b.model, ds, whole, taps, batch_size);

  fs::create_directories(out_dir);
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_stage;
  for (const DistanceSample& s : da)
    if (s.tap.block == 0) by_stage[s.tap.stage].first.push_back(s.distance);
  for (const DistanceSample& s : db)
    if (s.tap.block == 0) by_stage[s.tap.stage].second.push_back(s.distance);
  for (const auto& [stage, values] : by_stage) {
    std::vector<HistSeries> series{{label_a, "#1f77b4", values.first},
                                   {label_b, "#d62728", values.second}};
    SvgOptions o;
    o.title = "Feature distance to reference, stage " + std::to_string(stage);
    o.x_label = "distance";
    o.y_label = "fraction";
    write_text_file((fs::path(out_dir) / ("objective_cmp_stage" + std::to_string(stage) + ".svg"))
                        .string(),
                    svg_histogram(series, 40, o, false));
  }

  // Accuracy table for the three checkpoints.
  std::string csv = "model,train_acc,test_acc\n";
  char buf[128];
  auto add_eval = [&](const std::string& name, Model& model) {
    EvalResult tr = evaluate(model, ds, Pool::kTrain, whole.h1_indices);
    EvalResult te = evaluate(model, ds, Pool::kTest, whole.test_indices);
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", name.c_str(), tr.accuracy, te.accuracy);
    csv += buf;
  };
  add_eval("reference", ref.model);
  add_eval(label_a, a.model);
  add_eval(label_b, b.model);
  write_text_file((fs::path(out_dir) / "objective_cmp_accuracy.csv").string(), csv);
}

}  // namespace ppaudit
