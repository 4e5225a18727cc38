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

#include "ppaudit/model.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "ppaudit/jsonutil.hpp"
#include "ppaudit/rng.hpp"

namespace ppaudit {

namespace {
constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;

void validate_arch(const ArchitectureSpec& arch) {
  if (arch.stages.empty()) throw std::invalid_argument("architecture needs at least one stage");
  for (int i = 0; i < arch.num_stages(); ++i) {
    const StageSpec& s = arch.stages[static_cast<std::size_t>(i)];
    if (s.index != i + 1) throw std::invalid_argument("stage indices must be contiguous 1..K");
    if (s.channels <= 0 || s.num_blocks <= 0)
      throw std::invalid_argument("stage channels and num_blocks must be positive");
    if (arch.family == Family::kPlain && s.residual)
      throw std::invalid_argument("plain family cannot have residual stages");
  }
  const double sc = arch.feature_map_scale;
  if (sc != 0.5 && sc != 1.0 && sc != 2.0 && sc != 4.0)
    throw std::invalid_argument("feature_map_scale must be one of 1/2, 1, 2, 4");
  if (arch.stem.out_channels <= 0 || (arch.stem.stride != 1 && arch.stem.stride != 2))
    throw std::invalid_argument("stem must have positive channels and stride 1 or 2");
  if (arch.head.num_classes < 2) throw std::invalid_argument("head needs at least 2 classes");
}

/// Effective per-stage downsample flags after applying feature_map_scale.
std::vector<bool> effective_downsample(const ArchitectureSpec& arch) {
  std::vector<bool> ds;
  ds.reserve(arch.stages.size());
  for (const auto& s : arch.stages) ds.push_back(s.downsample);
  int to_drop = arch.feature_map_scale == 2.0 ? 1 : (arch.feature_map_scale == 4.0 ? 2 : 0);
  for (int i = static_cast<int>(ds.size()) - 1; i >= 0 && to_drop > 0; --i) {
    if (ds[static_cast<std::size_t>(i)]) {
      ds[static_cast<std::size_t>(i)] = false;
      --to_drop;
    }
  }
  if (to_drop > 0)
    throw std::invalid_argument("feature_map_scale needs more downsampling stages than the spec has");
  return ds;
}
}  // namespace

ArchitectureSpec default_architecture(uint64_t seed) {
  ArchitectureSpec arch;
  arch.family = Family::kResidual;
  arch.input_shape = {3, 32, 32};
  arch.stem = {32, 2};
  arch.head = {10};
  arch.feature_map_scale = 1.0;
  arch.seed = seed;
  const int channels[4] = {32, 64, 128, 256};
  for (int i = 0; i < 4; ++i)
    arch.stages.push_back({i + 1, 2, channels[i], i > 0, true});
  return arch;
}

std::string tap_name(const TapId& id) {
  if (id.block == 0) return "stage" + std::to_string(id.stage) + ".end";
  return "stage" + std::to_string(id.stage) + ".block" + std::to_string(id.block);
}

int ParamStore::add(const std::string& name, std::vector<int64_t> shape, bool trainable) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name " + name);
  int h = static_cast<int>(names_.size());
  names_.push_back(name);
  values_.emplace_back(shape);
  grads_.emplace_back(trainable ? Tensor(shape) : Tensor());
  trainable_.push_back(trainable ? 1 : 0);
  frozen_.push_back(0);
  index_[name] = h;
  return h;
}

int ParamStore::handle(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

void ParamStore::zero_grads() {
  for (std::size_t i = 0; i < grads_.size(); ++i)
    if (trainable_[i]) grads_[i].zero();
}

Model::Model(const ArchitectureSpec& arch) : arch_(arch) {
  validate_arch(arch_);
  const std::vector<bool> ds = effective_downsample(arch_);
  Rng rng(derive_seed(arch_.seed, "init"));

  auto he_init = [&rng](Tensor& t, int fan_in) {
    const float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal(0.0, sd));
  };

  auto make_conv = [&](const std::string& name, int cin, int cout, int k, int stride) {
    ConvUnit u;
    u.cin = cin;
    u.cout = cout;
    u.ksize = k;
    u.stride = stride;
    u.w_h = store_.add(name + ".weight", {k, k, cin, cout}, true);
    he_init(store_.value(u.w_h), k * k * cin);
    return u;
  };
  auto make_bn = [&](const std::string& name, int c) {
    BnUnit u;
    u.c = c;
    u.gamma_h = store_.add(name + ".gamma", {c}, true);
    u.beta_h = store_.add(name + ".beta", {c}, true);
    u.rm_h = store_.add(name + ".running_mean", {c}, false);
    u.rv_h = store_.add(name + ".running_var", {c}, false);
    store_.value(u.gamma_h).fill(1.0f);
    store_.value(u.rv_h).fill(1.0f);
    return u;
  };

  const int in_c = arch_.input_shape[0];
  stem_conv_ = make_conv("stem.conv", in_c, arch_.stem.out_channels, 3, arch_.stem.stride);
  stem_bn_ = make_bn("stem.bn", arch_.stem.out_channels);

  int prev_c = arch_.stem.out_channels;
  const int k_stages = arch_.num_stages();
  const bool half_final = arch_.feature_map_scale == 0.5;
  stages_.resize(static_cast<std::size_t>(k_stages));
  for (int si = 0; si < k_stages; ++si) {
    const StageSpec& spec = arch_.stages[static_cast<std::size_t>(si)];
    StageUnit& st = stages_[static_cast<std::size_t>(si)];
    st.index = spec.index;
    st.pre_pool = half_final && si == k_stages - 1;
    st.blocks.resize(static_cast<std::size_t>(spec.num_blocks));
    for (int bi = 0; bi < spec.num_blocks; ++bi) {
      BlockUnit& blk = st.blocks[static_cast<std::size_t>(bi)];
      blk.residual = spec.residual;
      const int stride = (bi == 0 && ds[static_cast<std::size_t>(si)]) ? 2 : 1;
      const int cin = bi == 0 ? prev_c : spec.channels;
      const std::string base =
          "stage" + std::to_string(spec.index) + ".block" + std::to_string(bi + 1);
      if (spec.residual) {
        blk.conv1 = make_conv(base + ".conv1", cin, spec.channels, 3, stride);
        blk.bn1 = make_bn(base + ".bn1", spec.channels);
        blk.conv2 = make_conv(base + ".conv2", spec.channels, spec.channels, 3, 1);
        blk.bn2 = make_bn(base + ".bn2", spec.channels);
        blk.has_shortcut = stride != 1 || cin != spec.channels;
        if (blk.has_shortcut) {
          blk.sc_conv = make_conv(base + ".shortcut.conv", cin, spec.channels, 1, stride);
          blk.sc_bn = make_bn(base + ".shortcut.bn", spec.channels);
        }
      } else {
        blk.conv1 = make_conv(base + ".conv", cin, spec.channels, 3, stride);
        blk.bn1 = make_bn(base + ".bn", spec.channels);
      }
    }
    prev_c = spec.channels;
  }

  fc_w_h = store_.add("head.fc.weight", {prev_c, arch_.head.num_classes}, true);
  fc_b_h = store_.add("head.fc.bias", {arch_.head.num_classes}, true);
  {
    Tensor& w = store_.value(fc_w_h);
    const float bound = 1.0f / std::sqrt(static_cast<float>(prev_c));
    for (int64_t i = 0; i < w.numel(); ++i)
      w[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
}

void Model::conv_forward(ConvUnit& u, const Tensor& x) {
  if (x.dim(3) != u.cin)
    throw std::runtime_error("conv input has " + std::to_string(x.dim(3)) + " channels, expected " +
                             std::to_string(u.cin));
  const int b = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  const int ho = nn::conv_out_dim(h, u.ksize, u.stride);
  const int wo = nn::conv_out_dim(w, u.ksize, u.stride);
  u.in = &x;
  u.out.ensure({b, ho, wo, u.cout});
  const int m = b * ho * wo;
  const int k = u.ksize * u.ksize * u.cin;
  const float* a = x.data();
  if (!(u.ksize == 1 && u.stride == 1)) {
    col_scratch_.resize(static_cast<std::size_t>(m) * k);
    nn::im2col(x.data(), b, h, w, u.cin, u.ksize, u.stride, col_scratch_.data());
    a = col_scratch_.data();
  }
  nn::sgemm(false, false, m, u.cout, k, 1.0f, a, k, store_.value(u.w_h).data(), u.cout, 0.0f,
            u.out.data(), u.cout);
}

void Model::conv_backward(ConvUnit& u, const Tensor& dy, Tensor* dx, bool want_dx) {
  const Tensor& x = *u.in;
  const int b = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  const int ho = static_cast<int>(u.out.dim(1));
  const int wo = static_cast<int>(u.out.dim(2));
  const int m = b * ho * wo;
  const int k = u.ksize * u.ksize * u.cin;
  const bool pointwise = u.ksize == 1 && u.stride == 1;
  const bool want_dw = !store_.frozen(u.w_h);

  if (want_dw) {
    const float* a = x.data();
    if (!pointwise) {
      col_scratch_.resize(static_cast<std::size_t>(m) * k);
      nn::im2col(x.data(), b, h, w, u.cin, u.ksize, u.stride, col_scratch_.data());
      a = col_scratch_.data();
    }
    nn::sgemm(true, false, k, u.cout, m, 1.0f, a, k, dy.data(), u.cout, 1.0f,
              store_.grad(u.w_h).data(), u.cout);
  }
  if (!want_dx) return;
  dx->ensure({b, h, w, u.cin});
  if (pointwise) {
    nn::sgemm(false, true, m, k, u.cout, 1.0f, dy.data(), u.cout, store_.value(u.w_h).data(),
              u.cout, 0.0f, dx->data(), k);
    return;
  }
  dcol_scratch_.resize(static_cast<std::size_t>(m) * k);
  nn::sgemm(false, true, m, k, u.cout, 1.0f, dy.data(), u.cout, store_.value(u.w_h).data(), u.cout,
            0.0f, dcol_scratch_.data(), k);
  dx->zero();
  nn::col2im(dcol_scratch_.data(), b, h, w, u.cin, u.ksize, u.stride, dx->data());
}

void Model::bn_forward(BnUnit& u, const Tensor& x, Mode mode) {
  u.in = &x;
  u.out.ensure(x.shape());
  const bool use_batch = mode == Mode::kTrain && !u.stats_frozen;
  u.used_batch_stats = use_batch;
  if (use_batch) {
    u.cached = nn::bn_forward_train(x, store_.value(u.gamma_h), store_.value(u.beta_h),
                                    store_.value(u.rm_h), store_.value(u.rv_h), kBnMomentum,
                                    kBnEps, u.out);
  } else {
    nn::bn_forward_eval(x, store_.value(u.gamma_h), store_.value(u.beta_h), store_.value(u.rm_h),
                        store_.value(u.rv_h), kBnEps, u.out);
  }
}

void Model::bn_backward(BnUnit& u, const Tensor& dy, Tensor* dx, bool want_dx) {
  const bool want_dparams = !(store_.frozen(u.gamma_h) && store_.frozen(u.beta_h));
  if (want_dx) dx->ensure(dy.shape());
  if (u.used_batch_stats) {
    nn::bn_backward_train(*u.in, dy, store_.value(u.gamma_h), u.cached, *dx,
                          store_.grad(u.gamma_h), store_.grad(u.beta_h), want_dx, want_dparams);
  } else {
    nn::bn_backward_frozen(dy, store_.value(u.gamma_h), store_.value(u.rm_h), store_.value(u.rv_h),
                           kBnEps, *u.in, *dx, store_.grad(u.gamma_h), store_.grad(u.beta_h),
                           want_dx, want_dparams);
  }
}

bool Model::unit_trainable(const ConvUnit& u) const { return !store_.frozen(u.w_h); }
bool Model::unit_trainable(const BnUnit& u) const {
  return !store_.frozen(u.gamma_h) || !store_.frozen(u.beta_h);
}

void Model::block_forward(BlockUnit& b, const Tensor& x, Mode mode) {
  b.in = &x;
  conv_forward(b.conv1, x);
  bn_forward(b.bn1, b.conv1.out, mode);
  if (!b.residual) {
    b.out.ensure(b.bn1.out.shape());
    nn::relu_forward(b.bn1.out, b.out);
    return;
  }
  b.a_relu1.ensure(b.bn1.out.shape());
  nn::relu_forward(b.bn1.out, b.a_relu1);
  conv_forward(b.conv2, b.a_relu1);
  bn_forward(b.bn2, b.conv2.out, mode);
  const Tensor* shortcut = &x;
  if (b.has_shortcut) {
    conv_forward(b.sc_conv, x);
    bn_forward(b.sc_bn, b.sc_conv.out, mode);
    shortcut = &b.sc_bn.out;
  }
  b.sum.ensure(b.bn2.out.shape());
  nn::add_forward(b.bn2.out, *shortcut, b.sum);
  b.out.ensure(b.sum.shape());
  nn::relu_forward(b.sum, b.out);
}

void Model::block_backward(BlockUnit& b, const Tensor& dy, bool want_dx) {
  if (!b.residual) {
    if (!unit_trainable(b.bn1) && !unit_trainable(b.conv1) && !want_dx) return;
    b.d_sum.ensure(dy.shape());
    nn::relu_backward(b.out, dy, b.d_sum);
    bn_backward(b.bn1, b.d_sum, &b.d_bn_in, unit_trainable(b.conv1) || want_dx);
    if (unit_trainable(b.conv1) || want_dx)
      conv_backward(b.conv1, b.d_bn_in, &b.d_in, want_dx);
    return;
  }

  b.d_sum.ensure(dy.shape());
  nn::relu_backward(b.out, dy, b.d_sum);

  const bool need_d_a1 = unit_trainable(b.conv1) || unit_trainable(b.bn1) || want_dx;
  const bool need_d_conv2_out = unit_trainable(b.conv2) || need_d_a1;
  if (need_d_conv2_out || unit_trainable(b.bn2))
    bn_backward(b.bn2, b.d_sum, &b.d_bn2_in, need_d_conv2_out);
  if (need_d_conv2_out)
    conv_backward(b.conv2, b.d_bn2_in, &b.d_relu1, need_d_a1);
  if (need_d_a1) {
    nn::relu_backward(b.a_relu1, b.d_relu1, b.d_relu1);
    bn_backward(b.bn1, b.d_relu1, &b.d_bn_in, unit_trainable(b.conv1) || want_dx);
    if (unit_trainable(b.conv1) || want_dx)
      conv_backward(b.conv1, b.d_bn_in, &b.d_in, want_dx);
  }

  if (b.has_shortcut) {
    const bool need_d_sc = unit_trainable(b.sc_conv) || want_dx;
    if (need_d_sc || unit_trainable(b.sc_bn))
      bn_backward(b.sc_bn, b.d_sum, &b.d_sc, need_d_sc);
    if (need_d_sc) conv_backward(b.sc_conv, b.d_sc, &b.d_bn2_in, want_dx);
    if (want_dx) {
      float* acc = b.d_in.data();
      const float* add = b.d_bn2_in.data();
      const int64_t n = b.d_in.numel();
      for (int64_t i = 0; i < n; ++i) acc[i] += add[i];
    }
  } else if (want_dx) {
    float* acc = b.d_in.data();
    const float* add = b.d_sum.data();
    const int64_t n = b.d_in.numel();
    for (int64_t i = 0; i < n; ++i) acc[i] += add[i];
  }
}

Tensor Model::forward(const Tensor& batch, Mode mode) {
  std::vector<FeatureMap> unused;
  return forward_with_taps(batch, mode, {}, unused);
}

Tensor Model::forward_with_taps(const Tensor& batch, Mode mode, const std::vector<TapId>& taps,
                                std::vector<FeatureMap>& feature_maps) {
  if (batch.shape().size() != 4 || batch.dim(3) != arch_.input_shape[0] ||
      batch.dim(1) != arch_.input_shape[1] || batch.dim(2) != arch_.input_shape[2])
    throw std::runtime_error("batch shape does not match architecture input");
  feature_maps.clear();
  last_mode_ = mode;
  input_ = &batch;

  auto want = [&taps](int stage, int block) {
    for (const TapId& t : taps)
      if (t.stage == stage && t.block == block) return true;
    return false;
  };
  auto record = [&feature_maps](int stage, int block, const Tensor& act) {
    FeatureMap fm;
    fm.tap = {stage, block};
    fm.values = act;
    fm.d = act.dim(1) * act.dim(2) * act.dim(3);
    feature_maps.push_back(std::move(fm));
  };

  conv_forward(stem_conv_, batch);
  bn_forward(stem_bn_, stem_conv_.out, mode);
  stem_relu_.ensure(stem_bn_.out.shape());
  nn::relu_forward(stem_bn_.out, stem_relu_);

  const Tensor* cur = &stem_relu_;
  for (StageUnit& st : stages_) {
    if (st.pre_pool) {
      st.pooled.ensure({cur->dim(0), cur->dim(1) / 2, cur->dim(2) / 2, cur->dim(3)});
      nn::avg_pool2_forward(*cur, st.pooled);
      cur = &st.pooled;
    }
    for (std::size_t bi = 0; bi < st.blocks.size(); ++bi) {
      BlockUnit& blk = st.blocks[bi];
      block_forward(blk, *cur, mode);
      cur = &blk.out;
      if (want(st.index, static_cast<int>(bi) + 1)) record(st.index, static_cast<int>(bi) + 1, blk.out);
    }
    if (want(st.index, 0)) record(st.index, 0, *cur);
  }

  pooled_.ensure({cur->dim(0), cur->dim(3)});
  nn::global_avg_pool_forward(*cur, pooled_);
  logits_.ensure({cur->dim(0), arch_.head.num_classes});
  nn::linear_forward(pooled_, store_.value(fc_w_h), store_.value(fc_b_h), logits_);
  return logits_;
}

int Model::lowest_trainable_position() const {
  int lowest = std::numeric_limits<int>::max();
  for (int h = 0; h < store_.size(); ++h) {
    if (!store_.trainable(h) || store_.frozen(h)) continue;
    lowest = std::min(lowest, stage_of(store_.name(h)));
    if (lowest == 0) break;
  }
  return lowest;
}

void Model::backward(const Tensor& dlogits) {
  if (last_mode_ != Mode::kTrain)
    throw std::logic_error("backward requires a preceding train-mode forward");
  const int k_stages = arch_.num_stages();
  const int lowest = lowest_trainable_position();
  if (lowest > k_stages + 1) return;  // everything frozen

  const Tensor& last_out = stages_.back().blocks.back().out;
  const bool need_below_head = lowest <= k_stages;
  {
    const bool head_trainable = !store_.frozen(fc_w_h) || !store_.frozen(fc_b_h);
    d_pooled_.ensure(pooled_.shape());
    nn::linear_backward(pooled_, store_.value(fc_w_h), dlogits, d_pooled_, store_.grad(fc_w_h),
                        store_.grad(fc_b_h), need_below_head, head_trainable);
  }
  if (!need_below_head) return;

  d_gap_in_.ensure(last_out.shape());
  nn::global_avg_pool_backward(d_pooled_, static_cast<int>(last_out.dim(1)),
                               static_cast<int>(last_out.dim(2)), d_gap_in_);

  const Tensor* dcur = &d_gap_in_;
  for (int si = k_stages - 1; si >= 0; --si) {
    StageUnit& st = stages_[static_cast<std::size_t>(si)];
    if (st.index < lowest) break;
    const bool need_stage_input_grad = lowest < st.index;
    for (int bi = static_cast<int>(st.blocks.size()) - 1; bi >= 0; --bi) {
      BlockUnit& blk = st.blocks[static_cast<std::size_t>(bi)];
      const bool want_dx = bi > 0 || need_stage_input_grad || st.pre_pool;
      block_backward(blk, *dcur, want_dx);
      dcur = &blk.d_in;
    }
    if (st.pre_pool && need_stage_input_grad) {
      const Tensor* below =
          si == 0 ? &stem_relu_ : &stages_[static_cast<std::size_t>(si - 1)].blocks.back().out;
      st.d_pool_in.ensure(below->shape());
      nn::avg_pool2_backward(*dcur, st.d_pool_in);
      dcur = &st.d_pool_in;
    }
  }

  if (lowest == 0) {
    d_stem_relu_.ensure(stem_relu_.shape());
    nn::relu_backward(stem_relu_, *dcur, d_stem_relu_);
    bn_backward(stem_bn_, d_stem_relu_, &d_stem_bn_in_, unit_trainable(stem_conv_));
    if (unit_trainable(stem_conv_)) conv_backward(stem_conv_, d_stem_bn_in_, &d_stem_conv_in_, false);
  }
}

std::vector<TapId> Model::tap_ids(bool per_block) const {
  std::vector<TapId> out;
  for (const StageSpec& s : arch_.stages) {
    if (per_block)
      for (int b = 1; b <= s.num_blocks; ++b) out.push_back({s.index, b});
    out.push_back({s.index, 0});
  }
  return out;
}

std::vector<std::string> Model::trainable_names() const {
  std::vector<std::string> out;
  for (int h = 0; h < store_.size(); ++h)
    if (store_.trainable(h)) out.push_back(store_.name(h));
  return out;
}

std::vector<std::string> Model::buffer_names() const {
  std::vector<std::string> out;
  for (int h = 0; h < store_.size(); ++h)
    if (!store_.trainable(h)) out.push_back(store_.name(h));
  return out;
}

int Model::stage_of(const std::string& param_name) const {
  if (param_name.rfind("stem.", 0) == 0) return 0;
  if (param_name.rfind("head.", 0) == 0) return arch_.num_stages() + 1;
  if (param_name.rfind("stage", 0) == 0) {
    std::size_t dot = param_name.find('.');
    if (dot != std::string::npos) return std::stoi(param_name.substr(5, dot - 5));
  }
  throw std::invalid_argument("parameter name '" + param_name + "' has no stage prefix");
}

void Model::set_frozen(const std::set<std::string>& names, bool frozen) {
  for (const std::string& n : names) {
    int h = store_.handle(n);
    if (h < 0 || !store_.trainable(h))
      throw std::invalid_argument("unknown trainable parameter '" + n + "'");
    store_.set_frozen(h, frozen);
  }
  sync_frozen_stats();
}

std::set<std::string> Model::frozen_names() const {
  std::set<std::string> out;
  for (int h = 0; h < store_.size(); ++h)
    if (store_.trainable(h) && store_.frozen(h)) out.insert(store_.name(h));
  return out;
}

void Model::sync_frozen_stats() {
  auto sync = [this](BnUnit& u) { u.stats_frozen = store_.frozen(u.gamma_h); };
  sync(stem_bn_);
  for (StageUnit& st : stages_)
    for (BlockUnit& b : st.blocks) {
      sync(b.bn1);
      if (b.residual) sync(b.bn2);
      if (b.has_shortcut) sync(b.sc_bn);
    }
}

void Model::reset_buffers_for(const std::set<std::string>& risky_param_names) {
  auto maybe_reset = [this, &risky_param_names](BnUnit& u) {
    if (risky_param_names.count(store_.name(u.gamma_h))) {
      store_.value(u.rm_h).zero();
      store_.value(u.rv_h).fill(1.0f);
    }
  };
  maybe_reset(stem_bn_);
  for (StageUnit& st : stages_)
    for (BlockUnit& b : st.blocks) {
      maybe_reset(b.bn1);
      if (b.residual) maybe_reset(b.bn2);
      if (b.has_shortcut) maybe_reset(b.sc_bn);
    }
}

InitSnapshot Model::snapshot() const {
  InitSnapshot snap;
  snap.seed = arch_.seed;
  for (int h = 0; h < store_.size(); ++h)
    if (store_.trainable(h)) snap.values[store_.name(h)] = store_.value(h);
  return snap;
}

int64_t Model::parameter_count(const std::string& prefix) const {
  int64_t n = 0;
  for (int h = 0; h < store_.size(); ++h) {
    if (!store_.trainable(h)) continue;
    if (!prefix.empty() && store_.name(h).rfind(prefix, 0) != 0) continue;
    n += store_.value(h).numel();
  }
  return n;
}

std::pair<Model, InitSnapshot> build_model(const ArchitectureSpec& arch) {
  Model model(arch);
  InitSnapshot snap = model.snapshot();
  return {std::move(model), std::move(snap)};
}

ParameterPartition partition_parameters(const Model& model, int onset_stage) {
  const int k = model.arch().num_stages();
  if (onset_stage < 1 || onset_stage > k + 1)
    throw std::invalid_argument("onset_stage must be in [1, K+1]");
  ParameterPartition part;
  for (const std::string& name : model.trainable_names()) {
    const int pos = model.stage_of(name);
    bool safe;
    if (pos == k + 1) {
      safe = false;  // classifier head is always retrained
    } else if (pos == 0) {
      // The stem precedes every stage; it is safe whenever any stage is.
      safe = onset_stage > 1;
    } else {
      safe = pos < onset_stage;
    }
    (safe ? part.safe_names : part.risky_names).insert(name);
  }
  return part;
}

namespace {
json arch_to_json_obj(const ArchitectureSpec& arch) {
  json j;
  j["family"] = arch.family == Family::kResidual ? "residual" : "plain";
  j["input_shape"] = {arch.input_shape[0], arch.input_shape[1], arch.input_shape[2]};
  j["num_classes"] = arch.head.num_classes;
  j["stem"] = {{"channels", arch.stem.out_channels}, {"stride", arch.stem.stride}};
  j["feature_map_scale"] = arch.feature_map_scale;
  j["seed"] = arch.seed;
  json stages = json::array();
  for (const StageSpec& s : arch.stages)
    stages.push_back({{"index", s.index},
                      {"blocks", s.num_blocks},
                      {"channels", s.channels},
                      {"downsample", s.downsample},
                      {"residual", s.residual}});
  j["stages"] = stages;
  return j;
}
}  // namespace

std::string architecture_to_json(const ArchitectureSpec& arch) {
  return arch_to_json_obj(arch).dump(2);
}

ArchitectureSpec arch_from_json(const json& j) {
  require_keys_subset(j, "architecture",
                      {"family", "input_shape", "num_classes", "stem", "feature_map_scale", "seed",
                       "stages"});
  ArchitectureSpec arch;
  std::string fam = require_key(j, "architecture", "family").get<std::string>();
  if (fam == "residual")
    arch.family = Family::kResidual;
  else if (fam == "plain")
    arch.family = Family::kPlain;
  else
    throw std::invalid_argument("unknown family '" + fam + "'");
  auto shp = require_key(j, "architecture", "input_shape");
  arch.input_shape = {shp.at(0).get<int>(), shp.at(1).get<int>(), shp.at(2).get<int>()};
  arch.head.num_classes = require_key(j, "architecture", "num_classes").get<int>();
  const json& stem = require_key(j, "architecture", "stem");
  require_keys_subset(stem, "architecture.stem", {"channels", "stride"});
  arch.stem.out_channels = require_key(stem, "stem", "channels").get<int>();
  arch.stem.stride = stem.value("stride", 2);
  arch.feature_map_scale = j.value("feature_map_scale", 1.0);
  arch.seed = j.value("seed", uint64_t{0});
  for (const json& s : require_key(j, "architecture", "stages")) {
    require_keys_subset(s, "architecture.stages[]",
                        {"index", "blocks", "channels", "downsample", "residual"});
    StageSpec spec;
    spec.index = require_key(s, "stage", "index").get<int>();
    spec.num_blocks = require_key(s, "stage", "blocks").get<int>();
    spec.channels = require_key(s, "stage", "channels").get<int>();
    spec.downsample = s.value("downsample", spec.index > 1);
    spec.residual = s.value("residual", arch.family == Family::kResidual);
    arch.stages.push_back(spec);
  }
  return arch;
}

ArchitectureSpec parse_architecture(const std::string& json_text) {
  return arch_from_json(json::parse(json_text));
}

}  // namespace ppaudit
