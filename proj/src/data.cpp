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

#include "ppaudit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ppaudit {
namespace {

constexpr char kDatasetMagic[8] = {'P', 'P', 'A', 'D', 'A', 'T', 'A', '1'};

struct SynthParams {
  int n_train = 10000;
  int n_test = 5000;
  uint64_t seed = 0;
  // Mixing weights for class prototype, per-sample smooth fingerprint and
  // white noise, plus the label corruption rate. The fingerprint and the
  // corrupted labels are what a model has to memorize sample by sample.
  double proto = 1.0;
  double fingerprint = 1.1;
  double white = 0.5;
  double label_noise = 0.1;
  int modes = 2;
};

SynthParams parse_synth_params(const std::vector<std::string>& fields) {
  SynthParams p;
  // fields: [n_train][n_test][seed][key=value...]
  std::size_t i = 0;
  auto is_kv = [](const std::string& s) { return s.find('=') != std::string::npos; };
  try {
    if (i < fields.size() && !is_kv(fields[i])) p.n_train = std::stoi(fields[i++]);
    if (i < fields.size() && !is_kv(fields[i])) p.n_test = std::stoi(fields[i++]);
    if (i < fields.size() && !is_kv(fields[i])) p.seed = std::stoull(fields[i++]);
    for (; i < fields.size(); ++i) {
      auto pos = fields[i].find('=');
      if (pos == std::string::npos) throw std::invalid_argument("expected key=value");
      std::string key = fields[i].substr(0, pos);
      std::string val = fields[i].substr(pos + 1);
      if (key == "proto")
        p.proto = std::stod(val);
      else if (key == "fingerprint")
        p.fingerprint = std::stod(val);
      else if (key == "white")
        p.white = std::stod(val);
      else if (key == "label_noise")
        p.label_noise = std::stod(val);
      else if (key == "modes")
        p.modes = std::stoi(val);
      else
        throw std::invalid_argument("unknown synth10 parameter '" + key + "'");
    }
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("bad builtin source parameter: ") + e.what());
  }
  if (p.n_train < 1 || p.n_test < 0) throw std::invalid_argument("builtin pool sizes out of range");
  return p;
}

/// Low-frequency field: a seeded grid-by-grid gaussian, bilinearly upsampled.
/// Unit-RMS per channel so mixing weights are comparable.
void add_smooth_field(float* img, int h, int w, int c, int grid, uint64_t seed, double weight) {
  Rng rng(seed);
  std::vector<double> g(static_cast<std::size_t>(grid) * grid * c);
  for (auto& v : g) v = rng.normal();
  for (int ch = 0; ch < c; ++ch) {
    const double* gc = g.data() + static_cast<std::size_t>(ch) * grid * grid;
    for (int y = 0; y < h; ++y) {
      double gy = (y + 0.5) * grid / h - 0.5;
      int y0 = static_cast<int>(std::floor(gy));
      double fy = gy - y0;
      int y0c = std::clamp(y0, 0, grid - 1), y1c = std::clamp(y0 + 1, 0, grid - 1);
      for (int x = 0; x < w; ++x) {
        double gx = (x + 0.5) * grid / w - 0.5;
        int x0 = static_cast<int>(std::floor(gx));
        double fx = gx - x0;
        int x0c = std::clamp(x0, 0, grid - 1), x1c = std::clamp(x0 + 1, 0, grid - 1);
        double v = (1 - fy) * ((1 - fx) * gc[y0c * grid + x0c] + fx * gc[y0c * grid + x1c]) +
                   fy * ((1 - fx) * gc[y1c * grid + x0c] + fx * gc[y1c * grid + x1c]);
        img[(static_cast<std::size_t>(y) * w + x) * c + ch] += static_cast<float>(weight * v);
      }
    }
  }
}

void add_white_noise(float* img, int64_t n, uint64_t seed, double weight) {
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) img[i] += static_cast<float>(weight * rng.normal());
}

void standardize(float* img, int64_t n) {
  double sum = 0, sumsq = 0;
  for (int64_t i = 0; i < n; ++i) {
    sum += img[i];
    sumsq += static_cast<double>(img[i]) * img[i];
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
  for (int64_t i = 0; i < n; ++i) img[i] = static_cast<float>((img[i] - mean) * inv);
}

void synth_pool(const DatasetSpec& spec, const SynthParams& p, int count, int index_offset,
                Tensor& images, std::vector<int>& labels) {
  const int c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
  const int64_t sz = static_cast<int64_t>(h) * w * c;
  images.resize({count, h, w, c});
  labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int gi = index_offset + i;  // global sample index, fingerprints stay unique
    const int cls = gi % spec.num_classes;
    Rng pick(derive_seed(p.seed, "sample", static_cast<uint64_t>(gi)));
    const int mode = static_cast<int>(pick.index(static_cast<uint64_t>(p.modes)));

    float* img = images.data() + static_cast<int64_t>(i) * sz;
    add_smooth_field(img, h, w, c, 8,
                     derive_seed(p.seed, "proto", static_cast<uint64_t>(cls * 1024 + mode)),
                     p.proto);
    add_smooth_field(img, h, w, c, 8, derive_seed(p.seed, "fingerprint", static_cast<uint64_t>(gi)),
                     p.fingerprint);
    add_white_noise(img, sz, derive_seed(p.seed, "white", static_cast<uint64_t>(gi)), p.white);
    standardize(img, sz);

    int label = cls;
    if (pick.bernoulli(p.label_noise)) {
      int shift = 1 + static_cast<int>(pick.index(static_cast<uint64_t>(spec.num_classes - 1)));
      label = (cls + shift) % spec.num_classes;
    }
    labels[static_cast<std::size_t>(i)] = label;
  }
}

Dataset generate_builtin(const DatasetSpec& spec) {
  // source = "builtin:<generator>[:fields...]"
  std::vector<std::string> parts;
  std::stringstream ss(spec.source);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() < 2) throw std::invalid_argument("malformed builtin source '" + spec.source + "'");
  const std::string& gen = parts[1];
  if (gen != "synth10") throw std::invalid_argument("unknown builtin dataset '" + gen + "'");
  if (spec.num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");

  SynthParams p = parse_synth_params({parts.begin() + 2, parts.end()});
  Dataset ds;
  ds.spec = spec;
  synth_pool(spec, p, p.n_train, 0, ds.train_images, ds.train_labels);
  synth_pool(spec, p, p.n_test, p.n_train, ds.test_images, ds.test_labels);
  return ds;
}

void validate_against_spec(const Dataset& ds) {
  const auto& s = ds.spec;
  if (s.num_classes < 2) throw std::runtime_error("dataset must have at least 2 classes");
  for (int l : ds.train_labels)
    if (l < 0 || l >= s.num_classes)
      throw std::runtime_error("train label " + std::to_string(l) + " outside [0, " +
                               std::to_string(s.num_classes) + ")");
  for (int l : ds.test_labels)
    if (l < 0 || l >= s.num_classes)
      throw std::runtime_error("test label " + std::to_string(l) + " outside [0, " +
                               std::to_string(s.num_classes) + ")");
  const int64_t sz = ds.sample_size();
  if (ds.train_images.numel() != sz * ds.n_train() || ds.test_images.numel() != sz * ds.n_test())
    throw std::runtime_error("image pool size does not match input_shape");
}

template <typename T>
void write_raw(std::ofstream& f, const T* p, std::size_t n) {
  f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& f, T* p, std::size_t n) {
  f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
  if (!f) throw std::runtime_error("dataset file truncated");
}

std::string cache_file_name(const DatasetSpec& spec) {
  std::string key = spec.source;
  for (char& ch : key)
    if (ch == ':' || ch == '/' || ch == '=') ch = '_';
  return key + ".ppadata";
}

}  // namespace

DatasetSpec default_dataset_spec() {
  DatasetSpec s;
  s.name = "synth10";
  s.input_shape = {3, 32, 32};
  s.num_classes = 10;
  s.source = "builtin:synth10:10000:5000:0";
  return s;
}

Dataset load_dataset(const DatasetSpec& spec, const std::string& cache_dir) {
  if (spec.source.rfind("builtin:", 0) == 0) {
    if (!cache_dir.empty()) {
      std::filesystem::path cached = std::filesystem::path(cache_dir) / cache_file_name(spec);
      if (std::filesystem::exists(cached)) return load_dataset_file(spec, cached.string());
      Dataset ds = generate_builtin(spec);
      validate_against_spec(ds);
      std::filesystem::create_directories(cache_dir);
      save_dataset(ds, cached.string());
      return ds;
    }
    Dataset ds = generate_builtin(spec);
    validate_against_spec(ds);
    return ds;
  }
  if (!std::filesystem::exists(spec.source))
    throw std::runtime_error("dataset source '" + spec.source + "' does not exist");
  return load_dataset_file(spec, spec.source);
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write dataset file '" + path + "'");
  f.write(kDatasetMagic, sizeof(kDatasetMagic));
  int32_t hdr[6] = {ds.spec.input_shape[0], ds.spec.input_shape[1], ds.spec.input_shape[2],
                    ds.spec.num_classes, ds.n_train(), ds.n_test()};
  write_raw(f, hdr, 6);
  write_raw(f, ds.train_images.data(), static_cast<std::size_t>(ds.train_images.numel()));
  std::vector<int32_t> tl(ds.train_labels.begin(), ds.train_labels.end());
  write_raw(f, tl.data(), tl.size());
  write_raw(f, ds.test_images.data(), static_cast<std::size_t>(ds.test_images.numel()));
  std::vector<int32_t> el(ds.test_labels.begin(), ds.test_labels.end());
  write_raw(f, el.data(), el.size());
}

Dataset load_dataset_file(const DatasetSpec& spec, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("dataset source '" + path + "' does not exist");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a dataset container");
  int32_t hdr[6];
  read_raw(f, hdr, 6);
  if (hdr[0] != spec.input_shape[0] || hdr[1] != spec.input_shape[1] ||
      hdr[2] != spec.input_shape[2])
    throw std::runtime_error("dataset shape mismatch: file has " + std::to_string(hdr[0]) + "x" +
                             std::to_string(hdr[1]) + "x" + std::to_string(hdr[2]));
  if (hdr[3] != spec.num_classes)
    throw std::runtime_error("dataset class-count mismatch: file has " + std::to_string(hdr[3]));
  Dataset ds;
  ds.spec = spec;
  const int h = hdr[1], w = hdr[2], c = hdr[0];
  ds.train_images.resize({hdr[4], h, w, c});
  read_raw(f, ds.train_images.data(), static_cast<std::size_t>(ds.train_images.numel()));
  std::vector<int32_t> tl(static_cast<std::size_t>(hdr[4]));
  read_raw(f, tl.data(), tl.size());
  ds.train_labels.assign(tl.begin(), tl.end());
  ds.test_images.resize({hdr[5], h, w, c});
  read_raw(f, ds.test_images.data(), static_cast<std::size_t>(ds.test_images.numel()));
  std::vector<int32_t> el(static_cast<std::size_t>(hdr[5]));
  read_raw(f, el.data(), el.size());
  ds.test_labels.assign(el.begin(), el.end());
  validate_against_spec(ds);
  return ds;
}

SplitPlan make_split(int n_train, uint64_t seed) {
  if (n_train < 2) throw std::invalid_argument("make_split requires n_train >= 2");
  Rng rng(derive_seed(seed, "split"));
  std::vector<int> perm = rng.permutation(n_train);
  SplitPlan plan;
  plan.seed = seed;
  const int h1_size = (n_train + 1) / 2;  // h1 takes the extra element when odd
  plan.h1_indices.assign(perm.begin(), perm.begin() + h1_size);
  plan.h2_indices.assign(perm.begin() + h1_size, perm.end());
  std::sort(plan.h1_indices.begin(), plan.h1_indices.end());
  std::sort(plan.h2_indices.begin(), plan.h2_indices.end());
  return plan;
}

SplitPlan make_split(int n_train, int n_test, uint64_t seed) {
  SplitPlan plan = make_split(n_train, seed);
  plan.test_indices.resize(static_cast<std::size_t>(n_test));
  for (int i = 0; i < n_test; ++i) plan.test_indices[static_cast<std::size_t>(i)] = i;
  return plan;
}

void write_split(const SplitPlan& plan, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write split plan '" + path + "'");
  f << "seed " << plan.seed << "\n";
  auto line = [&f](const char* tag, const std::vector<int>& v) {
    f << tag;
    for (int i : v) f << ' ' << i;
    f << "\n";
  };
  line("h1", plan.h1_indices);
  line("h2", plan.h2_indices);
  line("test", plan.test_indices);
}

SplitPlan read_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read split plan '" + path + "'");
  SplitPlan plan;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "seed") {
      ss >> plan.seed;
    } else if (tag == "h1" || tag == "h2" || tag == "test") {
      std::vector<int>& v =
          tag == "h1" ? plan.h1_indices : (tag == "h2" ? plan.h2_indices : plan.test_indices);
      int idx;
      while (ss >> idx) v.push_back(idx);
    } else if (!tag.empty()) {
      throw std::runtime_error("unknown split plan field '" + tag + "'");
    }
  }
  return plan;
}

Tensor augment_batch(const Tensor& batch, const AugmentationPolicy& policy, Rng& rng) {
  Tensor out = batch;
  if (!policy.enabled || (policy.flip_probability == 0.0 && policy.crop_padding == 0)) return out;
  const int64_t b = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  const int pad = policy.crop_padding;
  std::vector<float> padded;
  if (pad > 0) padded.resize(static_cast<std::size_t>((h + 2 * pad) * (w + 2 * pad) * c));

  for (int64_t i = 0; i < b; ++i) {
    float* img = out.data() + i * h * w * c;
    if (policy.flip_probability > 0 && rng.bernoulli(policy.flip_probability)) {
      for (int64_t y = 0; y < h; ++y) {
        float* row = img + y * w * c;
        for (int64_t x = 0; x < w / 2; ++x)
          for (int64_t j = 0; j < c; ++j)
            std::swap(row[x * c + j], row[(w - 1 - x) * c + j]);
      }
    }
    if (pad > 0) {
      const int64_t wp = w + 2 * pad;
      std::fill(padded.begin(), padded.end(), 0.0f);
      for (int64_t y = 0; y < h; ++y)
        std::memcpy(padded.data() + ((y + pad) * wp + pad) * c, img + y * w * c,
                    static_cast<std::size_t>(w * c) * sizeof(float));
      const int64_t oy = static_cast<int64_t>(rng.index(static_cast<uint64_t>(2 * pad + 1)));
      const int64_t ox = static_cast<int64_t>(rng.index(static_cast<uint64_t>(2 * pad + 1)));
      for (int64_t y = 0; y < h; ++y)
        std::memcpy(img + y * w * c, padded.data() + ((y + oy) * wp + ox) * c,
                    static_cast<std::size_t>(w * c) * sizeof(float));
    }
  }
  return out;
}

Tensor gather_images(const Tensor& pool, const std::vector<int>& indices, int64_t offset,
                     int64_t count) {
  const int64_t h = pool.dim(1), w = pool.dim(2), c = pool.dim(3);
  const int64_t sz = h * w * c;
  Tensor batch({count, h, w, c});
  for (int64_t i = 0; i < count; ++i) {
    const int64_t src = indices[static_cast<std::size_t>(offset + i)];
    std::memcpy(batch.data() + i * sz, pool.data() + src * sz,
                static_cast<std::size_t>(sz) * sizeof(float));
  }
  return batch;
}

}  // namespace ppaudit
