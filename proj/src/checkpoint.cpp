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

#include "ppaudit/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "ppaudit/jsonutil.hpp"

namespace ppaudit {
namespace {

constexpr char kParamMagic[8] = {'P', 'P', 'A', 'P', 'R', 'M', '0', '1'};
constexpr const char* kInitPrefix = "init/";

void write_entry(std::ofstream& f, const std::string& name, const Tensor& t) {
  uint32_t name_len = static_cast<uint32_t>(name.size());
  f.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
  f.write(name.data(), name_len);
  uint32_t ndim = static_cast<uint32_t>(t.shape().size());
  f.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
  for (int64_t d : t.shape()) f.write(reinterpret_cast<const char*>(&d), sizeof(d));
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

std::pair<std::string, Tensor> read_entry(std::ifstream& f) {
  uint32_t name_len = 0;
  f.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
  if (!f) throw std::runtime_error("params.bin truncated");
  std::string name(name_len, '\0');
  f.read(name.data(), name_len);
  uint32_t ndim = 0;
  f.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
  std::vector<int64_t> shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) f.read(reinterpret_cast<char*>(&shape[i]), sizeof(int64_t));
  Tensor t(shape);
  f.read(reinterpret_cast<char*>(t.data()),
         static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!f) throw std::runtime_error("params.bin truncated while reading " + name);
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& dir, const Model& model, const InitSnapshot& snapshot,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  {
    json j;
    j["arch"] = json::parse(architecture_to_json(model.arch()));
    j["train_seed"] = meta.train_seed;
    j["epoch"] = meta.epoch;
    j["objective"] = meta.objective;
    j["split_ref"] = meta.split_ref;
    std::ofstream f(std::filesystem::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
    f << j.dump(2) << "\n";
  }
  std::ofstream f(std::filesystem::path(dir) / "params.bin", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write params.bin in " + dir);
  f.write(kParamMagic, sizeof(kParamMagic));
  const ParamStore& store = model.params();
  uint64_t count = static_cast<uint64_t>(store.size() + snapshot.values.size());
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (int h = 0; h < store.size(); ++h) write_entry(f, store.name(h), store.value(h));
  for (const auto& [name, value] : snapshot.values) write_entry(f, kInitPrefix + name, value);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(std::filesystem::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("checkpoint manifest missing in " + dir);
  json j = json::parse(mf);
  require_keys_subset(j, "checkpoint manifest",
                      {"arch", "train_seed", "epoch", "objective", "split_ref"});
  ArchitectureSpec arch = parse_architecture(require_key(j, "checkpoint", "arch").dump());

  LoadedCheckpoint out{Model(arch), InitSnapshot{}, CheckpointMeta{}};
  out.meta.train_seed = j.value("train_seed", uint64_t{0});
  out.meta.epoch = j.value("epoch", 0);
  out.meta.objective = j.value("objective", "ce");
  out.meta.split_ref = j.value("split_ref", "");
  out.snapshot.seed = arch.seed;

  std::ifstream f(std::filesystem::path(dir) / "params.bin", std::ios::binary);
  if (!f) throw std::runtime_error("params.bin missing in " + dir);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kParamMagic, 8) != 0)
    throw std::runtime_error("params.bin has a bad header in " + dir);
  uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  ParamStore& store = out.model.params();
  for (uint64_t i = 0; i < count; ++i) {
    auto [name, tensor] = read_entry(f);
    if (name.rfind(kInitPrefix, 0) == 0) {
      out.snapshot.values[name.substr(std::strlen(kInitPrefix))] = std::move(tensor);
      continue;
    }
    int h = store.handle(name);
    if (h < 0) throw std::runtime_error("checkpoint has unknown parameter '" + name + "'");
    if (!store.value(h).same_shape(tensor))
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
    store.value(h) = std::move(tensor);
  }
  return out;
}

bool checkpoint_exists(const std::string& dir) {
  return std::filesystem::exists(std::filesystem::path(dir) / "manifest.json") &&
         std::filesystem::exists(std::filesystem::path(dir) / "params.bin");
}

}  // namespace ppaudit
