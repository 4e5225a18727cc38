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

#ifndef PPAUDIT_JSONUTIL_HPP_
#define PPAUDIT_JSONUTIL_HPP_

#include <initializer_list>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace ppaudit {

using json = nlohmann::json;

/// Unknown keys are configuration typos; fail loudly instead of running a
/// silently different experiment.
inline void require_keys_subset(const json& obj, const std::string& where,
                                std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key()))
      throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
  }
}

inline const json& require_key(const json& obj, const std::string& where, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::invalid_argument("missing key '" + std::string(key) + "' in " + where);
  return *it;
}

}  // namespace ppaudit

#endif  // PPAUDIT_JSONUTIL_HPP_
