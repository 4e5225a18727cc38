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

#ifndef PPAUDIT_MEMORY_HPP_
#define PPAUDIT_MEMORY_HPP_

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <new>

namespace ppaudit {

/// High-water accounting for tensor storage. Cost metering reads the peak;
/// everything else just allocates through the tracking allocator below.
class MemoryMeter {
 public:
  static MemoryMeter& instance() {
    static MemoryMeter m;
    return m;
  }

  void add(std::size_t bytes) {
    std::size_t cur = current_.fetch_add(bytes) + bytes;
    std::size_t peak = peak_.load();
    while (cur > peak && !peak_.compare_exchange_weak(peak, cur)) {
    }
  }
  void sub(std::size_t bytes) { current_.fetch_sub(bytes); }

  std::size_t current_bytes() const { return current_.load(); }
  std::size_t peak_bytes() const { return peak_.load(); }
  /// Resets the high-water mark to the currently live amount.
  void reset_peak() { peak_.store(current_.load()); }

 private:
  std::atomic<std::size_t> current_{0};
  std::atomic<std::size_t> peak_{0};
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) {}

  T* allocate(std::size_t n) {
    MemoryMeter::instance().add(n * sizeof(T));
    if (void* p = std::malloc(n * sizeof(T))) return static_cast<T*>(p);
    throw std::bad_alloc();
  }
  void deallocate(T* p, std::size_t n) {
    MemoryMeter::instance().sub(n * sizeof(T));
    std::free(p);
  }
  bool operator==(const TrackingAllocator&) const { return true; }
  bool operator!=(const TrackingAllocator&) const { return false; }
};

}  // namespace ppaudit

#endif  // PPAUDIT_MEMORY_HPP_
