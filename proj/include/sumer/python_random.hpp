// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace sumer {

/// Reproduces CPython's `random.Random(seed)` for non-negative integer seeds:
/// MT19937 seeded by init_by_array, with getrandbits/_randbelow/shuffle on top.
/// The generator itself is std::mt19937; only the seeding differs from the stdlib.
class PythonRandom {
 public:
  explicit PythonRandom(std::uint64_t seed);

  std::uint32_t getrandbits(int k);  // 1 <= k <= 32
  std::uint32_t randbelow(std::uint32_t n);

  template <class T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      auto j = randbelow(static_cast<std::uint32_t>(i + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  std::mt19937 engine_;
};

}  // namespace sumer
