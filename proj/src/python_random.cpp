// SPDX-License-Identifier: Apache-2.0
#include "sumer/python_random.hpp"

#include <array>
#include <bit>
#include <sstream>

#include "sumer/errors.hpp"

namespace sumer {

namespace {

constexpr int kStateSize = 624;

// init_genrand + init_by_array from the reference MT19937 source, which is
// what CPython's random_seed() calls with the seed split into 32-bit words.
std::array<std::uint32_t, kStateSize> init_by_array(const std::vector<std::uint32_t>& key) {
  std::array<std::uint32_t, kStateSize> mt{};
  mt[0] = 19650218U;
  for (int i = 1; i < kStateSize; ++i) {
    mt[i] = 1812433253U * (mt[i - 1] ^ (mt[i - 1] >> 30)) + static_cast<std::uint32_t>(i);
  }
  int i = 1;
  std::size_t j = 0;
  const int key_length = static_cast<int>(key.size());
  for (int k = kStateSize > key_length ? kStateSize : key_length; k > 0; --k) {
    mt[i] = (mt[i] ^ ((mt[i - 1] ^ (mt[i - 1] >> 30)) * 1664525U)) + key[j] + static_cast<std::uint32_t>(j);
    ++i;
    ++j;
    if (i >= kStateSize) {
      mt[0] = mt[kStateSize - 1];
      i = 1;
    }
    if (j >= key.size()) j = 0;
  }
  for (int k = kStateSize - 1; k > 0; --k) {
    mt[i] = (mt[i] ^ ((mt[i - 1] ^ (mt[i - 1] >> 30)) * 1566083941U)) - static_cast<std::uint32_t>(i);
    ++i;
    if (i >= kStateSize) {
      mt[0] = mt[kStateSize - 1];
      i = 1;
    }
  }
  mt[0] = 0x80000000U;
  return mt;
}

}  // namespace

PythonRandom::PythonRandom(std::uint64_t seed) {
  std::vector<std::uint32_t> key;
  do {
    key.push_back(static_cast<std::uint32_t>(seed & 0xFFFFFFFFU));
    seed >>= 32;
  } while (seed != 0);

  // std::mt19937's textual state is the 624 words; loading it leaves the
  // engine positioned to regenerate on the next draw, like CPython (mti = N).
  auto state = init_by_array(key);
  std::stringstream ss;
  for (auto w : state) ss << w << ' ';
  ss >> engine_;
}

std::uint32_t PythonRandom::getrandbits(int k) {
  if (k < 1 || k > 32) throw ValidationError("getrandbits: k must be in 1..32");
  return static_cast<std::uint32_t>(engine_()) >> (32 - k);
}

std::uint32_t PythonRandom::randbelow(std::uint32_t n) {
  if (n == 0) throw ValidationError("randbelow: n must be positive");
  const int k = std::bit_width(n);
  std::uint32_t r = getrandbits(k);
  while (r >= n) r = getrandbits(k);
  return r;
}

}  // namespace sumer
