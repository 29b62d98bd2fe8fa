// Copyright 2026 The fedsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsim {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream key from a seed and a tuple of counters,
/// e.g. derive_seed(seed, {kTrainStream, round, client}).
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return std::mt19937_64(derive_seed(seed, keys));
}

/// Stream tags, so unrelated consumers of one master seed never collide.
enum StreamTag : std::uint64_t {
  kPartitionStream = 1,
  kAttackStream = 2,
  kInitStream = 3,
  kTrainStream = 4,
  kSampleStream = 5,
  kSyntheticStream = 6,
  kShuffleStream = 7,
  kBenchStream = 8,
};

}  // namespace fedsim
