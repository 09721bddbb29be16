// Copyright 2026 The MP4SR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mp4sr {

/// Seeded pseudo-random generator: xoshiro256** (Blackman & Vigna, 2018).
///
/// The state is filled from a 64-bit seed with splitmix64. Every derived
/// quantity (uniform doubles, Bernoulli draws, bounded integers, normals) is
/// computed here rather than through <random> distributions, whose output is
/// implementation-defined, so a seed replays identically across platforms.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) from the top 53 bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// True with probability p.
  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();

  /// Normal(0, stddev) resampled until |x| <= 2 * stddev.
  double truncated_normal(double stddev);

  template <class T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }
  template <class T>
  void shuffle(std::vector<T>& values) {
    shuffle(std::span<T>(values));
  }

  State state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  State state_{};
};

std::uint64_t splitmix64(std::uint64_t& x);

/// Sub-seed for a named stream: splitmix64 applied to seed XOR FNV-1a(tag).
/// All randomness in a run is derived from one user seed this way.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

}  // namespace mp4sr
