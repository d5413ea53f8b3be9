// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "fedhl/matrix.hpp"

namespace fedhl {

// Every random draw in the simulator comes from an engine seeded by
// (master seed, purpose, stream key). Nothing depends on call order or on
// parameter values, which is what lets two trajectories share noise.

enum class StreamPurpose : std::uint64_t {
  problem = 1,
  init = 2,
  cohort = 3,
  gradient = 4,
  diagnostics = 5,
};

struct RngStreamKey {
  std::uint64_t round = 0;
  std::uint64_t client = 0;
  std::uint64_t step = 0;
  std::uint64_t replica = 0;

  RngStreamKey with_step(std::uint64_t s) const noexcept {
    RngStreamKey k = *this;
    k.step = s;
    return k;
  }
  RngStreamKey with_replica(std::uint64_t r) const noexcept {
    RngStreamKey k = *this;
    k.replica = r;
    return k;
  }

  bool operator==(const RngStreamKey&) const = default;
};

using Engine = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::uint64_t h, std::uint64_t v) noexcept {
  return splitmix64(h ^ splitmix64(v));
}

}  // namespace detail

constexpr std::uint64_t stream_seed(std::uint64_t master_seed, StreamPurpose purpose,
                                    const RngStreamKey& key) noexcept {
  std::uint64_t h = detail::splitmix64(master_seed);
  h = detail::mix(h, static_cast<std::uint64_t>(purpose));
  h = detail::mix(h, key.round);
  h = detail::mix(h, key.client);
  h = detail::mix(h, key.step);
  h = detail::mix(h, key.replica);
  return h;
}

inline Engine make_engine(std::uint64_t master_seed, StreamPurpose purpose,
                          const RngStreamKey& key = {}) {
  return Engine(stream_seed(master_seed, purpose, key));
}

inline void fill_normal(Matrix& m, Engine& engine, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : m.data()) v = scale * dist(engine);
}

inline Matrix normal_matrix(std::size_t rows, std::size_t cols, Engine& engine,
                            double scale = 1.0) {
  Matrix m(rows, cols);
  fill_normal(m, engine, scale);
  return m;
}

}  // namespace fedhl
