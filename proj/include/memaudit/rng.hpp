#pragma once

// Seeded randomness. All sampling goes through Rng's own arithmetic on top of
// mt19937_64 so that streams are identical across standard libraries; std
// distributions are never used on seeded paths.

#include <cstdint>
#include <random>
#include <string_view>

namespace memaudit {

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ULL);

// Stable per-run seed: run j for sequence id q under a master seed. Scheduling
// order never influences this value.
std::uint64_t derive_run_seed(std::uint64_t master_seed, std::string_view sequence_id, std::uint64_t run_index);

class Rng {
public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n);

  // Uniform in [lo, hi] inclusive.
  std::int64_t range(std::int64_t lo, std::int64_t hi);

  // Uniform double in [0, 1), 53-bit resolution.
  double unit();

  // Standard normal via Box-Muller with a cached spare.
  double gauss();

private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace memaudit
