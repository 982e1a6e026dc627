#pragma once

#include <cstdint>
#include <random>

namespace ocvkit {

// splitmix64 step; used only to derive well-separated stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic splittable RNG. One master seed flows from the config; every
// subsystem (simulator noise, each Monte Carlo trial) draws from its own
// substream so results are reproducible and order-independent.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix_(seed, 0)) {}

  // Child stream fully determined by (parent seed, id).
  Rng substream(std::uint64_t id) const { return Rng(mix_(seed_, id + 1)); }

  double standard_normal() { return normal_(engine_); }

  double normal(double sigma) { return sigma == 0.0 ? 0.0 : sigma * normal_(engine_); }

  double uniform01() { return uniform_(engine_); }

  std::uint64_t next_u64() { return engine_(); }

  std::uint64_t seed() const { return seed_; }

private:
  static std::uint64_t mix_(std::uint64_t seed, std::uint64_t id) {
    std::uint64_t s = seed ^ (0x632be59bd9b4e019ull * (id + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ocvkit
