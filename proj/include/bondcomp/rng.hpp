#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace bondcomp {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (base, purpose, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t purpose, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ purpose) ^ index);
}

namespace stream {
inline constexpr std::uint64_t kPath = 0x70617468;    // per-path seed
inline constexpr std::uint64_t kJumps = 0x6a756d70;   // Poisson measure
inline constexpr std::uint64_t kWiener = 0x7769656e;  // Brownian skeleton, one stream per level
inline constexpr std::uint64_t kAux = 0x61757800;
}  // namespace stream

/// Brownian increments on a uniform grid of `n_steps` over [0, horizon].
///
/// Writing n_steps = odd * 2^L, the path on the coarse grid of `odd` steps is drawn
/// first and each dyadic level is filled by Brownian-bridge midpoints from its own
/// stream. Grids sharing the same odd part are therefore nested: the increments at
/// n_steps are exact sums of the increments at 2 * n_steps for the same seed.
inline std::vector<double> wiener_increments(std::uint64_t seed, double horizon, std::size_t n_steps,
                                             bool antithetic = false) {
  if (n_steps == 0) throw std::invalid_argument("wiener_increments: n_steps must be positive");
  std::size_t odd = n_steps;
  std::size_t levels = 0;
  while (odd % 2 == 0) {
    odd /= 2;
    ++levels;
  }
  const double sign = antithetic ? -1.0 : 1.0;
  std::vector<double> w(odd + 1, 0.0);
  double h = horizon / static_cast<double>(odd);
  {
    Rng rng(derive_seed(seed, stream::kWiener, 0));
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 1; i <= odd; ++i) w[i] = w[i - 1] + sign * std::sqrt(h) * z(rng);
  }
  for (std::size_t level = 1; level <= levels; ++level) {
    Rng rng(derive_seed(seed, stream::kWiener, level));
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> finer(2 * (w.size() - 1) + 1);
    const double bridge_sd = std::sqrt(h / 4.0);
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      finer[2 * i] = w[i];
      finer[2 * i + 1] = 0.5 * (w[i] + w[i + 1]) + sign * bridge_sd * z(rng);
    }
    finer.back() = w.back();
    w = std::move(finer);
    h *= 0.5;
  }
  std::vector<double> dw(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) dw[i] = w[i + 1] - w[i];
  return dw;
}

}  // namespace bondcomp
