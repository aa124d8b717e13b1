#ifndef NVDB_SHOTS_HPP
#define NVDB_SHOTS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "trace.hpp"

namespace nvdb {

/// Name recorded in output metadata for every sampled trace.
inline constexpr const char* generator_name = "mt19937_64/splitmix64-per-point";

/// splitmix64 finalizer over (seed, stream); used to derive independent per-point seeds.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(split_seed(seed, stream));
}

/// Binomial standard error with the variance floor v in [1/(2N), 1 - 1/(2N)].
inline double binomial_stderr(double value, std::uint64_t shots) {
  const double n = static_cast<double>(shots);
  const double v = std::clamp(value, 0.5 / n, 1.0 - 0.5 / n);
  return std::sqrt(v * (1.0 - v) / n);
}

/// Projection noise: each point is k/N with k ~ Binomial(N, P0), drawn from its own stream.
inline SignalTrace sample_trace(const SignalTrace& clean, std::uint64_t shots, std::uint64_t seed) {
  if (shots < 1) throw ConfigError("shot count must be at least 1");
  if (clean.values.size() != clean.times.size()) throw ConfigError("trace has mismatched lengths");
  SignalTrace out;
  out.times = clean.times;
  out.shots = shots;
  out.seed = seed;
  out.generator = generator_name;
  out.values.resize(clean.size());
  out.stderr_.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double p = clean.values[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::domain_error("probability " + std::to_string(p) + " at point " + std::to_string(i) +
                              " is outside [0, 1]");
    }
    auto rng = make_rng(seed, i);
    std::binomial_distribution<std::uint64_t> draw(shots, p);
    const double v = static_cast<double>(draw(rng)) / static_cast<double>(shots);
    out.values[i] = v;
    out.stderr_[i] = binomial_stderr(v, shots);
  }
  return out;
}

enum class PhaseDistribution { Uniform, Normal };

/// Quasi-static phase draws. Uniform: U(-width, width). Normal: N(0, width).
inline std::vector<double> draw_quasi_static_phases(std::size_t count, PhaseDistribution dist, double width,
                                                    std::uint64_t seed, double center = 0.0) {
  if (center != 0.0) throw ConfigError("quasi-static phase distribution must be symmetric about zero");
  if (!(width >= 0.0) || !std::isfinite(width)) throw ConfigError("phase distribution width must be finite and >= 0");
  std::vector<double> out(count, 0.0);
  if (width == 0.0) return out;
  auto rng = make_rng(seed, 0);
  if (dist == PhaseDistribution::Uniform) {
    std::uniform_real_distribution<double> d(-width, width);
    for (auto& x : out) x = d(rng);
  } else {
    std::normal_distribution<double> d(0.0, width);
    for (auto& x : out) x = d(rng);
  }
  return out;
}

}  // namespace nvdb

#endif
