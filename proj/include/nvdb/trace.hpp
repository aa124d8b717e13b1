#ifndef NVDB_TRACE_HPP
#define NVDB_TRACE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nvdb {

/// NV ground-state population sampled against the L1-L2 echo half-length t.
struct SignalTrace {
  std::vector<double> times;   // us
  std::vector<double> values;  // P0 in [0, 1]
  std::vector<double> stderr_;  // per-point standard error, all zero when noiseless
  std::optional<std::uint64_t> shots;  // nullopt: noiseless (infinite shots)
  std::uint64_t seed = 0;
  std::string generator;  // RNG algorithm used to draw the shots, empty when noiseless

  std::size_t size() const noexcept { return times.size(); }
  bool noiseless() const noexcept { return !shots.has_value(); }
};

inline SignalTrace make_noiseless_trace(std::vector<double> times, std::vector<double> values) {
  SignalTrace t;
  t.stderr_.assign(values.size(), 0.0);
  t.times = std::move(times);
  t.values = std::move(values);
  return t;
}

}  // namespace nvdb

#endif
