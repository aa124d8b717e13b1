#ifndef NVDB_SEQUENCE_HPP
#define NVDB_SEQUENCE_HPP

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "spinsys.hpp"
#include "units.hpp"

namespace nvdb {

enum class Protocol { Hybrid, Direct };
enum class PulseMode { Ideal, Finite };
enum class Axis { X, Y };
enum class Rotation { Pi, PiHalf };

inline std::string_view to_string(Protocol p) { return p == Protocol::Hybrid ? "hybrid" : "direct"; }
inline std::string_view to_string(PulseMode m) { return m == PulseMode::Ideal ? "ideal" : "finite"; }
inline std::string_view to_string(Axis a) { return a == Axis::X ? "X" : "Y"; }
inline std::string_view to_string(Rotation r) { return r == Rotation::Pi ? "PI" : "PI_HALF"; }

inline double rotation_angle(Rotation r) { return r == Rotation::Pi ? pi : pi / 2.0; }
/// Drive phase that realizes the axis in the rotating frame.
inline double axis_phase(Axis a) { return a == Axis::X ? 0.0 : pi / 2.0; }

struct Pulse {
  std::string target;
  std::size_t site = 0;
  Axis axis = Axis::X;
  Rotation angle = Rotation::Pi;
  double start = 0.0;     // us
  double duration = 0.0;  // us, zero for ideal pulses
  double carrier = 0.0;   // rad/us
  double rabi = 0.0;      // rad/us
  int group = 0;          // pulses sharing a group are simultaneous

  double end() const { return start + duration; }
};

/// Free-evolution interval between pulse events.
struct Window {
  double start = 0.0;
  double end = 0.0;
  std::string label;
};

struct Timings {
  double tau1 = 0.0;  // NV-DB half echo
  double tau2 = 0.0;  // DB-L1 half echo
  double tau3 = 0.0;  // NV-L1 half echo (no DB)
};

struct PulseShape {
  PulseMode mode = PulseMode::Ideal;
  double rabi = mhz(10.0);  // rad/us; pi pulse of 50 ns at 2pi x 10 MHz
};

struct PulseTimeline {
  std::vector<Pulse> pulses;
  std::vector<Window> windows;
  double total_duration = 0.0;
  Protocol protocol = Protocol::Hybrid;
  PulseMode mode = PulseMode::Ideal;
  Timings timings;
  double t = 0.0;  // half-length of the L1-L2 echo
  /// Start of the L1-L2 block. Every pulse that ends at or before this instant is
  /// independent of t, so timelines for different t share this prefix.
  double central_start = 0.0;
  /// Number of pulse groups inside that shared prefix.
  std::size_t prefix_groups = 0;

  /// Ideal-mode length of the ZZ evolution (4 tau1 + 4 tau2 + 2t, or 4 tau3 + 2t).
  double echo_duration() const {
    return protocol == Protocol::Hybrid ? 4.0 * (timings.tau1 + timings.tau2) + 2.0 * t
                                        : 4.0 * timings.tau3 + 2.0 * t;
  }
  /// Sum of all finite pulse durations along the time axis (simultaneous pulses count once).
  double pulse_overhead() const {
    double sum = 0.0;
    int last = -1;
    for (const auto& p : pulses) {
      if (p.group != last) sum += p.duration;
      last = p.group;
    }
    return sum;
  }
};

/// Half-echo lengths that set every transfer phase to pi/2: tau = (pi/2) / |A|.
inline Timings auto_timings(const SpinSystem& sys, Protocol protocol) {
  const auto nv = sys.nv_index();
  const auto l1 = sys.label_index(0);
  if (!l1) throw ConfigError("protocol needs a first label site");
  auto half_echo = [&](std::size_t i, std::size_t j) {
    const double a = std::abs(sys.coupling(i, j));
    if (!(a > 0.0)) {
      throw ConfigError("coupling " + sys.site(i).name + "-" + sys.site(j).name +
                        " vanishes (magic-angle geometry?); cannot time the transfer");
    }
    return (pi / 2.0) / a;
  };
  Timings out;
  if (protocol == Protocol::Hybrid) {
    const auto db = sys.db_index();
    if (!db) throw ConfigError("hybrid protocol needs a DB site");
    out.tau1 = half_echo(nv, *db);
    out.tau2 = half_echo(*db, *l1);
  } else {
    out.tau3 = half_echo(nv, *l1);
  }
  return out;
}

namespace detail {

struct PulseSpec {
  std::size_t site;
  Axis axis;
  Rotation angle;
};

/// One instant of the ideal sequence: simultaneous pulses, preceded by a free interval.
struct SequenceEvent {
  double gap = 0.0;  // ideal center-to-center spacing from the previous event
  std::string window;
  std::vector<PulseSpec> pulses;
};

inline PulseTimeline lay_out(const std::vector<SequenceEvent>& events, std::size_t central_event,
                             const PulseShape& shape, const SpinSystem& sys) {
  PulseTimeline tl;
  tl.mode = shape.mode;
  if (shape.mode == PulseMode::Finite && !(shape.rabi > 0.0)) {
    throw ConfigError("finite-width pulses need a positive Rabi frequency");
  }
  double prev_end = 0.0;
  double prev_half = 0.0;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    double duration = 0.0;
    if (shape.mode == PulseMode::Finite) {
      for (const auto& p : ev.pulses) duration = std::max(duration, rotation_angle(p.angle) / shape.rabi);
    }
    // Finite pulses eat into the free intervals so that pulse centers sit on the
    // ideal grid; a gap shorter than the pulses collapses to zero.
    const double free = e == 0 ? 0.0 : std::max(0.0, ev.gap - prev_half - duration / 2.0);
    const double start = prev_end + free;
    if (e > 0) tl.windows.push_back({prev_end, start, ev.window});
    if (e == central_event) {
      tl.central_start = prev_end;
      tl.prefix_groups = e;
    }
    for (const auto& p : ev.pulses) {
      Pulse out;
      out.site = p.site;
      out.target = sys.site(p.site).name;
      out.axis = p.axis;
      out.angle = p.angle;
      out.start = start;
      out.duration = shape.mode == PulseMode::Finite ? rotation_angle(p.angle) / shape.rabi : 0.0;
      out.carrier = sys.site(p.site).larmor;
      out.rabi = shape.mode == PulseMode::Finite ? shape.rabi : 0.0;
      out.group = static_cast<int>(e);
      tl.pulses.push_back(std::move(out));
    }
    prev_end = start + duration;
    prev_half = duration / 2.0;
  }
  tl.total_duration = prev_end;
  return tl;
}

inline void check_times(double a, double b, double t) {
  if (!(a >= 0.0) || !(b >= 0.0) || !(t >= 0.0) || !std::isfinite(a + b + t)) {
    throw ConfigError("sequence times must be finite and non-negative");
  }
}

}  // namespace detail

/// Hybrid cascade NV -> DB -> L1 -> (L1-L2 echo over 2t) -> L1 -> DB -> NV.
///
/// DEER blocks [tau | pi + pi | tau] keep the ZZ term of the driven pair and refocus every
/// coupling to undriven spins. The X/Y choice of the pi/2 pulses is the one for which the
/// ideal sequence yields
///   P0 = 1/2 [1 - s1^2 s2^2 cos(g t) + c1^2 sin(eta_nv) - s1^2 c2^2 sin(eta_db)]
/// with s_k = sin(phi_k), c_k = cos(phi_k), phi_1 = A_nv-db tau1, phi_2 = A_db-l1 tau2.
inline PulseTimeline compile_hybrid(const Timings& timings, double t, const PulseShape& shape,
                                    const SpinSystem& sys) {
  using detail::PulseSpec;
  detail::check_times(timings.tau1, timings.tau2, t);
  if (!(timings.tau1 > 0.0) || !(timings.tau2 > 0.0)) throw ConfigError("hybrid protocol needs tau1, tau2 > 0");
  const auto nv = sys.nv_index();
  const auto db = sys.db_index();
  const auto l1 = sys.label_index(0);
  const auto l2 = sys.label_index(1);
  if (!db || !l1 || !l2) throw ConfigError("hybrid protocol needs DB, L1 and L2 sites");
  constexpr auto X = Axis::X;
  constexpr auto Y = Axis::Y;
  constexpr auto P = Rotation::Pi;
  constexpr auto H = Rotation::PiHalf;
  const double t1 = timings.tau1, t2 = timings.tau2;
  const std::vector<detail::SequenceEvent> events{
      {0.0, "", {PulseSpec{nv, X, H}}},
      {t1, "nv-db", {PulseSpec{nv, X, P}, PulseSpec{*db, X, P}}},
      {t1, "nv-db", {PulseSpec{nv, Y, H}, PulseSpec{*db, X, H}}},
      {t2, "db-l1", {PulseSpec{*db, X, P}, PulseSpec{*l1, X, P}}},
      {t2, "db-l1", {PulseSpec{*db, Y, H}, PulseSpec{*l1, Y, H}}},
      {t, "l1-l2", {PulseSpec{*l1, X, P}, PulseSpec{*l2, X, P}}},
      {t, "l1-l2", {PulseSpec{*db, X, H}, PulseSpec{*l1, Y, H}}},
      {t2, "db-l1", {PulseSpec{*db, X, P}, PulseSpec{*l1, X, P}}},
      {t2, "db-l1", {PulseSpec{nv, X, H}, PulseSpec{*db, Y, H}}},
      {t1, "nv-db", {PulseSpec{nv, X, P}, PulseSpec{*db, X, P}}},
      {t1, "nv-db", {PulseSpec{nv, Y, H}}},
  };
  auto tl = detail::lay_out(events, 5, shape, sys);
  tl.protocol = Protocol::Hybrid;
  tl.timings = timings;
  tl.t = t;
  return tl;
}

/// NV-only variant: NV <-> L1 DEER blocks of half-length tau3 around the L1-L2 echo.
/// Ideal output: P0 = 1/2 [1 - sin^2(phi_3) cos(g t) + cos^2(phi_3) sin(eta_nv)].
inline PulseTimeline compile_direct(const Timings& timings, double t, const PulseShape& shape,
                                    const SpinSystem& sys) {
  using detail::PulseSpec;
  detail::check_times(timings.tau3, 0.0, t);
  if (!(timings.tau3 > 0.0)) throw ConfigError("direct protocol needs tau3 > 0");
  const auto nv = sys.nv_index();
  const auto l1 = sys.label_index(0);
  const auto l2 = sys.label_index(1);
  if (!l1 || !l2) throw ConfigError("direct protocol needs L1 and L2 sites");
  constexpr auto X = Axis::X;
  constexpr auto Y = Axis::Y;
  constexpr auto P = Rotation::Pi;
  constexpr auto H = Rotation::PiHalf;
  const double t3 = timings.tau3;
  const std::vector<detail::SequenceEvent> events{
      {0.0, "", {PulseSpec{nv, X, H}}},
      {t3, "nv-l1", {PulseSpec{nv, X, P}, PulseSpec{*l1, X, P}}},
      {t3, "nv-l1", {PulseSpec{nv, Y, H}, PulseSpec{*l1, X, H}}},
      {t, "l1-l2", {PulseSpec{*l1, X, P}, PulseSpec{*l2, X, P}}},
      {t, "l1-l2", {PulseSpec{nv, X, H}, PulseSpec{*l1, X, H}}},
      {t3, "nv-l1", {PulseSpec{nv, X, P}, PulseSpec{*l1, X, P}}},
      {t3, "nv-l1", {PulseSpec{nv, Y, H}}},
  };
  auto tl = detail::lay_out(events, 3, shape, sys);
  tl.protocol = Protocol::Direct;
  tl.timings = timings;
  tl.t = t;
  return tl;
}

inline PulseTimeline compile(Protocol protocol, const Timings& timings, double t, const PulseShape& shape,
                             const SpinSystem& sys) {
  return protocol == Protocol::Hybrid ? compile_hybrid(timings, t, shape, sys)
                                      : compile_direct(timings, t, shape, sys);
}

enum class ViolationKind { Overlap, Simultaneity, Ordering, Duration, TotalDuration };

struct Violation {
  ViolationKind kind;
  std::string message;
};

inline std::vector<Violation> validate_timeline(const PulseTimeline& tl) {
  std::vector<Violation> out;
  constexpr double eps = 1e-12;
  const auto& ps = tl.pulses;
  double last_end = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    last_end = std::max(last_end, p.end());
    if (i > 0 && p.start < ps[i - 1].start - eps) {
      out.push_back({ViolationKind::Ordering, "pulse " + std::to_string(i) + " starts before its predecessor"});
    }
    const double expected = tl.mode == PulseMode::Ideal ? 0.0
                            : p.rabi > 0.0             ? rotation_angle(p.angle) / p.rabi
                                                       : -1.0;
    if (!(p.duration >= 0.0) || std::abs(p.duration - expected) > 1e-9) {
      out.push_back({ViolationKind::Duration, "pulse " + std::to_string(i) + " on " + p.target +
                                                  " has a duration inconsistent with its angle and Rabi frequency"});
    }
    for (std::size_t j = i + 1; j < ps.size(); ++j) {
      const auto& q = ps[j];
      if (q.target == p.target && p.start < q.end() - eps && q.start < p.end() - eps) {
        out.push_back({ViolationKind::Overlap, "pulses " + std::to_string(i) + " and " + std::to_string(j) +
                                                   " overlap on " + p.target});
      }
      if (q.group == p.group &&
          (std::abs(q.start - p.start) > eps || std::abs(q.duration - p.duration) > eps)) {
        out.push_back({ViolationKind::Simultaneity, "pulses " + std::to_string(i) + " and " + std::to_string(j) +
                                                        " are paired but not simultaneous"});
      }
    }
  }
  if (std::abs(last_end - tl.total_duration) > 1e-9) {
    out.push_back({ViolationKind::TotalDuration, "total duration does not match the last pulse end"});
  }
  return out;
}

/// One record per pulse: target axis angle start_us duration_us carrier_MHz.
inline void write_schedule(std::ostream& os, const PulseTimeline& tl) {
  const auto old = os.precision(9);
  os << "# protocol=" << to_string(tl.protocol) << " mode=" << to_string(tl.mode)
     << " total_us=" << tl.total_duration << '\n';
  os << "# target axis angle start_us duration_us carrier_MHz\n";
  for (const auto& p : tl.pulses) {
    os << p.target << ' ' << to_string(p.axis) << ' ' << to_string(p.angle) << ' ' << p.start << ' '
       << p.duration << ' ' << to_mhz(p.carrier) << '\n';
  }
  os.precision(old);
}

inline std::string schedule_text(const PulseTimeline& tl) {
  std::ostringstream os;
  write_schedule(os, tl);
  return os.str();
}

}  // namespace nvdb

#endif
