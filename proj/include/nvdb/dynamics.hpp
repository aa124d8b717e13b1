#ifndef NVDB_DYNAMICS_HPP
#define NVDB_DYNAMICS_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>

#include "detail/liouvillian.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "sequence.hpp"
#include "spinsys.hpp"
#include "trace.hpp"
#include "units.hpp"

namespace nvdb {

using Complex = std::complex<double>;

struct SiteNoise {
  double t1 = std::numeric_limits<double>::infinity();  // us
  double t2 = std::numeric_limits<double>::infinity();  // us
  double m = 1.0;  // thermal factor, 0 = fully polarized, 1 = infinite temperature

  /// Jump rates toward |0> and |1>. Their ratio is the Boltzmann factor m and their
  /// sum is 1/T1, so populations relax as exp(-t/T1) toward diag(1, m)/(1+m).
  double rate_to_ground() const { return std::isfinite(t1) ? 1.0 / ((1.0 + m) * t1) : 0.0; }
  double rate_to_excited() const { return std::isfinite(t1) ? m / ((1.0 + m) * t1) : 0.0; }
};

struct NoiseParams {
  std::vector<SiteNoise> sites;
  double temperature = 300.0;  // K
  bool dissipation = true;
};

/// m = exp(-hbar omega / (k_B T)) for a transition at angular frequency omega (rad/us).
inline double thermal_factor(double larmor, double temperature_k) {
  if (!(temperature_k > 0.0)) return 0.0;
  const double omega_si = std::abs(larmor) * 1e6;
  return std::exp(-codata::hbar * omega_si / (codata::k_boltzmann * temperature_k));
}

/// Noise parameters from the per-site T1/T2 of a system. `m_override` maps site name to a fixed m.
inline NoiseParams make_noise(const SpinSystem& sys, double temperature_k,
                              const std::map<std::string, double>& m_override = {}, bool dissipation = true) {
  NoiseParams out;
  out.temperature = temperature_k;
  out.dissipation = dissipation;
  for (const auto& [name, m] : m_override) {
    if (!sys.index_of(name)) throw ConfigError("thermal factor override for unknown site '" + name + "'");
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("thermal factor of '" + name + "' must lie in [0, 1]");
  }
  for (const auto& s : sys.sites()) {
    SiteNoise n;
    n.t1 = s.t1;
    n.t2 = s.t2;
    const auto it = m_override.find(s.name);
    n.m = it != m_override.end() ? it->second : thermal_factor(s.larmor, temperature_k);
    out.sites.push_back(n);
  }
  return out;
}

/// Coherent-only noise model: initial thermal factors kept, no dissipators.
inline NoiseParams noiseless(const SpinSystem& sys, double m = 1.0) {
  NoiseParams out;
  out.dissipation = false;
  out.sites.assign(sys.size(), SiteNoise{std::numeric_limits<double>::infinity(),
                                         std::numeric_limits<double>::infinity(), m});
  return out;
}

struct Diagnostics {
  double trace_drift = 0.0;
  double min_eigenvalue = 0.0;
  std::size_t step_count = 0;
};

struct EvolutionState {
  Eigen::MatrixXcd rho;
  double time = 0.0;  // us
  Diagnostics diagnostics;
  /// Pulse groups already consumed. Timelines compiled for different t share their
  /// first `prefix_groups` groups, so a state stopped at the central block can be
  /// resumed against any of them.
  std::size_t cursor = 0;
};

inline Diagnostics inspect(const Eigen::MatrixXcd& rho, std::size_t steps = 0, bool eigen = true) {
  Diagnostics d;
  d.trace_drift = std::abs(rho.trace() - Complex{1.0, 0.0});
  d.step_count = steps;
  if (eigen) {
    const Eigen::MatrixXcd herm = 0.5 * (rho + rho.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(herm, Eigen::EigenvaluesOnly);
    d.min_eigenvalue = es.eigenvalues().minCoeff();
  }
  return d;
}

/// NV in |0><0|; every other site in diag(1, m) / (1 + m).
inline EvolutionState thermal_initial_state(const SpinSystem& sys, const NoiseParams& noise) {
  if (noise.sites.size() != sys.size()) throw ConfigError("noise parameters do not match the spin system");
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Ones(1, 1);
  for (std::size_t k = 0; k < sys.size(); ++k) {
    Eigen::Matrix2cd f = Eigen::Matrix2cd::Zero();
    if (sys.site(k).kind == SiteKind::NV) {
      f(0, 0) = 1.0;
    } else {
      const double m = noise.sites[k].m;
      f(0, 0) = 1.0 / (1.0 + m);
      f(1, 1) = m / (1.0 + m);
    }
    Eigen::MatrixXcd next(rho.rows() * 2, rho.cols() * 2);
    for (Eigen::Index i = 0; i < rho.rows(); ++i)
      for (Eigen::Index j = 0; j < rho.cols(); ++j) next.block(2 * i, 2 * j, 2, 2) = rho(i, j) * f;
    rho = std::move(next);
  }
  EvolutionState s;
  s.rho = std::move(rho);
  s.diagnostics = inspect(s.rho);
  return s;
}

// Single-site operators in the (|0>, |1>) basis. sigma_plus = |0><1| raises toward |0>.
namespace ops {
inline Eigen::Matrix2cd sigma_x() { return (Eigen::Matrix2cd() << 0, 1, 1, 0).finished(); }
inline Eigen::Matrix2cd sigma_y() { return (Eigen::Matrix2cd() << 0, Complex(0, -1), Complex(0, 1), 0).finished(); }
inline Eigen::Matrix2cd sigma_z() { return (Eigen::Matrix2cd() << 1, 0, 0, -1).finished(); }
inline Eigen::Matrix2cd sigma_plus() { return (Eigen::Matrix2cd() << 0, 1, 0, 0).finished(); }
inline Eigen::Matrix2cd sigma_minus() { return (Eigen::Matrix2cd() << 0, 0, 1, 0).finished(); }

/// `op` on site k of an n-site register, identity elsewhere.
inline Eigen::MatrixXcd embed(const Eigen::Matrix2cd& op, std::size_t k, std::size_t n) {
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Ones(1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Matrix2cd f = i == k ? op : Eigen::Matrix2cd::Identity();
    Eigen::MatrixXcd next(out.rows() * 2, out.cols() * 2);
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (Eigen::Index c = 0; c < out.cols(); ++c) next.block(2 * r, 2 * c, 2, 2) = out(r, c) * f;
    out = std::move(next);
  }
  return out;
}
}  // namespace ops

/// -i[H, rho] + sum_i L_i(rho): dephasing (1/4T2)(2 sz rho sz - 2 rho) plus thermal relaxation
/// through D(L) = L rho L^+ - {L^+ L, rho}/2 with sigma+- = (sigma_x +- i sigma_y)/2, where
/// sigma+ = |0><1| moves population toward |0>.
inline Eigen::MatrixXcd lindblad_rhs(const Eigen::MatrixXcd& rho, const Eigen::MatrixXcd& hamiltonian,
                                     const NoiseParams& noise) {
  if (rho.rows() != rho.cols() || hamiltonian.rows() != rho.rows() || hamiltonian.cols() != rho.cols()) {
    throw std::invalid_argument("lindblad_rhs: dimension mismatch");
  }
  const auto n = noise.sites.size();
  if ((Eigen::Index{1} << n) != rho.rows()) throw std::invalid_argument("lindblad_rhs: noise/site count mismatch");
  const Complex i{0.0, 1.0};
  Eigen::MatrixXcd out = -i * (hamiltonian * rho - rho * hamiltonian);
  if (!noise.dissipation) return out;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = noise.sites[k];
    if (std::isfinite(s.t2)) {
      const Eigen::MatrixXcd z = ops::embed(ops::sigma_z(), k, n);
      out += (1.0 / (4.0 * s.t2)) * (2.0 * z * rho * z - 2.0 * rho);
    }
    const double down = s.rate_to_ground(), up = s.rate_to_excited();
    if (down > 0.0 || up > 0.0) {
      const Eigen::MatrixXcd sp = ops::embed(ops::sigma_plus(), k, n);
      const Eigen::MatrixXcd sm = ops::embed(ops::sigma_minus(), k, n);
      out += down * (sp * rho * sm - 0.5 * (sm * sp * rho + rho * sm * sp));
      out += up * (sm * rho * sp - 0.5 * (sp * sm * rho + rho * sp * sm));
    }
  }
  return out;
}

struct Drive {
  double carrier = 0.0;  // rad/us
  double rabi = 0.0;     // rad/us
  double phase = 0.0;    // 0 (X) or pi/2 (Y)
};

struct DriveSegment {
  std::vector<Drive> drives;
  double start = 0.0;
  double end = 0.0;
};

namespace detail {
// Addressed sites (zero detuning) are always kept; off-resonant ones only with cross-talk on.
inline std::vector<SiteDriveTerm> drive_terms(const std::vector<Drive>& drives, const SpinSystem& sys,
                                              bool crosstalk) {
  std::vector<SiteDriveTerm> out;
  for (const auto& d : drives) {
    if (!(d.rabi > 0.0)) throw std::invalid_argument("drive amplitudes must be positive");
    for (std::size_t k = 0; k < sys.size(); ++k) {
      const double delta = sys.site(k).larmor - d.carrier;
      if (delta != 0.0 && !crosstalk) continue;
      out.push_back({k, 0.5 * d.rabi, delta, d.phase});
    }
  }
  return out;
}
}  // namespace detail

/// Rotating-frame drive Hamiltonian at time t: every drive acts on every site k through
/// (Omega/2)[e^{i(delta_k t + phi)} sigma^-_k + h.c.], delta_k = omega_k - carrier.
/// The 1/2 makes a resonant pulse of length theta/Omega a rotation by theta.
inline Eigen::MatrixXcd crosstalk_hamiltonian(double time, const DriveSegment& segment, const SpinSystem& sys) {
  const auto n = sys.size();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(sys.dimension(), sys.dimension());
  for (const auto& term : detail::drive_terms(segment.drives, sys, true)) {
    const Complex c = term.half_rabi * std::polar(1.0, term.detuning * time + term.phase);
    h += c * ops::embed(ops::sigma_minus(), term.site, n) + std::conj(c) * ops::embed(ops::sigma_plus(), term.site, n);
  }
  return h;
}

/// Instantaneous Z rotation exp(-i angle S_z) applied right before pulse group `group`.
struct PhaseKick {
  std::size_t site = 0;
  double angle = 0.0;
  std::size_t group = 0;
};

/// Quasi-static phases on NV and DB injected at the middle of the L1-L2 echo.
inline std::vector<PhaseKick> central_kicks(const PulseTimeline& tl, const SpinSystem& sys, double eta_nv,
                                            double eta_db = 0.0) {
  std::vector<PhaseKick> out{{sys.nv_index(), eta_nv, tl.prefix_groups}};
  if (const auto db = sys.db_index()) out.push_back({*db, eta_db, tl.prefix_groups});
  return out;
}

struct EvolveOptions {
  std::vector<double> sample_times;
  std::vector<PhaseKick> kicks;
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  bool crosstalk = true;
  std::optional<double> stop_time;  // defaults to the end of the timeline
  std::optional<std::size_t> stop_group;  // consume pulse groups only up to this index
  bool check_positivity = true;
  /// Fraction of the fastest cross-talk period allowed as a step inside a pulse.
  double steps_per_period = 20.0;
  double max_trace_drift = 1e-6;
};

struct Trajectory {
  std::vector<EvolutionState> samples;
  EvolutionState final_state;
};

namespace detail {

inline cvec to_vec(const Eigen::MatrixXcd& rho) {
  const auto d = static_cast<std::size_t>(rho.rows());
  cvec out(d * d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) out[a * d + b] = rho(Eigen::Index(a), Eigen::Index(b));
  return out;
}

inline Eigen::MatrixXcd to_matrix(const cvec& v, std::size_t d) {
  Eigen::MatrixXcd out(d, d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) out(Eigen::Index(a), Eigen::Index(b)) = v[a * d + b];
  return out;
}

inline Liouvillian make_liouvillian(const SpinSystem& sys, const NoiseParams& noise) {
  if (noise.sites.size() != sys.size()) throw ConfigError("noise parameters do not match the spin system");
  const Eigen::VectorXd e = secular_energies(sys);
  std::vector<double> energies(e.data(), e.data() + e.size());
  std::vector<SiteRates> rates(sys.size());
  if (noise.dissipation) {
    for (std::size_t k = 0; k < sys.size(); ++k) {
      const auto& s = noise.sites[k];
      rates[k].dephasing = std::isfinite(s.t2) ? 1.0 / s.t2 : 0.0;
      rates[k].pump_up = s.rate_to_ground();
      rates[k].pump_down = s.rate_to_excited();
    }
  }
  return Liouvillian(sys.size(), energies, rates);
}

inline void apply_rotation(cvec& rho, std::size_t dim, std::size_t mask, Axis axis, double angle) {
  const double c = std::cos(angle / 2.0), s = std::sin(angle / 2.0);
  cplx u[2][2];
  if (axis == Axis::X) {
    u[0][0] = c; u[0][1] = cplx(0, -s);
    u[1][0] = cplx(0, -s); u[1][1] = c;
  } else {
    u[0][0] = c; u[0][1] = -s;
    u[1][0] = s; u[1][1] = c;
  }
  apply_site_unitary(rho, dim, mask, u);
}

inline void apply_z_rotation(cvec& rho, std::size_t dim, std::size_t mask, double angle) {
  // exp(-i angle S_z): |0> picks up e^{-i angle/2}, |1> picks up e^{+i angle/2}.
  for (std::size_t a = 0; a < dim; ++a) {
    const double za = (a & mask) ? -0.5 : 0.5;
    for (std::size_t b = 0; b < dim; ++b) {
      const double zb = (b & mask) ? -0.5 : 0.5;
      if (za != zb) rho[a * dim + b] *= std::polar(1.0, -angle * (za - zb));
    }
  }
}

struct PulseGroup {
  std::size_t first = 0, last = 0;  // [first, last) into timeline.pulses
  double start = 0.0, end = 0.0;
};

inline std::vector<PulseGroup> pulse_groups(const PulseTimeline& tl) {
  std::vector<PulseGroup> out;
  for (std::size_t i = 0; i < tl.pulses.size(); ++i) {
    if (out.empty() || tl.pulses[i].group != tl.pulses[out.back().first].group) {
      out.push_back({i, i, tl.pulses[i].start, tl.pulses[i].start});
    }
    out.back().last = i + 1;
    out.back().end = std::max(out.back().end, tl.pulses[i].end());
  }
  return out;
}

}  // namespace detail

/// Piecewise integration of the master equation along a pulse timeline.
///
/// Free windows evolve under the secular ZZ Hamiltonian and the dissipators. Ideal pulses
/// are exact instantaneous rotations; finite pulses add the cross-talk drive and are
/// integrated with a step capped at 1/steps_per_period of the fastest detuning period.
/// Samples falling on an instantaneous pulse are taken after it.
inline Trajectory evolve(EvolutionState state, const PulseTimeline& timeline, const SpinSystem& sys,
                         const NoiseParams& noise, const EvolveOptions& opts = {}) {
  namespace odeint = boost::numeric::odeint;
  using detail::cvec;
  using detail::cplx;
  const auto dim = sys.dimension();
  if (static_cast<std::size_t>(state.rho.rows()) != dim) throw std::invalid_argument("evolve: state dimension mismatch");
  auto model = detail::make_liouvillian(sys, noise);
  const auto groups = detail::pulse_groups(timeline);
  const double stop = opts.stop_time.value_or(timeline.total_duration);

  std::vector<double> samples = opts.sample_times;
  std::sort(samples.begin(), samples.end());
  std::size_t next_sample = 0;
  while (next_sample < samples.size() && samples[next_sample] < state.time) ++next_sample;

  cvec rho = detail::to_vec(state.rho);
  double t = state.time;
  std::size_t steps = state.diagnostics.step_count;
  Trajectory out;

  auto snapshot = [&](double at) {
    EvolutionState s;
    s.rho = detail::to_matrix(rho, dim);
    s.time = at;
    s.cursor = state.cursor;
    s.diagnostics = inspect(s.rho, steps, opts.check_positivity);
    return s;
  };
  auto flush_samples = [&](double upto) {
    while (next_sample < samples.size() && samples[next_sample] <= upto) {
      out.samples.push_back(snapshot(samples[next_sample]));
      ++next_sample;
    }
  };
  auto check_trace = [&] {
    cplx tr{0.0, 0.0};
    for (std::size_t a = 0; a < dim; ++a) tr += rho[a * dim + a];
    const double drift = std::abs(tr - cplx{1.0, 0.0});
    if (drift > opts.max_trace_drift) {
      throw NumericalError("evolve: trace drift " + std::to_string(drift) + " at t = " + std::to_string(t) +
                           " us after " + std::to_string(steps) + " steps");
    }
  };

  auto integrate = [&](double from, double to, double max_dt) {
    auto stepper = odeint::make_controlled(opts.abs_tol, opts.rel_tol, max_dt,
                                           odeint::runge_kutta_dopri5<cvec>());
    auto rhs = [&model](const cvec& x, cvec& dx, double tt) { model(x, dx, tt); };
    double tt = from;
    double dt = std::min(max_dt, (to - from));
    const double min_dt = 1e-14 * std::max(1.0, std::abs(to));
    while (tt < to) {
      const bool last = tt + dt >= to;
      double h = last ? to - tt : dt;
      const auto res = stepper.try_step(rhs, rho, tt, h);
      if (res == odeint::success) {
        ++steps;
        if (last) tt = to;  // guard against round-off leaving a sliver
        dt = std::max(h, min_dt);
      } else {
        dt = h;
        if (dt < min_dt) throw NumericalError("evolve: step size underflow at t = " + std::to_string(tt) + " us");
      }
    }
  };

  // Advances to `target`, stopping at sample instants. Samples exactly at `target` stay pending.
  auto advance = [&](double target, double max_dt) {
    if (!(target > t)) return;
    flush_samples(t);
    while (t < target) {
      double next = target;
      if (next_sample < samples.size() && samples[next_sample] < target) next = samples[next_sample];
      if (next > t) integrate(t, next, max_dt);
      t = next;
      check_trace();
      if (t < target) flush_samples(t);
    }
  };

  const double free_max_dt = std::max(timeline.total_duration, 1.0);
  for (std::size_t g = state.cursor; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    if (opts.stop_group && g >= *opts.stop_group) break;
    if (grp.start > stop) break;
    model.set_drives({});
    advance(grp.start, free_max_dt);
    for (const auto& k : opts.kicks) {
      if (k.group == g) detail::apply_z_rotation(rho, dim, model.mask(k.site), k.angle);
    }
    if (timeline.mode == PulseMode::Ideal) {
      for (std::size_t i = grp.first; i < grp.last; ++i) {
        const auto& p = timeline.pulses[i];
        detail::apply_rotation(rho, dim, model.mask(p.site), p.axis, rotation_angle(p.angle));
      }
    } else {
      if (grp.end > stop + 1e-12) throw std::invalid_argument("evolve: stop time falls inside a pulse");
      std::vector<Drive> drives;
      for (std::size_t i = grp.first; i < grp.last; ++i) {
        const auto& p = timeline.pulses[i];
        drives.push_back({p.carrier, p.rabi, axis_phase(p.axis)});
      }
      model.set_drives(detail::drive_terms(drives, sys, opts.crosstalk));
      double fastest = 0.0;
      for (const auto& term : model.drives()) fastest = std::max(fastest, std::abs(term.detuning));
      const double duration = grp.end - grp.start;
      const double cap = fastest > 0.0 ? two_pi / fastest / opts.steps_per_period : duration / 50.0;
      advance(grp.end, std::min(cap, duration));
    }
    state.cursor = g + 1;
  }
  model.set_drives({});
  advance(stop, free_max_dt);
  flush_samples(stop);

  state.rho = detail::to_matrix(rho, dim);
  state.time = std::max(t, stop);
  state.diagnostics = inspect(state.rho, steps, opts.check_positivity);
  out.final_state = std::move(state);
  return out;
}

/// P0 = Tr(rho |0><0|_NV), clamped to [0, 1].
inline double nv_population(const EvolutionState& state, const SpinSystem& sys) {
  const auto mask = site_mask(sys.size(), sys.nv_index());
  double p = 0.0;
  for (Eigen::Index a = 0; a < state.rho.rows(); ++a) {
    if (!(static_cast<std::size_t>(a) & mask)) p += state.rho(a, a).real();
  }
  return std::clamp(p, 0.0, 1.0);
}

/// Closed-form hybrid outcome under ideal control.
inline double analytic_p0_hybrid(double phi1, double phi2, double g, double t, double eta_nv, double eta_db) {
  const double s1 = std::sin(phi1), c1 = std::cos(phi1);
  const double s2 = std::sin(phi2), c2 = std::cos(phi2);
  return 0.5 * (1.0 - s1 * s1 * s2 * s2 * std::cos(g * t) + c1 * c1 * std::sin(eta_nv) -
                s1 * s1 * c2 * c2 * std::sin(eta_db));
}

/// Closed-form outcome without the DB.
inline double analytic_p0_direct(double phi3, double g, double t, double eta_nv) {
  const double s3 = std::sin(phi3), c3 = std::cos(phi3);
  return 0.5 * (1.0 - s3 * s3 * std::cos(g * t) + c3 * c3 * std::sin(eta_nv));
}

struct TraceOptions {
  EvolveOptions evolve;
  unsigned jobs = 1;
};

/// Noiseless P0(t) over a grid of echo half-lengths. The part of the sequence before the
/// L1-L2 block does not depend on t and is integrated once.
inline SignalTrace simulate_trace(const SpinSystem& sys, const NoiseParams& noise, Protocol protocol,
                                  const Timings& timings, const PulseShape& shape, const std::vector<double>& t_grid,
                                  const TraceOptions& opts = {}) {
  if (t_grid.empty()) throw ConfigError("time grid is empty");
  const auto first = compile(protocol, timings, t_grid.front(), shape, sys);
  auto prefix_opts = opts.evolve;
  prefix_opts.sample_times.clear();
  prefix_opts.stop_time = first.central_start;
  prefix_opts.stop_group = first.prefix_groups;
  const auto prefix = evolve(thermal_initial_state(sys, noise), first, sys, noise, prefix_opts).final_state;

  std::vector<double> values(t_grid.size());
  auto run_point = [&](std::size_t i) {
    const auto tl = compile(protocol, timings, t_grid[i], shape, sys);
    auto o = opts.evolve;
    o.sample_times.clear();
    o.stop_time.reset();
    o.stop_group.reset();
    const auto fin = evolve(prefix, tl, sys, noise, o).final_state;
    if (o.check_positivity && fin.diagnostics.min_eigenvalue < -1e-8) {
      throw NumericalError("simulate_trace: density matrix lost positivity at t = " + std::to_string(t_grid[i]));
    }
    values[i] = nv_population(fin, sys);
  };
  parallel_for(t_grid.size(), opts.jobs, run_point);
  return make_noiseless_trace(t_grid, std::move(values));
}

/// Uniform grid of n points on [0, t_max].
inline std::vector<double> uniform_grid(double t_max, std::size_t n) {
  if (n < 2 || !(t_max > 0.0)) throw ConfigError("time grid needs t_max > 0 and at least 2 points");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = t_max * double(i) / double(n - 1);
  return out;
}

}  // namespace nvdb

#endif
