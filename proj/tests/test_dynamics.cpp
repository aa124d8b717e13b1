#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nvdb/dynamics.hpp>

#include "support.hpp"

using namespace nvdb;
namespace dn = nvdb::test::dense;

namespace {

double ideal_p0(const SpinSystem& sys, const PulseTimeline& tl, const std::vector<PhaseKick>& kicks = {}) {
  EvolveOptions o;
  o.kicks = kicks;
  const auto noise = noiseless(sys);
  return nv_population(evolve(thermal_initial_state(sys, noise), tl, sys, noise, o).final_state, sys);
}

double hybrid_p0(const SpinSystem& sys, double phi1, double phi2, double t, double eta_nv = 0, double eta_db = 0) {
  const Timings tm{phi1 / std::abs(sys.coupling(0, 1)), phi2 / std::abs(sys.coupling(1, 2)), 0};
  const auto tl = compile_hybrid(tm, t, {}, sys);
  return ideal_p0(sys, tl, central_kicks(tl, sys, eta_nv, eta_db));
}

double direct_p0(const SpinSystem& sys, double phi3, double t, double eta_nv = 0) {
  const Timings tm{0, 0, phi3 / std::abs(sys.coupling(0, 1))};
  const auto tl = compile_direct(tm, t, {}, sys);
  return ideal_p0(sys, tl, central_kicks(tl, sys, eta_nv));
}

const double kPhis[] = {pi / 6, pi / 4, pi / 2};
const double kGts[] = {0.0, pi / 3, pi};
const double kEtas[][2] = {{0.0, 0.0}, {0.7, -0.4}, {-1.2, 2.1}};

}  // namespace

TEST(Dynamics, HybridMatchesClosedFormOverGrid) {
  // NV-DB coupling set to 6g so NV-DB precession during the 2t window is a whole number of turns.
  const double g_mhz = 1.0;
  const auto sys = test::coupled_system(6 * g_mhz, 0, 0, 0.45, 0, g_mhz);
  const double g = mhz(g_mhz);
  for (double phi1 : kPhis)
    for (double phi2 : kPhis)
      for (double gt : kGts)
        for (const auto& eta : kEtas) {
          const double t = gt / g;
          // negative couplings give negative phases; the closed form is even in phi
          EXPECT_NEAR(hybrid_p0(sys, phi1, phi2, t, eta[0], eta[1]),
                      analytic_p0_hybrid(phi1, phi2, g, t, eta[0], eta[1]), 1e-6)
              << phi1 << ' ' << phi2 << ' ' << gt << ' ' << eta[0];
        }
}

TEST(Dynamics, HybridEtaTermsPickUpNvDbPrecession) {
  // For a generic NV-DB coupling the phase-noise terms are multiplied by cos(A_nv-db t).
  const auto sys = test::coupled_system(0.83, 0, 0, 0.45, 0, 1.3);
  const double g = mhz(1.3), a = mhz(0.83);
  for (double t : {0.11, 0.37, 0.9}) {
    const double phi1 = pi / 4, phi2 = pi / 6, en = 0.8, ed = -0.5;
    const double s1 = std::sin(phi1), c1 = std::cos(phi1), s2 = std::sin(phi2), c2 = std::cos(phi2);
    const double expect = 0.5 * (1 - s1 * s1 * s2 * s2 * std::cos(g * t) +
                                 std::cos(a * t) * (c1 * c1 * std::sin(en) - s1 * s1 * c2 * c2 * std::sin(ed)));
    EXPECT_NEAR(hybrid_p0(sys, phi1, phi2, t, en, ed), expect, 1e-6);
  }
}

TEST(Dynamics, DirectMatchesClosedFormOverGrid) {
  const auto sys = test::direct_system(-0.066, -0.032, -1.734);
  const double g = std::abs(sys.coupling(1, 2));
  for (double phi3 : kPhis)
    for (double gt : kGts)
      for (const auto& eta : kEtas) {
        const double t = gt / g;
        EXPECT_NEAR(direct_p0(sys, phi3, t, eta[0]), analytic_p0_direct(phi3, g, t, eta[0]), 1e-6);
      }
}

TEST(Dynamics, HybridFullCouplingTableGivesCosineSignal) {
  const SpinSystem sys(test::fig2_sites());
  const double g = std::abs(sys.coupling(2, 3));
  const auto tm = auto_timings(sys, Protocol::Hybrid);
  for (double t : {0.0, 0.3, 0.77, 1.5, 2.9}) {
    const auto tl = compile_hybrid(tm, t, {}, sys);
    EXPECT_NEAR(ideal_p0(sys, tl), 0.5 * (1 - std::cos(g * t)), 1e-6) << t;
  }
}

TEST(Dynamics, PhaseNoiseCancelsAtQuarterTurnTransfers) {
  const SpinSystem sys(test::fig2_sites());
  const double t = 0.41;
  const double ref = hybrid_p0(sys, pi / 2, pi / 2, t);
  for (const auto& eta : kEtas) EXPECT_NEAR(hybrid_p0(sys, pi / 2, pi / 2, t, eta[0], eta[1]), ref, 1e-8);
}

TEST(Dynamics, NonutileCouplingsAreRefocused) {
  const double t = 0.53;
  const double ref = hybrid_p0(test::coupled_system(-0.55, 0, 0, -0.51, 0, -1.734), pi / 2, pi / 2, t);
  for (double v : {-0.5, -0.2, 0.3, 0.5}) {
    EXPECT_NEAR(hybrid_p0(test::coupled_system(-0.55, v, 0, -0.51, 0, -1.734), pi / 2, pi / 2, t), ref, 1e-8);
    EXPECT_NEAR(hybrid_p0(test::coupled_system(-0.55, 0, v, -0.51, 0, -1.734), pi / 2, pi / 2, t), ref, 1e-8);
    EXPECT_NEAR(hybrid_p0(test::coupled_system(-0.55, 0, 0, -0.51, v, -1.734), pi / 2, pi / 2, t), ref, 1e-8);
  }
}

TEST(Dynamics, IdealEvolutionMatchesDenseUnitaryReference) {
  // Random couplings and timings; reference propagates the dense state with matrix exponentials.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 3; ++trial) {
    const auto sys = test::coupled_system(u(rng), u(rng), u(rng), u(rng), u(rng), u(rng));
    const Timings tm{0.13 + 0.1 * trial, 0.29, 0};
    const double t = 0.21 * (trial + 1);
    const auto tl = compile_hybrid(tm, t, {}, sys);
    const auto noise = noiseless(sys);
    dn::Mat rho = thermal_initial_state(sys, noise).rho;
    Eigen::MatrixXd a(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a(i, j) = sys.coupling(i, j);
    const dn::Mat h = dn::zz_hamiltonian(a);
    double now = 0;
    for (const auto& p : tl.pulses) {
      const dn::Mat uf = dn::free_propagator(h, p.start - now);
      rho = uf * rho * uf.adjoint();
      now = p.start;
      const dn::Mat r = dn::rotation(p.axis == Axis::X ? 'x' : 'y', rotation_angle(p.angle), p.site, 4);
      rho = r * rho * r.adjoint();
    }
    double ref = 0;
    for (int k = 0; k < 8; ++k) ref += rho(k, k).real();  // NV is the leading tensor factor
    EXPECT_NEAR(ideal_p0(sys, tl), ref, 1e-8);
  }
}

TEST(Dynamics, FastRhsMatchesDenseLindblad) {
  const SpinSystem sys(test::fig2_sites());
  auto noise = make_noise(sys, 300.0, {{"DB", 0.3}, {"L1", 0.0}});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  dn::Mat m(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) m(i, j) = {nd(rng), nd(rng)};
  dn::Mat rho = m * m.adjoint();
  rho /= rho.trace();

  DriveSegment seg{{{mhz(826), mhz(10), 0.0}, {mhz(1240), mhz(10), pi / 2}}, 0, 1};
  const double time = 0.0137;
  const dn::Mat dense = lindblad_rhs(rho, secular_hamiltonian(sys) + crosstalk_hamiltonian(time, seg, sys), noise);

  auto model = detail::make_liouvillian(sys, noise);
  model.set_drives(detail::drive_terms(seg.drives, sys, true));
  auto v = detail::to_vec(rho);
  detail::cvec dv(v.size());
  model(v, dv, time);
  EXPECT_LT((detail::to_matrix(dv, 16) - dense).norm(), 1e-9 * dense.norm());
}

TEST(Dynamics, ThermalFactorAndInitialState) {
  const SpinSystem sys(test::fig2_sites());
  const auto noise = make_noise(sys, 300.0);
  // m = exp(-h f / k T) for f = 0.826 GHz
  const double m_ref = std::exp(-6.62607015e-34 * 0.826e9 / (1.380649e-23 * 300.0));
  EXPECT_NEAR(noise.sites[1].m, m_ref, 1e-9);
  const auto st = thermal_initial_state(sys, noise);
  EXPECT_NEAR(std::abs(st.rho.trace()), 1.0, 1e-12);
  EXPECT_NEAR(nv_population(st, sys), 1.0, 1e-12);
  double p_db0 = 0;
  for (int k = 0; k < 16; ++k)
    if (!(k & 4)) p_db0 += st.rho(k, k).real();
  EXPECT_NEAR(p_db0, 0.5005, 1e-3);
  EXPECT_NEAR(1 - p_db0, 0.4995, 1e-3);

  const auto cold = thermal_initial_state(sys, make_noise(sys, 300.0, {{"DB", 0.0}, {"L1", 0.0}, {"L2", 0.0}}));
  EXPECT_NEAR(cold.rho(0, 0).real(), 1.0, 1e-12);
}

namespace {

// One bare spin with no couplings, probed by free evolution over [0, t].
SpinSystem lone_spin(double t1, double t2) {
  return SpinSystem({test::site("NV", SiteKind::NV, {0, 0, 0}, 3290, t1, t2)});
}

EvolutionState evolve_free(const SpinSystem& sys, const NoiseParams& noise, dn::Mat rho0, double t) {
  EvolutionState s;
  s.rho = std::move(rho0);
  PulseTimeline empty;
  EvolveOptions o;
  o.stop_time = t;
  return evolve(s, empty, sys, noise, o).final_state;
}

}  // namespace

TEST(Dynamics, DephasingHalvesCoherenceAtLn2) {
  const auto sys = lone_spin(1e9, 1.0);
  NoiseParams noise = make_noise(sys, 300.0, {{"NV", 1.0}});
  noise.sites[0].t1 = std::numeric_limits<double>::infinity();
  dn::Mat plus = dn::Mat::Constant(2, 2, 0.5);
  const auto s = evolve_free(sys, noise, plus, std::log(2.0));
  EXPECT_NEAR(std::abs(s.rho(0, 1)) / 0.5, 0.5, 1e-4);
  EXPECT_NEAR(s.rho(0, 0).real(), 0.5, 1e-12);
}

TEST(Dynamics, RelaxationIsExponentialInT1) {
  const auto sys = lone_spin(3.0, 6.0);
  const auto noise = make_noise(sys, 300.0, {{"NV", 0.0}});
  dn::Mat excited = dn::Mat::Zero(2, 2);
  excited(1, 1) = 1.0;
  for (double t : {0.5, 2.0, 5.0}) {
    const auto s = evolve_free(sys, noise, excited, t);
    EXPECT_NEAR(s.rho(1, 1).real(), std::exp(-t / 3.0), 1e-8);
  }
}

TEST(Dynamics, MaximallyMixedIsFixedPointAtInfiniteTemperature) {
  const SpinSystem sys(test::fig2_sites());
  auto noise = make_noise(sys, 300.0, {{"NV", 1.0}, {"DB", 1.0}, {"L1", 1.0}, {"L2", 1.0}});
  const dn::Mat mixed = dn::Mat::Identity(16, 16) / 16.0;
  EXPECT_LT(lindblad_rhs(mixed, dn::Mat::Zero(16, 16), noise).norm(), 1e-14);
}

TEST(Dynamics, DiagonalStateIsInvariantUnderDephasing) {
  const auto sys = lone_spin(1e9, 0.7);
  NoiseParams noise = noiseless(sys);
  noise.dissipation = true;
  noise.sites[0].t2 = 0.7;
  dn::Mat d = dn::Mat::Zero(2, 2);
  d(0, 0) = 0.3;
  d(1, 1) = 0.7;
  EXPECT_LT((evolve_free(sys, noise, d, 2.0).rho - d).norm(), 1e-12);
}

TEST(Dynamics, ResonantPulseSwapsPopulations) {
  const auto sys = lone_spin(1e9, 1e9);
  const auto noise = noiseless(sys, 0.0);
  PulseTimeline tl;
  tl.mode = PulseMode::Finite;
  Pulse p;
  p.target = "NV";
  p.carrier = sys.site(0).larmor;
  p.rabi = mhz(10);
  p.duration = pi / p.rabi;
  tl.pulses = {p};
  tl.total_duration = p.duration;
  EXPECT_NEAR(p.duration, 0.05, 1e-12);
  const auto s = evolve(thermal_initial_state(sys, noise), tl, sys, noise).final_state;
  EXPECT_NEAR(s.rho(1, 1).real(), 1.0, 1e-4);
}

TEST(Dynamics, CrosstalkDetuning) {
  const SpinSystem sys(test::fig2_sites());
  const auto terms = detail::drive_terms({{sys.site(1).larmor, mhz(10), 0.0}}, sys, true);
  ASSERT_EQ(terms.size(), 4u);
  EXPECT_NEAR(std::abs(terms[2].detuning), mhz(414), 1e-9);
  EXPECT_EQ(terms[1].detuning, 0.0);
  EXPECT_EQ(detail::drive_terms({{sys.site(1).larmor, mhz(10), 0.0}}, sys, false).size(), 1u);
}

TEST(Dynamics, OffResonantSpectatorStaysPut) {
  // Rabi bound: excitation <= Omega^2 / (Omega^2 + delta^2) for delta = 40 Omega.
  const double omega = mhz(10), delta = 40 * omega;
  const SpinSystem sys({test::site("NV", SiteKind::NV, {0, 0, 0}, 3290, 1e9, 1e9),
                        test::site("DB", SiteKind::DB, {0, 0, 1e6}, 3290 - to_mhz(delta), 1e9, 1e9)});
  const auto noise = noiseless(sys, 0.0);
  PulseTimeline tl;
  tl.mode = PulseMode::Finite;
  Pulse p;
  p.target = "NV";
  p.carrier = sys.site(0).larmor;
  p.rabi = omega;
  p.duration = pi / omega;
  tl.pulses = {p};
  tl.total_duration = p.duration;
  const auto s = evolve(thermal_initial_state(sys, noise), tl, sys, noise).final_state;
  double db_excited = 0;
  for (int k = 0; k < 4; ++k)
    if (k & 1) db_excited += s.rho(k, k).real();
  EXPECT_LE(db_excited, omega * omega / (omega * omega + delta * delta));
  EXPECT_GE(1 - db_excited, 0.999);
}

TEST(Dynamics, FinitePulsesConvergeToIdealWithoutCrosstalk) {
  const SpinSystem sys(test::fig2_sites());
  const auto noise = make_noise(sys, 300.0);
  const auto tm = auto_timings(sys, Protocol::Hybrid);
  const double t = 0.8;
  EvolveOptions o;
  o.crosstalk = false;
  const auto ideal = compile_hybrid(tm, t, {}, sys);
  const auto fast = compile_hybrid(tm, t, {PulseMode::Finite, mhz(100)}, sys);  // pi pulse 5 ns
  const auto init = thermal_initial_state(sys, noise);
  const double p_ideal = nv_population(evolve(init, ideal, sys, noise, o).final_state, sys);
  const double p_fast = nv_population(evolve(init, fast, sys, noise, o).final_state, sys);
  EXPECT_NEAR(p_fast, p_ideal, 1e-3);
}

TEST(Dynamics, InvariantsAlongFiniteTrajectory) {
  const SpinSystem sys(test::fig2_sites());
  const auto noise = make_noise(sys, 300.0);
  const auto tl = compile_hybrid(auto_timings(sys, Protocol::Hybrid), 0.6, {PulseMode::Finite, mhz(10)}, sys);
  EvolveOptions o;
  for (int i = 0; i <= 20; ++i) o.sample_times.push_back(tl.total_duration * i / 20.0);
  const auto traj = evolve(thermal_initial_state(sys, noise), tl, sys, noise, o);
  ASSERT_EQ(traj.samples.size(), 21u);
  for (const auto& s : traj.samples) {
    EXPECT_LT(s.diagnostics.trace_drift, 1e-9);
    EXPECT_GE(s.diagnostics.min_eigenvalue, -1e-8);
    EXPECT_LT((s.rho - s.rho.adjoint()).norm(), 1e-12);
  }
}

TEST(Dynamics, PurityConservedWithoutDissipation) {
  const SpinSystem sys(test::fig2_sites());
  const auto noise = noiseless(sys, 0.0);  // pure initial state
  const auto tl = compile_hybrid(auto_timings(sys, Protocol::Hybrid), 0.6, {PulseMode::Finite, mhz(10)}, sys);
  const auto s = evolve(thermal_initial_state(sys, noise), tl, sys, noise).final_state;
  EXPECT_NEAR((s.rho * s.rho).trace().real(), 1.0, 1e-9);
}

TEST(Dynamics, TightenedToleranceChangesLittle) {
  const SpinSystem sys(test::fig2_sites());
  const auto noise = make_noise(sys, 300.0);
  const auto tl = compile_hybrid(auto_timings(sys, Protocol::Hybrid), 1.1, {PulseMode::Finite, mhz(10)}, sys);
  const auto init = thermal_initial_state(sys, noise);
  EvolveOptions coarse, fine;
  fine.steps_per_period = 40;
  fine.rel_tol = coarse.rel_tol / 32;  // fifth-order method: roughly halves the step
  fine.abs_tol = coarse.abs_tol / 32;
  const double a = nv_population(evolve(init, tl, sys, noise, coarse).final_state, sys);
  const double b = nv_population(evolve(init, tl, sys, noise, fine).final_state, sys);
  EXPECT_LT(std::abs(a - b), 1e-7);
}

TEST(Dynamics, PrefixSharingMatchesFullRuns) {
  const SpinSystem sys(test::fig2_sites());
  const auto noise = make_noise(sys, 300.0);
  const auto tm = auto_timings(sys, Protocol::Hybrid);
  const PulseShape shape{PulseMode::Finite, mhz(10)};
  const std::vector<double> grid{0.0, 0.4, 1.3};
  const auto trace = simulate_trace(sys, noise, Protocol::Hybrid, tm, shape, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto tl = compile_hybrid(tm, grid[i], shape, sys);
    const double full = nv_population(evolve(thermal_initial_state(sys, noise), tl, sys, noise).final_state, sys);
    EXPECT_NEAR(trace.values[i], full, 1e-9);
  }
}

TEST(Dynamics, SamplesOnInstantaneousPulsesAreTakenAfter) {
  const auto sys = lone_spin(1e9, 1e9);
  const auto noise = noiseless(sys, 0.0);
  PulseTimeline tl;
  Pulse p;
  p.target = "NV";
  p.start = 0.5;
  tl.pulses = {p};
  tl.total_duration = 0.5;
  EvolveOptions o;
  o.sample_times = {0.25, 0.5};
  o.stop_time = 1.0;
  const auto traj = evolve(thermal_initial_state(sys, noise), tl, sys, noise, o);
  ASSERT_EQ(traj.samples.size(), 2u);
  EXPECT_NEAR(nv_population(traj.samples[0], sys), 1.0, 1e-12);
  EXPECT_NEAR(nv_population(traj.samples[1], sys), 0.0, 1e-12);
}

TEST(Dynamics, PopulationEdgeCases) {
  const SpinSystem sys(test::fig2_sites());
  EvolutionState s;
  s.rho = dn::Mat::Identity(16, 16) / 16.0;
  EXPECT_NEAR(nv_population(s, sys), 0.5, 1e-12);
  const auto tl = compile_hybrid(auto_timings(sys, Protocol::Hybrid), pi / std::abs(sys.coupling(2, 3)), {}, sys);
  EXPECT_NEAR(ideal_p0(sys, tl), 1.0, 1e-6);
}

TEST(Dynamics, ClosedFormSpecialCases) {
  const double g = mhz(1.734);
  for (double t : {0.0, 0.2, 1.1}) {
    EXPECT_NEAR(analytic_p0_hybrid(pi / 2, pi / 2, g, t, 0.3, -0.9), 0.5 * (1 - std::cos(g * t)), 1e-15);
    EXPECT_NEAR(analytic_p0_hybrid(0, 0.4, g, t, 0.3, -0.9), 0.5 * (1 + std::sin(0.3)), 1e-15);
    EXPECT_NEAR(analytic_p0_direct(pi / 2, g, t, 0.5), 0.5 * (1 - std::cos(g * t)), 1e-15);
    EXPECT_NEAR(analytic_p0_direct(0, g, t, 0.5), 0.5 * (1 + std::sin(0.5)), 1e-15);
    EXPECT_NEAR(analytic_p0_direct(pi / 4, g, t, 0), 0.5 * (1 - 0.5 * std::cos(g * t)), 1e-15);
  }
  // Averaging over eta ~ U(-pi, pi) removes the noise terms (midpoint rule is exact for sin).
  const int n = 64;
  double mean = 0;
  for (int i = 0; i < n; ++i) {
    const double eta = -pi + 2 * pi * (i + 0.5) / n;
    mean += analytic_p0_hybrid(0.6, 0.9, g, 0.4, eta, -eta) / n;
  }
  EXPECT_NEAR(mean, 0.5 * (1 - std::pow(std::sin(0.6) * std::sin(0.9), 2) * std::cos(g * 0.4)), 1e-12);
}

TEST(Dynamics, RejectsBadInputs) {
  const SpinSystem sys(test::fig2_sites());
  EXPECT_THROW(make_noise(sys, 300, {{"XX", 0.5}}), ConfigError);
  EXPECT_THROW(make_noise(sys, 300, {{"DB", 1.5}}), ConfigError);
  EXPECT_THROW(lindblad_rhs(dn::Mat::Zero(4, 4), dn::Mat::Zero(16, 16), noiseless(sys)), std::invalid_argument);
}

TEST(Dynamics, TraceDriftBeyondBudgetIsNumericalError) {
  const SpinSystem sys(test::fig2_sites());
  const auto noise = make_noise(sys, 300.0);
  const auto tl = compile_hybrid(auto_timings(sys, Protocol::Hybrid), 0.3, {PulseMode::Finite, mhz(10)}, sys);
  EvolveOptions o;
  o.max_trace_drift = -1.0;
  EXPECT_THROW(evolve(thermal_initial_state(sys, noise), tl, sys, noise, o), NumericalError);
}
