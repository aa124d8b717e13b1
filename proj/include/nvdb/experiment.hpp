#ifndef NVDB_EXPERIMENT_HPP
#define NVDB_EXPERIMENT_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <gsl/gsl_version.h>
#include <nlohmann/json.hpp>

#include "analysis.hpp"
#include "config.hpp"
#include "dynamics.hpp"
#include "parallel.hpp"
#include "sequence.hpp"
#include "shots.hpp"
#include "spinsys.hpp"
#include "trace.hpp"

#ifndef NVDB_VERSION
#define NVDB_VERSION "unknown"
#endif

namespace nvdb {

using json = nlohmann::json;

inline SpinSystem system_of(const ExperimentConfig& c) { return build_system(c.system); }

inline NoiseParams noise_of(const ExperimentConfig& c, const SpinSystem& sys) {
  return make_noise(sys, c.noise.temperature_k, c.noise.m_override, c.noise.dissipation);
}

inline Timings timings_of(const ExperimentConfig& c, const SpinSystem& sys) {
  return c.sequence.timings ? *c.sequence.timings : auto_timings(sys, c.sequence.protocol);
}

inline PulseShape shape_of(const ExperimentConfig& c) { return {c.sequence.mode, mhz(c.sequence.rabi_mhz)}; }

inline std::vector<double> grid_of(const ExperimentConfig& c) {
  return uniform_grid(c.sequence.t_max_us, c.sequence.n_points);
}

inline PulseTimeline timeline_of(const ExperimentConfig& c, double t) {
  const auto sys = system_of(c);
  return compile(c.sequence.protocol, timings_of(c, sys), t, shape_of(c), sys);
}

/// Noiseless P0(t) over the configured grid.
inline SignalTrace clean_trace(const ExperimentConfig& c, unsigned jobs = 1) {
  const auto sys = system_of(c);
  TraceOptions opts;
  opts.jobs = jobs;
  opts.evolve.crosstalk = c.sequence.crosstalk;
  return simulate_trace(sys, noise_of(c, sys), c.sequence.protocol, timings_of(c, sys), shape_of(c), grid_of(c), opts);
}

/// The same experiment without the DB: the DB site, its overrides and its m override are
/// dropped and the protocol switches to direct. Explicit timings are not carried over.
inline ExperimentConfig direct_variant(const ExperimentConfig& c) {
  ExperimentConfig d = c;
  std::string db;
  d.system.sites.clear();
  for (const auto& s : c.system.sites) {
    if (s.kind == SiteKind::DB) db = s.name;
    else d.system.sites.push_back(s);
  }
  d.system.overrides.clear();
  for (const auto& o : c.system.overrides) {
    if (o.a != db && o.b != db) d.system.overrides.push_back(o);
  }
  d.noise.m_override.erase(db);
  d.sequence.protocol = Protocol::Direct;
  d.sequence.timings.reset();
  d.sweep.reset();
  return d;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Seed of the companion direct-protocol draw for a given hybrid seed.
inline std::uint64_t companion_seed(std::uint64_t seed) { return split_seed(seed, 0xd15ec7ULL); }

inline std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_signal_csv(std::ostream& os, const SignalTrace& tr) {
  os << "t_us,p0,p0_stderr\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    os << fmt9(tr.times[i]) << ',' << fmt9(tr.values[i]) << ',' << fmt9(tr.stderr_[i]) << '\n';
  }
}

inline void write_spectrum_csv(std::ostream& os, const Spectrum& s) {
  os << "f_MHz,power\n";
  for (std::size_t k = 0; k < s.size(); ++k) os << fmt9(s.freqs[k]) << ',' << fmt9(s.power[k]) << '\n';
}

inline json number_json(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

inline json fit_json(const MleFit& f) {
  json j;
  j["p1"] = number_json(f.p[0]);
  j["p2_per_us"] = number_json(f.p[1]);
  j["p3_MHz"] = number_json(f.p[2]);
  j["p4_rad"] = number_json(f.p[3]);
  j["sigmas"] = {number_json(f.sigmas[0]), number_json(f.sigmas[1]), number_json(f.sigmas[2]),
                 number_json(f.sigmas[3])};
  j["g_est_MHz"] = number_json(f.g());
  j["sigma_g_MHz"] = number_json(f.sigma_g());
  j["loglik"] = number_json(f.loglik);
  j["degenerate"] = f.degenerate;
  j["optimizer"] = {{"method", "nelder-mead (gsl nmsimplex2), multi-start"},
                    {"starts", f.starts},
                    {"iterations", f.iterations}};
  j["seed"] = f.seed;
  return j;
}

struct RunResult {
  std::string resolved;  // resolved config text
  SignalTrace clean;
  SignalTrace signal;  // sampled (or the clean trace when shots are infinite)
  Spectrum spectrum;
  std::vector<MleFit> fits;  // one per repeat
  std::string schedule;      // pulse schedule at t_max
  json metadata;
};

inline FitOptions fit_options(const ExperimentConfig& c) {
  FitOptions f;
  f.peak_starts = c.analysis.fit_starts;
  f.zero_pad = c.analysis.zero_pad;
  return f;
}

/// Shot sampling, spectrum and fits on top of an already simulated clean trace.
inline RunResult analyze(const ExperimentConfig& c, const SignalTrace& clean) {
  RunResult r;
  r.resolved = emit_config(c);
  r.clean = clean;
  const auto fo = fit_options(c);
  for (std::size_t k = 0; k < c.sampling.repeats; ++k) {
    const std::uint64_t seed = c.sampling.seed + k;
    SignalTrace s = c.sampling.shots ? sample_trace(clean, *c.sampling.shots, seed) : clean;
    s.seed = seed;
    r.fits.push_back(mle_fit(s, fo));
    if (k == 0) r.signal = std::move(s);
  }
  r.spectrum = power_spectrum(r.signal, c.analysis.zero_pad);
  const auto tl = timeline_of(c, c.sequence.t_max_us);
  r.schedule = schedule_text(tl);

  json& m = r.metadata;
  m["config_hash"] = "fnv1a64:" + hex64(fnv1a64(r.resolved));
  m["nvdb_version"] = NVDB_VERSION;
  m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
                    {"boost", BOOST_LIB_VERSION},
                    {"gsl", GSL_VERSION}};
  m["generator"] = c.sampling.shots ? generator_name : "none (noiseless)";
  m["seed"] = c.sampling.seed;
  m["repeats"] = c.sampling.repeats;
  m["shots"] = c.sampling.shots ? json(*c.sampling.shots) : json("inf");
  m["protocol"] = std::string(to_string(c.sequence.protocol));
  m["mode"] = std::string(to_string(c.sequence.mode));
  m["crosstalk"] = c.sequence.crosstalk;
  m["timings_us"] = {{"tau1", tl.timings.tau1}, {"tau2", tl.timings.tau2}, {"tau3", tl.timings.tau3}};
  m["echo_duration_us_at_t_max"] = tl.echo_duration();
  m["total_duration_us_at_t_max"] = tl.total_duration;
  m["pulse_overhead_us"] = tl.pulse_overhead();
  m["integrator"] = {{"method", "dopri5 (boost odeint), adaptive"}, {"rel_tol", EvolveOptions{}.rel_tol},
                     {"abs_tol", EvolveOptions{}.abs_tol}};
  m["n_points"] = clean.size();
  return r;
}

struct RunOptions {
  unsigned jobs = 1;
};

inline RunResult run(const ExperimentConfig& c, const RunOptions& opts = {}) {
  return analyze(c, clean_trace(c, opts.jobs));
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

inline void write_run(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream sig, spec, clean;
  write_signal_csv(sig, r.signal);
  write_signal_csv(clean, r.clean);
  write_spectrum_csv(spec, r.spectrum);
  write_text(dir / "signal.csv", sig.str());
  write_text(dir / "clean.csv", clean.str());
  write_text(dir / "spectrum.csv", spec.str());
  json fits = json::array();
  for (const auto& f : r.fits) fits.push_back(fit_json(f));
  write_text(dir / "fit.json", fits.dump(2) + "\n");
  write_text(dir / "metadata.json", r.metadata.dump(2) + "\n");
  write_text(dir / "schedule.txt", r.schedule);
  write_text(dir / "resolved.yaml", r.resolved);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SweepRecord {
  double value = 0.0;
  std::uint64_t seed = 0;
  double g_est = 0.0, sigma_g = 0.0, snr = 0.0, snr_direct = 0.0;
};

struct SweepPoint {
  double value = 0.0;
  std::map<std::string, double> outputs;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<SweepPoint> points;
  std::vector<SweepRecord> records;
};

/// Cache of clean traces keyed by resolved config text.
class TraceCache {
 public:
  const SignalTrace& get(const ExperimentConfig& c, unsigned jobs) {
    const auto key = emit_config(c);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, clean_trace(c, jobs)).first;
    return it->second;
  }

 private:
  std::map<std::string, SignalTrace> cache_;
};

inline SweepResult sweep(const ExperimentConfig& base, const SweepSpec& spec, const RunOptions& opts = {},
                         TraceCache* cache = nullptr) {
  if (spec.values.empty()) throw ConfigError("sweep needs at least one value", "sweep.values");
  for (const auto& o : spec.outputs) {
    if (!sweep_outputs().count(o)) throw ConfigError("unknown output '" + o + "'", "sweep.outputs");
  }
  TraceCache local;
  TraceCache& traces = cache ? *cache : local;
  auto wants = [&](const char* name) { return std::find(spec.outputs.begin(), spec.outputs.end(), name) != spec.outputs.end(); };
  const bool need_direct = wants("peak_ratio") || wants("snr_ratio");
  const bool need_fit = wants("g_est") || wants("sigma_g");
  const bool need_snr = wants("snr") || wants("snr_ratio");
  if (need_direct && base.sequence.protocol != Protocol::Hybrid) {
    throw ConfigError("peak_ratio and snr_ratio compare against the direct protocol; sweep a hybrid config",
                      "sweep.outputs");
  }
  if (need_snr && !base.sampling.shots) throw ConfigError("snr outputs need a finite shot count", "sampling.shots");

  // Resolve every point first so path errors surface before any simulation.
  std::vector<ExperimentConfig> configs;
  for (double v : spec.values) configs.push_back(with_parameter(base, spec.parameter, v));

  SweepResult out;
  out.spec = spec;
  const auto fo = fit_options(base);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    const SignalTrace clean = traces.get(c, opts.jobs);
    std::optional<SignalTrace> clean_direct;
    if (need_direct) clean_direct = traces.get(direct_variant(c), opts.jobs);
    SweepPoint pt;
    pt.value = spec.values[i];
    const std::size_t seeds = c.sampling.shots ? spec.seeds : 1;
    std::vector<SweepRecord> recs(seeds);
    parallel_for(seeds, opts.jobs, [&](std::size_t k) {
      SweepRecord& rec = recs[k];
      rec.value = pt.value;
      rec.seed = c.sampling.seed + k;
      const SignalTrace s = c.sampling.shots ? sample_trace(clean, *c.sampling.shots, rec.seed) : clean;
      if (need_fit) {
        const auto f = mle_fit(s, fo);
        rec.g_est = f.g();
        rec.sigma_g = f.sigma_g();
      }
      if (need_snr) {
        rec.snr = snr(clean, s, c.analysis.zero_pad);
        if (clean_direct) {
          rec.snr_direct = snr(*clean_direct, sample_trace(*clean_direct, *c.sampling.shots, companion_seed(rec.seed)),
                               c.analysis.zero_pad);
        }
      }
    });
    std::vector<double> g, sg, sn, snd;
    for (const auto& rec : recs) {
      g.push_back(rec.g_est);
      sg.push_back(rec.sigma_g);
      sn.push_back(rec.snr);
      snd.push_back(rec.snr_direct);
      out.records.push_back(rec);
    }
    if (wants("g_est")) pt.outputs["g_est"] = median(g);
    if (wants("sigma_g")) pt.outputs["sigma_g"] = median(sg);
    if (wants("snr")) pt.outputs["snr"] = median(sn);
    if (wants("snr_ratio")) pt.outputs["snr_ratio"] = median(sn) / median(snd);
    if (wants("peak_ratio")) {
      pt.outputs["peak_ratio"] = peak_ratio(power_spectrum(clean, c.analysis.zero_pad),
                                            power_spectrum(*clean_direct, c.analysis.zero_pad));
    }
    if (wants("amplitude")) pt.outputs["amplitude"] = std::abs(mle_fit(clean, fo).p[0]);
    out.points.push_back(std::move(pt));
  }
  return out;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "value";
  for (const auto& o : r.spec.outputs) os << ',' << o;
  os << '\n';
  for (const auto& p : r.points) {
    os << fmt9(p.value);
    for (const auto& o : r.spec.outputs) os << ',' << fmt9(p.outputs.at(o));
    os << '\n';
  }
}

inline void write_sweep_records_csv(std::ostream& os, const SweepResult& r) {
  os << "value,seed,g_est,sigma_g,snr,snr_direct\n";
  for (const auto& x : r.records) {
    os << fmt9(x.value) << ',' << x.seed << ',' << fmt9(x.g_est) << ',' << fmt9(x.sigma_g) << ',' << fmt9(x.snr)
       << ',' << fmt9(x.snr_direct) << '\n';
  }
}

struct SnrCurveRow {
  std::uint64_t shots = 0;
  double snr_hybrid = 0.0, snr_direct = 0.0, ratio = 0.0;
};

/// Median SNR over seeds for each shot count, hybrid and direct, and their ratio.
inline std::vector<SnrCurveRow> snr_curve(const ExperimentConfig& hybrid, const std::vector<std::uint64_t>& shots,
                                          std::size_t seeds, const RunOptions& opts = {}, TraceCache* cache = nullptr) {
  if (hybrid.sequence.protocol != Protocol::Hybrid) throw ConfigError("snr-curve needs a hybrid config", "sequence.protocol");
  if (shots.empty()) throw ConfigError("snr-curve needs at least one shot count", "shots");
  if (seeds < 1) throw ConfigError("snr-curve needs at least one seed", "seeds");
  TraceCache local;
  TraceCache& traces = cache ? *cache : local;
  const SignalTrace ch = traces.get(hybrid, opts.jobs);
  const SignalTrace cd = traces.get(direct_variant(hybrid), opts.jobs);
  std::vector<SnrCurveRow> rows;
  for (auto n : shots) {
    if (n < 1) throw ConfigError("shot counts must be positive", "shots");
    std::vector<double> h, d;
    for (std::size_t k = 0; k < seeds; ++k) {
      const auto seed = hybrid.sampling.seed + k;
      h.push_back(snr(ch, sample_trace(ch, n, seed), hybrid.analysis.zero_pad));
      d.push_back(snr(cd, sample_trace(cd, n, companion_seed(seed)), hybrid.analysis.zero_pad));
    }
    SnrCurveRow row{n, median(h), median(d), 0.0};
    row.ratio = row.snr_hybrid / row.snr_direct;
    rows.push_back(row);
  }
  return rows;
}

inline void write_snr_curve_csv(std::ostream& os, const std::vector<SnrCurveRow>& rows) {
  os << "shots,snr_hybrid,snr_direct,ratio\n";
  for (const auto& r : rows) {
    os << r.shots << ',' << fmt9(r.snr_hybrid) << ',' << fmt9(r.snr_direct) << ',' << fmt9(r.ratio) << '\n';
  }
}

struct CouplingRow {
  std::string a, b;
  double distance_nm = 0.0, theta_deg = 0.0, coupling_mhz = 0.0;
  bool overridden = false;
  bool magic_angle = false;
};

inline std::vector<CouplingRow> coupling_rows(const SpinSystem& sys) {
  std::vector<CouplingRow> rows;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    for (std::size_t j = i + 1; j < sys.size(); ++j) {
      const auto g = pair_geometry(sys.site(j).position, sys.site(i).position, sys.field_direction());
      CouplingRow r{sys.site(i).name, sys.site(j).name, g.distance, g.angle_deg, to_mhz(sys.coupling(i, j)),
                    sys.is_overridden(i, j), false};
      r.magic_angle = std::abs(sys.coupling(i, j)) < 1e-3 * dipolar_prefactor / std::pow(g.distance, 3);
      rows.push_back(r);
    }
  }
  return rows;
}

/// Comma-separated coupling table; warnings for magic-angle pairs go to `warn`.
inline void write_couplings(std::ostream& os, std::ostream& warn, const SpinSystem& sys) {
  os << "pair,distance_nm,theta_deg,A_MHz,source\n";
  for (const auto& r : coupling_rows(sys)) {
    os << r.a << '-' << r.b << ',' << fmt9(r.distance_nm) << ',' << fmt9(r.theta_deg) << ',' << fmt9(r.coupling_mhz)
       << ',' << (r.overridden ? "override" : "geometry") << '\n';
    if (r.magic_angle) {
      warn << "warning: " << r.a << '-' << r.b << " sits at the magic angle (theta = " << fmt9(r.theta_deg)
           << " deg); its coupling is ~0\n";
    }
  }
}

}  // namespace nvdb

#endif
