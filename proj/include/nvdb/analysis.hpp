#ifndef NVDB_ANALYSIS_HPP
#define NVDB_ANALYSIS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <unsupported/Eigen/FFT>

#include "errors.hpp"
#include "trace.hpp"
#include "units.hpp"

namespace nvdb {

struct Spectrum {
  std::vector<double> freqs;  // MHz, 0 .. Nyquist
  std::vector<double> power;
  double rescale = 1.0;  // power = |DFT|^2 * rescale
  std::size_t zero_pad = 1;

  std::size_t size() const noexcept { return freqs.size(); }
  std::size_t peak_index() const {
    return static_cast<std::size_t>(std::max_element(power.begin(), power.end()) - power.begin());
  }
  double peak_frequency() const { return freqs.at(peak_index()); }
  double bin_width() const { return freqs.size() > 1 ? freqs[1] - freqs[0] : 0.0; }
};

/// Grid spacing of a uniform time axis; throws if the axis is not uniform.
inline double uniform_step(const std::vector<double>& times) {
  if (times.size() < 2) throw ConfigError("trace needs at least two samples");
  const double dt = (times.back() - times.front()) / double(times.size() - 1);
  if (!(dt > 0.0)) throw ConfigError("time grid must be increasing");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (std::abs(times[i] - times[i - 1] - dt) > 1e-9 * std::max(1.0, dt)) {
      throw ConfigError("power spectrum needs a uniform time grid");
    }
  }
  return dt;
}

/// One-sided power spectrum of the mean-subtracted signal, zero-padded to
/// zero_pad * n samples. power = |X_k|^2 / n.
inline Spectrum power_spectrum(const std::vector<double>& times, const std::vector<double>& values,
                               std::size_t zero_pad = 8) {
  if (times.size() != values.size()) throw ConfigError("trace has mismatched lengths");
  if (zero_pad < 1) throw ConfigError("zero-padding factor must be at least 1");
  const double dt = uniform_step(times);
  const std::size_t n = values.size();
  std::size_t m = n * zero_pad;
  if (m % 2) ++m;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(n);
  std::vector<double> x(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) x[i] = values[i] - mean;
  std::vector<std::complex<double>> spec;
  Eigen::FFT<double> fft;
  fft.fwd(spec, x);
  Spectrum out;
  out.zero_pad = zero_pad;
  out.rescale = 1.0 / double(n);
  const std::size_t half = m / 2;
  out.freqs.resize(half + 1);
  out.power.resize(half + 1);
  for (std::size_t k = 0; k <= half; ++k) {
    out.freqs[k] = double(k) / (double(m) * dt);
    out.power[k] = std::norm(spec[k]) * out.rescale;
  }
  return out;
}

inline Spectrum power_spectrum(const SignalTrace& trace, std::size_t zero_pad = 8) {
  return power_spectrum(trace.times, trace.values, zero_pad);
}

inline void check_same_grid(const Spectrum& a, const Spectrum& b) {
  if (a.size() != b.size()) throw ConfigError("spectra are on different frequency grids");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a.freqs[i] - b.freqs[i]) > 1e-9 * std::max(1.0, std::abs(a.freqs[i]))) {
      throw ConfigError("spectra are on different frequency grids");
    }
  }
}

/// Peak of the clean spectrum over the standard deviation of S(sampled) - S(clean).
/// The clean peak bin and its two neighbours are left out of the noise estimate.
/// Returns +inf when the two spectra coincide.
inline double snr(const SignalTrace& clean, const SignalTrace& sampled, std::size_t zero_pad = 8) {
  if (clean.times.size() != sampled.times.size()) throw ConfigError("traces must share the time grid");
  for (std::size_t i = 0; i < clean.times.size(); ++i) {
    if (std::abs(clean.times[i] - sampled.times[i]) > 1e-12) throw ConfigError("traces must share the time grid");
  }
  const auto sc = power_spectrum(clean, zero_pad);
  const auto ss = power_spectrum(sampled, zero_pad);
  const std::size_t peak = sc.peak_index();
  std::vector<double> diff;
  for (std::size_t k = 0; k < sc.size(); ++k) {
    if (k + 1 >= peak && k <= peak + 1) continue;
    diff.push_back(ss.power[k] - sc.power[k]);
  }
  if (diff.size() < 2) throw ConfigError("spectrum too short to estimate the noise floor");
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / double(diff.size());
  double var = 0.0;
  for (double d : diff) var += (d - mean) * (d - mean);
  const double sd = std::sqrt(var / double(diff.size() - 1));
  if (sd == 0.0) return std::numeric_limits<double>::infinity();
  return sc.power[peak] / sd;
}

/// Ratio of the Fourier-magnitude maxima |X_a|max / |X_b|max, i.e. the square root of the power-peak ratio.
inline double peak_ratio(const Spectrum& a, const Spectrum& b) {
  check_same_grid(a, b);
  const double mb = *std::max_element(b.power.begin(), b.power.end());
  if (!(mb > 0.0)) throw std::domain_error("peak_ratio: reference spectrum has zero peak");
  return std::sqrt(*std::max_element(a.power.begin(), a.power.end()) / mb);
}

using FitParams = std::array<double, 4>;  // p1 amplitude, p2 decay (1/us), p3 frequency (MHz), p4 phase

/// y(t) = 1/2 + p1 e^{p2 t} cos(2 pi p3 t + p4)
inline double damped_cosine(const FitParams& p, double t) {
  return 0.5 + p[0] * std::exp(p[1] * t) * std::cos(two_pi * p[2] * t + p[3]);
}

/// Per-point standard deviations used as likelihood weights. Noiseless traces get a
/// uniform small value.
inline std::vector<double> fit_weights(const SignalTrace& trace) {
  constexpr double noiseless_sigma = 1e-6;
  if (trace.noiseless()) return std::vector<double>(trace.size(), noiseless_sigma);
  if (trace.stderr_.size() != trace.size()) throw ConfigError("trace has mismatched lengths");
  for (double s : trace.stderr_) {
    if (!(s > 0.0)) throw ConfigError("maximum-likelihood fit needs stderr > 0 at every point");
  }
  return trace.stderr_;
}

/// Gaussian log-likelihood of the trace under the damped-cosine model.
inline double log_likelihood(const FitParams& p, const std::vector<double>& t, const std::vector<double>& y,
                             const std::vector<double>& sigma) {
  constexpr double half_log_two_pi = 0.91893853320467274178;
  double ll = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = (y[i] - damped_cosine(p, t[i])) / sigma[i];
    ll -= 0.5 * r * r + std::log(sigma[i]) + half_log_two_pi;
  }
  return ll;
}

struct MleFit {
  FitParams p{};
  FitParams sigmas{};
  double loglik = -std::numeric_limits<double>::infinity();
  bool degenerate = false;  // some curvature was non-negative; its sigma is +inf
  std::size_t starts = 0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;

  double g() const { return std::abs(p[2]); }
  double sigma_g() const { return sigmas[2]; }
};

/// sigma_j = (-d^2 l / dp_j^2)^{-1/2} by central differences with step 1e-4 max(|p_j|, 1).
inline FitParams curvature_sigmas(const FitParams& p, const std::vector<double>& t, const std::vector<double>& y,
                                  const std::vector<double>& sigma, bool* degenerate = nullptr) {
  FitParams out{};
  const double l0 = log_likelihood(p, t, y, sigma);
  bool deg = false;
  for (std::size_t j = 0; j < 4; ++j) {
    const double h = 1e-4 * std::max(std::abs(p[j]), 1.0);
    FitParams up = p, dn = p;
    up[j] += h;
    dn[j] -= h;
    const double curv = (log_likelihood(up, t, y, sigma) - 2.0 * l0 + log_likelihood(dn, t, y, sigma)) / (h * h);
    if (curv < 0.0 && std::isfinite(curv)) {
      out[j] = 1.0 / std::sqrt(-curv);
    } else {
      out[j] = std::numeric_limits<double>::infinity();
      deg = true;
    }
  }
  if (degenerate) *degenerate = deg;
  return out;
}

inline FitParams fit_uncertainty(const MleFit& fit, const SignalTrace& trace) {
  return curvature_sigmas(fit.p, trace.times, trace.values, fit_weights(trace));
}

namespace detail {

struct FitData {
  const std::vector<double>* t;
  const std::vector<double>* y;
  const std::vector<double>* sigma;
};

inline double neg_loglik(const gsl_vector* v, void* params) {
  const auto* d = static_cast<const FitData*>(params);
  const FitParams p{gsl_vector_get(v, 0), gsl_vector_get(v, 1), gsl_vector_get(v, 2), gsl_vector_get(v, 3)};
  const double f = -log_likelihood(p, *d->t, *d->y, *d->sigma);
  return std::isfinite(f) ? f : std::numeric_limits<double>::max();
}

/// Amplitude and phase for fixed decay and frequency by weighted linear least squares.
inline FitParams linear_start(double decay, double freq, const FitData& d) {
  double saa = 0, sab = 0, sbb = 0, say = 0, sby = 0;
  for (std::size_t i = 0; i < d.t->size(); ++i) {
    const double t = (*d.t)[i];
    const double w = 1.0 / ((*d.sigma)[i] * (*d.sigma)[i]);
    const double e = std::exp(decay * t);
    const double a = e * std::cos(two_pi * freq * t), b = e * std::sin(two_pi * freq * t);
    const double r = (*d.y)[i] - 0.5;
    saa += w * a * a;
    sab += w * a * b;
    sbb += w * b * b;
    say += w * a * r;
    sby += w * b * r;
  }
  const double det = saa * sbb - sab * sab;
  double ca = 0.0, cb = 0.0;
  if (std::abs(det) > 1e-300) {
    ca = (say * sbb - sby * sab) / det;
    cb = (sby * saa - say * sab) / det;
  } else if (saa > 0.0) {
    ca = say / saa;
  }
  // ca cos(x) + cb sin(x) = p1 cos(x + p4) with p1 cos p4 = ca, p1 sin p4 = -cb
  return {std::hypot(ca, cb), decay, freq, std::atan2(-cb, ca)};
}

/// Same curve with p3 >= 0 and p4 in (-pi/2, pi/2].
inline FitParams canonical(FitParams p) {
  if (p[2] < 0.0) {
    p[2] = -p[2];
    p[3] = -p[3];
  }
  p[3] = std::remainder(p[3], two_pi);  // (-pi, pi]
  if (p[3] > pi / 2.0) {
    p[3] -= pi;
    p[0] = -p[0];
  } else if (p[3] <= -pi / 2.0) {
    p[3] += pi;
    p[0] = -p[0];
  }
  return p;
}

struct SimplexResult {
  FitParams p;
  double value;
  std::size_t iterations;
};

inline SimplexResult nelder_mead(FitParams start, const FitParams& step, FitData& data, std::size_t max_iter = 4000) {
  gsl_set_error_handler_off();
  gsl_multimin_function fn{&neg_loglik, 4, &data};
  gsl_vector* x = gsl_vector_alloc(4);
  gsl_vector* ss = gsl_vector_alloc(4);
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 4);
  for (std::size_t j = 0; j < 4; ++j) gsl_vector_set(x, j, start[j]);
  SimplexResult best{start, neg_loglik(x, &data), 0};
  std::size_t total = 0;
  double prev = std::numeric_limits<double>::infinity();
  // Restart the simplex from the incumbent until a full pass no longer improves it.
  for (int round = 0; round < 50; ++round) {
    for (std::size_t j = 0; j < 4; ++j) {
      gsl_vector_set(x, j, best.p[j]);
      gsl_vector_set(ss, j, step[j]);
    }
    gsl_multimin_fminimizer_set(s, &fn, x, ss);
    for (std::size_t it = 0; it < max_iter; ++it) {
      ++total;
      if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-12) == GSL_SUCCESS) break;
    }
    const double f = s->fval;
    if (f < best.value) {
      for (std::size_t j = 0; j < 4; ++j) best.p[j] = gsl_vector_get(s->x, j);
      best.value = f;
    }
    if (std::isfinite(prev) && prev - best.value < 1e-10 * (1.0 + std::abs(best.value))) break;
    prev = best.value;
  }
  best.iterations = total;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(ss);
  gsl_vector_free(x);
  return best;
}

/// Local maxima of the spectrum, strongest first, skipping the DC bin.
inline std::vector<std::size_t> spectral_peaks(const Spectrum& s, std::size_t count) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 1; k < s.size(); ++k) {
    const bool left = s.power[k] >= s.power[k - 1];
    const bool right = k + 1 >= s.size() || s.power[k] > s.power[k + 1];
    if (left && right) idx.push_back(k);
  }
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s.power[a] > s.power[b]; });
  if (idx.size() > count) idx.resize(count);
  return idx;
}

}  // namespace detail

struct FitOptions {
  std::size_t peak_starts = 3;
  std::vector<double> decay_starts{-0.3, -1.5};
  std::size_t zero_pad = 8;
  std::vector<FitParams> extra_starts;
};

/// Maximum-likelihood fit of the damped-cosine model; multi-start from the strongest
/// spectral peaks.
inline MleFit mle_fit(const SignalTrace& trace, const FitOptions& opts = {}) {
  if (trace.values.size() != trace.times.size()) throw ConfigError("trace has mismatched lengths");
  const auto sigma = fit_weights(trace);
  detail::FitData data{&trace.times, &trace.values, &sigma};
  const auto spec = power_spectrum(trace, opts.zero_pad);
  std::vector<FitParams> starts = opts.extra_starts;
  for (auto k : detail::spectral_peaks(spec, opts.peak_starts)) {
    for (double decay : opts.decay_starts) starts.push_back(detail::linear_start(decay, spec.freqs[k], data));
  }
  if (starts.empty()) starts.push_back(detail::linear_start(opts.decay_starts.empty() ? 0.0 : opts.decay_starts[0],
                                                            spec.bin_width(), data));
  const double df = std::max(spec.bin_width() * double(spec.zero_pad), 1e-3);
  MleFit best;
  std::size_t iterations = 0;
  for (const auto& st : starts) {
    const FitParams step{0.1 * std::abs(st[0]) + 1e-3, 0.2, 0.3 * df, 0.3};
    const auto r = detail::nelder_mead(st, step, data);
    iterations += r.iterations;
    const double ll = -r.value;
    if (std::isfinite(ll) && ll > best.loglik) {
      best.p = detail::canonical(r.p);
      best.loglik = ll;
    }
  }
  if (!std::isfinite(best.loglik)) {
    throw NumericalError("mle_fit: no start converged (" + std::to_string(starts.size()) + " starts, " +
                         std::to_string(iterations) + " iterations)");
  }
  best.starts = starts.size();
  best.iterations = iterations;
  best.seed = trace.seed;
  best.loglik = log_likelihood(best.p, trace.times, trace.values, sigma);
  best.sigmas = curvature_sigmas(best.p, trace.times, trace.values, sigma, &best.degenerate);
  return best;
}

}  // namespace nvdb

#endif
