#ifndef NVDB_DETAIL_LIOUVILLIAN_HPP
#define NVDB_DETAIL_LIOUVILLIAN_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

namespace nvdb::detail {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;

/// One rotating-frame drive term seen by one site: (rabi/2) e^{i(detuning t + phase)} sigma^- + h.c.
struct SiteDriveTerm {
  std::size_t site;
  double half_rabi;
  double detuning;
  double phase;
};

/// Per-site dissipation rates.
struct SiteRates {
  double dephasing = 0.0;  // 1/T2, decay rate of the site coherence
  double pump_up = 0.0;    // jump rate into |0>
  double pump_down = 0.0;  // jump rate into |1>
};

/// Structured right-hand side of the master equation for a diagonal (ZZ) Hamiltonian,
/// single-site drives and single-site dissipators. The density matrix is stored
/// row-major, rho[a * dim + b]. Every term acts through bit flips on the basis
/// index, so one evaluation costs O(n_sites * dim^2).
class Liouvillian {
 public:
  Liouvillian(std::size_t n_sites, const std::vector<double>& energies, const std::vector<SiteRates>& rates)
      : n_(n_sites), dim_(std::size_t{1} << n_sites), rates_(rates), diag_(dim_ * dim_) {
    for (std::size_t a = 0; a < dim_; ++a) {
      for (std::size_t b = 0; b < dim_; ++b) {
        cplx k{0.0, -(energies[a] - energies[b])};
        for (std::size_t s = 0; s < n_; ++s) {
          const std::size_t m = mask(s);
          const bool a1 = a & m, b1 = b & m;
          const auto& r = rates_[s];
          if (a1 != b1) k -= r.dephasing;
          // anticommutator parts of the two relaxation channels
          k -= 0.5 * r.pump_up * (double(a1) + double(b1));
          k -= 0.5 * r.pump_down * (double(!a1) + double(!b1));
        }
        diag_[a * dim_ + b] = k;
      }
    }
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t mask(std::size_t site) const noexcept { return std::size_t{1} << (n_ - 1 - site); }

  void set_drives(std::vector<SiteDriveTerm> drives) { drives_ = std::move(drives); }
  const std::vector<SiteDriveTerm>& drives() const noexcept { return drives_; }

  void operator()(const cvec& rho, cvec& drho, double t) const {
    const std::size_t d = dim_;
    for (std::size_t i = 0; i < d * d; ++i) drho[i] = diag_[i] * rho[i];

    for (std::size_t s = 0; s < n_; ++s) {
      const auto& r = rates_[s];
      if (r.pump_up == 0.0 && r.pump_down == 0.0) continue;
      const std::size_t m = mask(s);
      for (std::size_t a = 0; a < d; ++a) {
        const bool a1 = a & m;
        const double rate = a1 ? r.pump_down : r.pump_up;
        const std::size_t af = a ^ m;
        for (std::size_t b = 0; b < d; ++b) {
          if (bool(b & m) != a1) continue;
          drho[a * d + b] += rate * rho[af * d + (b ^ m)];
        }
      }
    }

    if (drives_.empty()) return;
    // Accumulate the coefficient c_s multiplying sigma^-_s = |1><0|_s for each site.
    coeff_.assign(n_, cplx{0.0, 0.0});
    for (const auto& dr : drives_) {
      coeff_[dr.site] += dr.half_rabi * std::polar(1.0, dr.detuning * t + dr.phase);
    }
    const cplx minus_i{0.0, -1.0};
    for (std::size_t s = 0; s < n_; ++s) {
      const cplx c = coeff_[s];
      if (c == cplx{0.0, 0.0}) continue;
      const cplx cc = std::conj(c);
      const std::size_t m = mask(s);
      for (std::size_t a = 0; a < d; ++a) {
        const cplx h_left = (a & m) ? c : cc;  // <a| H |a^m>
        const cplx* row_flip = &rho[(a ^ m) * d];
        const cplx* row = &rho[a * d];
        cplx* out = &drho[a * d];
        for (std::size_t b = 0; b < d; ++b) {
          const cplx h_right = (b & m) ? cc : c;  // <b^m| H |b>
          out[b] += minus_i * (h_left * row_flip[b] - row[b ^ m] * h_right);
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::size_t dim_;
  std::vector<SiteRates> rates_;
  cvec diag_;
  std::vector<SiteDriveTerm> drives_;
  mutable cvec coeff_;
};

/// rho -> U rho U^dagger for a 2x2 unitary acting on the site owning `mask`.
inline void apply_site_unitary(cvec& rho, std::size_t dim, std::size_t mask, const cplx u[2][2]) {
  for (std::size_t a0 = 0; a0 < dim; ++a0) {
    if (a0 & mask) continue;
    const std::size_t a1 = a0 | mask;
    for (std::size_t b = 0; b < dim; ++b) {
      const cplx r0 = rho[a0 * dim + b], r1 = rho[a1 * dim + b];
      rho[a0 * dim + b] = u[0][0] * r0 + u[0][1] * r1;
      rho[a1 * dim + b] = u[1][0] * r0 + u[1][1] * r1;
    }
  }
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b0 = 0; b0 < dim; ++b0) {
      if (b0 & mask) continue;
      const std::size_t b1 = b0 | mask;
      const cplx r0 = rho[a * dim + b0], r1 = rho[a * dim + b1];
      rho[a * dim + b0] = r0 * std::conj(u[0][0]) + r1 * std::conj(u[0][1]);
      rho[a * dim + b1] = r0 * std::conj(u[1][0]) + r1 * std::conj(u[1][1]);
    }
  }
}

}  // namespace nvdb::detail

#endif
