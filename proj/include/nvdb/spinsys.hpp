#ifndef NVDB_SPINSYS_HPP
#define NVDB_SPINSYS_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "units.hpp"

namespace nvdb {

enum class SiteKind { NV, DB, Label };

inline std::string_view to_string(SiteKind k) {
  switch (k) {
    case SiteKind::NV: return "NV";
    case SiteKind::DB: return "DB";
    case SiteKind::Label: return "LABEL";
  }
  return "?";
}

/// One effective two-level electron spin.
struct SpinSite {
  std::string name;
  SiteKind kind = SiteKind::Label;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // nm
  double larmor = 0.0;                                 // rad/us, only used by the cross-talk drive model
  double t1 = 1.0;                                     // us
  double t2 = 1.0;                                     // us
};

/// Explicit ZZ amplitude for one pair, replacing the geometric value.
struct CouplingOverride {
  std::string a;
  std::string b;
  double value = 0.0;  // rad/us
};

/// Secular ZZ amplitude A = k_dd / d^3 * (1 - 3 cos^2 theta) in rad/us.
/// The sign of (1 - 3 cos^2 theta) is kept: aligned pairs couple negatively.
inline double dipolar_coupling(double distance_nm, double theta_deg) {
  if (!(distance_nm > 0.0) || !std::isfinite(distance_nm)) {
    throw std::domain_error("dipolar_coupling: distance must be positive");
  }
  const double c = std::cos(deg_to_rad(theta_deg));
  return dipolar_prefactor / (distance_nm * distance_nm * distance_nm) * (1.0 - 3.0 * c * c);
}

/// Distance and field angle (degrees) of the vector joining two positions.
struct PairGeometry {
  double distance = 0.0;
  double angle_deg = 0.0;
};

inline PairGeometry pair_geometry(const Eigen::Vector3d& p_i, const Eigen::Vector3d& p_j,
                                  const Eigen::Vector3d& field_direction) {
  const Eigen::Vector3d r = p_i - p_j;
  const double d = r.norm();
  if (!(d > 0.0)) {
    throw std::domain_error("coupling_from_positions: coincident positions");
  }
  const double c = std::clamp(r.dot(field_direction) / d, -1.0, 1.0);
  return {d, rad_to_deg(std::acos(c))};
}

inline double coupling_from_positions(const Eigen::Vector3d& p_i, const Eigen::Vector3d& p_j,
                                      const Eigen::Vector3d& field_direction = Eigen::Vector3d::UnitZ()) {
  const auto geo = pair_geometry(p_i, p_j, field_direction);
  return dipolar_coupling(geo.distance, geo.angle_deg);
}

/// A validated set of sites with the derived pairwise ZZ coupling table.
/// Immutable after construction.
class SpinSystem {
 public:
  SpinSystem(std::vector<SpinSite> sites, Eigen::Vector3d field_direction = Eigen::Vector3d::UnitZ(),
             const std::vector<CouplingOverride>& overrides = {})
      : sites_(std::move(sites)), field_(std::move(field_direction)) {
    validate();
    const auto n = sites_.size();
    couplings_ = Eigen::MatrixXd::Zero(n, n);
    overridden_ = Eigen::MatrixXi::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double a = coupling_from_positions(sites_[i].position, sites_[j].position, field_);
        couplings_(i, j) = couplings_(j, i) = a;
      }
    }
    for (const auto& o : overrides) {
      const auto i = index_of(o.a);
      const auto j = index_of(o.b);
      if (!i || !j) {
        throw ConfigError("coupling override names unknown site '" + (i ? o.b : o.a) + "'");
      }
      if (*i == *j) {
        throw ConfigError("coupling override pairs site '" + o.a + "' with itself");
      }
      couplings_(*i, *j) = couplings_(*j, *i) = o.value;
      overridden_(*i, *j) = overridden_(*j, *i) = 1;
    }
  }

  std::size_t size() const noexcept { return sites_.size(); }
  /// Hilbert-space dimension of the ordered tensor product.
  std::size_t dimension() const noexcept { return std::size_t{1} << sites_.size(); }

  const std::vector<SpinSite>& sites() const noexcept { return sites_; }
  const SpinSite& site(std::size_t i) const { return sites_.at(i); }
  const Eigen::Vector3d& field_direction() const noexcept { return field_; }

  double coupling(std::size_t i, std::size_t j) const { return couplings_(i, j); }
  const Eigen::MatrixXd& couplings() const noexcept { return couplings_; }
  bool is_overridden(std::size_t i, std::size_t j) const { return overridden_(i, j) != 0; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      if (sites_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t nv_index() const { return *find_kind(SiteKind::NV, 0); }
  std::optional<std::size_t> db_index() const { return find_kind(SiteKind::DB, 0); }
  /// The n-th label in site order (0 -> L1, 1 -> L2).
  std::optional<std::size_t> label_index(std::size_t n) const { return find_kind(SiteKind::Label, n); }

 private:
  std::optional<std::size_t> find_kind(SiteKind k, std::size_t nth) const {
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      if (sites_[i].kind == k && nth-- == 0) return i;
    }
    return std::nullopt;
  }

  void validate() const {
    if (sites_.empty()) throw ConfigError("spin system has no sites");
    if (sites_.size() > 10) throw ConfigError("spin system too large for dense simulation");
    const double norm = field_.norm();
    if (!(std::abs(norm - 1.0) < 1e-9)) throw ConfigError("field direction must be a unit vector");
    std::unordered_set<std::string> names;
    std::size_t nv = 0;
    for (const auto& s : sites_) {
      if (s.name.empty()) throw ConfigError("site with empty name");
      if (!names.insert(s.name).second) throw ConfigError("duplicate site name '" + s.name + "'");
      if (s.kind == SiteKind::NV) ++nv;
      if (!(s.t1 > 0.0) || !(s.t2 > 0.0)) {
        throw ConfigError("site '" + s.name + "': T1 and T2 must be positive");
      }
      if (s.t2 > 2.0 * s.t1 * (1.0 + 1e-12)) {
        throw ConfigError("site '" + s.name + "': T2 exceeds 2*T1");
      }
    }
    if (nv != 1) throw ConfigError("spin system needs exactly one NV site, found " + std::to_string(nv));
  }

  std::vector<SpinSite> sites_;
  Eigen::Vector3d field_;
  Eigen::MatrixXd couplings_;
  Eigen::MatrixXi overridden_;
};

/// Parsed system description as it comes out of a configuration file.
struct SystemDescription {
  std::vector<SpinSite> sites;
  Eigen::Vector3d field_direction = Eigen::Vector3d::UnitZ();
  std::vector<CouplingOverride> overrides;
};

/// Assemble a protocol-ready system: NV + two labels (direct) or NV + DB + two labels (hybrid).
inline SpinSystem build_system(const SystemDescription& desc) {
  if (desc.sites.size() != 3 && desc.sites.size() != 4) {
    throw ConfigError("system must list 3 (NV + 2 labels) or 4 (NV + DB + 2 labels) sites, got " +
                      std::to_string(desc.sites.size()));
  }
  std::size_t dbs = 0, labels = 0;
  for (const auto& s : desc.sites) {
    dbs += s.kind == SiteKind::DB;
    labels += s.kind == SiteKind::Label;
  }
  if (labels != 2) throw ConfigError("system must contain exactly two label sites");
  if (dbs != desc.sites.size() - 3) throw ConfigError("a 4-site system needs one DB site, a 3-site system none");
  return SpinSystem(desc.sites, desc.field_direction, desc.overrides);
}

// Site k is the k-th factor of the tensor product, so it owns bit (n-1-k) of a basis index.
// Bit value 0 is |0> (S_z = +1/2), bit value 1 is |1> (S_z = -1/2).
inline std::size_t site_mask(std::size_t n_sites, std::size_t k) { return std::size_t{1} << (n_sites - 1 - k); }

/// Diagonal of sum_{i<j} A_ij Z_i Z_j with Z = diag(+1/2, -1/2).
inline Eigen::VectorXd secular_energies(const SpinSystem& sys) {
  const auto n = sys.size();
  const auto d = sys.dimension();
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t a = 0; a < d; ++a) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double zi = (a & site_mask(n, i)) ? -0.5 : 0.5;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double zj = (a & site_mask(n, j)) ? -0.5 : 0.5;
        sum += sys.coupling(i, j) * zi * zj;
      }
    }
    e(static_cast<Eigen::Index>(a)) = sum;
  }
  return e;
}

inline Eigen::MatrixXcd secular_hamiltonian(const SpinSystem& sys) {
  return secular_energies(sys).cast<std::complex<double>>().asDiagonal();
}

}  // namespace nvdb

#endif
