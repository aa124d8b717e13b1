#ifndef NVDB_TEST_SUPPORT_HPP
#define NVDB_TEST_SUPPORT_HPP

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <nvdb/spinsys.hpp>
#include <nvdb/units.hpp>

namespace nvdb::test {

inline SpinSite site(std::string name, SiteKind kind, Eigen::Vector3d pos, double larmor_mhz, double t1, double t2) {
  return SpinSite{std::move(name), kind, pos, mhz(larmor_mhz), t1, t2};
}

// Planar reconstruction of the fig2 reference distances and angles.
inline std::vector<SpinSite> fig2_sites() {
  return {site("NV", SiteKind::NV, {0, 0, 0}, 3290, 20, 5),
          site("DB", SiteKind::DB, {1.33566, 0, 5.43835}, 826, 29.4, 1),
          site("L1", SiteKind::Label, {2.66643, 0, 10.98086}, 1240, 4, 1),
          site("L2", SiteKind::Label, {1.86563, 0, 14.70038}, 1550, 4, 1)};
}

inline std::vector<SpinSite> fig4_sites(double r = 0.0) {
  return {site("NV", SiteKind::NV, {0, 0, 0}, 3290, 20, 5),
          site("DB", SiteKind::DB, {r, 0, 8}, 826, 29.4, 1),
          site("L1", SiteKind::Label, {0, 0, 13}, 1240, 4, 1),
          site("L2", SiteKind::Label, {0, 0, 16.5}, 1550, 4, 1)};
}

inline std::vector<SpinSite> without_db(std::vector<SpinSite> s) {
  s.erase(s.begin() + 1);
  return s;
}

/// Four-site system with every coupling set explicitly (MHz, ordinary frequency).
inline SpinSystem coupled_system(double nv_db, double nv_l1, double nv_l2, double db_l1, double db_l2, double l1_l2) {
  return SpinSystem(fig2_sites(), Eigen::Vector3d::UnitZ(),
                    {{"NV", "DB", mhz(nv_db)}, {"NV", "L1", mhz(nv_l1)}, {"NV", "L2", mhz(nv_l2)},
                     {"DB", "L1", mhz(db_l1)}, {"DB", "L2", mhz(db_l2)}, {"L1", "L2", mhz(l1_l2)}});
}

inline SpinSystem direct_system(double nv_l1, double nv_l2, double l1_l2) {
  return SpinSystem(without_db(fig2_sites()), Eigen::Vector3d::UnitZ(),
                    {{"NV", "L1", mhz(nv_l1)}, {"NV", "L2", mhz(nv_l2)}, {"L1", "L2", mhz(l1_l2)}});
}

// Dense Kronecker-product reference, independent of the library's bit-indexed kernels.
namespace dense {

using Mat = Eigen::MatrixXcd;

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Mat on_site(const Eigen::Matrix2cd& op, std::size_t k, std::size_t n) {
  Mat out = Mat::Identity(1, 1);
  for (std::size_t i = 0; i < n; ++i) out = kron(out, i == k ? Mat(op) : Mat(Mat::Identity(2, 2)));
  return out;
}

inline Eigen::Matrix2cd pauli(char which) {
  using C = std::complex<double>;
  Eigen::Matrix2cd m;
  if (which == 'x') m << 0, 1, 1, 0;
  if (which == 'y') m << 0, C(0, -1), C(0, 1), 0;
  if (which == 'z') m << 1, 0, 0, -1;
  return m;
}

/// exp(-i theta sigma_axis / 2) on site k.
inline Mat rotation(char axis, double theta, std::size_t k, std::size_t n) {
  const Mat s = on_site(pauli(axis), k, n);
  return (std::complex<double>(0, -theta / 2.0) * s).exp();
}

/// H = sum_{i<j} A_ij (s_z^i s_z^j)/4, built from Pauli products.
inline Mat zz_hamiltonian(const Eigen::MatrixXd& a) {
  const auto n = static_cast<std::size_t>(a.rows());
  Mat h = Mat::Zero(Eigen::Index(1) << n, Eigen::Index(1) << n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      h += 0.25 * a(i, j) * on_site(pauli('z'), i, n) * on_site(pauli('z'), j, n);
  return h;
}

inline Mat free_propagator(const Mat& h, double t) { return (std::complex<double>(0, -t) * h).exp(); }

}  // namespace dense

}  // namespace nvdb::test

#endif
