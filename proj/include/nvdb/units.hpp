#ifndef NVDB_UNITS_HPP
#define NVDB_UNITS_HPP

#include <numbers>

// Internal units: time in microseconds, frequencies as angular frequencies in
// rad/us (so 1 MHz of ordinary frequency is 2*pi rad/us), lengths in nanometers.

namespace nvdb {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

constexpr double mhz(double f) { return two_pi * f; }
constexpr double to_mhz(double w) { return w / two_pi; }

constexpr double deg_to_rad(double deg) { return deg * pi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / pi; }

namespace codata {
inline constexpr double mu0_over_4pi = 1.00000000055e-7;   // T^2 m^3 / J
inline constexpr double hbar = 1.054571817e-34;            // J s
inline constexpr double gamma_e = 1.76085963023e11;        // |gamma_e|, rad / (s T)
inline constexpr double k_boltzmann = 1.380649e-23;        // J / K
}  // namespace codata

/// Secular dipolar prefactor mu0 gamma_e^2 hbar / 4pi in rad/us * nm^3
/// (2*pi * 52.04 MHz nm^3).
inline constexpr double dipolar_prefactor =
    codata::mu0_over_4pi * codata::gamma_e * codata::gamma_e * codata::hbar  // rad/s m^3
    * 1e27                                                                     // m^3 -> nm^3
    * 1e-6;                                                                    // per s -> per us

/// Magic angle, where 1 - 3 cos^2(theta) vanishes.
inline constexpr double magic_angle_deg = rad_to_deg(0.9553166181245093);

}  // namespace nvdb

#endif
