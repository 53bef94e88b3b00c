#pragma once

#include "nucav/errors.hpp"

namespace nucav {

/// Unit conventions used throughout:
///   - energies, detunings, widths and shifts are expressed in units of the
///     natural linewidth gamma of the nuclear transition (the canonical unit),
///   - angles are radians internally (the CLI accepts mrad),
///   - lengths are nanometres.
struct UnitSystem {
    double gamma_ev  = 4.7e-9;   ///< natural linewidth in eV (57Fe)
    double omega0_ev = 14.4e3;   ///< transition energy in eV (57Fe, 14.4 keV)

    /// hbar*c in eV*nm, CODATA.
    static constexpr double hbar_c_ev_nm = 197.3269804;

    /// Convert an energy in eV to gamma units.
    double ev_to_gamma(double x_ev) const {
        if (gamma_ev <= 0.0)
            throw InputError("UnitSystem: gamma_ev must be positive");
        return x_ev / gamma_ev;
    }

    /// Convert an energy in gamma units to eV.
    double gamma_to_ev(double x_gamma) const { return x_gamma * gamma_ev; }

    /// Photon energy omega ~ omega0 in gamma units (~3.06e12 for 57Fe).
    double omega_gamma() const { return ev_to_gamma(omega0_ev); }

    /// Vacuum wavenumber k0 = omega0 / (hbar c) in 1/nm.
    double k0_per_nm() const { return omega0_ev / hbar_c_ev_nm; }
};

/// Default 57Fe unit system shared by all engines.
inline const UnitSystem& default_units() {
    static const UnitSystem u{};
    return u;
}

} // namespace nucav
