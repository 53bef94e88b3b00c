#pragma once

#include <complex>
#include <vector>

#include "nucav/domain.hpp"
#include "nucav/spectrum.hpp"

namespace nucav::parratt {

/// Plane-wave conventions of this engine:
///   - the probe arrives from the vacuum side at grazing angle theta, with
///     unit amplitude at the surface; depth z is measured downward from the
///     top interface (z = 0), so the incident wave is exp(+i kz z),
///   - per-layer normal wavevector kz = k0 * sqrt(n^2 - cos^2 theta) with the
///     branch Im(kz) >= 0 (solutions decay into absorbing media),
///   - refractive index n = 1 - delta + i beta plus, for resonant layers, an
///     additive complex Lorentzian (see layer_index).
struct WaveContext {
    double k0 = 0.0;     ///< vacuum wavenumber, 1/nm
    double theta = 0.0;  ///< grazing angle, rad
    std::vector<complexd> kz;  ///< per-layer normal wavevector, 1/nm
};

/// Up/down amplitude pair of one layer, stored at numerically stable
/// reference depths: the down wave at the layer top, the up wave at the
/// layer bottom (both exponentials then decay inside the layer).
struct LayerAmplitudes {
    complexd kz;             ///< 1/nm
    double top_nm = 0.0;     ///< depth of the layer's top boundary
    double bottom_nm = 0.0;  ///< depth of the layer's bottom boundary
    complexd down;           ///< down-travelling amplitude at top_nm
    complexd up;             ///< up-travelling amplitude at bottom_nm
};

/// In-cavity field distribution at fixed (theta, delta), unit-intensity input.
struct FieldMap {
    std::vector<double> depth_nm;      ///< sample grid, measured from the surface
    std::vector<complexd> amplitude;   ///< total field at each sample
    std::vector<LayerAmplitudes> layers;
    complexd reflectivity;             ///< R of the same evaluation

    /// Exact total field at an arbitrary depth (nm, negative = vacuum side).
    complexd field_at(double depth) const;
    double intensity_at(double depth) const { return std::norm(field_at(depth)); }
};

/// Complex refractive index of a layer at nuclear detuning delta (gamma
/// units).  Resonant layers add, per active hyperfine transition, a term
///    -chi0 * w_mu * c_mu^2 * (gamma/2) / (delta - deltaE_mu + i gamma/2)
/// with weights normalized so the peak additive index on exact resonance of
/// an unmagnetized layer is +i chi0 (extra absorption).  The magnetized table
/// carries equal polarization weight per transition (w_mu = 1 / sum c^2),
/// which preserves the 3:2:1 sextet amplitude ratios.
complexd layer_index(const Layer& layer, double delta);

/// Per-layer kz for a stack at (theta, delta).
WaveContext wave_context(const CavityStack& stack, double theta, double delta);

/// Complex reflection amplitude of the stack by the standard recursive
/// interface scheme: Fresnel coefficients r = (kz_a - kz_b)/(kz_a + kz_b)
/// combined bottom-up with round-trip phases exp(2 i kz d).
complexd reflectivity(const CavityStack& stack, double theta, double delta);

/// Low-level recursion on explicit per-layer indices / thicknesses (first and
/// last entries are the semi-infinite media; their thicknesses are ignored).
/// Exposed for convention and equivalence tests.
complexd reflectivity_from_indices(double k0, double theta,
                                   const std::vector<complexd>& indices,
                                   const std::vector<double>& thickness_nm);

/// Up/down amplitudes per layer and the total field sampled every
/// depth_step_nm across the stack (with a small vacuum/substrate margin),
/// normalized to unit-intensity input.
FieldMap field_map(const CavityStack& stack, double theta, double delta,
                   double depth_step_nm = 0.1);

/// |R|(theta) sweep at fixed delta.
Spectrum curve(const CavityStack& stack, const std::vector<double>& theta_grid,
               double delta, const std::string& params_hash = "");

/// R(delta) sweep at fixed theta.
Spectrum spectrum(const CavityStack& stack, double theta,
                  const std::vector<double>& delta_grid,
                  const std::string& params_hash = "");

/// Full (theta, delta) map.
Spectrum grid(const CavityStack& stack, const std::vector<double>& theta_grid,
              const std::vector<double>& delta_grid,
              const std::string& params_hash = "");

} // namespace nucav::parratt
