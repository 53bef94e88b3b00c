#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nucav/errors.hpp"
#include "nucav/units.hpp"

namespace nucav {

using complexd = std::complex<double>;

/// Nuclear resonance content of a layer.  `strength` is the dimensionless
/// peak amplitude chi0 of the additive resonant refractive-index term; it is
/// a calibration parameter, not derived from material constants.
struct NuclearSpec {
    double strength = 0.0;   ///< chi0 >= 0, additive index amplitude on exact resonance
    double linewidth = 1.0;  ///< natural linewidth in internal units (fixed 1)
    double delta_g = 0.0;    ///< ground-state hyperfine splitting, gamma units
    double delta_e = 0.0;    ///< excited-state hyperfine splitting, gamma units
    bool magnetized = false;

    void validate() const;
};

/// One material layer.  Refractive index n = 1 - delta + i*beta; the first
/// and last layers of a stack are semi-infinite (vacuum above, substrate
/// below) and carry no thickness.
struct Layer {
    std::string material;
    double thickness_nm = 0.0;
    bool semi_infinite = false;
    double delta = 0.0;  ///< index decrement
    double beta = 0.0;   ///< absorption index, >= 0
    std::optional<NuclearSpec> nuclear;

    void validate() const;
};

/// Ordered stack of layers, top (vacuum side) to bottom (substrate).
struct CavityStack {
    std::string name;
    std::vector<Layer> layers;

    void validate() const;

    /// Indices into `layers` of the resonant (nuclear) layers, in depth order;
    /// position in this list defines the layer label l = 1..L.
    std::vector<std::size_t> resonant_layer_ids() const;

    /// Copy with all nuclear strengths set to zero (bare electronic cavity).
    CavityStack without_nuclear() const;
};

/// Polarization channel of a hyperfine transition.
enum class Polarization { sigma_minus, pi, sigma_plus };

/// One M1 hyperfine transition of the 3/2 <-> 1/2 multiplet.
struct Transition {
    int mu = 0;           ///< 1..6 for the magnetized table, 0 for the effective line
    double delta_E = 0.0; ///< transition energy offset in gamma units
    double cg = 0.0;      ///< Clebsch-Gordan amplitude c_mu
    Polarization polarization = Polarization::pi;
};

/// The six M1 transitions for ground splitting delta_g and excited splitting
/// delta_e (gamma units): energies
///   -dg/2-3de/2, -dg/2-de/2, -dg/2+de/2, +dg/2-de/2, +dg/2+de/2, +dg/2+3de/2
/// with amplitudes 1, sqrt(2/3), sqrt(1/3), sqrt(1/3), sqrt(2/3), 1 and
/// polarizations sigma-, pi, sigma+, sigma-, pi, sigma+.
std::array<Transition, 6> transition_table(double delta_g, double delta_e);

/// Unmagnetized reduction: a single effective line at delta_E = 0.  Its
/// amplitude 2/sqrt(3) carries the summed weight of the two degenerate pi
/// transitions, so the one-state-per-layer system reproduces the unmagnetized
/// closed forms exactly (coupling terms enter as c^2/2 = 2/3).
Transition effective_unmagnetized_transition();

/// Polarization overlap factors for a set of active transitions.  These are
/// configuration inputs (never computed from a magnetization geometry):
///   in_overlap[t]   = conj(d_mu) . a_in
///   out_overlap[t]  = conj(a_out) . d_mu
///   pair_overlap    = conj(d_mu) . d_nu
struct PolarizationConfig {
    std::vector<complexd> in_overlap;
    std::vector<complexd> out_overlap;
    std::vector<std::vector<complexd>> pair_overlap;

    std::size_t size() const { return in_overlap.size(); }
    void validate() const;

    /// For the single effective unmagnetized line: all factors 1.
    static PolarizationConfig effective_single();

    /// For the full six-line table with a linearly polarized probe along the
    /// pi dipoles: unit overlap on the two pi transitions (mu = 2, 5), zero on
    /// the sigma channels; pair overlaps 1 within a polarization channel.
    static PolarizationConfig unmagnetized();

    /// For the full six-line table with every transition driven and detected
    /// at unit overlap (idealized probe seeing all channels).
    static PolarizationConfig all_unit();
};

} // namespace nucav
