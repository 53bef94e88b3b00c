#pragma once

#include <Eigen/Dense>
#include <complex>
#include <utility>
#include <vector>

#include "nucav/domain.hpp"
#include "nucav/spectrum.hpp"
#include "nucav/units.hpp"

namespace nucav::qo {

/// One guided cavity mode of the empty-cavity model.
struct Mode {
    double theta0 = 0.0;   ///< resonance angle, rad
    double kappa = 0.0;    ///< total line width, gamma units
    double kappa_r = 0.0;  ///< in-coupling rate, gamma units
};

/// Optional Fresnel total-reflection envelope multiplying the empty-cavity
/// reflection (top-mirror material constants).
struct Envelope {
    bool enabled = false;
    double delta = 0.0;
    double beta = 0.0;
};

/// Empty-cavity model: guided modes plus global surface amplitude r.
struct ModeParams {
    std::vector<Mode> modes;
    complexd r{-1.0, 0.0};  ///< complex surface reflection amplitude
    Envelope envelope;
    double omega = default_units().omega_gamma();  ///< photon energy, gamma units
    /// Heuristic choice: also multiply the nuclear response by the envelope
    /// (the empty-cavity part always carries it when enabled).  Default off.
    bool envelope_on_nuclear = false;

    std::size_t n_modes() const { return modes.size(); }
    void validate() const;
};

/// Collective couplings g^[j]{l} sqrt(N{l}) as a modes x layers matrix,
/// optionally decomposed into per-mode field amplitudes and one real scale.
struct CouplingSet {
    Eigen::MatrixXcd g;  ///< [J x L], collective coupling products, gamma units
    bool has_decomposition = false;
    Eigen::MatrixXcd field_amps;  ///< [J x L], dimensionless, if decomposed
    double scale = 0.0;           ///< global scale (gamma units), if decomposed

    std::size_t n_modes() const { return static_cast<std::size_t>(g.rows()); }
    std::size_t n_layers() const { return static_cast<std::size_t>(g.cols()); }
    void validate(std::size_t expected_modes) const;

    static CouplingSet from_matrix(Eigen::MatrixXcd couplings);
    static CouplingSet from_decomposition(Eigen::MatrixXcd field_amps, double scale);
};

/// Angle-controlled detuning of a mode: omega * (sqrt(cos^2 theta +
/// sin^2 theta0) - 1), evaluated in a cancellation-free form that returns
/// exactly 0 at theta == theta0.
double cavity_detuning(double theta, double theta0, double omega);

/// Fresnel reflection of a semi-infinite mirror with n = 1 - delta + i beta:
/// (sin t - sqrt(sin^2 t + n^2 - 1)) / (sin t + sqrt(sin^2 t + n^2 - 1)).
complexd envelope_fresnel(double theta, double delta, double beta);

/// Empty-cavity reflection R_C = Envelope * (r + sum_j 2 kappa_R / (kappa +
/// i Delta_C^[j])); Envelope = 1 when disabled.
complexd empty_cavity(const ModeParams& mp, double theta);

/// Collective nuclear response of a single resonant layer coupled to all
/// modes (returns the nuclear part R_N only, no empty-cavity term).
complexd single_layer_multimode_rn(const ModeParams& mp, const CouplingSet& cs,
                                   double theta, double delta);

/// Full reflection for any number of layers coupled to exactly one mode.
complexd multilayer_singlemode_r(const ModeParams& mp, const CouplingSet& cs,
                                 double theta, double delta);

/// Adiabatically eliminated two-layer coefficients at fixed theta.
struct EITCoefficients {
    complexd omega1, omega2;  ///< drives of layers 1, 2
    double dls1 = 0.0, dls2 = 0.0;  ///< collective Lamb shifts
    complexd d12;             ///< cross shift
    double gam1 = 0.0, gam2 = 0.0;  ///< superradiant widths
    complexd g12;             ///< cross damping
    complexd omega_c2;        ///< effective coupling (Omega_C)^2
    complexd r1, r2;          ///< output couplings of the layer coherences
    double gamma = 1.0;       ///< natural width, gamma units
};

/// Coefficients from mode parameters and a two-layer coupling set.
EITCoefficients eit_coefficients(const ModeParams& mp, const CouplingSet& cs,
                                 double theta);

/// Same, with explicit per-mode cavity detunings (scaling studies).
EITCoefficients eit_coefficients_at(const ModeParams& mp, const CouplingSet& cs,
                                    const std::vector<double>& delta_c);

/// Steady-state coherences (rho_1G, rho_2G) of the two layer ensembles.
std::pair<complexd, complexd> eit_coherences(const EITCoefficients& c, double delta);

/// Two-layer reflection: empty cavity plus both coherence contributions.
complexd eit_reflection_full(const ModeParams& mp, const CouplingSet& cs,
                             double theta, double delta);

/// Reduced two-layer form for weakly driven first layers: keeps the
/// (Delta + i gamma/2) numerator, drops the layer-1 dressing.
complexd eit_reflection_approx(const ModeParams& mp, const CouplingSet& cs,
                               double theta, double delta);

/// The (layers x transitions) steady-state linear system for the collective
/// coherences <E_mu{l}| rho |G>.  The drift at detuning Delta is
/// drift0 + i Delta I; the steady state solves (drift) x = -drive and the
/// observable is empty + nuclear_prefactor * (output . x).
struct LinearResponseSystem {
    struct StateLabel {
        std::size_t layer;  ///< 0-based resonant-layer index
        int mu;             ///< transition label
    };
    std::vector<StateLabel> states;
    Eigen::VectorXcd drive;
    Eigen::MatrixXcd drift0;
    Eigen::RowVectorXcd output;
    complexd empty;
    complexd nuclear_prefactor{1.0, 0.0};
};

LinearResponseSystem build_system(const ModeParams& mp, const CouplingSet& cs,
                                  const PolarizationConfig& pol,
                                  const std::vector<Transition>& transitions,
                                  double theta);

struct GeneralSolution {
    Eigen::VectorXcd coherences;
    complexd reflection;
};

/// Solve the prebuilt system at one detuning (dense partial-pivot LU with a
/// residual-based singularity check).
GeneralSolution solve_system(const LinearResponseSystem& sys, double delta);

/// Build & solve in one call.
GeneralSolution general_solver(const ModeParams& mp, const CouplingSet& cs,
                               const PolarizationConfig& pol,
                               const std::vector<Transition>& transitions,
                               double theta, double delta);

/// A complete quantum-optical model: empty-cavity parameters, couplings and
/// the active transition set (defaults: single effective unmagnetized line).
struct QoModel {
    ModeParams mp;
    CouplingSet cs;
    std::vector<Transition> transitions{effective_unmagnetized_transition()};
    PolarizationConfig pol = PolarizationConfig::effective_single();

    void validate() const;
};

/// Vectorized wrappers mirroring the semiclassical engine (tag "qo-general").
Spectrum curve(const QoModel& model, const std::vector<double>& theta_grid,
               double delta, const std::string& params_hash = "");
Spectrum spectrum(const QoModel& model, double theta,
                  const std::vector<double>& delta_grid,
                  const std::string& params_hash = "");
Spectrum grid(const QoModel& model, const std::vector<double>& theta_grid,
              const std::vector<double>& delta_grid,
              const std::string& params_hash = "");

} // namespace nucav::qo
