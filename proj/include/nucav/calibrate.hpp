#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "nucav/domain.hpp"
#include "nucav/qomodel.hpp"
#include "nucav/spectrum.hpp"

namespace nucav::cal {

/// Configuration of the empty-cavity mode fit.
struct FitConfig {
    std::array<double, 2> theta_range{0.0, 5.0e-3};  ///< fit window, rad
    std::size_t n_modes = 5;
    std::size_t samples = 2001;  ///< oracle curve resolution over the window
    enum class Loss { abs, cmplx } loss = Loss::abs;
    std::string initializer = "minima";  ///< seed strategy (detected dips)
    int max_iter = 200;
    double tolerance = 1e-12;
    qo::Envelope envelope;  ///< fixed envelope of the top mirror material
    double omega = default_units().omega_gamma();

    void validate() const;
};

/// Outcome of the mode fit.
struct FitReport {
    qo::ModeParams params;
    double residual_rms = 0.0;
    std::vector<double> criticality;  ///< per-mode 2 kappa_R / kappa
    bool converged = false;
    bool multimodal = false;  ///< perturbed restarts disagreed on theta0
    int iterations = 0;
    std::vector<double> cost_history;
};

/// Nonlinear least squares of the empty-cavity model against an |R|(theta)
/// oracle curve: parameters {theta0, kappa, kappa_R} per mode plus complex r,
/// seeded from detected reflectivity dips.  Returns a report with the
/// convergence flag; parameters are never fabricated on failure paths that
/// can still be reported (non-convergence), while an undetectable mode
/// structure raises FitError.
FitReport fit_modes(const Spectrum& oracle_curve, const FitConfig& cfg);

/// Complex bare-cavity field amplitudes at the centers of the resonant
/// layers, one row per fitted mode (evaluated at theta0^[j] with the nuclear
/// resonance switched off, unit-intensity input).
Eigen::MatrixXcd extract_field_amps(const CavityStack& stack,
                                    const qo::ModeParams& mp);

struct ScaleFit {
    double scale = 0.0;         ///< fitted g~sqrt(N), gamma units
    double residual_rms = 0.0;  ///< RMS of |R_model|^2 - |R_oracle|^2 at optimum
};

/// One-dimensional least squares for the global coupling scale s = g~sqrt(N):
/// minimizes sum |  |R_model(Delta; s)|^2 - |R_oracle(Delta)|^2  |^2 on the
/// oracle's Delta grid at fixed theta.  Raises FitError when the objective
/// carries no nuclear information (zero couplings or resonance-free oracle).
ScaleFit fit_scale(const Spectrum& oracle_spectrum, const qo::ModeParams& mp,
                   const Eigen::MatrixXcd& field_amps, double theta);

/// Inverse calibration (outer loop): adjust the semiclassical resonant-index
/// strength chi0 (applied to every resonant layer) until the fitted scale
/// equals target_scale, so both engines describe the same layer strength.
/// Returns the calibrated chi0.
double calibrate_strength_for_scale(const CavityStack& stack,
                                    const qo::ModeParams& mp,
                                    const Eigen::MatrixXcd& field_amps,
                                    double target_scale, double theta);

/// Full calibration: oracle curve -> mode fit -> field amplitudes -> scale.
struct PipelineResult {
    qo::ModeParams mp;
    qo::CouplingSet cs;
    FitReport mode_fit;
    double scale_residual = 0.0;
    double theta_eval = 0.0;  ///< angle of the scale-fit spectrum
    std::string status;       ///< "ok" or "no resonant layers"
};

PipelineResult calibrate_pipeline(const CavityStack& stack, const FitConfig& cfg);

} // namespace nucav::cal
