#include "nucav/qomodel.hpp"

#include <cmath>

#include "nucav/parallel.hpp"

namespace nucav::qo {

namespace {

constexpr complexd kI(0.0, 1.0);
constexpr double kTwoThirds = 2.0 / 3.0;
const double kSqrtTwoThirds = std::sqrt(2.0 / 3.0);

std::vector<double> mode_detunings(const ModeParams& mp, double theta) {
    std::vector<double> dc(mp.modes.size());
    for (std::size_t j = 0; j < mp.modes.size(); ++j)
        dc[j] = cavity_detuning(theta, mp.modes[j].theta0, mp.omega);
    return dc;
}

complexd empty_cavity_at(const ModeParams& mp, double theta,
                         const std::vector<double>& delta_c) {
    complexd sum = mp.r;
    for (std::size_t j = 0; j < mp.modes.size(); ++j) {
        const Mode& m = mp.modes[j];
        sum += 2.0 * m.kappa_r / complexd(m.kappa, delta_c[j]);
    }
    if (mp.envelope.enabled)
        sum *= envelope_fresnel(theta, mp.envelope.delta, mp.envelope.beta);
    return sum;
}

complexd nuclear_prefactor(const ModeParams& mp, double theta) {
    if (mp.envelope.enabled && mp.envelope_on_nuclear)
        return envelope_fresnel(theta, mp.envelope.delta, mp.envelope.beta);
    return complexd(1.0);
}

} // namespace

void ModeParams::validate() const {
    if (modes.empty())
        throw InputError("ModeParams: at least one mode required");
    for (std::size_t j = 0; j < modes.size(); ++j) {
        if (!(modes[j].kappa > 0.0))
            throw InputError("ModeParams: kappa must be positive");
        if (!(modes[j].kappa_r > 0.0))
            throw InputError("ModeParams: kappa_r must be positive");
        if (j > 0 && !(modes[j].theta0 > modes[j - 1].theta0))
            throw InputError("ModeParams: theta0 must be strictly increasing");
    }
    const double rmag = std::abs(r);
    if (rmag < 0.8 || rmag > 1.2)
        throw InputError("ModeParams: |r| outside the sanity band [0.8, 1.2]");
    if (!(omega > 0.0))
        throw InputError("ModeParams: omega must be positive");
}

void CouplingSet::validate(std::size_t expected_modes) const {
    if (static_cast<std::size_t>(g.rows()) != expected_modes)
        throw InputError("CouplingSet: coupling rows must match the mode count");
    if (g.cols() < 1)
        throw InputError("CouplingSet: at least one layer required");
    if (has_decomposition) {
        if (field_amps.rows() != g.rows() || field_amps.cols() != g.cols())
            throw InputError("CouplingSet: field-amplitude shape mismatch");
        if (!(scale >= 0.0) || !std::isfinite(scale))
            throw InputError("CouplingSet: scale must be finite and >= 0");
        const double ref = g.cwiseAbs().maxCoeff() + 1.0;
        if (((field_amps * scale) - g).cwiseAbs().maxCoeff() > 1e-10 * ref)
            throw InputError("CouplingSet: decomposition does not reproduce the couplings");
    }
}

CouplingSet CouplingSet::from_matrix(Eigen::MatrixXcd couplings) {
    CouplingSet cs;
    cs.g = std::move(couplings);
    return cs;
}

CouplingSet CouplingSet::from_decomposition(Eigen::MatrixXcd field_amps, double scale) {
    CouplingSet cs;
    cs.g = field_amps * scale;
    cs.field_amps = std::move(field_amps);
    cs.scale = scale;
    cs.has_decomposition = true;
    return cs;
}

double cavity_detuning(double theta, double theta0, double omega) {
    if (!(theta >= 0.0) || !(theta < 1.5707963267948966))
        throw InputError("cavity_detuning: theta must lie in [0, pi/2)");
    // omega * (sqrt(1 + x) - 1) with x = sin^2(theta0) - sin^2(theta),
    // rewritten as omega * x / (1 + sqrt(1 + x)) to avoid the cancellation
    // of nearly equal square roots (x ~ 1e-5 at mrad angles).
    const double s0 = std::sin(theta0);
    const double s = std::sin(theta);
    const double x = (s0 - s) * (s0 + s);
    return omega * x / (1.0 + std::sqrt(1.0 + x));
}

complexd envelope_fresnel(double theta, double delta, double beta) {
    if (!(theta > 0.0))
        throw InputError("envelope_fresnel: theta must be positive");
    const double s = std::sin(theta);
    const complexd n(1.0 - delta, beta);
    // n^2 - 1 written as (n - 1)(n + 1) keeps full precision at small delta.
    complexd w = std::sqrt(s * s + (n - 1.0) * (n + 1.0));
    if (w.imag() < 0.0)
        w = -w;
    return (s - w) / (s + w);
}

complexd empty_cavity(const ModeParams& mp, double theta) {
    return empty_cavity_at(mp, theta, mode_detunings(mp, theta));
}

complexd single_layer_multimode_rn(const ModeParams& mp, const CouplingSet& cs,
                                   double theta, double delta) {
    cs.validate(mp.n_modes());
    if (cs.n_layers() != 1)
        throw InputError("single_layer_multimode_rn: exactly one layer expected");
    if (mp.modes.empty())
        throw InputError("single_layer_multimode_rn: empty mode list");
    const std::vector<double> dc = mode_detunings(mp, theta);
    complexd p(0.0), pbar(0.0), s(0.0);
    for (std::size_t j = 0; j < mp.modes.size(); ++j) {
        const Mode& m = mp.modes[j];
        const complexd inv = 1.0 / complexd(m.kappa, dc[j]);
        const double root = std::sqrt(2.0 * m.kappa_r);
        const complexd gj = cs.g(static_cast<Eigen::Index>(j), 0);
        p += root * gj * inv;
        pbar += root * std::conj(gj) * inv;
        // i zeta_S - delta_LS == i / (kappa + i Delta_C)
        s += std::norm(gj) * kI * inv;
    }
    const complexd denom = complexd(delta, 0.5) + kTwoThirds * s;
    return -kI * kTwoThirds * p * pbar / denom;
}

complexd multilayer_singlemode_r(const ModeParams& mp, const CouplingSet& cs,
                                 double theta, double delta) {
    cs.validate(mp.n_modes());
    if (mp.n_modes() != 1)
        throw InputError("multilayer_singlemode_r: exactly one mode expected");
    const Mode& m = mp.modes[0];
    const double dc = cavity_detuning(theta, m.theta0, mp.omega);
    const complexd inv = 1.0 / complexd(m.kappa, dc);
    double g2 = 0.0;  // curly-G^2 = sum_l |g{l} sqrt(N{l})|^2
    for (Eigen::Index l = 0; l < cs.g.cols(); ++l)
        g2 += std::norm(cs.g(0, l));
    const complexd denom = complexd(delta, 0.5) + kTwoThirds * g2 * kI * inv;
    const complexd nuclear =
        -kI * 2.0 * m.kappa_r * inv * inv * (kTwoThirds * g2) / denom;
    return empty_cavity(mp, theta) + nuclear_prefactor(mp, theta) * nuclear;
}

EITCoefficients eit_coefficients_at(const ModeParams& mp, const CouplingSet& cs,
                                    const std::vector<double>& delta_c) {
    cs.validate(mp.n_modes());
    if (cs.n_layers() != 2)
        throw InputError("eit_coefficients: exactly two layers expected");
    if (delta_c.size() != mp.n_modes())
        throw InputError("eit_coefficients: one cavity detuning per mode expected");
    EITCoefficients c;
    complexd d12(0.0), g12(0.0);
    for (std::size_t j = 0; j < mp.modes.size(); ++j) {
        const Mode& m = mp.modes[j];
        const complexd inv = 1.0 / complexd(m.kappa, delta_c[j]);
        const double zeta = inv.real();   // superradiant rate factor
        const double dls = inv.imag();    // collective Lamb shift factor
        const complexd omega_in = std::sqrt(2.0 * m.kappa_r) * inv;  // drive, a_in = 1
        const complexd g1 = cs.g(static_cast<Eigen::Index>(j), 0);
        const complexd g2 = cs.g(static_cast<Eigen::Index>(j), 1);
        c.omega1 += omega_in * kSqrtTwoThirds * g1;
        c.omega2 += omega_in * kSqrtTwoThirds * g2;
        c.dls1 += dls * kTwoThirds * std::norm(g1);
        c.dls2 += dls * kTwoThirds * std::norm(g2);
        c.gam1 += zeta * kTwoThirds * std::norm(g1);
        c.gam2 += zeta * kTwoThirds * std::norm(g2);
        d12 += dls * kTwoThirds * g1 * std::conj(g2);
        g12 += zeta * kTwoThirds * g1 * std::conj(g2);
        const complexd out = -kI * std::sqrt(2.0 * m.kappa_r) * inv * kSqrtTwoThirds;
        c.r1 += out * std::conj(g1);
        c.r2 += out * std::conj(g2);
    }
    c.d12 = d12;
    c.g12 = g12;
    c.omega_c2 = (d12 - kI * g12) * (std::conj(d12) - kI * std::conj(g12));
    return c;
}

EITCoefficients eit_coefficients(const ModeParams& mp, const CouplingSet& cs,
                                 double theta) {
    return eit_coefficients_at(mp, cs, mode_detunings(mp, theta));
}

std::pair<complexd, complexd> eit_coherences(const EITCoefficients& c, double delta) {
    const double hg = 0.5 * c.gamma;
    const complexd dt1(delta - c.dls1, hg + c.gam1);
    const complexd dt2(delta - c.dls2, hg + c.gam2);
    const complexd denom = dt1 * dt2 - c.omega_c2;
    if (std::abs(denom) < 1e-12)
        throw NumericalError("eit_coherences: near-singular denominator (gamma = 0?)");
    const complexd rho1 = (dt2 * c.omega1 + (c.d12 - kI * c.g12) * c.omega2) / denom;
    const complexd rho2 =
        (dt1 * c.omega2 + (std::conj(c.d12) - kI * std::conj(c.g12)) * c.omega1) / denom;
    return {rho1, rho2};
}

complexd eit_reflection_full(const ModeParams& mp, const CouplingSet& cs,
                             double theta, double delta) {
    const EITCoefficients c = eit_coefficients(mp, cs, theta);
    const auto [rho1, rho2] = eit_coherences(c, delta);
    return empty_cavity(mp, theta) +
           nuclear_prefactor(mp, theta) * (c.r1 * rho1 + c.r2 * rho2);
}

complexd eit_reflection_approx(const ModeParams& mp, const CouplingSet& cs,
                               double theta, double delta) {
    const EITCoefficients c = eit_coefficients(mp, cs, theta);
    const double hg = 0.5 * c.gamma;
    const complexd probe(delta, hg);
    const complexd denom = probe * complexd(delta - c.dls2, hg + c.gam2) - c.omega_c2;
    if (std::abs(denom) < 1e-12)
        throw NumericalError("eit_reflection_approx: near-singular denominator");
    return empty_cavity(mp, theta) +
           nuclear_prefactor(mp, theta) * c.r2 * c.omega2 * probe / denom;
}

LinearResponseSystem build_system(const ModeParams& mp, const CouplingSet& cs,
                                  const PolarizationConfig& pol,
                                  const std::vector<Transition>& transitions,
                                  double theta) {
    cs.validate(mp.n_modes());
    pol.validate();
    if (transitions.empty())
        throw InputError("general_solver: empty transition list");
    if (pol.size() != transitions.size())
        throw InputError("general_solver: polarization config and transition list differ in size");

    const std::size_t L = cs.n_layers();
    const std::size_t T = transitions.size();
    const std::size_t dim = L * T;
    const std::vector<double> dc = mode_detunings(mp, theta);

    LinearResponseSystem sys;
    sys.states.reserve(dim);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t t = 0; t < T; ++t)
            sys.states.push_back({l, transitions[t].mu});

    // Per-mode ingredients.
    const std::size_t J = mp.n_modes();
    std::vector<complexd> inv(J), omega_in(J), out_factor(J);
    for (std::size_t j = 0; j < J; ++j) {
        const Mode& m = mp.modes[j];
        inv[j] = 1.0 / complexd(m.kappa, dc[j]);
        const double root = std::sqrt(2.0 * m.kappa_r);
        omega_in[j] = root * inv[j];
        out_factor[j] = root * inv[j];
    }

    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    sys.drive = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(dim));
    sys.output = Eigen::RowVectorXcd::Zero(static_cast<Eigen::Index>(dim));
    sys.drift0 = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim),
                                        static_cast<Eigen::Index>(dim));

    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t t = 0; t < T; ++t) {
            const Eigen::Index row = static_cast<Eigen::Index>(l * T + t);
            const Transition& tr = transitions[t];
            // Diagonal drift: detuning offset and natural decay of the
            // excited level (total weight of its decay channels is 1).
            sys.drift0(row, row) += complexd(-0.5, -tr.delta_E);
            complexd drv(0.0), outc(0.0);
            for (std::size_t j = 0; j < J; ++j) {
                const complexd gjl = cs.g(static_cast<Eigen::Index>(j),
                                          static_cast<Eigen::Index>(l));
                drv += omega_in[j] * gjl;
                outc += out_factor[j] * std::conj(gjl);
            }
            sys.drive(row) = -kI * pol.in_overlap[t] * tr.cg * inv_sqrt2 * drv;
            sys.output(row) = -kI * pol.out_overlap[t] * tr.cg * inv_sqrt2 * outc;
            // Cavity-mediated couplings between every pair of collective
            // states (includes the diagonal: superradiance + Lamb shift).
            for (std::size_t k = 0; k < L; ++k) {
                for (std::size_t u = 0; u < T; ++u) {
                    const Eigen::Index col = static_cast<Eigen::Index>(k * T + u);
                    const complexd pair = pol.pair_overlap[t][u];
                    if (pair == complexd(0.0))
                        continue;
                    complexd sum(0.0);
                    for (std::size_t j = 0; j < J; ++j)
                        sum += inv[j] * cs.g(static_cast<Eigen::Index>(j),
                                             static_cast<Eigen::Index>(l)) *
                               std::conj(cs.g(static_cast<Eigen::Index>(j),
                                              static_cast<Eigen::Index>(k)));
                    sys.drift0(row, col) -=
                        0.5 * pair * tr.cg * transitions[u].cg * sum;
                }
            }
        }
    }

    sys.empty = empty_cavity_at(mp, theta, dc);
    sys.nuclear_prefactor = nuclear_prefactor(mp, theta);
    return sys;
}

GeneralSolution solve_system(const LinearResponseSystem& sys, double delta) {
    const Eigen::Index dim = sys.drive.size();
    Eigen::MatrixXcd m = sys.drift0;
    m.diagonal().array() += kI * delta;
    const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(m);
    GeneralSolution sol;
    sol.coherences = lu.solve(-sys.drive);
    const double rhs_norm = sys.drive.norm();
    const double residual = (m * sol.coherences + sys.drive).norm();
    if (rhs_norm > 0.0 && !(residual <= 1e-8 * rhs_norm))
        throw NumericalError("general_solver: singular steady-state system (degenerate parameters)");
    for (Eigen::Index i = 0; i < dim; ++i)
        if (!std::isfinite(sol.coherences(i).real()) || !std::isfinite(sol.coherences(i).imag()))
            throw NumericalError("general_solver: non-finite coherence");
    sol.reflection =
        sys.empty + sys.nuclear_prefactor * (sys.output * sol.coherences)(0, 0);
    return sol;
}

GeneralSolution general_solver(const ModeParams& mp, const CouplingSet& cs,
                               const PolarizationConfig& pol,
                               const std::vector<Transition>& transitions,
                               double theta, double delta) {
    return solve_system(build_system(mp, cs, pol, transitions, theta), delta);
}

void QoModel::validate() const {
    mp.validate();
    cs.validate(mp.n_modes());
    pol.validate();
    if (pol.size() != transitions.size())
        throw InputError("QoModel: polarization config and transition list differ in size");
}

namespace {

Spectrum evaluate_qo_grid(const QoModel& model, std::vector<double> theta_grid,
                          std::vector<double> delta_grid, const std::string& hash) {
    model.validate();
    Spectrum sp;
    sp.theta = std::move(theta_grid);
    sp.delta = std::move(delta_grid);
    sp.engine = "qo-general";
    sp.params_hash = hash;
    if (sp.theta.empty() || sp.delta.empty())
        throw InputError("qo: empty evaluation grid");
    const std::size_t nd = sp.delta.size();
    sp.values.resize(sp.theta.size() * nd);
    // One system build per angle, one linear solve per detuning.
    parallel_for(sp.theta.size(), [&](std::size_t it) {
        const LinearResponseSystem sys =
            build_system(model.mp, model.cs, model.pol, model.transitions, sp.theta[it]);
        for (std::size_t id = 0; id < nd; ++id)
            sp.values[it * nd + id] = solve_system(sys, sp.delta[id]).reflection;
    });
    sp.validate();
    return sp;
}

} // namespace

Spectrum curve(const QoModel& model, const std::vector<double>& theta_grid,
               double delta, const std::string& params_hash) {
    return evaluate_qo_grid(model, theta_grid, {delta}, params_hash);
}

Spectrum spectrum(const QoModel& model, double theta,
                  const std::vector<double>& delta_grid,
                  const std::string& params_hash) {
    return evaluate_qo_grid(model, {theta}, delta_grid, params_hash);
}

Spectrum grid(const QoModel& model, const std::vector<double>& theta_grid,
              const std::vector<double>& delta_grid,
              const std::string& params_hash) {
    return evaluate_qo_grid(model, theta_grid, delta_grid, params_hash);
}

} // namespace nucav::qo
