#include "nucav/parratt.hpp"

#include <algorithm>
#include <cmath>

#include "nucav/parallel.hpp"
#include "nucav/units.hpp"

namespace nucav::parratt {

namespace {

constexpr complexd kI(0.0, 1.0);

bool finite(const complexd& z) {
    return std::isfinite(z.real()) && std::isfinite(z.imag());
}

/// kz = k0 sqrt(sin^2 theta + (n-1)(n+1)), branch Im >= 0.  The (n-1)(n+1)
/// form avoids the 1 - cos^2 theta cancellation at grazing angles; for vacuum
/// it gives exactly k0 sin(theta).
complexd kz_of(double k0, double sin_theta, const complexd& n) {
    const complexd arg = sin_theta * sin_theta + (n - 1.0) * (n + 1.0);
    complexd kz = k0 * std::sqrt(arg);
    if (kz.imag() < 0.0)
        kz = -kz;
    return kz;
}

/// Interface reflection ratios rho_i = U/D just above interface i (between
/// layers i and i+1), accumulated bottom-up with round-trip layer phases.
std::vector<complexd> interface_ratios(const WaveContext& wc,
                                       const std::vector<double>& d_nm) {
    const std::size_t L = wc.kz.size();
    std::vector<complexd> rho(L - 1);
    complexd acc =
        (wc.kz[L - 2] - wc.kz[L - 1]) / (wc.kz[L - 2] + wc.kz[L - 1]);
    rho[L - 2] = acc;
    for (std::size_t ii = L - 2; ii-- > 0;) {
        const complexd rf = (wc.kz[ii] - wc.kz[ii + 1]) / (wc.kz[ii] + wc.kz[ii + 1]);
        const complexd ph = std::exp(2.0 * kI * wc.kz[ii + 1] * d_nm[ii + 1]);
        acc = (rf + acc * ph) / (1.0 + rf * acc * ph);
        rho[ii] = acc;
        if (!finite(acc))
            throw NumericalError("parratt: non-finite reflection ratio (invalid optical constants?)");
    }
    return rho;
}

std::vector<double> thicknesses(const CavityStack& stack) {
    std::vector<double> d(stack.layers.size(), 0.0);
    for (std::size_t i = 0; i < stack.layers.size(); ++i)
        d[i] = stack.layers[i].semi_infinite ? 0.0 : stack.layers[i].thickness_nm;
    return d;
}

Spectrum evaluate_grid(const CavityStack& stack, std::vector<double> theta_grid,
                       std::vector<double> delta_grid, const std::string& hash) {
    stack.validate();
    Spectrum sp;
    sp.theta = std::move(theta_grid);
    sp.delta = std::move(delta_grid);
    sp.engine = "parratt";
    sp.params_hash = hash;
    if (sp.theta.empty() || sp.delta.empty())
        throw InputError("parratt: empty evaluation grid");
    sp.values.resize(sp.theta.size() * sp.delta.size());
    const std::size_t nd = sp.delta.size();
    parallel_for(sp.values.size(), [&](std::size_t i) {
        sp.values[i] = reflectivity(stack, sp.theta[i / nd], sp.delta[i % nd]);
    });
    sp.validate();
    return sp;
}

} // namespace

complexd layer_index(const Layer& layer, double delta) {
    layer.validate();
    complexd n(1.0 - layer.delta, layer.beta);
    if (!layer.nuclear || layer.nuclear->strength == 0.0)
        return n;
    const NuclearSpec& ns = *layer.nuclear;
    const double hw = 0.5 * ns.linewidth;
    if (!ns.magnetized) {
        // Single effective line, unit total weight: n(delta = 0) picks up
        // exactly +i chi0.
        n -= ns.strength * hw / complexd(delta, hw);
        return n;
    }
    const auto table = transition_table(ns.delta_g, ns.delta_e);
    double weight_sum = 0.0;
    for (const Transition& t : table)
        weight_sum += t.cg * t.cg;
    for (const Transition& t : table) {
        const double w = t.cg * t.cg / weight_sum;
        n -= ns.strength * w * hw / complexd(delta - t.delta_E, hw);
    }
    return n;
}

WaveContext wave_context(const CavityStack& stack, double theta, double delta) {
    if (!(theta > 0.0) || !(theta < 1.5707963267948966))
        throw InputError("parratt: grazing angle must lie in (0, pi/2)");
    WaveContext wc;
    wc.k0 = default_units().k0_per_nm();
    wc.theta = theta;
    const double st = std::sin(theta);
    wc.kz.reserve(stack.layers.size());
    for (const Layer& l : stack.layers) {
        const complexd kz = kz_of(wc.k0, st, layer_index(l, delta));
        if (!finite(kz))
            throw NumericalError("parratt: non-finite kz for layer '" + l.material + "'");
        wc.kz.push_back(kz);
    }
    return wc;
}

complexd reflectivity(const CavityStack& stack, double theta, double delta) {
    const WaveContext wc = wave_context(stack, theta, delta);
    return interface_ratios(wc, thicknesses(stack))[0];
}

complexd reflectivity_from_indices(double k0, double theta,
                                   const std::vector<complexd>& indices,
                                   const std::vector<double>& thickness_nm) {
    if (indices.size() < 2 || indices.size() != thickness_nm.size())
        throw InputError("parratt: need matching index/thickness lists with >= 2 media");
    WaveContext wc;
    wc.k0 = k0;
    wc.theta = theta;
    const double st = std::sin(theta);
    for (const complexd& n : indices)
        wc.kz.push_back(kz_of(k0, st, n));
    return interface_ratios(wc, thickness_nm)[0];
}

complexd FieldMap::field_at(double depth) const {
    // Locate the layer: vacuum for depth < 0, substrate beyond its top.
    std::size_t i = 0;
    while (i + 1 < layers.size() && depth >= layers[i].bottom_nm)
        ++i;
    const LayerAmplitudes& la = layers[i];
    const complexd down = la.down * std::exp(kI * la.kz * (depth - la.top_nm));
    const complexd up = la.up * std::exp(-kI * la.kz * (depth - la.bottom_nm));
    return down + up;
}

FieldMap field_map(const CavityStack& stack, double theta, double delta,
                   double depth_step_nm) {
    if (!(depth_step_nm > 0.0))
        throw InputError("parratt: depth step must be positive");
    const WaveContext wc = wave_context(stack, theta, delta);
    const std::vector<double> d = thicknesses(stack);
    const std::vector<complexd> rho = interface_ratios(wc, d);
    const std::size_t L = wc.kz.size();

    FieldMap fm;
    fm.reflectivity = rho[0];
    fm.layers.resize(L);

    // Layer boundaries: interface i sits at the bottom of layer i.
    double depth = 0.0;
    fm.layers[0] = {wc.kz[0], 0.0, 0.0, complexd(1.0), rho[0]};
    complexd d_above = 1.0;  // down amplitude just above the current interface
    for (std::size_t i = 0; i + 1 < L; ++i) {
        const complexd u_above = rho[i] * d_above;
        const complexd kza = wc.kz[i];
        const complexd kzb = wc.kz[i + 1];
        // Continuity of the field and its normal derivative across the
        // interface determines the amplitudes below.
        complexd d_below = ((kzb + kza) * d_above + (kzb - kza) * u_above) / (2.0 * kzb);
        LayerAmplitudes& la = fm.layers[i + 1];
        la.kz = kzb;
        la.top_nm = depth;
        if (i + 2 < L) {
            la.bottom_nm = depth + d[i + 1];
            la.down = d_below;
            d_above = d_below * std::exp(kI * kzb * d[i + 1]);  // decays downward
            la.up = rho[i + 1] * d_above;
            depth = la.bottom_nm;
        } else {
            // Substrate: transmitted wave only.
            la.bottom_nm = depth;
            la.down = d_below;
            la.up = complexd(0.0);
        }
    }

    const double margin = 5.0;
    const double lo = -margin;
    const double hi = depth + margin;
    const std::size_t n = static_cast<std::size_t>(std::floor((hi - lo) / depth_step_nm)) + 1;
    fm.depth_nm.resize(n);
    fm.amplitude.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        fm.depth_nm[i] = lo + depth_step_nm * static_cast<double>(i);
        fm.amplitude[i] = fm.field_at(fm.depth_nm[i]);
    }
    return fm;
}

Spectrum curve(const CavityStack& stack, const std::vector<double>& theta_grid,
               double delta, const std::string& params_hash) {
    return evaluate_grid(stack, theta_grid, {delta}, params_hash);
}

Spectrum spectrum(const CavityStack& stack, double theta,
                  const std::vector<double>& delta_grid,
                  const std::string& params_hash) {
    return evaluate_grid(stack, {theta}, delta_grid, params_hash);
}

Spectrum grid(const CavityStack& stack, const std::vector<double>& theta_grid,
              const std::vector<double>& delta_grid,
              const std::string& params_hash) {
    return evaluate_grid(stack, theta_grid, delta_grid, params_hash);
}

} // namespace nucav::parratt
