#include "nucav/domain.hpp"
#include "nucav/spectrum.hpp"

#include <cmath>
#include <limits>

namespace nucav {

void NuclearSpec::validate() const {
    if (strength < 0.0)
        throw InputError("NuclearSpec: strength (chi0) must be >= 0");
    if (linewidth <= 0.0)
        throw InputError("NuclearSpec: linewidth must be positive");
    if (!magnetized && (delta_g != 0.0 || delta_e != 0.0))
        throw InputError("NuclearSpec: unmagnetized layer must have delta_g = delta_e = 0");
}

void Layer::validate() const {
    if (beta < 0.0)
        throw InputError("Layer '" + material + "': beta must be >= 0");
    if (!semi_infinite && !(thickness_nm > 0.0))
        throw InputError("Layer '" + material + "': thickness must be positive");
    if (semi_infinite && thickness_nm != 0.0)
        throw InputError("Layer '" + material + "': semi-infinite layer carries no thickness");
    if (!std::isfinite(delta) || !std::isfinite(beta) || !std::isfinite(thickness_nm))
        throw InputError("Layer '" + material + "': non-finite parameter");
    if (nuclear)
        nuclear->validate();
}

void CavityStack::validate() const {
    if (layers.size() < 2)
        throw InputError("CavityStack: need at least two layers (top and bottom media)");
    for (const Layer& l : layers)
        l.validate();
    if (!layers.front().semi_infinite || !layers.back().semi_infinite)
        throw InputError("CavityStack: first and last layers must be semi-infinite");
    for (std::size_t i = 1; i + 1 < layers.size(); ++i)
        if (layers[i].semi_infinite)
            throw InputError("CavityStack: interior layers must have finite thickness");
}

std::vector<std::size_t> CavityStack::resonant_layer_ids() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].nuclear && layers[i].nuclear->strength > 0.0)
            ids.push_back(i);
    return ids;
}

CavityStack CavityStack::without_nuclear() const {
    CavityStack bare = *this;
    for (Layer& l : bare.layers)
        l.nuclear.reset();
    return bare;
}

std::array<Transition, 6> transition_table(double delta_g, double delta_e) {
    const double dg = 0.5 * delta_g;
    const double de = 0.5 * delta_e;
    const double c1 = 1.0;
    const double c2 = std::sqrt(2.0 / 3.0);
    const double c3 = std::sqrt(1.0 / 3.0);
    return {{
        {1, -dg - 3.0 * de, c1, Polarization::sigma_minus},
        {2, -dg - de,       c2, Polarization::pi},
        {3, -dg + de,       c3, Polarization::sigma_plus},
        {4, +dg - de,       c3, Polarization::sigma_minus},
        {5, +dg + de,       c2, Polarization::pi},
        {6, +dg + 3.0 * de, c1, Polarization::sigma_plus},
    }};
}

Transition effective_unmagnetized_transition() {
    return {0, 0.0, 2.0 / std::sqrt(3.0), Polarization::pi};
}

void PolarizationConfig::validate() const {
    const std::size_t n = in_overlap.size();
    if (out_overlap.size() != n || pair_overlap.size() != n)
        throw InputError("PolarizationConfig: inconsistent dimensions");
    for (const auto& row : pair_overlap)
        if (row.size() != n)
            throw InputError("PolarizationConfig: pair_overlap must be square");
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(pair_overlap[i][i] - complexd(1.0)) > 1e-14)
            throw InputError("PolarizationConfig: pair_overlap diagonal must be 1");
        for (std::size_t j = 0; j < n; ++j)
            if (std::abs(pair_overlap[i][j] - std::conj(pair_overlap[j][i])) > 1e-14)
                throw InputError("PolarizationConfig: pair_overlap must be Hermitian");
    }
}

PolarizationConfig PolarizationConfig::effective_single() {
    PolarizationConfig p;
    p.in_overlap = {complexd(1.0)};
    p.out_overlap = {complexd(1.0)};
    p.pair_overlap = {{complexd(1.0)}};
    return p;
}

namespace {

/// Pair overlaps for the six-line table: dipoles of the same polarization
/// channel are parallel (overlap 1), orthogonal channels do not mix.
std::vector<std::vector<complexd>> six_line_pair_overlap() {
    const auto table = transition_table(0.0, 0.0);
    std::vector<std::vector<complexd>> pair(6, std::vector<complexd>(6, complexd(0.0)));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            if (table[i].polarization == table[j].polarization)
                pair[i][j] = complexd(1.0);
    return pair;
}

} // namespace

PolarizationConfig PolarizationConfig::unmagnetized() {
    PolarizationConfig p;
    p.in_overlap.assign(6, complexd(0.0));
    p.out_overlap.assign(6, complexd(0.0));
    // Linear probe parallel to the pi dipoles: mu = 2 and 5 couple at unit
    // overlap (indices 1 and 4); the sigma channels are dark.
    p.in_overlap[1] = p.in_overlap[4] = complexd(1.0);
    p.out_overlap[1] = p.out_overlap[4] = complexd(1.0);
    p.pair_overlap = six_line_pair_overlap();
    return p;
}

PolarizationConfig PolarizationConfig::all_unit() {
    PolarizationConfig p;
    p.in_overlap.assign(6, complexd(1.0));
    p.out_overlap.assign(6, complexd(1.0));
    p.pair_overlap = six_line_pair_overlap();
    return p;
}

void Spectrum::validate() const {
    if (theta.empty() || delta.empty())
        throw InputError("Spectrum: empty grid");
    if (values.size() != theta.size() * delta.size())
        throw InputError("Spectrum: value count does not match grid");
    for (std::size_t i = 1; i < theta.size(); ++i)
        if (!(theta[i] > theta[i - 1]))
            throw InputError("Spectrum: theta grid must be strictly increasing");
    for (std::size_t i = 1; i < delta.size(); ++i)
        if (!(delta[i] > delta[i - 1]))
            throw InputError("Spectrum: delta grid must be strictly increasing");
    for (const complexd& v : values)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
            throw InputError("Spectrum: non-finite value");
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n == 0)
        throw InputError("linspace: need at least one sample");
    if (n == 1) {
        if (lo != hi)
            throw InputError("linspace: single sample requires lo == hi");
        return {lo};
    }
    if (!(lo < hi))
        throw InputError("linspace: require lo < hi");
    std::vector<double> g(n);
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = lo + step * static_cast<double>(i);
    g.back() = hi;
    return g;
}

} // namespace nucav
