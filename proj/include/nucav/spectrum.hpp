#pragma once

#include <complex>
#include <string>
#include <vector>

#include "nucav/domain.hpp"

namespace nucav {

/// Sampled complex reflection coefficient over a theta grid, a delta grid, or
/// both (row-major: values[it * delta.size() + id]).  Single-axis data keeps
/// the other axis at one fixed sample.
struct Spectrum {
    std::vector<double> theta;  ///< grazing angles, rad (size >= 1)
    std::vector<double> delta;  ///< detunings, gamma units (size >= 1)
    std::vector<complexd> values;
    std::string engine;       ///< "parratt", "qo-closed-form" or "qo-general"
    std::string params_hash;  ///< provenance hash of the generating inputs

    std::size_t n_theta() const { return theta.size(); }
    std::size_t n_delta() const { return delta.size(); }
    const complexd& at(std::size_t it, std::size_t id) const {
        return values[it * delta.size() + id];
    }

    /// Check grid monotonicity and value finiteness.
    void validate() const;
};

/// n evenly spaced samples covering [lo, hi] (n >= 2), or the single point lo
/// for n == 1 (requires lo == hi).
std::vector<double> linspace(double lo, double hi, std::size_t n);

} // namespace nucav
