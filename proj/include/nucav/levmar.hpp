#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace nucav::cal {

/// Damped Gauss-Newton (Levenberg-Marquardt) on a real residual vector with
/// forward-difference Jacobians.  Small and deterministic; adequate for the
/// ~17-parameter mode fits this project needs.
struct LevMarOptions {
    int max_iter = 200;
    double tolerance = 1e-12;   ///< relative cost-decrease convergence threshold
    double gradient_tol = 1e-14;
    double fd_step = 1e-8;      ///< relative finite-difference step
    double lambda0 = 1e-3;
};

struct LevMarResult {
    Eigen::VectorXd p;
    double cost = 0.0;  ///< sum of squared residuals at p
    int iterations = 0;
    bool converged = false;
    std::vector<double> cost_history;  ///< accepted costs, non-increasing
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

LevMarResult levmar(const ResidualFn& residuals, Eigen::VectorXd p0,
                    const LevMarOptions& opt = {});

} // namespace nucav::cal
