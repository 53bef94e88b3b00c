#include "nucav/levmar.hpp"

#include <cmath>
#include <limits>

#include "nucav/errors.hpp"

namespace nucav::cal {

namespace {

Eigen::MatrixXd jacobian(const ResidualFn& f, const Eigen::VectorXd& p,
                         const Eigen::VectorXd& r0, double rel_step) {
    const Eigen::Index n = p.size();
    Eigen::MatrixXd jac(r0.size(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = rel_step * std::max(std::abs(p(i)), 1.0);
        Eigen::VectorXd q = p;
        q(i) += h;
        jac.col(i) = (f(q) - r0) / h;
    }
    return jac;
}

} // namespace

LevMarResult levmar(const ResidualFn& residuals, Eigen::VectorXd p0,
                    const LevMarOptions& opt) {
    LevMarResult res;
    res.p = std::move(p0);
    Eigen::VectorXd r = residuals(res.p);
    if (!r.allFinite())
        throw NumericalError("levmar: non-finite residual at the starting point");
    double cost = r.squaredNorm();
    res.cost_history.push_back(cost);

    double lambda = opt.lambda0;
    for (int it = 0; it < opt.max_iter; ++it) {
        res.iterations = it + 1;
        const Eigen::MatrixXd jac = jacobian(residuals, res.p, r, opt.fd_step);
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd g = jac.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < opt.gradient_tol * (1.0 + cost)) {
            res.converged = true;
            break;
        }

        bool accepted = false;
        for (int tries = 0; tries < 40 && !accepted; ++tries) {
            Eigen::MatrixXd damped = jtj;
            for (Eigen::Index i = 0; i < damped.rows(); ++i)
                damped(i, i) += lambda * std::max(jtj(i, i), 1e-12);
            const Eigen::VectorXd step = damped.ldlt().solve(-g);
            const Eigen::VectorXd trial = res.p + step;
            const Eigen::VectorXd rt = residuals(trial);
            const double trial_cost = rt.allFinite()
                                          ? rt.squaredNorm()
                                          : std::numeric_limits<double>::infinity();
            if (trial_cost < cost) {
                const double drop = (cost - trial_cost) / std::max(cost, 1e-300);
                res.p = trial;
                r = rt;
                cost = trial_cost;
                res.cost_history.push_back(cost);
                lambda = std::max(lambda * 0.3, 1e-12);
                accepted = true;
                if (drop < opt.tolerance) {
                    res.converged = true;
                    it = opt.max_iter;  // stop outer loop
                }
            } else {
                lambda = std::min(lambda * 4.0, 1e14);
            }
        }
        if (!accepted) {
            // No descent direction at the damping ceiling: local minimum.
            res.converged = true;
            break;
        }
    }
    res.cost = cost;
    return res;
}

} // namespace nucav::cal
