#pragma once

// L1-penalised least squares by cyclic coordinate descent:
//
//   minimise (1/2n) ||y - b0 - X b||^2 + lambda ||b||_1
//
// Columns and response are centred internally; the intercept absorbs the means.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "onsd/error.hpp"

namespace onsd {

inline constexpr double kLassoTolerance = 1e-7;
inline constexpr int kLassoMaxSweeps = 10000;

struct LassoModel {
    double lambda = 0.0;
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    std::vector<bool> selected;  // coefficient != 0
    bool converged = true;
    int sweeps = 0;

    std::size_t selected_count() const { return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true)); }
};

inline double soft_threshold(double x, double lambda) {
    if (x > lambda) return x - lambda;
    if (x < -lambda) return x + lambda;
    return 0.0;
}

namespace detail {

inline void require_finite(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) throw Error("lasso: row count mismatch");
    if (x.rows() == 0 || x.cols() == 0) throw Error("lasso: empty design");
    if (!x.allFinite() || !y.allFinite()) throw Error("lasso: non-finite input");
}

}  // namespace detail

/// Smallest lambda at which every coefficient is zero.
inline double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    detail::require_finite(x, y);
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    return (xc.transpose() * yc).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

inline LassoModel lasso_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
    detail::require_finite(x, y);
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("lasso: lambda must be finite and non-negative");
    const auto n = static_cast<double>(x.rows());
    const Eigen::RowVectorXd x_mean = x.colwise().mean();
    const Eigen::MatrixXd xc = x.rowwise() - x_mean;
    const double y_mean = y.mean();
    const Eigen::VectorXd yc = y.array() - y_mean;
    const Eigen::VectorXd col_sq = xc.colwise().squaredNorm().transpose() / n;

    LassoModel m;
    m.lambda = lambda;
    m.coefficients = Eigen::VectorXd::Zero(x.cols());
    Eigen::VectorXd residual = yc;
    m.converged = false;
    for (m.sweeps = 1; m.sweeps <= kLassoMaxSweeps; ++m.sweeps) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (col_sq[j] <= 0.0) continue;
            const double old = m.coefficients[j];
            const double rho = xc.col(j).dot(residual) / n + col_sq[j] * old;
            const double updated = soft_threshold(rho, lambda) / col_sq[j];
            if (updated != old) {
                residual -= xc.col(j) * (updated - old);
                m.coefficients[j] = updated;
                max_change = std::max(max_change, std::abs(updated - old));
            }
        }
        if (max_change < kLassoTolerance) {
            m.converged = true;
            break;
        }
    }
    m.sweeps = std::min(m.sweeps, kLassoMaxSweeps);
    m.intercept = y_mean - x_mean.dot(m.coefficients);
    m.selected.resize(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) m.selected[static_cast<std::size_t>(j)] = m.coefficients[j] != 0.0;
    return m;
}

struct LassoSelection {
    LassoModel model;
    std::size_t target_count = 0;
    std::size_t achieved_count = 0;
    std::vector<std::pair<double, std::size_t>> evaluated;  // (lambda, nonzeros) in evaluation order
};

/// Count-targeted selection: bisection over lambda in [0, lambda_max] for the
/// largest lambda that still keeps at least `target_count` nonzeros.
inline LassoSelection lasso_select(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t target_count,
                                   int iterations = 40) {
    if (target_count < 1 || target_count > static_cast<std::size_t>(x.cols()))
        throw Error("lasso: target count must lie in [1, feature count]");
    LassoSelection sel;
    sel.target_count = target_count;
    auto fit = [&](double lambda) {
        LassoModel m = lasso_fit(x, y, lambda);
        sel.evaluated.emplace_back(lambda, m.selected_count());
        return m;
    };

    double lo = 0.0;
    double hi = lasso_lambda_max(x, y);
    LassoModel best = fit(lo);
    if (best.selected_count() >= target_count && hi > 0.0) {
        for (int it = 0; it < iterations; ++it) {
            const double mid = 0.5 * (lo + hi);
            LassoModel m = fit(mid);
            if (m.selected_count() >= target_count) {
                lo = mid;
                best = std::move(m);
                if (best.selected_count() == target_count && hi - lo <= 1e-9 * hi) break;
            } else {
                hi = mid;
            }
        }
    }
    sel.achieved_count = best.selected_count();
    sel.model = std::move(best);
    return sel;
}

}  // namespace onsd
