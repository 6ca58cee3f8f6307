#pragma once

#include <Eigen/Dense>

#include <vector>

#include "dexforge/errors.hpp"

namespace dexforge {

// Non-negative least squares, min ‖Ax − b‖² s.t. x ≥ 0, by active-set
// pivoting (Lawson-Hanson). Exact for the small systems used here; terminates
// at the KKT point, so downstream envelope-theorem gradients are valid.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                            double tol = -1.0) {
    const Eigen::Index n = A.cols();
    if (A.rows() != b.size()) throw InvariantViolation("nnls: shape mismatch");
    if (tol < 0) tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff()) * std::max<double>(1, n);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(static_cast<size_t>(n), false);
    Eigen::VectorXd w = A.transpose() * (b - A * x);

    auto solve_passive = [&](Eigen::VectorXd& z) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index i = 0; i < n; ++i)
            if (passive[static_cast<size_t>(i)]) cols.push_back(i);
        Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(cols.size()));
        for (size_t c = 0; c < cols.size(); ++c) Ap.col(static_cast<Eigen::Index>(c)) = A.col(cols[c]);
        const Eigen::VectorXd zp = Ap.colPivHouseholderQr().solve(b);
        z.setZero(n);
        for (size_t c = 0; c < cols.size(); ++c) z[cols[c]] = zp[static_cast<Eigen::Index>(c)];
    };

    const int max_outer = 3 * static_cast<int>(n) + 30;
    for (int outer = 0; outer < max_outer; ++outer) {
        Eigen::Index best = -1;
        double best_w = tol;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!passive[static_cast<size_t>(i)] && w[i] > best_w) {
                best_w = w[i];
                best = i;
            }
        if (best < 0) break;  // KKT satisfied
        passive[static_cast<size_t>(best)] = true;

        for (int inner = 0; inner < max_outer; ++inner) {
            Eigen::VectorXd z;
            solve_passive(z);
            bool feasible = true;
            for (Eigen::Index i = 0; i < n; ++i)
                if (passive[static_cast<size_t>(i)] && z[i] <= 0) feasible = false;
            if (feasible) {
                x = z;
                break;
            }
            double alpha = 1.0;
            for (Eigen::Index i = 0; i < n; ++i)
                if (passive[static_cast<size_t>(i)] && z[i] <= 0)
                    alpha = std::min(alpha, x[i] / (x[i] - z[i]));
            x += alpha * (z - x);
            for (Eigen::Index i = 0; i < n; ++i)
                if (passive[static_cast<size_t>(i)] && x[i] <= tol) {
                    passive[static_cast<size_t>(i)] = false;
                    x[i] = 0.0;
                }
        }
        w = A.transpose() * (b - A * x);
    }
    return x;
}

}  // namespace dexforge
