#pragma once

#include "maf/tensor.hpp"

#include <vector>

namespace maf {

// Small dense symmetric/SPD helpers shared by the whitening perceptor, the
// Gaussian KL estimator and the PCA diagnostics. Everything is deterministic:
// fixed sweep schedules, fixed tie-breaking and a fixed sign convention.

struct EigenResult {
    std::vector<double> values;  // descending
    Tensor vectors;              // column j = eigenvector of values[j]
};

// Cyclic Jacobi rotations on a symmetric matrix; sweeps until the
// off-diagonal Frobenius norm drops below `tol` (absolute). Eigenvectors get
// a deterministic sign: the entry of largest magnitude is positive.
EigenResult jacobi_eigen(const Tensor& sym, double tol = 1e-12, int max_sweeps = 64);

// Cholesky factor L with A = L * L^T. Throws NumericError if not positive
// definite.
Tensor cholesky(const Tensor& spd);

// Solve A x = b with a precomputed Cholesky factor.
std::vector<double> cholesky_solve(const Tensor& chol, const std::vector<double>& b);

// log(det(A)) from a Cholesky factor.
double cholesky_logdet(const Tensor& chol);

// Column means of a data matrix (rows = samples).
std::vector<double> column_means(const Tensor& data);

// Population covariance (1/N) of a data matrix.
Tensor covariance(const Tensor& data);

} // namespace maf
