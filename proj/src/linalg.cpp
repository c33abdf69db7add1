#include "maf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace maf {

EigenResult jacobi_eigen(const Tensor& sym, double tol, int max_sweeps) {
    const std::size_t n = sym.rows();
    if (sym.cols() != n) throw DimensionError("jacobi_eigen needs a square matrix");
    Tensor a = sym;
    Tensor v(n, n);
    for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    auto offdiag_norm = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a.at(i, j) * a.at(i, j);
        return std::sqrt(2.0 * s);
    };

    for (int sweep = 0; sweep < max_sweeps && offdiag_norm() >= tol; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double app = a.at(p, p);
                const double aqq = a.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p);
                    const double vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (offdiag_norm() >= tol) throw NumericError("jacobi_eigen did not converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return a.at(x, x) > a.at(y, y);
    });

    EigenResult out;
    out.values.resize(n);
    out.vectors = Tensor(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.values[j] = a.at(src, src);
        // Deterministic sign convention: largest-magnitude loading positive.
        std::size_t argmax = 0;
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double mag = std::abs(v.at(i, src));
            if (mag > best) {
                best = mag;
                argmax = i;
            }
        }
        const double sign = v.at(argmax, src) >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, j) = sign * v.at(i, src);
    }
    return out;
}

Tensor cholesky(const Tensor& spd) {
    const std::size_t n = spd.rows();
    if (spd.cols() != n) throw DimensionError("cholesky needs a square matrix");
    Tensor l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = spd.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                if (s <= 0.0) throw NumericError("matrix not positive definite");
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }
    return l;
}

std::vector<double> cholesky_solve(const Tensor& chol, const std::vector<double>& b) {
    const std::size_t n = chol.rows();
    if (b.size() != n) throw DimensionError("cholesky_solve rhs size mismatch");
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= chol.at(i, k) * y[k];
        y[i] = s / chol.at(i, i);
    }
    std::vector<double> x(n);
    for (std::size_t ii = n; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double s = y[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= chol.at(k, i) * x[k];
        x[i] = s / chol.at(i, i);
    }
    return x;
}

double cholesky_logdet(const Tensor& chol) {
    double s = 0.0;
    for (std::size_t i = 0; i < chol.rows(); ++i) s += std::log(chol.at(i, i));
    return 2.0 * s;
}

std::vector<double> column_means(const Tensor& data) {
    std::vector<double> mu(data.cols(), 0.0);
    for (std::size_t i = 0; i < data.rows(); ++i)
        for (std::size_t j = 0; j < data.cols(); ++j) mu[j] += data.at(i, j);
    const double inv = data.rows() > 0 ? 1.0 / static_cast<double>(data.rows()) : 0.0;
    for (double& m : mu) m *= inv;
    return mu;
}

Tensor covariance(const Tensor& data) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (n < 1) throw ContractError("covariance needs at least one row");
    const std::vector<double> mu = column_means(data);
    Tensor cov(d, d);
    std::vector<double> centered(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) centered[j] = data.at(i, j) - mu[j];
        for (std::size_t a = 0; a < d; ++a) {
            const double ca = centered[a];
            for (std::size_t b = a; b < d; ++b) cov.at(a, b) += ca * centered[b];
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov.at(a, b) *= inv;
            cov.at(b, a) = cov.at(a, b);
        }
    return cov;
}

} // namespace maf
