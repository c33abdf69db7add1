#include "maf/kernels.hpp"

#include <cstring>

// Reference kernels. These define the numerical semantics; the vector
// backends must match them bit for bit.

namespace maf::kernels {
namespace {

void matmul_nn_scalar(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar(const double* a, double alpha, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu_scalar(const double* a, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_mask_scalar(const double* grad, const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? grad[i] : 0.0;
}

void colsum_scalar(const double* a, double* out, std::size_t m, std::size_t n) {
    std::memset(out, 0, n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = a + i * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
    }
}

} // namespace

const KernelTable scalar_table = {
    matmul_nn_scalar, add_scalar, sub_scalar, mul_scalar,
    scale_scalar, axpy_scalar, relu_scalar, relu_mask_scalar, colsum_scalar,
};

} // namespace maf::kernels
