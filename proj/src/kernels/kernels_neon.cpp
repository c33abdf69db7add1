// NEON (aarch64) kernels, 2-wide f64. Same ordering discipline as the AVX2
// backend: vectorize the contiguous minor axis only, multiply then add.

#if defined(__aarch64__)

#include "maf/kernels.hpp"

#include <arm_neon.h>
#include <cstring>

namespace maf::kernels {
namespace {

void matmul_nn_neon(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    const std::size_t n2 = n & ~std::size_t{1};
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * n;
            const float64x2_t avv = vdupq_n_f64(av);
            std::size_t j = 0;
            for (; j < n2; j += 2) {
                float64x2_t cv = vld1q_f64(crow + j);
                cv = vaddq_f64(cv, vmulq_f64(avv, vld1q_f64(brow + j)));
                vst1q_f64(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void add_neon(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_neon(const double* a, double alpha, double* out, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), av));
    for (; i < n; ++i) out[i] = a[i] * alpha;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t yv = vld1q_f64(y + i);
        yv = vaddq_f64(yv, vmulq_f64(av, vld1q_f64(x + i)));
        vst1q_f64(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu_neon(const double* a, double* out, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(a + i);
        uint64x2_t mask = vcgtq_f64(v, zero);
        vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(vreinterpretq_u64_f64(v), mask)));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_mask_neon(const double* grad, const double* x, double* out, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        uint64x2_t mask = vcgtq_f64(vld1q_f64(x + i), zero);
        float64x2_t g = vld1q_f64(grad + i);
        vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(vreinterpretq_u64_f64(g), mask)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? grad[i] : 0.0;
}

void colsum_neon(const double* a, double* out, std::size_t m, std::size_t n) {
    std::memset(out, 0, n * sizeof(double));
    const std::size_t n2 = n & ~std::size_t{1};
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = a + i * n;
        std::size_t j = 0;
        for (; j < n2; j += 2)
            vst1q_f64(out + j, vaddq_f64(vld1q_f64(out + j), vld1q_f64(row + j)));
        for (; j < n; ++j) out[j] += row[j];
    }
}

} // namespace

const KernelTable neon_table = {
    matmul_nn_neon, add_neon, sub_neon, mul_neon,
    scale_neon, axpy_neon, relu_neon, relu_mask_neon, colsum_neon,
};

} // namespace maf::kernels

#endif // aarch64
