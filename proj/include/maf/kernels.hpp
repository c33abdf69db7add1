#pragma once

#include <cstddef>
#include <string>

namespace maf::kernels {

// Dense f64 inner loops behind the tensor layer. Each kernel has a scalar
// reference implementation and vectorized variants selected at runtime.
//
// Bit-exactness contract: every backend must produce bit-identical output to
// the scalar reference for identical inputs. The vector variants therefore
//   - keep the scalar accumulation order (matmul vectorizes the contiguous
//     output columns, never the reduction axis),
//   - use separate multiply and add (no FMA contraction), and
//   - implement relu as a compare+mask so signed zeros round-trip.
// The equivalence suite asserts this on ragged shapes.

struct KernelTable {
    // c(m x n) = a(m x k) * b(k x n), row-major, c fully overwritten.
    void (*matmul_nn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*scale)(const double* a, double alpha, double* out, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n); // y += alpha*x
    void (*relu)(const double* a, double* out, std::size_t n);             // x>0 ? x : 0
    void (*relu_mask)(const double* grad, const double* x, double* out,
                      std::size_t n);                                      // x>0 ? grad : 0
    // out[j] = sum over rows i of a[i*n+j], row index ascending.
    void (*colsum)(const double* a, double* out, std::size_t m, std::size_t n);
};

enum class Backend { Scalar, Avx2, Neon };

extern const KernelTable scalar_table;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable avx2_table;
#endif
#if defined(__aarch64__)
extern const KernelTable neon_table;
#endif

// Active table. Defaults to the best backend the CPU supports; the
// MAF_KERNELS environment variable ("scalar", "avx2", "neon", "auto")
// overrides, as does set_backend().
const KernelTable& active();
Backend active_backend();
void set_backend(Backend b);
std::string backend_name(Backend b);
bool backend_available(Backend b);

} // namespace maf::kernels
