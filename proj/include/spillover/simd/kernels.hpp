#pragma once
// Dense double-precision kernels used by the denoiser network.
//
// Every kernel has a scalar reference implementation and, where the target
// supports it, an AVX2+FMA (x86-64) or NEON (aarch64) variant. The active
// backend is picked once at startup from CPU capabilities and can be pinned
// with the SPILLOVER_SIMD environment variable ("scalar", "avx2", "neon") or
// set_backend(). Vector variants reassociate sums, so they agree with the
// scalar reference to rounding, not bitwise.

#include <cstddef>
#include <span>
#include <string_view>

namespace spillover::simd {

enum class Backend { Scalar, Avx2, Neon };

std::string_view backend_name(Backend backend);
bool backend_supported(Backend backend);

Backend active_backend();
// Throws std::invalid_argument if the backend is not supported on this CPU.
void set_backend(Backend backend);

// Sum of a[i] * b[i].
double dot(std::span<const double> a, std::span<const double> b);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Sum of (a[i] - b[i])^2.
double squared_distance(std::span<const double> a, std::span<const double> b);

// y = W x + bias, W row-major with y.size() rows and x.size() columns.
void affine(std::span<const double> weights, std::span<const double> bias,
            std::span<const double> x, std::span<double> y);

// x_grad += W^T delta, W row-major (delta.size() rows, x_grad.size() columns).
void affine_transpose_accumulate(std::span<const double> weights,
                                 std::span<const double> delta,
                                 std::span<double> x_grad);

// W_grad += delta x^T
void outer_accumulate(std::span<const double> delta, std::span<const double> x,
                      std::span<double> weights_grad);

// Raw per-backend entry points, exposed for equivalence tests. Only the
// backends compiled for this target are defined.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define SPILLOVER_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__) || defined(_M_ARM64)
#define SPILLOVER_HAVE_NEON_KERNELS 1
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
}  // namespace neon
#endif

}  // namespace spillover::simd
