#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "spillover/simd/kernels.hpp"

namespace spillover::simd {
namespace {

struct KernelTable {
  Backend backend;
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
};

constexpr KernelTable kScalarTable{Backend::Scalar, &scalar::dot, &scalar::axpy,
                                   &scalar::squared_distance};
#if defined(SPILLOVER_HAVE_AVX2_KERNELS)
constexpr KernelTable kAvx2Table{Backend::Avx2, &avx2::dot, &avx2::axpy,
                                 &avx2::squared_distance};
#endif
#if defined(SPILLOVER_HAVE_NEON_KERNELS)
constexpr KernelTable kNeonTable{Backend::Neon, &neon::dot, &neon::axpy,
                                 &neon::squared_distance};
#endif

const KernelTable* table_for(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return &kScalarTable;
    case Backend::Avx2:
#if defined(SPILLOVER_HAVE_AVX2_KERNELS)
      return &kAvx2Table;
#else
      return nullptr;
#endif
    case Backend::Neon:
#if defined(SPILLOVER_HAVE_NEON_KERNELS)
      return &kNeonTable;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const KernelTable* detect() {
  if (const char* forced = std::getenv("SPILLOVER_SIMD")) {
    const std::string name(forced);
    if (name == "scalar") return &kScalarTable;
    if (name == "avx2" && backend_supported(Backend::Avx2)) return table_for(Backend::Avx2);
    if (name == "neon" && backend_supported(Backend::Neon)) return table_for(Backend::Neon);
  }
  if (backend_supported(Backend::Avx2)) return table_for(Backend::Avx2);
  if (backend_supported(Backend::Neon)) return table_for(Backend::Neon);
  return &kScalarTable;
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

inline const KernelTable& kernels() { return *active_table().load(std::memory_order_acquire); }

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
    case Backend::Neon: return "neon";
  }
  return "unknown";
}

bool backend_supported(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
#if defined(SPILLOVER_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::Neon:
#if defined(SPILLOVER_HAVE_NEON_KERNELS)
      return true;  // mandatory on aarch64
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return kernels().backend; }

void set_backend(Backend backend) {
  if (!backend_supported(backend)) {
    throw std::invalid_argument("SIMD backend not supported on this CPU: " +
                                std::string(backend_name(backend)));
  }
  active_table().store(table_for(backend), std::memory_order_release);
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  return kernels().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size(), "axpy");
  kernels().axpy(alpha, x.data(), y.data(), x.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "squared_distance");
  return kernels().squared_distance(a.data(), b.data(), a.size());
}

void affine(std::span<const double> weights, std::span<const double> bias,
            std::span<const double> x, std::span<double> y) {
  const std::size_t rows = y.size();
  const std::size_t cols = x.size();
  require_same_size(weights.size(), rows * cols, "affine");
  require_same_size(bias.size(), rows, "affine");
  const KernelTable& k = kernels();
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = k.dot(weights.data() + r * cols, x.data(), cols) + bias[r];
  }
}

void affine_transpose_accumulate(std::span<const double> weights,
                                 std::span<const double> delta,
                                 std::span<double> x_grad) {
  const std::size_t rows = delta.size();
  const std::size_t cols = x_grad.size();
  require_same_size(weights.size(), rows * cols, "affine_transpose_accumulate");
  const KernelTable& k = kernels();
  for (std::size_t r = 0; r < rows; ++r) {
    k.axpy(delta[r], weights.data() + r * cols, x_grad.data(), cols);
  }
}

void outer_accumulate(std::span<const double> delta, std::span<const double> x,
                      std::span<double> weights_grad) {
  const std::size_t rows = delta.size();
  const std::size_t cols = x.size();
  require_same_size(weights_grad.size(), rows * cols, "outer_accumulate");
  const KernelTable& k = kernels();
  for (std::size_t r = 0; r < rows; ++r) {
    k.axpy(delta[r], x.data(), weights_grad.data() + r * cols, cols);
  }
}

}  // namespace spillover::simd
