#pragma once

// Data-parallel inner loops behind the tensor ops. Each kernel has a scalar
// reference implementation and, where the build and CPU allow it, an AVX2
// variant. The active table is chosen once at first use: the best ISA the CPU
// reports, or the one named by the PCNN_KERNELS environment variable
// ("scalar" / "avx2").

#include <cstddef>
#include <string_view>

namespace pcnn::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], row-major, contiguous.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
};

const KernelTable& scalar_table();
#if defined(PCNN_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

bool available(Isa isa);
const KernelTable& table(Isa isa);
const KernelTable& active();
/// Overrides the runtime choice; throws std::invalid_argument if `isa` is unavailable.
void select(Isa isa);

/// C[m x n] (+)= op(A) * op(B) where op transposes when the flag is set.
/// A is stored m x k (or k x m when transposed), B k x n (or n x k).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

}  // namespace pcnn::kernels
