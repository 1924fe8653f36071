#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcnn/kernels.hpp"

namespace pcnn::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(PCNN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_choice() {
  if (const char* env = std::getenv("PCNN_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && available(Isa::Avx2)) return &table(Isa::Avx2);
  }
  return available(Isa::Avx2) ? &table(Isa::Avx2) : &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* t = initial_choice();
  return t;
}

void transpose(const double* src, std::size_t rows, std::size_t cols, std::vector<double>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

bool available(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
      return cpu_has_avx2();
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!available(isa)) throw std::invalid_argument("kernel ISA not available on this build/CPU");
#if defined(PCNN_HAVE_AVX2)
  if (isa == Isa::Avx2) return avx2_table();
#endif
  return scalar_table();
}

const KernelTable& active() { return *current(); }

void select(Isa isa) { current() = &table(isa); }

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  thread_local std::vector<double> a_buf, b_buf;
  if (trans_a) {
    transpose(a, k, m, a_buf);
    a = a_buf.data();
  }
  if (trans_b) {
    transpose(b, n, k, b_buf);
    b = b_buf.data();
  }
  active().gemm_nn(m, n, k, a, b, c);
}

}  // namespace pcnn::kernels
