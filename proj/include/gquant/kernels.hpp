#pragma once

// Data-parallel inner loops used by the quantizers, the autograd engine and
// the optimizer. Every kernel has a portable scalar reference and, where the
// build and the CPU allow it, an AVX2 variant. The active table is chosen once
// at runtime; `GQUANT_ISA=scalar` in the environment forces the reference.
//
// Elementwise kernels and gemm are bit-identical across variants. Reductions
// (`dot`) sum in a different order and agree to rounding only.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace gquant::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa) noexcept;

struct AdamCoeffs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double weight_decay;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // c[i*ldc + j] += sum_p a[i*a_row + p*a_col] * b[p*ldb + j] for i < m, j < n,
  // accumulated in ascending p with each product rounded before the add, so
  // every variant produces the same bits as a sequence of axpy calls.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_row,
               std::size_t a_col, const double* b, std::size_t ldb, double* c, std::size_t ldc);
  void (*relu)(const double* x, double* y, std::size_t n);

  // Code stage of the quantizers: v is the continuous pre-rounding value
  // already scaled to [0, levels]. Results are clamped to [0, levels].
  void (*encode_floor)(const double* v, std::uint32_t* codes, std::size_t n,
                       std::uint32_t levels);
  // Round half away from zero.
  void (*encode_round)(const double* v, std::uint32_t* codes, std::size_t n,
                       std::uint32_t levels);

  // code / levels
  void (*decode_unit)(const std::uint32_t* codes, double* out, std::size_t n,
                      std::uint32_t levels);
  // 2 * code / levels - 1
  void (*decode_signed)(const std::uint32_t* codes, double* out, std::size_t n,
                        std::uint32_t levels);

  // Adam with L2 weight decay folded into the gradient.
  void (*adam_update)(double* param, const double* grad, double* m, double* v,
                      std::size_t n, const AdamCoeffs& c);
};

const KernelTable& scalar_table() noexcept;

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2.
const KernelTable* avx2_table() noexcept;

/// The table in use by the library.
const KernelTable& active() noexcept;

/// Switches the active table. Throws ConfigError if `isa` is unavailable.
void select(Isa isa);

}  // namespace gquant::kernels
