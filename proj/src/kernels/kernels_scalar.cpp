#include <algorithm>
#include <cmath>

#include "gquant/kernels.hpp"

namespace gquant::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_row,
          std::size_t a_col, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy(a[i * a_row + p * a_col], b + p * ldb, c + i * ldc, n);
  }
}

void relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void encode_floor(const double* v, std::uint32_t* codes, std::size_t n, std::uint32_t levels) {
  const double top = levels;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = std::clamp(std::floor(v[i]), 0.0, top);
    codes[i] = static_cast<std::uint32_t>(f);
  }
}

void encode_round(const double* v, std::uint32_t* codes, std::size_t n, std::uint32_t levels) {
  const double top = levels;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::clamp(std::round(v[i]), 0.0, top);
    codes[i] = static_cast<std::uint32_t>(r);
  }
}

void decode_unit(const std::uint32_t* codes, double* out, std::size_t n, std::uint32_t levels) {
  const double l = levels;
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(codes[i]) / l;
}

void decode_signed(const std::uint32_t* codes, double* out, std::size_t n, std::uint32_t levels) {
  const double l = levels;
  for (std::size_t i = 0; i < n; ++i) out[i] = (2.0 * static_cast<double>(codes[i])) / l - 1.0;
}

void adam_update(double* p, const double* g, double* m, double* v, std::size_t n,
                 const AdamCoeffs& c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double grad = g[i] + c.weight_decay * p[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * (grad * grad);
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

constexpr KernelTable kTable{Isa::Scalar, dot,         axpy,          gemm,          relu,       encode_floor,
                             encode_round, decode_unit, decode_signed, adam_update};

}  // namespace

const KernelTable& scalar_table() noexcept { return kTable; }

}  // namespace gquant::kernels
