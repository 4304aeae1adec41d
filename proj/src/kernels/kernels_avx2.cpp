// Compiled with -mavx2 only. FMA is deliberately not enabled so that the
// elementwise kernels round exactly like the scalar reference.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "gquant/kernels.hpp"

namespace gquant::kernels {
namespace {

constexpr std::size_t kLanes = 4;

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + kLanes),
                                             _mm256_loadu_pd(b + i + kLanes)));
  }
  for (; i + kLanes <= n; i += kLanes) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  const __m256d acc = _mm256_add_pd(acc0, acc1);
  const __m128d lo = _mm256_castpd256_pd128(acc);
  const __m128d hi = _mm256_extractf128_pd(acc, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  double sum = _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

// Register tile of R rows by 8 columns of c, held across the whole k loop.
template <std::size_t R>
void gemm_tile(std::size_t k, const double* a, std::size_t a_row, std::size_t a_col,
               const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  __m256d lo[R], hi[R];
  for (std::size_t r = 0; r < R; ++r) {
    lo[r] = _mm256_loadu_pd(c + r * ldc);
    hi[r] = _mm256_loadu_pd(c + r * ldc + kLanes);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + kLanes);
    for (std::size_t r = 0; r < R; ++r) {
      const __m256d av = _mm256_set1_pd(a[r * a_row + p * a_col]);
      lo[r] = _mm256_add_pd(lo[r], _mm256_mul_pd(av, b0));
      hi[r] = _mm256_add_pd(hi[r], _mm256_mul_pd(av, b1));
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + r * ldc, lo[r]);
    _mm256_storeu_pd(c + r * ldc + kLanes, hi[r]);
  }
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_row,
          std::size_t a_col, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t n8 = n - n % (2 * kLanes);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n8; j += 2 * kLanes) {
      gemm_tile<4>(k, a + i * a_row, a_row, a_col, b + j, ldb, c + i * ldc + j, ldc);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n8; j += 2 * kLanes) {
      gemm_tile<1>(k, a + i * a_row, a_row, a_col, b + j, ldb, c + i * ldc + j, ldc);
    }
  }
  if (n8 == n) return;
  for (i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * a_row + p * a_col];
      const double* bp = b + p * ldb;
      for (std::size_t j = n8; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void relu(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    // x > 0 ? x : 0, with NaN mapping to 0 like the scalar comparison.
    const __m256d mask = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_and_pd(vx, mask));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

inline void store_codes(std::uint32_t* dst, __m256d clamped) {
  _mm_storeu_si128(reinterpret_cast<__m128i*>(dst), _mm256_cvttpd_epi32(clamped));
}

void encode_floor(const double* v, std::uint32_t* codes, std::size_t n, std::uint32_t levels) {
  const double top = levels;
  const __m256d vtop = _mm256_set1_pd(top);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    __m256d f = _mm256_floor_pd(_mm256_loadu_pd(v + i));
    f = _mm256_min_pd(_mm256_max_pd(f, zero), vtop);
    store_codes(codes + i, f);
  }
  for (; i < n; ++i) codes[i] = static_cast<std::uint32_t>(std::clamp(std::floor(v[i]), 0.0, top));
}

void encode_round(const double* v, std::uint32_t* codes, std::size_t n, std::uint32_t levels) {
  const double top = levels;
  const __m256d vtop = _mm256_set1_pd(top);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d neg_half = _mm256_set1_pd(-0.5);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d x = _mm256_loadu_pd(v + i);
    __m256d t = _mm256_round_pd(x, _MM_FROUND_TO_ZERO | _MM_FROUND_NO_EXC);
    // The fractional part is exact for |x| < 2^52.
    const __m256d frac = _mm256_sub_pd(x, t);
    const __m256d up = _mm256_and_pd(_mm256_cmp_pd(frac, half, _CMP_GE_OQ), one);
    const __m256d down = _mm256_and_pd(_mm256_cmp_pd(frac, neg_half, _CMP_LE_OQ), one);
    t = _mm256_sub_pd(_mm256_add_pd(t, up), down);
    t = _mm256_min_pd(_mm256_max_pd(t, zero), vtop);
    store_codes(codes + i, t);
  }
  for (; i < n; ++i) codes[i] = static_cast<std::uint32_t>(std::clamp(std::round(v[i]), 0.0, top));
}

inline __m256d load_codes(const std::uint32_t* src) {
  // Codes never exceed 2^16 - 1, so the signed conversion is exact.
  return _mm256_cvtepi32_pd(_mm_loadu_si128(reinterpret_cast<const __m128i*>(src)));
}

void decode_unit(const std::uint32_t* codes, double* out, std::size_t n, std::uint32_t levels) {
  const double l = levels;
  const __m256d vl = _mm256_set1_pd(l);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) _mm256_storeu_pd(out + i, _mm256_div_pd(load_codes(codes + i), vl));
  for (; i < n; ++i) out[i] = static_cast<double>(codes[i]) / l;
}

void decode_signed(const std::uint32_t* codes, double* out, std::size_t n, std::uint32_t levels) {
  const double l = levels;
  const __m256d vl = _mm256_set1_pd(l);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d c = _mm256_mul_pd(two, load_codes(codes + i));
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_div_pd(c, vl), one));
  }
  for (; i < n; ++i) out[i] = (2.0 * static_cast<double>(codes[i])) / l - 1.0;
}

void adam_update(double* p, const double* g, double* m, double* v, std::size_t n,
                 const AdamCoeffs& c) {
  const __m256d wd = _mm256_set1_pd(c.weight_decay);
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d one_b1 = _mm256_set1_pd(1.0 - c.beta1);
  const __m256d one_b2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d lr = _mm256_set1_pd(c.lr);
  const __m256d eps = _mm256_set1_pd(c.eps);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d vp = _mm256_loadu_pd(p + i);
    const __m256d grad = _mm256_add_pd(_mm256_loadu_pd(g + i), _mm256_mul_pd(wd, vp));
    const __m256d vm = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(one_b1, grad));
    const __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(one_b2, _mm256_mul_pd(grad, grad)));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    const __m256d m_hat = _mm256_div_pd(vm, bc1);
    const __m256d v_hat = _mm256_div_pd(vv, bc2);
    const __m256d step =
        _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(vp, step));
  }
  for (; i < n; ++i) {
    const double grad = g[i] + c.weight_decay * p[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * (grad * grad);
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

constexpr KernelTable kTable{Isa::Avx2,   dot,         axpy,          gemm,          relu,       encode_floor,
                             encode_round, decode_unit, decode_signed, adam_update};

}  // namespace

const KernelTable& avx2_table_unchecked() noexcept { return kTable; }

}  // namespace gquant::kernels
