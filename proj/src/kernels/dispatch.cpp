#include <atomic>
#include <cstdlib>
#include <string>

#include "gquant/error.hpp"
#include "gquant/kernels.hpp"

namespace gquant::kernels {

#if defined(GQUANT_HAVE_AVX2)
const KernelTable& avx2_table_unchecked() noexcept;
#endif

namespace {

bool cpu_has_avx2() noexcept {
#if defined(GQUANT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* initial_table() noexcept {
  if (const char* env = std::getenv("GQUANT_ISA"); env && std::string(env) == "scalar") {
    return &scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable* avx2_table() noexcept {
#if defined(GQUANT_HAVE_AVX2)
  if (cpu_has_avx2()) return &avx2_table_unchecked();
#endif
  return nullptr;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

void select(Isa isa) {
  const KernelTable* table = isa == Isa::Scalar ? &scalar_table() : avx2_table();
  if (table == nullptr) {
    throw ConfigError("kernel variant '" + std::string(isa_name(isa)) + "' is not available");
  }
  current().store(table, std::memory_order_release);
}

}  // namespace gquant::kernels
