#include <atomic>
#include <cstdlib>
#include <string>

#include "euda/error.hpp"
#include "euda/simd/kernels.hpp"

namespace euda::simd {
namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  Backend wanted = Backend::kAuto;
  if (const char* env = std::getenv("EUDA_SIMD")) {
    try {
      wanted = parse_backend(env);
    } catch (const ContractError&) {
      wanted = Backend::kAuto;
    }
  }
  if (wanted == Backend::kScalar) return &scalar_table();
  if (const KernelTable* wide = avx2_table()) return wide;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

#ifndef EUDA_HAVE_AVX2_TABLE
namespace detail {
const KernelTable* avx2_table_unchecked() { return nullptr; }
}  // namespace detail
#endif

const KernelTable* avx2_table() {
  static const KernelTable* table = cpu_has_avx2_fma() ? detail::avx2_table_unchecked() : nullptr;
  return table;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(Backend backend) {
  const KernelTable* table = nullptr;
  switch (backend) {
    case Backend::kScalar:
      table = &scalar_table();
      break;
    case Backend::kAvx2:
      table = avx2_table();
      break;
    case Backend::kAuto:
      table = avx2_table() ? avx2_table() : &scalar_table();
      break;
  }
  if (!table) return false;
  current().store(table, std::memory_order_relaxed);
  return true;
}

Backend parse_backend(std::string_view name) {
  if (name == "auto") return Backend::kAuto;
  if (name == "scalar") return Backend::kScalar;
  if (name == "avx2") return Backend::kAvx2;
  throw ContractError("unknown SIMD backend '" + std::string(name) + "'");
}

ScopedBackend::ScopedBackend(Backend backend) : previous_(&active()), ok_(select(backend)) {}

ScopedBackend::~ScopedBackend() { current().store(previous_, std::memory_order_relaxed); }

}  // namespace euda::simd
