#pragma once

#include <cstddef>
#include <string_view>

namespace euda::simd {

// Table of data-parallel primitives. The scalar table is the reference; wider
// tables must agree with it to rounding (different lane order and FMA).
//
// Every kernel is symmetric in its two vector arguments bit-for-bit:
// dot(a, b) == dot(b, a) and squared_distance(a, b) == squared_distance(b, a).
// The MMD estimators rely on this for exact argument-swap symmetry.
struct KernelTable {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
};

enum class Backend { kAuto, kScalar, kAvx2 };

const KernelTable& scalar_table();

// nullptr when the table was not compiled in or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table();

// The table used by the rest of the library. On first use it is chosen from
// the EUDA_SIMD environment variable (auto|scalar|avx2), defaulting to the
// widest supported table.
const KernelTable& active();

// Overrides the active table. Returns false (and leaves the selection alone)
// if the requested backend is unavailable. Not thread-safe with respect to
// concurrent kernel calls.
bool select(Backend backend);

Backend parse_backend(std::string_view name);

// Restores the previously active table on scope exit.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend);
  ~ScopedBackend();
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;
  bool ok() const { return ok_; }

 private:
  const KernelTable* previous_;
  bool ok_;
};

namespace detail {
const KernelTable* avx2_table_unchecked();
}

}  // namespace euda::simd
