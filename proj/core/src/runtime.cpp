#include "hourglass/runtime.hpp"

#include <malloc.h>

#include <cstdlib>

#include "hourglass/error.hpp"

namespace hourglass {

Precision precision_from_env() {
  const char* v = std::getenv("HOURGLASS_PRECISION");
  if (v == nullptr || *v == '\0') return Precision::f32;
  const std::string s(v);
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("HOURGLASS_PRECISION must be f32 or f64, got '" + s + "'");
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace hourglass
