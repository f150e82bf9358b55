#pragma once

#include <string>

namespace hourglass {

enum class Precision { f32, f64 };

// Reads HOURGLASS_PRECISION (f32 or f64; unset means f32). Throws
// ConfigError on any other value.
Precision precision_from_env();
std::string to_string(Precision p);

// Keeps large tensor buffers in the heap instead of returning them to the
// kernel after every step; repeated mmap/munmap dominates small models.
void tune_allocator();

}  // namespace hourglass
