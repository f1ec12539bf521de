#pragma once

#include <cstddef>
#include <cstdint>

namespace nowait::kernels::scalar {
void   fill_masked(float * x, const uint8_t * mask, size_t n, float value);
size_t argmax(const float * x, size_t n);
float  min_value(const float * x, size_t n);
bool   all_finite(const float * x, size_t n);
void   ascii_lower(char * s, size_t n);
} // namespace nowait::kernels::scalar

#if defined(NOWAIT_HAVE_AVX2)
namespace nowait::kernels::avx2 {
void   fill_masked(float * x, const uint8_t * mask, size_t n, float value);
size_t argmax(const float * x, size_t n);
float  min_value(const float * x, size_t n);
bool   all_finite(const float * x, size_t n);
void   ascii_lower(char * s, size_t n);
} // namespace nowait::kernels::avx2
#endif
