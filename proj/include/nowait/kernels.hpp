#pragma once

// Data-parallel inner loops used by the logits processor and the keyword
// matcher. Every kernel has a scalar reference implementation; wider variants
// are picked at runtime from the CPU feature set and must agree with the
// scalar path bit-for-bit (see tests/test_kernels.cpp).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace nowait::kernels {

enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa);

struct KernelTable {
    Isa isa;
    // x[i] = value wherever mask[i] != 0.
    void (*fill_masked)(float * x, const uint8_t * mask, size_t n, float value);
    // Index of the first maximum; n must be > 0.
    size_t (*argmax)(const float * x, size_t n);
    float (*min_value)(const float * x, size_t n);
    bool (*all_finite)(const float * x, size_t n);
    void (*ascii_lower)(char * s, size_t n);
};

const KernelTable & scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable * avx2_table();

// The widest supported table. Overridable with NOWAIT_ISA=scalar|avx2.
const KernelTable & active();

inline void fill_masked(std::span<float> x, std::span<const uint8_t> mask, float value) {
    active().fill_masked(x.data(), mask.data(), x.size(), value);
}

inline size_t argmax(std::span<const float> x) {
    return active().argmax(x.data(), x.size());
}

inline float min_value(std::span<const float> x) {
    return active().min_value(x.data(), x.size());
}

inline bool all_finite(std::span<const float> x) {
    return active().all_finite(x.data(), x.size());
}

inline void ascii_lower_inplace(std::span<char> s) {
    active().ascii_lower(s.data(), s.size());
}

} // namespace nowait::kernels
