#include "kernels_impl.hpp"

#include <cmath>
#include <limits>

namespace nowait::kernels::scalar {

void fill_masked(float * x, const uint8_t * mask, size_t n, float value) {
    for (size_t i = 0; i < n; ++i) {
        if (mask[i]) {
            x[i] = value;
        }
    }
}

size_t argmax(const float * x, size_t n) {
    size_t best = 0;
    for (size_t i = 1; i < n; ++i) {
        if (x[i] > x[best]) {
            best = i;
        }
    }
    return best;
}

float min_value(const float * x, size_t n) {
    float m = std::numeric_limits<float>::infinity();
    for (size_t i = 0; i < n; ++i) {
        if (x[i] < m) {
            m = x[i];
        }
    }
    return m;
}

bool all_finite(const float * x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) {
            return false;
        }
    }
    return true;
}

void ascii_lower(char * s, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const char c = s[i];
        if (c >= 'A' && c <= 'Z') {
            s[i] = static_cast<char>(c + ('a' - 'A'));
        }
    }
}

} // namespace nowait::kernels::scalar
