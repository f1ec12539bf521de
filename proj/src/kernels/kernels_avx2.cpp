// Compiled with -mavx2; only entered after a runtime CPU check.

#include "kernels_impl.hpp"

#include <immintrin.h>

#include <bit>
#include <cmath>
#include <limits>

namespace nowait::kernels::avx2 {

void fill_masked(float * x, const uint8_t * mask, size_t n, float value) {
    const __m256  v    = _mm256_set1_ps(value);
    const __m256i zero = _mm256_setzero_si256();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m128i m8  = _mm_loadl_epi64(reinterpret_cast<const __m128i *>(mask + i));
        const __m256i m32 = _mm256_cvtepu8_epi32(m8);
        const __m256  keep = _mm256_castsi256_ps(_mm256_cmpeq_epi32(m32, zero));
        const __m256  cur  = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(x + i, _mm256_blendv_ps(v, cur, keep));
    }
    for (; i < n; ++i) {
        if (mask[i]) {
            x[i] = value;
        }
    }
}

static float hmax(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

static float hmin(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_min_ps(lo, hi);
    lo = _mm_min_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_min_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

size_t argmax(const float * x, size_t n) {
    // two passes: find the maximum, then its first position
    float best = x[0];
    size_t i = 0;
    if (n >= 8) {
        __m256 acc = _mm256_loadu_ps(x);
        for (i = 8; i + 8 <= n; i += 8) {
            acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
        }
        best = hmax(acc);
    }
    for (; i < n; ++i) {
        if (x[i] > best) {
            best = x[i];
        }
    }

    const __m256 target = _mm256_set1_ps(best);
    i = 0;
    for (; i + 8 <= n; i += 8) {
        const int bits = _mm256_movemask_ps(_mm256_cmp_ps(_mm256_loadu_ps(x + i), target, _CMP_EQ_OQ));
        if (bits != 0) {
            return i + static_cast<size_t>(std::countr_zero(static_cast<unsigned>(bits)));
        }
    }
    for (; i < n; ++i) {
        if (x[i] == best) {
            return i;
        }
    }
    return 0;
}

float min_value(const float * x, size_t n) {
    float m = std::numeric_limits<float>::infinity();
    size_t i = 0;
    if (n >= 8) {
        __m256 acc = _mm256_set1_ps(m);
        for (; i + 8 <= n; i += 8) {
            acc = _mm256_min_ps(acc, _mm256_loadu_ps(x + i));
        }
        m = hmin(acc);
    }
    for (; i < n; ++i) {
        if (x[i] < m) {
            m = x[i];
        }
    }
    return m;
}

bool all_finite(const float * x, size_t n) {
    const __m256 abs_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
    const __m256 inf      = _mm256_set1_ps(std::numeric_limits<float>::infinity());
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 a = _mm256_and_ps(_mm256_loadu_ps(x + i), abs_mask);
        if (_mm256_movemask_ps(_mm256_cmp_ps(a, inf, _CMP_LT_OQ)) != 0xFF) {
            return false;
        }
    }
    for (; i < n; ++i) {
        if (!std::isfinite(x[i])) {
            return false;
        }
    }
    return true;
}

void ascii_lower(char * s, size_t n) {
    const __m256i lo   = _mm256_set1_epi8('A' - 1);
    const __m256i hi   = _mm256_set1_epi8('Z' + 1);
    const __m256i diff = _mm256_set1_epi8('a' - 'A');
    size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        const __m256i c  = _mm256_loadu_si256(reinterpret_cast<const __m256i *>(s + i));
        const __m256i up = _mm256_and_si256(_mm256_cmpgt_epi8(c, lo), _mm256_cmpgt_epi8(hi, c));
        _mm256_storeu_si256(reinterpret_cast<__m256i *>(s + i), _mm256_add_epi8(c, _mm256_and_si256(up, diff)));
    }
    for (; i < n; ++i) {
        if (s[i] >= 'A' && s[i] <= 'Z') {
            s[i] = static_cast<char>(s[i] + ('a' - 'A'));
        }
    }
}

} // namespace nowait::kernels::avx2
