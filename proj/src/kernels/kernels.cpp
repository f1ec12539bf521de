#include "nowait/kernels.hpp"

#include "kernels_impl.hpp"

#include <cstdlib>
#include <string>

namespace nowait::kernels {

std::string_view to_string(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2:   return "avx2";
    }
    return "unknown";
}

const KernelTable & scalar_table() {
    static const KernelTable table{
        Isa::scalar,
        scalar::fill_masked,
        scalar::argmax,
        scalar::min_value,
        scalar::all_finite,
        scalar::ascii_lower,
    };
    return table;
}

const KernelTable * avx2_table() {
#if defined(NOWAIT_HAVE_AVX2)
    static const KernelTable table{
        Isa::avx2,
        avx2::fill_masked,
        avx2::argmax,
        avx2::min_value,
        avx2::all_finite,
        avx2::ascii_lower,
    };
    static const bool supported = __builtin_cpu_supports("avx2");
    return supported ? &table : nullptr;
#else
    return nullptr;
#endif
}

static const KernelTable & select() {
    const char * env = std::getenv("NOWAIT_ISA");
    if (env != nullptr && std::string(env) == "scalar") {
        return scalar_table();
    }
    if (const KernelTable * t = avx2_table()) {
        return *t;
    }
    return scalar_table();
}

const KernelTable & active() {
    static const KernelTable & table = select();
    return table;
}

} // namespace nowait::kernels
