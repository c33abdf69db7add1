#include "maf/kernels.hpp"

#include "maf/errors.hpp"

#include <cstdlib>
#include <cstring>

namespace maf::kernels {
namespace {

Backend detect_default() {
    const char* env = std::getenv("MAF_KERNELS");
    if (env != nullptr && std::strcmp(env, "auto") != 0) {
        if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
        if (std::strcmp(env, "avx2") == 0) return Backend::Avx2;
        if (std::strcmp(env, "neon") == 0) return Backend::Neon;
        throw ConfigError(std::string("unknown MAF_KERNELS value: ") + env);
    }
#if defined(__aarch64__)
    return Backend::Neon;
#elif defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2")) return Backend::Avx2;
    return Backend::Scalar;
#else
    return Backend::Scalar;
#endif
}

const KernelTable* table_for(Backend b) {
    switch (b) {
        case Backend::Scalar: return &scalar_table;
#if defined(__x86_64__) || defined(_M_X64)
        case Backend::Avx2: return &avx2_table;
#endif
#if defined(__aarch64__)
        case Backend::Neon: return &neon_table;
#endif
        default: return nullptr;
    }
}

struct State {
    Backend backend;
    const KernelTable* table;
    State() : backend(detect_default()), table(table_for(backend)) {
        if (table == nullptr)
            throw ConfigError("kernel backend " + backend_name(backend) +
                              " not available in this build");
    }
};

State& state() {
    static State s;
    return s;
}

} // namespace

const KernelTable& active() { return *state().table; }

Backend active_backend() { return state().backend; }

void set_backend(Backend b) {
    const KernelTable* t = table_for(b);
    if (t == nullptr)
        throw ConfigError("kernel backend " + backend_name(b) + " not available in this build");
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::Avx2 && !__builtin_cpu_supports("avx2"))
        throw ConfigError("cpu does not support avx2");
#endif
    state().backend = b;
    state().table = t;
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
    }
    return "?";
}

bool backend_available(Backend b) {
    if (table_for(b) == nullptr) return false;
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::Avx2) return __builtin_cpu_supports("avx2");
#endif
    return true;
}

} // namespace maf::kernels
