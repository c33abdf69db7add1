#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maf/kernels.hpp"
#include "maf/rng.hpp"

#include <cstring>
#include <vector>

using namespace maf;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

// Bitwise comparison; NaN-free inputs by construction.
bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<kernels::Backend> vector_backends() {
    std::vector<kernels::Backend> out;
    for (auto b : {kernels::Backend::Avx2, kernels::Backend::Neon})
        if (kernels::backend_available(b)) out.push_back(b);
    return out;
}

} // namespace

TEST_CASE("vector backends match scalar reference bit for bit") {
    auto backends = vector_backends();
    if (backends.empty()) {
        MESSAGE("no vector backend on this host; scalar only");
        return;
    }
    Rng rng(20240601);
    const auto& ref = kernels::scalar_table;

    for (auto backend : backends) {
        kernels::set_backend(backend);
        const auto& vec = kernels::active();
        CAPTURE(kernels::backend_name(backend));

        // Ragged shapes on purpose: tails exercise the scalar remainder path.
        for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{
                 {1, 1, 1}, {3, 4, 2}, {5, 7, 9}, {8, 8, 8}, {13, 17, 6}, {32, 64, 33}}) {
            auto a = random_vec(rng, m * k);
            auto b = random_vec(rng, k * n);
            std::vector<double> c_ref(m * n), c_vec(m * n);
            ref.matmul_nn(a.data(), b.data(), c_ref.data(), m, k, n);
            vec.matmul_nn(a.data(), b.data(), c_vec.data(), m, k, n);
            CHECK(bits_equal(c_ref, c_vec));
        }

        for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 7u, 16u, 100u, 1023u}) {
            auto a = random_vec(rng, n);
            auto b = random_vec(rng, n);
            std::vector<double> r1(n), r2(n);

            ref.add(a.data(), b.data(), r1.data(), n);
            vec.add(a.data(), b.data(), r2.data(), n);
            CHECK(bits_equal(r1, r2));

            ref.sub(a.data(), b.data(), r1.data(), n);
            vec.sub(a.data(), b.data(), r2.data(), n);
            CHECK(bits_equal(r1, r2));

            ref.mul(a.data(), b.data(), r1.data(), n);
            vec.mul(a.data(), b.data(), r2.data(), n);
            CHECK(bits_equal(r1, r2));

            ref.scale(a.data(), 1.7, r1.data(), n);
            vec.scale(a.data(), 1.7, r2.data(), n);
            CHECK(bits_equal(r1, r2));

            r1 = b;
            r2 = b;
            ref.axpy(-0.37, a.data(), r1.data(), n);
            vec.axpy(-0.37, a.data(), r2.data(), n);
            CHECK(bits_equal(r1, r2));

            ref.relu(a.data(), r1.data(), n);
            vec.relu(a.data(), r2.data(), n);
            CHECK(bits_equal(r1, r2));

            ref.relu_mask(b.data(), a.data(), r1.data(), n);
            vec.relu_mask(b.data(), a.data(), r2.data(), n);
            CHECK(bits_equal(r1, r2));
        }

        for (auto [m, n] : std::vector<std::array<std::size_t, 2>>{{1, 1}, {4, 5}, {9, 3}, {100, 13}}) {
            auto a = random_vec(rng, m * n);
            std::vector<double> r1(n), r2(n);
            ref.colsum(a.data(), r1.data(), m, n);
            vec.colsum(a.data(), r2.data(), m, n);
            CHECK(bits_equal(r1, r2));
        }
    }
    kernels::set_backend(backends.front());
}

TEST_CASE("relu keeps signed zero semantics identical across backends") {
    std::vector<double> in = {-0.0, 0.0, -1.0, 1.0, 1e-308, -1e-308};
    std::vector<double> r_ref(in.size());
    kernels::scalar_table.relu(in.data(), r_ref.data(), in.size());
    for (auto backend : vector_backends()) {
        kernels::set_backend(backend);
        std::vector<double> r(in.size());
        kernels::active().relu(in.data(), r.data(), in.size());
        CHECK(bits_equal(r_ref, r));
    }
}

TEST_CASE("backend selection is explicit and reversible") {
    auto original = kernels::active_backend();
    kernels::set_backend(kernels::Backend::Scalar);
    CHECK(kernels::active_backend() == kernels::Backend::Scalar);
    kernels::set_backend(original);
    CHECK(kernels::active_backend() == original);
}
