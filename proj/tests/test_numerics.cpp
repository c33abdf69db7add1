#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maf/grad_check.hpp"
#include "maf/rng.hpp"
#include "maf/tape.hpp"
#include "maf/tensor.hpp"

#include <cmath>
#include <cstring>

using namespace maf;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Tensor t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// Independent triple-loop product, j-major accumulation order not required:
// only values are compared, to 1e-12.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    return c;
}

// Direct long-double evaluation of mean_i -log softmax(logits_i)[label_i],
// deliberately without max-shift stabilization (safe at small magnitudes).
double xent_oracle(const Tensor& logits, const std::vector<int>& labels) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        long double denom = 0.0L;
        for (std::size_t c = 0; c < logits.cols(); ++c)
            denom += expl(static_cast<long double>(logits.at(i, c)));
        const long double p =
            expl(static_cast<long double>(logits.at(i, static_cast<std::size_t>(labels[i])))) /
            denom;
        total += -logl(p);
    }
    return static_cast<double>(total / static_cast<long double>(logits.rows()));
}

} // namespace

TEST_CASE("matmul identity and selection") {
    Tensor eye(2, 2, {1, 0, 0, 1});
    Tensor m(2, 2, {1, 2, 3, 4});
    Tensor r = matmul_plain(eye, m);
    CHECK(r.vec() == m.vec());

    Tensor sel(1, 2, {1, 0});
    Tensor col(2, 1, {0, 5});
    Tensor s = matmul_plain(sel, col);
    CHECK(s.rows() == 1);
    CHECK(s.cols() == 1);
    CHECK(s.item() == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(7);
    Tensor a = random_tensor(rng, 3, 4);
    Tensor b = random_tensor(rng, 4, 2);
    Tensor got = matmul_plain(a, b);
    Tensor want = matmul_oracle(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tensor a(2, 3);
    Tensor b(4, 2);
    CHECK_THROWS_AS(matmul_plain(a, b), DimensionError);
}

TEST_CASE("relu values and gradient") {
    Tape t;
    NodeId x = t.leaf(Tensor(1, 3, {-1, 0, 2}));
    NodeId r = relu(t, x);
    CHECK((t.value(r).vec() == std::vector<double>{0, 0, 2}));

    // All-negative input: zero output, zero gradient.
    Tape t2;
    NodeId x2 = t2.leaf(Tensor(1, 3, {-1, -2, -3}));
    NodeId l2 = sum_all(t2, relu(t2, x2));
    t2.backward(l2);
    CHECK((t2.grad(x2).vec() == std::vector<double>{0, 0, 0}));

    // Indicator gradient at [3, -3] under loss = sum.
    Tape t3;
    NodeId x3 = t3.leaf(Tensor(1, 2, {3, -3}));
    NodeId l3 = sum_all(t3, relu(t3, x3));
    t3.backward(l3);
    CHECK((t3.grad(x3).vec() == std::vector<double>{1, 0}));
}

TEST_CASE("cross entropy on uniform and saturated logits") {
    {
        Tape t;
        NodeId logits = t.leaf(Tensor(1, 2, {0, 0}));
        NodeId l = softmax_cross_entropy(t, logits, {1});
        CHECK(t.value(l).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    {
        Tape t;
        NodeId logits = t.leaf(Tensor(1, 2, {-50, 50}));
        NodeId l = softmax_cross_entropy(t, logits, {1});
        CHECK(std::isfinite(t.value(l).item()));
        CHECK(t.value(l).item() == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(t.value(l).item() >= 0.0);
    }
}

TEST_CASE("cross entropy matches direct formula oracle on random logits") {
    Rng rng(99);
    Tensor logits = random_tensor(rng, 5, 2);
    std::vector<int> labels = {1, 0, 0, 1, 1};
    Tape t;
    NodeId l = softmax_cross_entropy(t, t.leaf(logits), labels);
    CHECK(t.value(l).item() == doctest::Approx(xent_oracle(logits, labels)).epsilon(1e-13));
}

TEST_CASE("cross entropy rejects bad labels") {
    Tape t;
    NodeId logits = t.leaf(Tensor(1, 2, {0.5, -0.5}));
    CHECK_THROWS_AS((softmax_cross_entropy(t, logits, {2})), InputError);
    CHECK_THROWS_AS((softmax_cross_entropy(t, logits, {-1})), InputError);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(123);
    Tensor logits = random_tensor(rng, 20, 2, 5.0);
    Tape t;
    NodeId p = softmax_rows(t, t.leaf(logits));
    for (std::size_t i = 0; i < 20; ++i) {
        const double rowsum = t.value(p).at(i, 0) + t.value(p).at(i, 1);
        CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("backward of sum(W*x) has the outer-product structure") {
    Tensor w(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor x(3, 1, {10, 20, 30});
    Tape t;
    NodeId wn = t.leaf(w);
    NodeId xn = t.leaf(x);
    NodeId l = sum_all(t, matmul(t, wn, xn));
    t.backward(l);
    // d/dW sum(Wx) = 1 * x^T broadcast over rows.
    const Tensor& gw = t.grad(wn);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(gw.at(i, j) == x.at(j, 0));
}

TEST_CASE("gradient of an unreached parameter is zero") {
    Tape t;
    NodeId used = t.leaf(Tensor::scalar(2.0));
    NodeId unused = t.leaf(Tensor(2, 2, {1, 2, 3, 4}));
    NodeId l = mul(t, used, used);
    t.backward(l);
    CHECK((t.grad(unused).vec() == std::vector<double>{0, 0, 0, 0}));
    CHECK(t.grad(used).item() == 4.0);
}

TEST_CASE("backward contract violations") {
    Tape t;
    NodeId x = t.leaf(Tensor(1, 2, {1, 2}));
    NodeId l = sum_all(t, x);
    t.backward(l);
    CHECK_THROWS_AS(t.backward(l), ContractError);

    Tape t2;
    NodeId x2 = t2.leaf(Tensor(1, 2, {1, 2}));
    CHECK_THROWS_AS(t2.backward(x2), ContractError);
}

TEST_CASE("finite differences on a quadratic are exact to roundoff") {
    auto f = [](const std::vector<Tensor>& p) {
        double s = 0.0;
        for (std::size_t i = 0; i < p[0].size(); ++i) s += p[0][i] * p[0][i];
        return s;
    };
    std::vector<Tensor> params = {Tensor(1, 2, {1, 2})};
    std::vector<Tensor> analytic = {Tensor(1, 2, {2, 4})};
    CHECK(finite_diff_check(f, params, analytic, 1e-6) < 1e-8);
}

TEST_CASE("finite differences validate every tape op at random kink-free points") {
    Rng rng(2025);
    for (int point = 0; point < 10; ++point) {
        // Avoid relu kinks: inputs bounded away from zero via resampling.
        Tensor a = random_tensor(rng, 3, 4);
        Tensor b = random_tensor(rng, 4, 3);
        for (std::size_t i = 0; i < a.size(); ++i)
            while (std::abs(a[i]) < 1e-3) a[i] = rng.normal();

        auto build = [&](const std::vector<Tensor>& p) {
            Tape t;
            NodeId an = t.leaf(p[0]);
            NodeId bn = t.leaf(p[1]);
            NodeId mm = matmul(t, an, bn);           // 3x3
            NodeId r = relu(t, mm);                  // 3x3
            NodeId tr = transpose(t, r);             // 3x3
            NodeId s1 = add(t, tr, r);               // 3x3
            NodeId cm = colmean(t, s1);              // 1x3
            NodeId centered = sub_rowvec(t, s1, cm); // 3x3
            NodeId sq = mul(t, centered, centered);
            NodeId v = sum_all(t, sq);
            NodeId p2 = softmax_rows(t, s1);
            NodeId ce = softmax_cross_entropy(t, s1, {0, 2, 1});
            NodeId mixed = add(t, scale(t, v, 0.25), mul(t, ce, sum_all(t, p2)));
            return std::pair<Tape, NodeId>(std::move(t), mixed);
        };

        std::vector<Tensor> params = {a, b};
        auto [tape, loss] = build(params);
        tape.backward(loss);
        std::vector<Tensor> analytic = {tape.grad(0), tape.grad(1)};

        auto f = [&](const std::vector<Tensor>& p) {
            auto [tp, l] = build(p);
            return tp.value(l).item();
        };
        CHECK(finite_diff_check(f, params, analytic, 1e-6) <= 1e-5);
    }
}

TEST_CASE("operations are deterministic bit for bit") {
    Rng rng1(555), rng2(555);
    Tensor a1 = random_tensor(rng1, 6, 5), a2 = random_tensor(rng2, 6, 5);
    Tensor b1 = random_tensor(rng1, 5, 7), b2 = random_tensor(rng2, 5, 7);
    Tensor c1 = matmul_plain(a1, b1);
    Tensor c2 = matmul_plain(a2, b2);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0);
}
