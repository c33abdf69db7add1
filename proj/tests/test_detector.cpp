#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maf/detector.hpp"
#include "maf/errors.hpp"
#include "maf/grad_check.hpp"
#include "maf/rng.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

using namespace maf;

namespace {

Tensor random_batch(Rng& rng, std::size_t n, std::size_t d) {
    Tensor t(n, d);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

bool weights_equal(const DetectorWeights& a, const DetectorWeights& b) {
    if (a.layers.size() != b.layers.size()) return false;
    auto eq = [](const Tensor& x, const Tensor& y) {
        return x.same_shape(y) &&
               std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
    };
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        if (!eq(a.layers[l].w, b.layers[l].w) || !eq(a.layers[l].b, b.layers[l].b)) return false;
    return eq(a.head.w, b.head.w) && eq(a.head.b, b.head.b);
}

} // namespace

TEST_CASE("init is deterministic in (dim, seed)") {
    DetectorParams a = init_detector(64, 42);
    DetectorParams b = init_detector(64, 42);
    CHECK(weights_equal(a.live, b.live));
    DetectorParams c = init_detector(64, 43);
    CHECK(!weights_equal(a.live, c.live));
}

TEST_CASE("dimension chain is forced by the input width") {
    DetectorParams p = init_detector(64, 1);
    REQUIRE(p.live.layers.size() == 4);
    CHECK(p.live.layers[0].w.rows() == 64);
    CHECK(p.live.layers[0].w.cols() == 32);
    CHECK(p.live.layers[1].w.cols() == 16);
    CHECK(p.live.layers[2].w.cols() == 32);
    CHECK(p.live.layers[3].w.cols() == 64);
    CHECK(p.live.head.w.rows() == 64);
    CHECK(p.live.head.w.cols() == 2);

    DetectorParams paper = init_detector(1024, 1);
    CHECK(paper.live.layers[0].w.cols() == 512);
    CHECK(paper.live.layers[1].w.cols() == 256);
    CHECK(paper.live.layers[2].w.cols() == 512);
    CHECK(paper.live.layers[3].w.cols() == 1024);
}

TEST_CASE("init rejects widths not divisible by four") {
    CHECK_THROWS_AS(init_detector(66, 0), ConfigError);
    CHECK_THROWS_AS(init_detector(4, 0), ConfigError);
}

TEST_CASE("zero batch gives zero logits at init") {
    DetectorParams p = init_detector(16, 9);
    Tensor zeros(3, 16);
    ForwardResult r = detector_forward(p.live, zeros);
    for (std::size_t i = 0; i < r.logits.size(); ++i) CHECK(r.logits[i] == 0.0);
}

TEST_CASE("forward is row-pointwise: duplicated rows give identical logits") {
    Rng rng(5);
    DetectorParams p = init_detector(16, 11);
    Tensor one = random_batch(rng, 1, 16);
    Tensor two(2, 16);
    for (std::size_t j = 0; j < 16; ++j) two.at(0, j) = two.at(1, j) = one.at(0, j);
    ForwardResult r = detector_forward(p.live, two);
    CHECK(r.logits.at(0, 0) == r.logits.at(1, 0));
    CHECK(r.logits.at(0, 1) == r.logits.at(1, 1));
}

TEST_CASE("forward matches a hand-rolled loop evaluation") {
    Rng rng(77);
    const std::size_t d = 16, n = 4;
    DetectorParams p = init_detector(d, 3);
    Tensor batch = random_batch(rng, n, d);
    ForwardResult got = detector_forward(p.live, batch);

    // Independent evaluation, one sample and one unit at a time.
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> h(batch.cols());
        for (std::size_t j = 0; j < d; ++j) h[j] = batch.at(i, j);
        for (const Dense& layer : p.live.layers) {
            std::vector<double> next(layer.w.cols(), 0.0);
            for (std::size_t o = 0; o < layer.w.cols(); ++o) {
                double s = layer.b.at(0, o);
                for (std::size_t in = 0; in < layer.w.rows(); ++in)
                    s += h[in] * layer.w.at(in, o);
                next[o] = s > 0.0 ? s : 0.0;
            }
            h = next;
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double s = p.live.head.b.at(0, c);
            for (std::size_t in = 0; in < d; ++in) s += h[in] * p.live.head.w.at(in, c);
            CHECK(got.logits.at(i, c) == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("forensic features are non-negative and feed the head") {
    Rng rng(8);
    DetectorParams p = init_detector(32, 21);
    Tensor batch = random_batch(rng, 10, 32);
    ForwardResult r = detector_forward(p.live, batch);
    for (std::size_t i = 0; i < r.forensic.size(); ++i) CHECK(r.forensic[i] >= 0.0);
    for (const Tensor& h : r.hidden)
        for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] >= 0.0);
    Tensor relogits = add_rowvec_plain(matmul_plain(r.forensic, p.live.head.w), p.live.head.b);
    for (std::size_t i = 0; i < relogits.size(); ++i) CHECK(relogits[i] == r.logits[i]);
}

TEST_CASE("permuting batch rows permutes logits identically") {
    Rng rng(13);
    DetectorParams p = init_detector(16, 2);
    Tensor batch = random_batch(rng, 5, 16);
    Tensor perm(5, 16);
    const std::size_t order[5] = {3, 0, 4, 1, 2};
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 16; ++j) perm.at(i, j) = batch.at(order[i], j);
    ForwardResult r1 = detector_forward(p.live, batch);
    ForwardResult r2 = detector_forward(p.live, perm);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 2; ++c) CHECK(r2.logits.at(i, c) == r1.logits.at(order[i], c));
}

TEST_CASE("predict_scores values") {
    DetectorParams p = init_detector(16, 4);
    // Zero batch at init -> zero logits -> probability one half.
    std::vector<double> s = predict_scores(p, Tensor(2, 16), false);
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);

    // Saturated logit pair, independently computed softmax value.
    DetectorParams lin = init_linear_detector(8, 0);
    for (std::size_t i = 0; i < lin.live.head.w.size(); ++i) lin.live.head.w[i] = 0.0;
    lin.live.head.b.at(0, 0) = 10.0;
    lin.live.head.b.at(0, 1) = -10.0;
    std::vector<double> sat = predict_scores(lin, Tensor(1, 8), false);
    CHECK(sat[0] == doctest::Approx(std::exp(-20.0) / (1.0 + std::exp(-20.0))).epsilon(1e-12));
    CHECK(sat[0] == doctest::Approx(2.06e-9).epsilon(0.01));

    Rng rng(6);
    std::vector<double> r = predict_scores(p, random_batch(rng, 20, 16), false);
    for (double v : r) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("ema shadow initialization and recursion") {
    DetectorParams p = init_detector(8, 10);
    CHECK_THROWS_AS(ema_update(p, 1.0), ConfigError);
    CHECK_THROWS_AS(ema_update(p, -0.1), ConfigError);

    ema_update(p, 0.5); // first call copies
    CHECK(weights_equal(*p.ema, p.live));

    // decay = 0 tracks live exactly.
    p.live.head.b.at(0, 0) = 7.0;
    ema_update(p, 0.0);
    CHECK(p.ema->head.b.at(0, 0) == 7.0);

    // Three updates at decay 0.5 against the scalar recursion.
    DetectorParams q = init_linear_detector(8, 1);
    q.live.head.b.at(0, 0) = 0.0;
    ema_update(q, 0.5); // shadow = 0
    double shadow = 0.0;
    for (double live : {4.0, 8.0, -2.0}) {
        q.live.head.b.at(0, 0) = live;
        ema_update(q, 0.5);
        shadow = 0.5 * shadow + 0.5 * live;
        CHECK(q.ema->head.b.at(0, 0) == doctest::Approx(shadow).epsilon(1e-15));
    }
}

TEST_CASE("full detector loss gradient passes finite differences") {
    Rng rng(2024);
    const std::size_t d = 8, n = 6;
    Tensor batch = random_batch(rng, n, d);
    std::vector<int> labels = {0, 1, 1, 0, 1, 0};

    DetectorParams p = init_detector(d, 31);
    std::vector<Tensor> params;
    for (const Dense& l : p.live.layers) {
        params.push_back(l.w);
        params.push_back(l.b);
    }
    params.push_back(p.live.head.w);
    params.push_back(p.live.head.b);

    auto rebuild = [&](const std::vector<Tensor>& flat) {
        DetectorWeights w;
        std::size_t idx = 0;
        for (int l = 0; l < 4; ++l) {
            Dense dn{flat[idx], flat[idx + 1]};
            idx += 2;
            w.layers.push_back(dn);
        }
        w.head = Dense{flat[idx], flat[idx + 1]};
        return w;
    };

    auto loss_of = [&](const std::vector<Tensor>& flat) {
        DetectorWeights w = rebuild(flat);
        Tape t;
        TapedDetector td = put_on_tape(t, w);
        ForwardNodes f = forward_on_tape(t, td, t.leaf(batch));
        NodeId l = softmax_cross_entropy(t, f.logits, labels);
        return t.value(l).item();
    };

    Tape t;
    TapedDetector td = put_on_tape(t, p.live);
    ForwardNodes f = forward_on_tape(t, td, t.leaf(batch));
    NodeId l = softmax_cross_entropy(t, f.logits, labels);
    t.backward(l);
    std::vector<Tensor> analytic;
    for (NodeId id : td.all()) analytic.push_back(t.grad(id));

    CHECK(finite_diff_check(loss_of, params, analytic, 1e-6) <= 1e-5);
}

TEST_CASE("checkpoint round-trip is byte-exact") {
    DetectorParams p = init_detector(16, 123);
    ema_update(p, 0.5);
    p.live.head.b.at(0, 1) = 0.1234567890123456789;
    ema_update(p, 0.9);

    const std::string path = "ckpt_test.bin";
    save_checkpoint(p, path);
    DetectorParams q = load_checkpoint(path);
    CHECK(q.input_dim == p.input_dim);
    CHECK(weights_equal(q.live, p.live));
    REQUIRE(q.ema.has_value());
    CHECK(weights_equal(*q.ema, *p.ema));

    // Saving the loaded params reproduces the file bytes.
    const std::string path2 = "ckpt_test2.bin";
    save_checkpoint(q, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}
