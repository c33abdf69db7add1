#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maf/errors.hpp"
#include "maf/metrics.hpp"
#include "maf/rng.hpp"

#include <cmath>

using namespace maf;

TEST_CASE("auc on perfect ranking") {
    CHECK((auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0));
}

TEST_CASE("auc with all scores equal is one half") {
    CHECK((auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5));
}

TEST_CASE("auc pinned mixed-ties case") {
    // Pairs: (0.3 vs 0.7)=0, (0.3 vs 0.2)=1, (0.7 vs 0.7)=0.5, (0.7 vs 0.2)=1.
    CHECK((auc({0.3, 0.7, 0.7, 0.2}, {1, 0, 1, 0}) == 0.625));
}

TEST_CASE("auc rejects single-class input") {
    CHECK_THROWS_AS((auc({0.1, 0.2}, {1, 1})), MetricError);
    CHECK_THROWS_AS((auc({0.1, 0.2}, {0, 0})), MetricError);
}

TEST_CASE("sorting-based auc equals pair counting on 1000 random tie-heavy cases") {
    Rng rng(31337);
    for (int iter = 0; iter < 1000; ++iter) {
        const std::size_t n = 2 + rng.below(199);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        // Coarse quantization injects plenty of exact ties.
        const int levels = 1 + static_cast<int>(rng.below(12));
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.below(static_cast<uint64_t>(levels))) /
                        static_cast<double>(levels);
            labels[i] = static_cast<int>(rng.below(2));
        }
        labels[0] = 0;
        labels[1] = 1;
        CHECK(auc(scores, labels) == auc_pairwise(scores, labels));
    }
}

TEST_CASE("auc complement identity under label flip") {
    Rng rng(17);
    for (int iter = 0; iter < 50; ++iter) {
        const std::size_t n = 3 + rng.below(40);
        std::vector<double> scores(n);
        std::vector<int> labels(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.below(6));
            labels[i] = static_cast<int>(rng.below(2));
        }
        labels[0] = 0;
        labels[1] = 1;
        for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - labels[i];
        CHECK(auc(scores, labels) + auc(scores, flipped) == 1.0);
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(71);
    for (int iter = 0; iter < 50; ++iter) {
        const std::size_t n = 4 + rng.below(60);
        std::vector<double> scores(n), warped(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = rng.uniform(-3.0, 3.0);
            warped[i] = std::exp(0.5 * scores[i]) + 2.0 * scores[i];
            labels[i] = static_cast<int>(rng.below(2));
        }
        labels[0] = 0;
        labels[1] = 1;
        CHECK(auc(scores, labels) == auc(warped, labels));
    }
}

TEST_CASE("mean and population std") {
    CHECK((mean({0.6, 0.7}) == doctest::Approx(0.65)));
    CHECK((population_std({0.6, 0.7}) == doctest::Approx(0.05)));
    CHECK((population_std({0.42}) == 0.0));
}
