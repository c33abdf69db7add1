#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maf/errors.hpp"
#include "maf/metrics.hpp"
#include "maf/world.hpp"

#include <cmath>
#include <cstring>
#include <map>

using namespace maf;

namespace {
WorldConfig small_config() {
    WorldConfig cfg;
    cfg.samples_per_modality = 400;
    cfg.seed = 11;
    return cfg;
}
} // namespace

TEST_CASE("config json round-trip, defaults, and unknown-key rejection") {
    WorldConfig def = WorldConfig::from_json(nlohmann::json::object());
    CHECK(def.num_modalities == 3);
    CHECK(def.essence_dim == 8);
    CHECK(def.samples_per_modality == 3000);

    WorldConfig one = WorldConfig::from_json(nlohmann::json{{"essence_dim", 8}});
    CHECK(one.essence_dim == 8);
    CHECK(one.style_dim == 24);

    CHECK_THROWS_WITH_AS(WorldConfig::from_json(nlohmann::json{{"essence_dmi", 8}}),
                         doctest::Contains("essence_dmi"), ConfigError);

    WorldConfig cfg = small_config();
    WorldConfig back = WorldConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("essence and style raw subspaces are orthonormal and orthogonal") {
    SyntheticWorld world(small_config());
    for (std::size_t k = 0; k < world.modalities(); ++k) {
        const auto& g = world.geometry(k);
        const std::size_t e = g.essence_basis.cols();
        const std::size_t s = g.style_basis.cols();
        for (std::size_t a = 0; a < e; ++a)
            for (std::size_t b = 0; b < s; ++b) {
                double dot = 0.0;
                for (std::size_t i = 0; i < g.essence_basis.rows(); ++i)
                    dot += g.essence_basis.at(i, a) * g.style_basis.at(i, b);
                CHECK(std::abs(dot) <= 1e-10);
            }
        for (std::size_t a = 0; a < e; ++a) {
            double norm = 0.0;
            for (std::size_t i = 0; i < g.essence_basis.rows(); ++i)
                norm += g.essence_basis.at(i, a) * g.essence_basis.at(i, a);
            CHECK(norm == doctest::Approx(1.0).epsilon(1e-10));
        }
    }
}

TEST_CASE("aligned worlds share labels and essence across modalities") {
    SyntheticWorld world(small_config());
    for (std::size_t i = 0; i < 50; ++i) {
        RawSample s0 = world.sample(0, i);
        RawSample s1 = world.sample(1, i);
        CHECK(s0.label == s1.label);
        for (std::size_t j = 0; j < s0.essence.size(); ++j) CHECK(s0.essence[j] == s1.essence[j]);
    }

    WorldConfig un = small_config();
    un.aligned = false;
    SyntheticWorld uworld(un);
    bool any_diff = false;
    for (std::size_t i = 0; i < 50 && !any_diff; ++i)
        if (uworld.sample(0, i).label != uworld.sample(1, i).label) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("world regenerates bit-identically from config") {
    WorldConfig cfg = small_config();
    SyntheticWorld w1(cfg), w2(cfg);
    const auto& b1 = w1.raw_block(2);
    const auto& b2 = w2.raw_block(2);
    CHECK(std::memcmp(b1.raw.data(), b2.raw.data(), b1.raw.size() * sizeof(double)) == 0);
    CHECK(b1.labels == b2.labels);
}

TEST_CASE("leak coefficients: reversed on the designated test modality, spread elsewhere") {
    SyntheticWorld world(small_config());
    CHECK(world.leak_coefficient(2) == doctest::Approx(-0.8));
    CHECK(world.leak_coefficient(0) == doctest::Approx(1.3 * 0.8));
    CHECK(world.leak_coefficient(1) == doctest::Approx(0.7 * 0.8));
    // Leak directions are near-shared across modalities.
    const auto& g0 = world.geometry(0);
    const auto& g2 = world.geometry(2);
    double dot = 0.0;
    for (std::size_t i = 0; i < g0.leak_dir.size(); ++i) dot += g0.leak_dir[i] * g2.leak_dir[i];
    CHECK(dot > 0.9);
}

TEST_CASE("stratified split: n=10 gives balanced 6/2/2 and tags are reproducible") {
    std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    auto tags = split_dataset(labels, 5);
    std::map<Split, int> count, pos;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        count[tags[i]]++;
        if (labels[i] == 1) pos[tags[i]]++;
    }
    CHECK(count[Split::Train] == 6);
    CHECK(count[Split::Val] == 2);
    CHECK(count[Split::Test] == 2);
    CHECK(pos[Split::Train] == 3);
    CHECK(pos[Split::Val] == 1);
    CHECK(pos[Split::Test] == 1);
    CHECK(split_dataset(labels, 5) == tags);
    CHECK(split_dataset(labels, 6) != tags);
}

TEST_CASE("default-scale splits are 60/20/20 with tight label balance") {
    WorldConfig cfg = small_config();
    cfg.samples_per_modality = 3000;
    SyntheticWorld world(cfg);
    const auto& block = world.raw_block(0);
    std::map<Split, int> count, pos;
    for (std::size_t i = 0; i < block.splits.size(); ++i) {
        count[block.splits[i]]++;
        pos[block.splits[i]] += block.labels[i];
    }
    CHECK(count[Split::Train] == 1800);
    CHECK(count[Split::Val] == 600);
    CHECK(count[Split::Test] == 600);
    for (auto [split, n] : count) {
        const double balance = static_cast<double>(pos[split]) / n;
        CHECK(std::abs(balance - 0.5) <= 0.02);
    }
}

TEST_CASE("semantic perceptor is deterministic and recovers essence when style is muted") {
    WorldConfig cfg = small_config();
    cfg.semantic_style_gain = 0.0;
    cfg.perceptor_noise = 0.0;
    SyntheticWorld world(cfg);
    ModalityDataset a = apply_perceptor(PerceptorMode::Semantic, world, 0);
    ModalityDataset b = apply_perceptor(PerceptorMode::Semantic, world, 0);
    CHECK(std::memcmp(a.features.data(), b.features.data(),
                      a.features.size() * sizeof(double)) == 0);

    // First e coordinates match g_eps * essence up to observation-noise leakage.
    const double g_eps = cfg.semantic_essence_gain;
    double rms = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        for (std::size_t j = 0; j < cfg.essence_dim; ++j) {
            const double diff = a.features.at(i, j) - g_eps * a.essence.at(i, j);
            rms += diff * diff;
            ++cnt;
        }
    }
    rms = std::sqrt(rms / cnt);
    CHECK(rms <= 3.0 * g_eps * cfg.observation_noise);
}

TEST_CASE("aligned essence coordinates correlate across modalities above 0.9") {
    WorldConfig cfg = small_config();
    cfg.samples_per_modality = 1000;
    SyntheticWorld world(cfg);
    ModalityDataset d0 = apply_perceptor(PerceptorMode::Semantic, world, 0);
    ModalityDataset d1 = apply_perceptor(PerceptorMode::Semantic, world, 1);
    for (std::size_t j = 0; j < 3; ++j) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        const double n = static_cast<double>(cfg.samples_per_modality);
        for (std::size_t i = 0; i < cfg.samples_per_modality; ++i) {
            const double x = d0.features.at(i, j);
            const double y = d1.features.at(i, j);
            sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y;
        }
        const double corr = (sxy - sx * sy / n) /
                            std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
        CHECK(corr > 0.9);
    }
}

TEST_CASE("isolated perceptor whitens its fitting set") {
    WorldConfig cfg = small_config();
    cfg.samples_per_modality = 600;
    SyntheticWorld world(cfg);
    ModalityDataset ds = apply_perceptor(PerceptorMode::Isolated, world, 1);

    const auto& fit_train = ds.rows_of(Split::Train);
    const auto& fit_val = ds.rows_of(Split::Val);
    std::vector<std::size_t> fit_rows = fit_train;
    fit_rows.insert(fit_rows.end(), fit_val.begin(), fit_val.end());
    // Means and variances over the fitting rows, non-padded coordinates.
    for (std::size_t j = 0; j < cfg.perceptor_dim; ++j) {
        double m = 0.0, v = 0.0;
        for (std::size_t r : fit_rows) m += ds.features.at(r, j);
        m /= static_cast<double>(fit_rows.size());
        for (std::size_t r : fit_rows) {
            const double d = ds.features.at(r, j) - m;
            v += d * d;
        }
        v /= static_cast<double>(fit_rows.size());
        CHECK(std::abs(m) <= 1e-9);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    }

    ModalityDataset again = apply_perceptor(PerceptorMode::Isolated, world, 1);
    CHECK(std::memcmp(ds.features.data(), again.features.data(),
                      ds.features.size() * sizeof(double)) == 0);
}

TEST_CASE("whitened fake rows carry more squared norm than real rows") {
    WorldConfig cfg = small_config();
    cfg.samples_per_modality = 2000;
    SyntheticWorld world(cfg);
    ModalityDataset ds = apply_perceptor(PerceptorMode::Isolated, world, 0);
    double fake = 0.0, real = 0.0;
    std::size_t nf = 0, nr = 0;
    for (std::size_t i = 0; i < cfg.samples_per_modality; ++i) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < cfg.perceptor_dim; ++j)
            norm2 += ds.features.at(i, j) * ds.features.at(i, j);
        if (ds.labels[i] == 1) {
            fake += norm2;
            ++nf;
        } else {
            real += norm2;
            ++nr;
        }
    }
    CHECK(fake / nf > real / nr);
}

TEST_CASE("dataset contract: shapes, split proportions, alignment of split tags") {
    SyntheticWorld world(small_config());
    ModalityDataset ds = apply_perceptor(PerceptorMode::Semantic, world, 2);
    CHECK(ds.features.cols() == world.config().perceptor_dim);
    CHECK(ds.features.rows() == world.config().samples_per_modality);
    const double n = static_cast<double>(ds.features.rows());
    CHECK(std::abs(ds.rows_of(Split::Train).size() / n - 0.6) < 0.01);
    CHECK(std::abs(ds.rows_of(Split::Val).size() / n - 0.2) < 0.01);
    CHECK(std::abs(ds.rows_of(Split::Test).size() / n - 0.2) < 0.01);

    // Aligned worlds share split tags across modalities (fusion pairing).
    ModalityDataset d0 = apply_perceptor(PerceptorMode::Semantic, world, 0);
    CHECK(d0.splits == ds.splits);
}

TEST_CASE("bayes oracle: chance on a null world, perfect for huge shifts") {
    WorldConfig null_cfg = small_config();
    null_cfg.fake_mean_shift = 0.0;
    null_cfg.fake_variance_inflation = 1.0;
    null_cfg.style_leak_train = 0.0;
    null_cfg.style_leak_test = 0.0;
    SyntheticWorld null_world(null_cfg);
    const double null_auc = bayes_auc_oracle(null_world, 0, PerceptorMode::Semantic, 4000);
    CHECK(std::abs(null_auc - 0.5) <= 0.02);

    WorldConfig sep_cfg = small_config();
    sep_cfg.fake_mean_shift = 10.0;
    SyntheticWorld sep_world(sep_cfg);
    const double sep_auc = bayes_auc_oracle(sep_world, 0, PerceptorMode::Semantic, 2000);
    CHECK(sep_auc > 0.999);

    CHECK_THROWS_AS(bayes_auc_oracle(null_world, 0, PerceptorMode::Semantic, 99), ConfigError);
}

TEST_CASE("csv export shape") {
    WorldConfig cfg = small_config();
    cfg.samples_per_modality = 20;
    SyntheticWorld world(cfg);
    ModalityDataset ds = apply_perceptor(PerceptorMode::Semantic, world, 0);
    export_dataset_csv(ds, "ds_test.csv");
    std::ifstream is("ds_test.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header.substr(0, 24) == "modality,row,split,label");
    std::size_t lines = 0;
    std::string line;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 20);
    std::remove("ds_test.csv");
}
