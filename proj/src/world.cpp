#include "maf/world.hpp"

#include "maf/errors.hpp"
#include "maf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

namespace maf {

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

std::string perceptor_mode_name(PerceptorMode m) {
    switch (m) {
        case PerceptorMode::Semantic: return "semantic";
        case PerceptorMode::Isolated: return "isolated";
        case PerceptorMode::RandomInit: return "random_init";
    }
    return "?";
}

PerceptorMode parse_perceptor_mode(const std::string& s) {
    if (s == "semantic") return PerceptorMode::Semantic;
    if (s == "isolated") return PerceptorMode::Isolated;
    if (s == "random_init") return PerceptorMode::RandomInit;
    throw ConfigError("unknown perceptor mode '" + s +
                      "' (expected semantic|isolated|random_init)");
}

// ---------------------------------------------------------------------------
// WorldConfig
// ---------------------------------------------------------------------------

void WorldConfig::validate() const {
    if (num_modalities < 2) throw ConfigError("num_modalities must be >= 2");
    if (essence_dim == 0 || style_dim == 0 || raw_dim == 0 || perceptor_dim == 0)
        throw ConfigError("all dimensions must be positive");
    if (essence_dim + style_dim > raw_dim)
        throw ConfigError("essence_dim + style_dim must not exceed raw_dim");
    if (essence_dim > perceptor_dim) throw ConfigError("essence_dim must not exceed perceptor_dim");
    if (essence_dim + style_dim > perceptor_dim)
        throw ConfigError("essence_dim + style_dim must not exceed perceptor_dim");
    if (samples_per_modality < 10) throw ConfigError("samples_per_modality must be >= 10");
    if (fake_variance_inflation < 1.0) throw ConfigError("fake_variance_inflation must be >= 1");
    if (observation_noise < 0.0) throw ConfigError("observation_noise must be >= 0");
    if (perceptor_noise < 0.0) throw ConfigError("perceptor_noise must be >= 0");
    if (test_modality >= num_modalities)
        throw ConfigError("test_modality out of range");
}

nlohmann::ordered_json WorldConfig::to_json() const {
    nlohmann::ordered_json j;
    j["num_modalities"] = num_modalities;
    j["essence_dim"] = essence_dim;
    j["style_dim"] = style_dim;
    j["raw_dim"] = raw_dim;
    j["perceptor_dim"] = perceptor_dim;
    j["samples_per_modality"] = samples_per_modality;
    j["fake_mean_shift"] = fake_mean_shift;
    j["fake_variance_inflation"] = fake_variance_inflation;
    j["style_leak_train"] = style_leak_train;
    j["style_leak_test"] = style_leak_test;
    j["semantic_essence_gain"] = semantic_essence_gain;
    j["semantic_style_gain"] = semantic_style_gain;
    j["observation_noise"] = observation_noise;
    j["perceptor_noise"] = perceptor_noise;
    j["aligned"] = aligned;
    j["test_modality"] = test_modality;
    j["seed"] = seed;
    return j;
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("world config must be a JSON object");
    WorldConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const nlohmann::json& v = it.value();
        auto as_size = [&](const char* name) {
            if (!v.is_number_unsigned() && !v.is_number_integer())
                throw ConfigError(std::string("field '") + name + "' must be an integer");
            const auto x = v.get<long long>();
            if (x < 0) throw ConfigError(std::string("field '") + name + "' must be >= 0");
            return static_cast<std::size_t>(x);
        };
        auto as_double = [&](const char* name) {
            if (!v.is_number()) throw ConfigError(std::string("field '") + name + "' must be a number");
            return v.get<double>();
        };
        if (key == "num_modalities") c.num_modalities = as_size("num_modalities");
        else if (key == "essence_dim") c.essence_dim = as_size("essence_dim");
        else if (key == "style_dim") c.style_dim = as_size("style_dim");
        else if (key == "raw_dim") c.raw_dim = as_size("raw_dim");
        else if (key == "perceptor_dim") c.perceptor_dim = as_size("perceptor_dim");
        else if (key == "samples_per_modality") c.samples_per_modality = as_size("samples_per_modality");
        else if (key == "fake_mean_shift") c.fake_mean_shift = as_double("fake_mean_shift");
        else if (key == "fake_variance_inflation") c.fake_variance_inflation = as_double("fake_variance_inflation");
        else if (key == "style_leak_train") c.style_leak_train = as_double("style_leak_train");
        else if (key == "style_leak_test") c.style_leak_test = as_double("style_leak_test");
        else if (key == "semantic_essence_gain") c.semantic_essence_gain = as_double("semantic_essence_gain");
        else if (key == "semantic_style_gain") c.semantic_style_gain = as_double("semantic_style_gain");
        else if (key == "observation_noise") c.observation_noise = as_double("observation_noise");
        else if (key == "perceptor_noise") c.perceptor_noise = as_double("perceptor_noise");
        else if (key == "aligned") {
            if (!v.is_boolean()) throw ConfigError("field 'aligned' must be a boolean");
            c.aligned = v.get<bool>();
        } else if (key == "test_modality") c.test_modality = as_size("test_modality");
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(v.get<unsigned long long>());
        else throw ConfigError("unknown world config key '" + key + "'");
    }
    c.validate();
    return c;
}

WorldConfig WorldConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open world config " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

void WorldConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write world config " + path);
    os << to_json().dump(2) << "\n";
    if (!os) throw IoError("write failure on " + path);
}

// ---------------------------------------------------------------------------
// World generation
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kTagGeometry = 0x67656f6d;
constexpr std::uint64_t kTagLeakBase = 0x6c65616b;
constexpr std::uint64_t kTagShift = 0x73686966;
constexpr std::uint64_t kTagLabels = 0x6c61626c;
constexpr std::uint64_t kTagEssence = 0x65737365;
constexpr std::uint64_t kTagStyle = 0x7374796c;
constexpr std::uint64_t kTagObs = 0x6f627321;
constexpr std::uint64_t kTagSplit = 0x73706c69;
constexpr std::uint64_t kTagPercNoise = 0x706e6f69;
constexpr std::uint64_t kTagRandInit = 0x72616e64;
constexpr std::uint64_t kTagBayes = 0x62617965;

std::vector<double> unit_vector(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

// Modified Gram-Schmidt on gaussian columns: jointly orthonormal essence and
// style bases.
void orthonormal_bases(Rng& rng, std::size_t d, std::size_t e, std::size_t s, Tensor& a,
                       Tensor& b) {
    const std::size_t total = e + s;
    std::vector<std::vector<double>> cols(total, std::vector<double>(d));
    for (auto& col : cols)
        for (auto& x : col) x = rng.normal();
    for (std::size_t j = 0; j < total; ++j) {
        for (std::size_t prev = 0; prev < j; ++prev) {
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += cols[j][i] * cols[prev][i];
            for (std::size_t i = 0; i < d; ++i) cols[j][i] -= dot * cols[prev][i];
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm += cols[j][i] * cols[j][i];
        norm = std::sqrt(norm);
        if (norm < 1e-10) throw NumericError("degenerate basis draw");
        for (std::size_t i = 0; i < d; ++i) cols[j][i] /= norm;
    }
    a = Tensor(d, e);
    b = Tensor(d, s);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < e; ++j) a.at(i, j) = cols[j][i];
        for (std::size_t j = 0; j < s; ++j) b.at(i, j) = cols[e + j][i];
    }
}

} // namespace

SyntheticWorld::SyntheticWorld(WorldConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_geometry();
    build_labels_and_splits();
    blocks_.resize(cfg_.num_modalities);
    block_ready_.assign(cfg_.num_modalities, 0);
}

void SyntheticWorld::build_geometry() {
    const std::size_t k_total = cfg_.num_modalities;
    geom_.resize(k_total);

    // Shared leak base: training modalities leak along nearly the same style
    // direction so the reversed test leak actually transfers; the strength
    // multipliers below differ per training modality so the leak is not an
    // invariant feature across environments.
    Rng base_rng(seed_from({cfg_.seed, kTagLeakBase}));
    const std::vector<double> leak_base = unit_vector(base_rng, cfg_.style_dim);

    const double style_mean_scale = std::getenv("MAF_STYLE_MEAN_SCALE")
                                        ? std::atof(std::getenv("MAF_STYLE_MEAN_SCALE"))
                                        : 1.0;
    const double offset_scale = std::getenv("MAF_OFFSET_SCALE")
                                    ? std::atof(std::getenv("MAF_OFFSET_SCALE"))
                                    : 1.0;
    const double leak_spread = std::getenv("MAF_LEAK_SPREAD")
                                   ? std::atof(std::getenv("MAF_LEAK_SPREAD"))
                                   : 0.6;
    std::size_t train_ordinal = 0;
    const std::size_t n_train = k_total - 1;
    for (std::size_t k = 0; k < k_total; ++k) {
        ModalityGeometry& g = geom_[k];
        Rng rng(seed_from({cfg_.seed, kTagGeometry, k}));
        orthonormal_bases(rng, cfg_.raw_dim, cfg_.essence_dim, cfg_.style_dim, g.essence_basis,
                          g.style_basis);
        g.style_mean.resize(cfg_.style_dim);
        for (auto& x : g.style_mean) x = style_mean_scale * rng.normal();
        g.semantic_offset.resize(cfg_.style_dim);
        for (auto& x : g.semantic_offset) x = offset_scale * rng.normal();

        g.leak_dir.resize(cfg_.style_dim);
        double norm = 0.0;
        for (std::size_t i = 0; i < cfg_.style_dim; ++i) {
            g.leak_dir[i] =
                leak_base[i] + leak_spread * rng.normal() / std::sqrt(double(cfg_.style_dim));
            norm += g.leak_dir[i] * g.leak_dir[i];
        }
        norm = std::sqrt(norm);
        for (auto& x : g.leak_dir) x /= norm;

        if (k == cfg_.test_modality) {
            g.leak_scale = 1.0;
        } else {
            const double hi = std::getenv("MAF_LEAK_HI") ? std::atof(std::getenv("MAF_LEAK_HI")) : 0.55;
            const double lo = std::getenv("MAF_LEAK_LO") ? std::atof(std::getenv("MAF_LEAK_LO")) : 0.30;
            g.leak_scale = n_train > 1
                               ? hi - (hi - lo) * static_cast<double>(train_ordinal) /
                                           static_cast<double>(n_train - 1)
                               : 1.0;
            ++train_ordinal;
        }
    }
}

double SyntheticWorld::leak_coefficient(std::size_t k) const {
    if (k == cfg_.test_modality) return cfg_.style_leak_test;
    return geom_[k].leak_scale * cfg_.style_leak_train;
}

void SyntheticWorld::build_labels_and_splits() {
    const std::size_t n = cfg_.samples_per_modality;
    labels_.resize(cfg_.num_modalities);
    splits_.resize(cfg_.num_modalities);
    for (std::size_t k = 0; k < cfg_.num_modalities; ++k) {
        // Exactly balanced labels via a seeded permutation; aligned worlds
        // share one assignment across modalities.
        const std::uint64_t stream = cfg_.aligned ? 0 : k;
        Rng rng(seed_from({cfg_.seed, kTagLabels, stream}));
        std::vector<int> y(n, 0);
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        for (std::size_t i = 0; i < n / 2; ++i) y[idx[i]] = 1;
        labels_[k] = std::move(y);
        splits_[k] = split_dataset(labels_[k], seed_from({cfg_.seed, kTagSplit, stream}));
    }
}

int SyntheticWorld::label_of(std::size_t modality, std::size_t index) const {
    return labels_[modality][index];
}

RawSample SyntheticWorld::sample(std::size_t modality, std::size_t index) const {
    if (modality >= cfg_.num_modalities) throw InputError("modality out of range");
    if (index >= cfg_.samples_per_modality) throw InputError("sample index out of range");
    const ModalityGeometry& g = geom_[modality];
    RawSample out;
    out.label = labels_[modality][index];

    // Essence stream: shared across modalities when aligned.
    const std::uint64_t essence_stream = cfg_.aligned ? 0 : modality;
    Rng essence_rng(seed_from({cfg_.seed, kTagEssence, essence_stream, index}));
    Rng shift_rng(seed_from({cfg_.seed, kTagShift}));
    const std::vector<double> shift_dir = unit_vector(shift_rng, cfg_.essence_dim);

    out.essence.resize(cfg_.essence_dim);
    for (std::size_t i = 0; i < cfg_.essence_dim; ++i) {
        double v = essence_rng.normal();
        if (out.label == 1)
            v = cfg_.fake_variance_inflation * v + cfg_.fake_mean_shift * shift_dir[i];
        out.essence[i] = v;
    }

    Rng style_rng(seed_from({cfg_.seed, kTagStyle, modality, index}));
    const double leak = leak_coefficient(modality) * static_cast<double>(out.label);
    out.style.resize(cfg_.style_dim);
    for (std::size_t i = 0; i < cfg_.style_dim; ++i)
        out.style[i] = g.style_mean[i] + leak * g.leak_dir[i] + style_rng.normal();

    Rng obs_rng(seed_from({cfg_.seed, kTagObs, modality, index}));
    out.raw.assign(cfg_.raw_dim, 0.0);
    for (std::size_t i = 0; i < cfg_.raw_dim; ++i) {
        double v = 0.0;
        for (std::size_t j = 0; j < cfg_.essence_dim; ++j)
            v += g.essence_basis.at(i, j) * out.essence[j];
        for (std::size_t j = 0; j < cfg_.style_dim; ++j)
            v += g.style_basis.at(i, j) * out.style[j];
        out.raw[i] = v + cfg_.observation_noise * obs_rng.normal();
    }
    return out;
}

const SyntheticWorld::RawBlock& SyntheticWorld::raw_block(std::size_t modality) const {
    if (modality >= cfg_.num_modalities) throw InputError("modality out of range");
    if (!block_ready_[modality]) {
        const std::size_t n = cfg_.samples_per_modality;
        RawBlock block;
        block.raw = Tensor(n, cfg_.raw_dim);
        block.essence = Tensor(n, cfg_.essence_dim);
        block.style = Tensor(n, cfg_.style_dim);
        block.labels = labels_[modality];
        block.splits = splits_[modality];
        for (std::size_t i = 0; i < n; ++i) {
            RawSample s = sample(modality, i);
            for (std::size_t j = 0; j < cfg_.raw_dim; ++j) block.raw.at(i, j) = s.raw[j];
            for (std::size_t j = 0; j < cfg_.essence_dim; ++j)
                block.essence.at(i, j) = s.essence[j];
            for (std::size_t j = 0; j < cfg_.style_dim; ++j) block.style.at(i, j) = s.style[j];
        }
        blocks_[modality] = std::move(block);
        block_ready_[modality] = 1;
    }
    return blocks_[modality];
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

std::vector<Split> split_dataset(const std::vector<int>& labels, std::uint64_t seed) {
    const std::size_t n = labels.size();
    if (n < 10) throw ContractError("split_dataset needs n >= 10");
    std::vector<Split> tags(n, Split::Train);
    Rng rng(seed);
    for (int cls = 0; cls <= 1; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
            if (labels[i] == cls) idx.push_back(i);
        rng.shuffle(idx);
        const std::size_t m = idx.size();
        const std::size_t n_train = (m * 6 + 5) / 10; // round to nearest
        const std::size_t n_val = (m - n_train + 1) / 2;
        for (std::size_t r = 0; r < m; ++r) {
            if (r < n_train) tags[idx[r]] = Split::Train;
            else if (r < n_train + n_val) tags[idx[r]] = Split::Val;
            else tags[idx[r]] = Split::Test;
        }
    }
    return tags;
}

// ---------------------------------------------------------------------------
// Perceptors
// ---------------------------------------------------------------------------

PerceptorMap semantic_perceptor(const SyntheticWorld& world, std::size_t modality) {
    const WorldConfig& cfg = world.config();
    const ModalityGeometry& g = world.geometry(modality);
    const std::size_t d = cfg.raw_dim;
    const std::size_t dim = cfg.perceptor_dim;
    const std::size_t e = cfg.essence_dim;
    const std::size_t s = cfg.style_dim;

    PerceptorMap map;
    map.mode = PerceptorMode::Semantic;
    map.modality = modality;
    map.m = Tensor(dim, d);
    map.offset.assign(dim, 0.0);
    map.noise_std.assign(dim, 0.0);

    // Rows 0..e-1: shared essence coordinates across modalities.
    for (std::size_t r = 0; r < e; ++r)
        for (std::size_t c = 0; c < d; ++c)
            map.m.at(r, c) = cfg.semantic_essence_gain * g.essence_basis.at(c, r);
    // Rows e..e+s-1: high-gain style coordinates with a modality offset.
    for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < d; ++c)
            map.m.at(e + r, c) = cfg.semantic_style_gain * g.style_basis.at(c, r);
        map.offset[e + r] = g.semantic_offset[r];
    }
    for (std::size_t r = 0; r < e; ++r) map.noise_std[r] = cfg.perceptor_noise;
    for (std::size_t r = e + s; r < dim; ++r) map.noise_std[r] = 0.1; // filler
    return map;
}

PerceptorMap fit_isolated_perceptor(const SyntheticWorld& world, std::size_t modality) {
    const WorldConfig& cfg = world.config();
    const auto& block = world.raw_block(modality);
    const std::size_t d = cfg.raw_dim;
    const std::size_t dim = cfg.perceptor_dim;

    // Fit set: the modality's train+val raw rows, unlabeled.
    std::vector<std::size_t> fit_rows;
    for (std::size_t i = 0; i < block.splits.size(); ++i)
        if (block.splits[i] != Split::Test) fit_rows.push_back(i);
    if (fit_rows.size() < dim)
        throw ContractError("isolated perceptor needs at least perceptor_dim fitting samples");

    Tensor data = gather_rows(block.raw, fit_rows);
    const std::vector<double> mu = column_means(data);
    Tensor cov = covariance(data);
    EigenResult eig = jacobi_eigen(cov, 1e-10 * std::max(1.0, cov.at(0, 0)), 96);

    const double lead = std::max(eig.values.front(), 0.0);
    PerceptorMap map;
    map.mode = PerceptorMode::Isolated;
    map.modality = modality;
    map.m = Tensor(dim, d);
    map.offset.assign(dim, 0.0);
    map.noise_std.assign(dim, 0.0);

    std::size_t kept = 0;
    for (std::size_t j = 0; j < std::min(dim, d); ++j) {
        const double lambda = eig.values[j];
        if (lambda <= 1e-10 * std::max(lead, 1e-300)) break;
        const double inv_std = 1.0 / std::sqrt(lambda);
        for (std::size_t c = 0; c < d; ++c) map.m.at(kept, c) = inv_std * eig.vectors.at(c, j);
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += map.m.at(kept, c) * mu[c];
        map.offset[kept] = -dot;
        ++kept;
    }
    if (kept < dim)
        map.warnings.push_back("isolated perceptor for modality " + std::to_string(modality) +
                               ": rank " + std::to_string(kept) + " < " + std::to_string(dim) +
                               ", zero-padded");
    return map;
}

PerceptorMap random_init_perceptor(const SyntheticWorld& world, std::size_t modality) {
    const WorldConfig& cfg = world.config();
    Rng rng(seed_from({cfg.seed, kTagRandInit, modality}));
    PerceptorMap map;
    map.mode = PerceptorMode::RandomInit;
    map.modality = modality;
    map.m = Tensor(cfg.perceptor_dim, cfg.raw_dim);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.raw_dim));
    for (std::size_t i = 0; i < map.m.size(); ++i) map.m[i] = stddev * rng.normal();
    map.offset.assign(cfg.perceptor_dim, 0.0);
    map.noise_std.assign(cfg.perceptor_dim, 0.0);
    return map;
}

std::vector<double> apply_perceptor_row(const SyntheticWorld& world, const PerceptorMap& map,
                                        std::size_t index, const double* raw_row) {
    const WorldConfig& cfg = world.config();
    const std::size_t dim = cfg.perceptor_dim;
    std::vector<double> z(dim, 0.0);
    for (std::size_t r = 0; r < dim; ++r) {
        double v = map.offset[r];
        for (std::size_t c = 0; c < cfg.raw_dim; ++c) v += map.m.at(r, c) * raw_row[c];
        z[r] = v;
    }
    bool any_noise = false;
    for (double s : map.noise_std)
        if (s > 0.0) any_noise = true;
    if (any_noise) {
        Rng rng(seed_from({cfg.seed, kTagPercNoise, static_cast<std::uint64_t>(map.mode),
                           map.modality, index}));
        for (std::size_t r = 0; r < dim; ++r)
            if (map.noise_std[r] > 0.0) z[r] += map.noise_std[r] * rng.normal();
    }
    return z;
}

ModalityDataset apply_perceptor(PerceptorMode mode, const SyntheticWorld& world,
                                std::size_t modality) {
    const WorldConfig& cfg = world.config();
    PerceptorMap map;
    switch (mode) {
        case PerceptorMode::Semantic: map = semantic_perceptor(world, modality); break;
        case PerceptorMode::Isolated: map = fit_isolated_perceptor(world, modality); break;
        case PerceptorMode::RandomInit: map = random_init_perceptor(world, modality); break;
    }
    const auto& block = world.raw_block(modality);
    const std::size_t n = cfg.samples_per_modality;

    ModalityDataset ds;
    ds.modality = modality;
    ds.mode = mode;
    ds.features = Tensor(n, cfg.perceptor_dim);
    ds.labels = block.labels;
    ds.splits = block.splits;
    ds.essence = block.essence;
    ds.style = block.style;
    ds.warnings = map.warnings;
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<double> z =
            apply_perceptor_row(world, map, i, block.raw.data() + i * cfg.raw_dim);
        for (std::size_t j = 0; j < cfg.perceptor_dim; ++j) ds.features.at(i, j) = z[j];
    }
    ds.split_rows.resize(3);
    for (std::size_t i = 0; i < n; ++i)
        ds.split_rows[static_cast<std::size_t>(ds.splits[i])].push_back(i);
    return ds;
}

Tensor gather_rows(const Tensor& features, const std::vector<std::size_t>& rows) {
    Tensor out(rows.size(), features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < features.cols(); ++j)
            out.at(i, j) = features.at(rows[i], j);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& rows) {
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
    return out;
}

void export_dataset_csv(const ModalityDataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "modality,row,split,label";
    for (std::size_t j = 0; j < ds.features.cols(); ++j) os << ",f" << j;
    os << "\n";
    os.precision(17);
    for (std::size_t i = 0; i < ds.features.rows(); ++i) {
        os << ds.modality << ',' << i << ',' << split_name(ds.splits[i]) << ',' << ds.labels[i];
        for (std::size_t j = 0; j < ds.features.cols(); ++j) os << ',' << ds.features.at(i, j);
        os << "\n";
    }
    if (!os) throw IoError("write failure on " + path);
}

// ---------------------------------------------------------------------------
// Bayes oracle
// ---------------------------------------------------------------------------

namespace {

struct Gaussian {
    std::vector<double> mean;
    Tensor chol;
    double logdet;
};

double log_density(const Gaussian& g, const std::vector<double>& x) {
    const std::size_t d = g.mean.size();
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = x[i] - g.mean[i];
    const std::vector<double> solved = cholesky_solve(g.chol, diff);
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i) quad += diff[i] * solved[i];
    return -0.5 * (quad + g.logdet + static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
}

} // namespace

double bayes_auc_oracle(const SyntheticWorld& world, std::size_t modality, PerceptorMode mode,
                        std::size_t n_mc) {
    if (n_mc < 100) throw ConfigError("bayes_auc_oracle needs n_mc >= 100");
    const WorldConfig& cfg = world.config();
    const ModalityGeometry& g = world.geometry(modality);
    const std::size_t d = cfg.raw_dim;
    const std::size_t e = cfg.essence_dim;
    const std::size_t s = cfg.style_dim;

    PerceptorMap map;
    switch (mode) {
        case PerceptorMode::Semantic: map = semantic_perceptor(world, modality); break;
        case PerceptorMode::Isolated: map = fit_isolated_perceptor(world, modality); break;
        case PerceptorMode::RandomInit: map = random_init_perceptor(world, modality); break;
    }

    Rng shift_rng(seed_from({cfg.seed, kTagShift}));
    const std::vector<double> shift_dir = unit_vector(shift_rng, e);
    const double leak = world.leak_coefficient(modality);

    // Raw class moments. cov_x = A S_e A^T + B B^T + sigma_n^2 I.
    auto raw_moments = [&](int label, std::vector<double>& mean, Tensor& cov) {
        mean.assign(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            double v = 0.0;
            if (label == 1)
                for (std::size_t j = 0; j < e; ++j)
                    v += g.essence_basis.at(i, j) * cfg.fake_mean_shift * shift_dir[j];
            for (std::size_t j = 0; j < s; ++j)
                v += g.style_basis.at(i, j) *
                     (g.style_mean[j] + (label == 1 ? leak * g.leak_dir[j] : 0.0));
            mean[i] = v;
        }
        const double ve = label == 1 ? cfg.fake_variance_inflation * cfg.fake_variance_inflation
                                     : 1.0;
        cov = Tensor(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) {
                double v = 0.0;
                for (std::size_t r = 0; r < e; ++r)
                    v += ve * g.essence_basis.at(i, r) * g.essence_basis.at(j, r);
                for (std::size_t r = 0; r < s; ++r)
                    v += g.style_basis.at(i, r) * g.style_basis.at(j, r);
                if (i == j) v += cfg.observation_noise * cfg.observation_noise;
                cov.at(i, j) = v;
                cov.at(j, i) = v;
            }
    };

    // Keep only feature coordinates that can vary (drops zero-padded rows).
    const std::size_t dim = cfg.perceptor_dim;
    std::vector<std::size_t> live;
    for (std::size_t r = 0; r < dim; ++r) {
        bool nonzero = map.noise_std[r] > 0.0;
        for (std::size_t c = 0; c < d && !nonzero; ++c)
            if (map.m.at(r, c) != 0.0) nonzero = true;
        if (nonzero) live.push_back(r);
    }
    if (live.empty()) throw NumericError("perceptor map is identically zero");

    auto feature_gaussian = [&](int label) {
        std::vector<double> mean_x;
        Tensor cov_x;
        raw_moments(label, mean_x, cov_x);
        Gaussian out;
        out.mean.resize(live.size());
        for (std::size_t a = 0; a < live.size(); ++a) {
            double v = map.offset[live[a]];
            for (std::size_t c = 0; c < d; ++c) v += map.m.at(live[a], c) * mean_x[c];
            out.mean[a] = v;
        }
        // cov_z = M cov_x M^T + diag(noise^2), restricted to live rows.
        Tensor mc(live.size(), d);
        for (std::size_t a = 0; a < live.size(); ++a) {
            for (std::size_t c2 = 0; c2 < d; ++c2) {
                double v = 0.0;
                for (std::size_t c = 0; c < d; ++c) v += map.m.at(live[a], c) * cov_x.at(c, c2);
                mc.at(a, c2) = v;
            }
        }
        Tensor cov_z(live.size(), live.size());
        double trace = 0.0;
        for (std::size_t a = 0; a < live.size(); ++a)
            for (std::size_t b = a; b < live.size(); ++b) {
                double v = 0.0;
                for (std::size_t c = 0; c < d; ++c) v += mc.at(a, c) * map.m.at(live[b], c);
                if (a == b) {
                    v += map.noise_std[live[a]] * map.noise_std[live[a]];
                    trace += v;
                }
                cov_z.at(a, b) = v;
                cov_z.at(b, a) = v;
            }
        if (trace <= 0.0) throw NumericError("zero-variance feature distribution");
        const double ridge = 1e-9 * trace / static_cast<double>(live.size());
        for (std::size_t a = 0; a < live.size(); ++a) cov_z.at(a, a) += ridge;
        out.chol = cholesky(cov_z);
        out.logdet = cholesky_logdet(out.chol);
        return out;
    };

    const Gaussian g_real = feature_gaussian(0);
    const Gaussian g_fake = feature_gaussian(1);

    Rng rng(seed_from({cfg.seed, kTagBayes, modality, static_cast<std::uint64_t>(mode)}));
    std::vector<double> scores(n_mc);
    std::vector<int> labels(n_mc);
    std::vector<double> x(d), z(dim), zl(live.size());
    for (std::size_t i = 0; i < n_mc; ++i) {
        const int y = static_cast<int>(rng.below(2));
        labels[i] = y;
        std::vector<double> essence(e), style(s);
        for (std::size_t j = 0; j < e; ++j) {
            double v = rng.normal();
            if (y == 1) v = cfg.fake_variance_inflation * v + cfg.fake_mean_shift * shift_dir[j];
            essence[j] = v;
        }
        for (std::size_t j = 0; j < s; ++j)
            style[j] = g.style_mean[j] + (y == 1 ? leak * g.leak_dir[j] : 0.0) + rng.normal();
        for (std::size_t c = 0; c < d; ++c) {
            double v = cfg.observation_noise * rng.normal();
            for (std::size_t j = 0; j < e; ++j) v += g.essence_basis.at(c, j) * essence[j];
            for (std::size_t j = 0; j < s; ++j) v += g.style_basis.at(c, j) * style[j];
            x[c] = v;
        }
        for (std::size_t r = 0; r < dim; ++r) {
            double v = map.offset[r];
            for (std::size_t c = 0; c < d; ++c) v += map.m.at(r, c) * x[c];
            if (map.noise_std[r] > 0.0) v += map.noise_std[r] * rng.normal();
            z[r] = v;
        }
        for (std::size_t a = 0; a < live.size(); ++a) zl[a] = z[live[a]];
        scores[i] = log_density(g_fake, zl) - log_density(g_real, zl);
    }
    return auc(scores, labels);
}

} // namespace maf
